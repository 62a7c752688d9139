#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/common.hpp"

namespace gsb {

using ChannelId = std::string;
using VideoId = std::string;
using SegmentId = std::string;

enum class Split { kTrain, kDev, kTest, kUnassigned };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

// Where a segment's current label came from.
struct LabelSource {
  enum class Kind { kWhisper, kTeacher, kManual };
  Kind kind = Kind::kWhisper;
  int iteration = 0;  // teacher iteration, >= 1 when kind == kTeacher

  static LabelSource whisper() { return {}; }
  static LabelSource teacher(int i) { return {Kind::kTeacher, i}; }
  static LabelSource manual() { return {Kind::kManual, 0}; }

  std::string to_string() const;  // "whisper", "teacher:2", "manual"
  static LabelSource parse(std::string_view s);
  bool operator==(const LabelSource&) const = default;
};

struct VideoRecord {
  VideoId id;
  ChannelId channel;
  std::string path;
  double duration_s = 0.0;
  int sample_rate_hz = 0;
  int channels = 1;
  std::optional<std::string> detected_language;
  std::optional<double> language_prob;
  std::optional<std::string> topic;
  std::optional<std::string> format;

  bool operator==(const VideoRecord&) const = default;
};

struct Segment {
  SegmentId id;
  VideoId video;
  ChannelId channel;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;
  std::string raw_text;
  std::string language;
  LabelSource source;
  std::optional<double> lid_score;
  std::optional<double> cer_vs_prev;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const Segment&) const = default;
};

// `<video>-<ordinal:05>`; lexical order equals temporal order within a video.
SegmentId make_segment_id(std::string_view video, std::size_t ordinal);

struct Manifest {
  std::optional<std::string> language;  // corpus target language, if known
  std::vector<VideoRecord> videos;
  std::vector<Segment> segments;
  std::map<ChannelId, Split> splits;

  const VideoRecord* find_video(std::string_view id) const;
  Split split_of(std::string_view channel) const;
  // Sorts videos and segments by id so serialized output is canonical.
  void canonicalize();
  // Returns every invariant violation found; empty means valid.
  std::vector<std::string> violations() const;
  // Throws ValidationError listing all violations.
  void validate() const;

  bool operator==(const Manifest&) const = default;
};

// Line-delimited JSON: one `corpus`, `video`, `segment` or `split` record per line.
std::string serialize_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& m);

std::string segment_to_json_line(const Segment& s);
Segment segment_from_json_line(std::string_view line);

// ---------------------------------------------------------------------------
// Ingestion

// Controlled vocabulary for channel tags. Tags outside it produce warnings.
const std::vector<std::string>& known_topics();
const std::vector<std::string>& known_formats();

struct IngestIssue {
  enum class Severity { kWarning, kError };
  std::string path;
  Severity severity = Severity::kError;
  std::string message;
};

struct IngestResult {
  Manifest manifest;
  std::vector<IngestIssue> report;
};

// Layout: root/<channel>/<video>.wav, with an optional root/<channel>/channel.json
// carrying {"topic": ..., "format": ...}. Unreadable files land in the report.
IngestResult ingest_audio_dir(const std::filesystem::path& root, std::string_view language, int workers = 4);

// ---------------------------------------------------------------------------
// Splits and statistics

// Hours per channel: segment hours when the manifest has segments, video
// hours otherwise (partitioning may run before transcription).
std::map<ChannelId, double> channel_hours(const Manifest& m);

class SplitTargetError : public ValidationError {
 public:
  SplitTargetError(const std::string& what, double closest_dev_h, double closest_test_h)
      : ValidationError(what), closest_dev_h_(closest_dev_h), closest_test_h_(closest_test_h) {}
  double closest_dev_h() const { return closest_dev_h_; }
  double closest_test_h() const { return closest_test_h_; }

 private:
  double closest_dev_h_;
  double closest_test_h_;
};

inline constexpr double kSplitTolerance = 0.10;

// Channel-atomic assignment. DEV and TEST each land within +-10% of their
// target; the rest goes to TRAIN.
Manifest assign_splits(const Manifest& m, double dev_target_h, double test_target_h, std::uint64_t seed);

struct SplitStats {
  double hours = 0.0;
  std::size_t segments = 0;
  std::vector<std::size_t> histogram;  // counts per duration bin
  std::map<ChannelId, double> channel_hours;
  std::size_t duplicate_transcripts = 0;  // segments whose text already occurred in the split
};

struct CorpusStats {
  double bin_width_s = 1.0;
  std::map<Split, SplitStats> splits;
};

CorpusStats compute_stats(const Manifest& m, double bin_width_s);
std::string format_stats_table(const CorpusStats& s);
std::string stats_to_json(const CorpusStats& s);

}  // namespace gsb
