#pragma once

// Reference backends with no model behind them. They stand in for the
// transcriber, trainer and text LID in tests, the refinement simulation and
// the toy pipeline.

#include <cstdint>
#include <filesystem>
#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsb/align.hpp"
#include "gsb/backends.hpp"
#include "gsb/textnorm.hpp"

namespace gsb::mock {

// Per-code-point corruption: with probability `rate` a position is
// substituted (drawn from the text's own non-space characters), deleted, or
// followed by an inserted character, each equally likely.
std::string corrupt(std::string_view text, double rate, std::uint64_t seed);

// How hard an item is for every mock model, uniform in [0, 2) with mean 1.
double difficulty(std::string_view key, std::uint64_t seed);

// Mock model ids carry their own error rate: "mock:<capacity>:<rate>:<tag>".
struct MockModel {
  std::string capacity;
  double error_rate = 0.0;
  std::string tag;
};
std::string encode_model_id(const MockModel& m);
std::optional<MockModel> parse_model_id(std::string_view id);

// Returns fixture text by request id.
class EchoTranscriber : public Transcriber {
 public:
  explicit EchoTranscriber(std::map<std::string, std::string> texts) : texts_(std::move(texts)) {}
  TranscribeResponse transcribe(const TranscribeRequest& req) override;

 private:
  std::map<std::string, std::string> texts_;
};

// Reference text for a request, or nullopt when unknown.
using TruthFn = std::function<std::optional<std::string>(const TranscribeRequest&)>;

// Emits the reference corrupted at rate eps * difficulty(id). eps is
// `base_rate` for requests without a model and the model's own rate
// otherwise.
class NoiseTranscriber : public Transcriber {
 public:
  NoiseTranscriber(TruthFn truth, double base_rate, std::uint64_t seed)
      : truth_(std::move(truth)), base_rate_(base_rate), seed_(seed) {}
  TranscribeResponse transcribe(const TranscribeRequest& req) override;

 private:
  TruthFn truth_;
  double base_rate_;
  std::uint64_t seed_;
};

// Hidden reference label for a training segment.
using SegmentTruthFn = std::function<std::optional<std::string>(const Segment&)>;

// Trains nothing. The returned model's error rate is alpha times the micro
// CER of the training labels against the hidden reference.
class ContractionTrainer : public Trainer {
 public:
  ContractionTrainer(SegmentTruthFn truth, double alpha) : truth_(std::move(truth)), alpha_(alpha) {}
  TrainResponse train(const TrainRequest& req) override;
  std::size_t calls() const { return calls_; }

 private:
  SegmentTruthFn truth_;
  double alpha_;
  std::size_t calls_ = 0;
};

// Looks the text up in a table; unknown texts get `fallback` or fail.
class TableLid : public LidClient {
 public:
  TableLid(std::map<std::string, LidResponse> table, std::optional<LidResponse> fallback = std::nullopt)
      : table_(std::move(table)), fallback_(std::move(fallback)) {}
  LidResponse identify(const LidRequest& req) override;

 private:
  std::map<std::string, LidResponse> table_;
  std::optional<LidResponse> fallback_;
};

// Confidence is the share of words found in a language's word list; the
// language with the largest share wins (ties go to the smaller code).
class WordlistLid : public LidClient {
 public:
  explicit WordlistLid(std::map<std::string, std::set<std::string>> lists) : lists_(std::move(lists)) {}
  LidResponse identify(const LidRequest& req) override;

 private:
  std::map<std::string, std::set<std::string>> lists_;
};

// ---------------------------------------------------------------------------
// Synthetic-corpus truth: one JSON line per video,
// {"video", "language", "words": [{"w", "start_s", "end_s"}]}.

struct TimedWord {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct VideoTruth {
  std::string video;
  std::string language;
  std::vector<TimedWord> words;
};

class TruthIndex {
 public:
  static TruthIndex load(const std::filesystem::path& path);
  static TruthIndex from_videos(std::vector<VideoTruth> videos);

  const VideoTruth* find(std::string_view video) const;
  std::vector<std::string> video_ids() const;
  // Words whose midpoint lies in [start_s, end_s), joined by single spaces.
  std::optional<std::string> text_in_window(std::string_view video, double start_s, double end_s) const;
  std::vector<TimedWord> words_in_window(std::string_view video, double start_s, double end_s) const;
  // Sorted distinct uppercase characters across all words.
  std::vector<std::string> alphabet() const;
  std::string serialize() const;

 private:
  std::map<std::string, VideoTruth, std::less<>> videos_;
};

// Peaky CTC-style emissions for a window of the reference: each word's span
// is shared evenly among its characters, everything else is blank. Vocab is
// blank, star, then `alphabet`.
EmissionMatrix synth_emissions(const std::vector<TimedWord>& words, double start_s, double end_s,
                               const std::vector<std::string>& alphabet, float frame_s = 0.02f);

struct ServiceOptions {
  double whisper_rate = 0.20;
  double alpha = 0.7;
  std::uint64_t seed = 1;
  double language_prob = 0.97;
  std::chrono::milliseconds heartbeat_every{60000};
  std::chrono::milliseconds train_delay{0};
};

// Request handler behind the gsb_mock_backend executable. Serves every
// request kind from a truth file.
class MockService {
 public:
  MockService(TruthIndex truth, LanguageProfile profile, ServiceOptions opts);
  std::vector<std::string> roles() const;
  // Handles one request; `send` is called with heartbeats and then exactly
  // one response or failure record.
  void handle(const nlohmann::json& request, const std::function<void(const nlohmann::json&)>& send);

 private:
  TruthIndex truth_;
  LanguageProfile profile_;
  ServiceOptions opts_;
  NoiseTranscriber transcriber_;
  ContractionTrainer trainer_;
  WordlistLid lid_;
};

}  // namespace gsb::mock
