#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/align.hpp"
#include "gsb/backends.hpp"
#include "gsb/filters.hpp"
#include "gsb/manifest.hpp"
#include "gsb/refine.hpp"
#include "gsb/textnorm.hpp"

namespace gsb {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A stage refused to run because an upstream artifact is missing or was
// changed after its producer wrote it.
class StaleArtifactError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string default_value;
  std::string help;
};

// Every recognised key with its default.
const std::vector<ConfigKey>& config_keys();

// Flat "section.key" -> value view over an INI file plus overrides. Unknown
// keys and malformed values are collected and reported together.
class PipelineConfig {
 public:
  PipelineConfig();
  static PipelineConfig from_file(const std::filesystem::path& path);
  static PipelineConfig from_string(std::string_view ini_text, const std::filesystem::path& base_dir = {});

  // Overrides a key; unknown keys are recorded as violations.
  void set(std::string_view key, std::string_view value);
  const std::string& get(std::string_view key) const;

  std::string language() const;
  LanguageProfile profile() const;
  std::filesystem::path audio_root() const;
  std::filesystem::path work_dir() const;
  FilterConfig filter() const;
  SegmentationConfig segmentation() const;
  RefineConfig refine() const;
  BatchOptions batch(std::string_view workers_key) const;
  double window_s() const;
  bool file_handoff() const;
  double dev_hours() const;
  double test_hours() const;
  std::uint64_t partition_seed() const;
  double bin_width_s() const;
  int ingest_workers() const;
  std::string backend_command(std::string_view role) const;

  // Every problem at once: unknown keys, bad numbers, out-of-range values,
  // missing paths.
  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError

  // Canonical "key=value" lines for the keys in `sections`, used to stamp
  // stage outputs.
  std::string fingerprint(const std::vector<std::string>& sections) const;

 private:
  double number(std::string_view key) const;
  std::int64_t integer(std::string_view key) const;
  bool flag(std::string_view key) const;
  std::filesystem::path path(std::string_view key) const;

  std::map<std::string, std::string, std::less<>> values_;
  std::vector<std::string> problems_;
  std::filesystem::path base_dir_;
};

// ---------------------------------------------------------------------------
// Stages

struct StageTiming {
  std::string stage;
  double wall_s = 0.0;
  double audio_hours = 0.0;
  double rtf() const { return audio_hours > 0.0 ? wall_s / (audio_hours * 3600.0) : 0.0; }
};

std::string timing_to_json(const StageTiming& t);
std::vector<StageTiming> load_timings(const std::filesystem::path& path);
// Stage, wall time, audio hours and RTF, one row per record.
std::string format_timing_table(const std::vector<StageTiming>& ts);

// Overrides for a single command invocation.
struct StageOptions {
  std::optional<int> stop_after;                 // refine
  std::optional<std::filesystem::path> manifest;  // stats input
};

struct StageOutcome {
  std::string summary;       // human-readable, printed at the end
  bool interrupted = false;  // refine stopped early on request
  std::size_t parked = 0;
};

const std::vector<std::string>& stage_names();

// Runs one stage: checks upstream artifacts, does the work, stamps outputs
// in stages.json and appends a timing record.
StageOutcome run_stage(std::string_view name, const PipelineConfig& cfg, const StageOptions& opts = {});

// Names of the primary artifacts of a stage, relative to the work dir.
std::vector<std::string> stage_outputs(std::string_view name);

}  // namespace gsb
