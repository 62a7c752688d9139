#include "gsb/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gsb/audio.hpp"
#include "gsb/subprocess.hpp"

namespace gsb {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"corpus.language", "id", "target language code (th, id, vi)"},
      {"corpus.profile", "", "language profile: built-in code or path to an .ini file (default: corpus.language)"},
      {"paths.audio_root", "audio", "directory laid out as <channel>/<video>.wav"},
      {"paths.work_dir", "work", "directory for stage artifacts"},
      {"workers.ingest", "4", "parallel WAV probes"},
      {"workers.transcribe", "4", "in-flight transcriber requests"},
      {"workers.align", "4", "parallel alignments"},
      {"workers.lid", "4", "in-flight LID requests"},
      {"backends.transcriber", "", "command launching the transcriber backend"},
      {"backends.trainer", "", "command launching the trainer backend"},
      {"backends.lid", "", "command launching the text LID backend"},
      {"backends.max_attempts", "3", "attempts per request before parking it"},
      {"backends.backoff_ms", "200", "first retry delay; doubles per attempt"},
      {"transcribe.window_s", "30", "transcription window length in seconds"},
      {"transcribe.file_handoff", "false", "send transcription batches through request/response files"},
      {"align.gap_s", "0.5", "silence that ends an utterance"},
      {"align.min_s", "1.0", "shortest utterance kept by segmentation"},
      {"align.max_s", "30.0", "longest utterance before a forced split"},
      {"filter.lid_threshold", "0.90", "minimum LID confidence"},
      {"filter.min_duration_s", "2.0", "shortest segment kept"},
      {"filter.max_duration_s", "30.0", "longest segment kept"},
      {"filter.max_dup_per_channel", "5", "copies of one transcript kept per channel"},
      {"filter.charset", "true", "enable the charset rule"},
      {"filter.duration", "true", "enable the duration rule"},
      {"filter.lid", "true", "enable the LID rule"},
      {"filter.balance", "true", "enable the duplicate cap"},
      {"partition.dev_hours", "10", "DEV target hours"},
      {"partition.test_hours", "10", "TEST target hours"},
      {"partition.seed", "1", "tie-break seed"},
      {"refine.n", "3", "number of splits and iterations"},
      {"refine.tau", "0.10", "CER gate"},
      {"refine.relabel", "true", "replace labels with teacher output after the first iteration"},
      {"refine.noise_config", "", "opaque noise settings forwarded to the trainer"},
      {"refine.capacities", "M", "comma-separated capacity tags for M1..M(n+1)"},
      {"refine.seed", "1", "split and training seed"},
      {"stats.bin_width_s", "1.0", "duration histogram bin width"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

PipelineConfig::PipelineConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

PipelineConfig PipelineConfig::from_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError(fmt::format("config file {} does not exist", path.string()));
  return from_string(read_file(path), path.parent_path());
}

PipelineConfig PipelineConfig::from_string(std::string_view ini_text, const fs::path& base_dir) {
  namespace pt = boost::property_tree;
  PipelineConfig c;
  c.base_dir_ = base_dir;
  pt::ptree tree;
  std::istringstream in{std::string(ini_text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      c.problems_.push_back(fmt::format("key '{}' is outside any section", section));
      continue;
    }
    for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
  }
  return c;
}

void PipelineConfig::set(std::string_view key, std::string_view value) {
  if (!find_key(key)) {
    problems_.push_back(fmt::format("unknown config key '{}'", key));
    return;
  }
  values_[std::string(key)] = trim(value);
}

const std::string& PipelineConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  return it->second;
}

double PipelineConfig::number(std::string_view key) const {
  const std::string& s = get(key);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError(fmt::format("{} = '{}' is not a number", key, s));
  return v;
}

std::int64_t PipelineConfig::integer(std::string_view key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(fmt::format("{} = '{}' is not an integer", key, s));
  return v;
}

bool PipelineConfig::flag(std::string_view key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(fmt::format("{} = '{}' is not a boolean", key, s));
}

fs::path PipelineConfig::path(std::string_view key) const {
  fs::path p = get(key);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p.lexically_normal();
}

std::string PipelineConfig::language() const { return get("corpus.language"); }

LanguageProfile PipelineConfig::profile() const {
  const std::string& p = get("corpus.profile");
  if (p.empty()) return builtin_profile(language());
  if (p.size() == 2 && !fs::exists(base_dir_ / p)) return builtin_profile(p);
  fs::path full = p;
  if (full.is_relative() && !base_dir_.empty()) full = base_dir_ / full;
  return load_profile(full);
}

fs::path PipelineConfig::audio_root() const { return path("paths.audio_root"); }
fs::path PipelineConfig::work_dir() const { return path("paths.work_dir"); }

FilterConfig PipelineConfig::filter() const {
  FilterConfig f;
  f.profile = profile();
  f.lid_threshold = number("filter.lid_threshold");
  f.min_duration_s = number("filter.min_duration_s");
  f.max_duration_s = number("filter.max_duration_s");
  const auto dup = integer("filter.max_dup_per_channel");
  if (dup < 1) throw ConfigError("filter.max_dup_per_channel must be at least 1");
  f.max_dup_per_channel = static_cast<std::size_t>(dup);
  f.charset_enabled = flag("filter.charset");
  f.duration_enabled = flag("filter.duration");
  f.lid_enabled = flag("filter.lid");
  f.balance_enabled = flag("filter.balance");
  return f;
}

SegmentationConfig PipelineConfig::segmentation() const {
  return {number("align.gap_s"), number("align.min_s"), number("align.max_s")};
}

RefineConfig PipelineConfig::refine() const {
  RefineConfig r;
  r.n = static_cast<int>(integer("refine.n"));
  r.tau = number("refine.tau");
  r.relabel_enabled = flag("refine.relabel");
  r.noise_config = get("refine.noise_config");
  r.capacities.clear();
  for (auto& c : split(get("refine.capacities"), ','))
    if (!trim(c).empty()) r.capacities.push_back(trim(c));
  r.seed = static_cast<std::uint64_t>(integer("refine.seed"));
  r.batch = batch("workers.transcribe");
  return r;
}

BatchOptions PipelineConfig::batch(std::string_view workers_key) const {
  BatchOptions b;
  b.parallelism = static_cast<int>(integer(workers_key));
  b.max_attempts = static_cast<int>(integer("backends.max_attempts"));
  b.backoff_base = std::chrono::milliseconds(integer("backends.backoff_ms"));
  return b;
}

double PipelineConfig::window_s() const { return number("transcribe.window_s"); }
bool PipelineConfig::file_handoff() const { return flag("transcribe.file_handoff"); }
double PipelineConfig::dev_hours() const { return number("partition.dev_hours"); }
double PipelineConfig::test_hours() const { return number("partition.test_hours"); }
std::uint64_t PipelineConfig::partition_seed() const { return static_cast<std::uint64_t>(integer("partition.seed")); }
double PipelineConfig::bin_width_s() const { return number("stats.bin_width_s"); }
int PipelineConfig::ingest_workers() const { return static_cast<int>(integer("workers.ingest")); }

std::string PipelineConfig::backend_command(std::string_view role) const {
  const std::string key = fmt::format("backends.{}", role);
  const std::string& cmd = get(key);
  if (cmd.empty()) throw ConfigError(fmt::format("{} is not set; this stage needs that backend", key));
  return cmd;
}

namespace {

bool is_integer_key(std::string_view name) {
  static const std::set<std::string_view> keys = {
      "workers.ingest",         "workers.transcribe", "workers.align", "workers.lid", "backends.max_attempts",
      "backends.backoff_ms",    "filter.max_dup_per_channel", "partition.seed", "refine.n", "refine.seed"};
  return keys.count(name) > 0;
}

bool executable_exists(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0;
  const char* env = std::getenv("PATH");
  if (!env) return false;
  for (const auto& dir : split(env, ':')) {
    if (dir.empty()) continue;
    if (::access((fs::path(dir) / name).c_str(), X_OK) == 0) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> PipelineConfig::violations() const {
  std::vector<std::string> v = problems_;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      v.push_back(e.what());
    }
  };
  for (const auto& k : config_keys()) {
    const auto& d = k.default_value;
    const bool numeric = !d.empty() && (std::isdigit(static_cast<unsigned char>(d[0])) != 0);
    const bool boolean = d == "true" || d == "false";
    if (boolean) check([&] { flag(k.name); });
    else if (numeric && is_integer_key(k.name)) check([&] { integer(k.name); });
    else if (numeric) check([&] { number(k.name); });
  }
  check([&] {
    const std::string lang = language();
    if (lang != "th" && lang != "id" && lang != "vi" && get("corpus.profile").empty())
      throw ConfigError(fmt::format("corpus.language '{}' has no built-in profile; set corpus.profile", lang));
    const auto p = profile();
    if (p.code != lang) throw ConfigError(fmt::format("profile '{}' does not match corpus.language '{}'", p.code, lang));
  });
  try {
    for (const auto& s : filter().violations()) v.push_back("filter: " + s);
  } catch (const std::exception&) {
    // a value did not parse (already reported); range-check the ones that did
    check([&] {
      const double t = number("filter.lid_threshold");
      if (!(t >= 0.0 && t <= 1.0)) v.push_back(fmt::format("filter: lid_threshold {} is outside [0, 1]", t));
    });
  }
  check([&] {
    for (const auto& s : refine().violations()) {
      if (s.find("noise_config") != std::string::npos) continue;  // only required when refine runs
      v.push_back(s);
    }
  });
  check([&] {
    const auto s = segmentation();
    if (!(s.gap_s > 0)) v.push_back("align.gap_s must be positive");
    if (!(s.min_s >= 0 && s.min_s < s.max_s)) v.push_back("align.min_s must be non-negative and below align.max_s");
  });
  check([&] {
    if (!(window_s() > 0)) v.push_back("transcribe.window_s must be positive");
  });
  check([&] {
    if (dev_hours() < 0 || test_hours() < 0) v.push_back("partition targets must be non-negative");
  });
  check([&] {
    if (!(bin_width_s() > 0)) v.push_back("stats.bin_width_s must be positive");
  });
  for (const char* w : {"workers.ingest", "workers.transcribe", "workers.align", "workers.lid", "backends.max_attempts"}) {
    check([&] {
      if (integer(w) < 1) v.push_back(fmt::format("{} must be at least 1", w));
    });
  }
  check([&] {
    if (!fs::is_directory(audio_root()))
      v.push_back(fmt::format("paths.audio_root {} is not a directory", audio_root().string()));
  });
  for (const char* role : {"transcriber", "trainer", "lid"}) {
    check([&] {
      const std::string& cmd = get(fmt::format("backends.{}", role));
      if (cmd.empty()) return;
      const auto argv = split_command(cmd);
      if (!executable_exists(argv.front()))
        v.push_back(fmt::format("backends.{}: '{}' is not an executable", role, argv.front()));
      for (std::size_t i = 1; i + 1 < argv.size(); ++i) {
        // arguments that name files must exist; flags ending in -file or --truth point at inputs
        if ((argv[i] == "--truth" || argv[i] == "--profile-file") && !fs::exists(argv[i + 1]))
          v.push_back(fmt::format("backends.{}: file {} does not exist", role, argv[i + 1]));
      }
    });
  }
  return v;
}

void PipelineConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = fmt::format("{} config problem{}:", v.size(), v.size() == 1 ? "" : "s");
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

std::string PipelineConfig::fingerprint(const std::vector<std::string>& sections) const {
  std::string out;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (std::find(sections.begin(), sections.end(), k.substr(0, dot)) != sections.end()) out += k + "=" + v + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timing

std::string timing_to_json(const StageTiming& t) {
  return JsonLine()
      .str("stage", t.stage)
      .num("wall_s", t.wall_s)
      .num("audio_hours", t.audio_hours)
      .str("rtf", fmt::format("{:.3e}", t.rtf()))
      .finish();
}

std::vector<StageTiming> load_timings(const fs::path& path) {
  std::vector<StageTiming> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    out.push_back({j.value("stage", ""), j.value("wall_s", 0.0), j.value("audio_hours", 0.0)});
  }
  return out;
}

std::string format_timing_table(const std::vector<StageTiming>& ts) {
  std::string out = fmt::format("{:<14} {:>16} {:>12} {:>12}\n", "Process", "Time Consumption", "Audio (h)", "RTF");
  for (const auto& t : ts) {
    const std::string wall = t.wall_s < 1.0 ? fmt::format("{:.3f}s", t.wall_s) : format_duration_hms(t.wall_s);
    out += fmt::format("{:<14} {:>16} {:>12} {:>12}\n", t.stage, wall, format_fixed(t.audio_hours, 4),
                       fmt::format("{:.2e}", t.rtf()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage graph

namespace {

struct Input {
  std::string artifact;
  std::string producer;
};

struct StageSpec {
  std::string name;
  std::vector<Input> inputs;
  std::vector<std::string> outputs;
  std::vector<std::string> sections;  // config sections that shape the outputs
};

const std::vector<StageSpec>& specs() {
  static const std::vector<StageSpec> s = {
      {"ingest", {}, {"videos.jsonl", "ingest_report.jsonl"}, {"corpus"}},
      {"detect-lang", {{"videos.jsonl", "ingest"}}, {"videos.lang.jsonl"}, {"corpus"}},
      {"transcribe", {{"videos.lang.jsonl", "detect-lang"}}, {"transcripts.jsonl"}, {"corpus", "transcribe"}},
      {"align", {{"transcripts.jsonl", "transcribe"}, {"videos.lang.jsonl", "detect-lang"}}, {"alignments.jsonl"}, {}},
      {"segment", {{"alignments.jsonl", "align"}, {"videos.lang.jsonl", "detect-lang"}}, {"segments.jsonl"}, {"align"}},
      {"normalize", {{"segments.jsonl", "segment"}}, {"normalized.jsonl"}, {"corpus"}},
      {"filter", {{"normalized.jsonl", "normalize"}}, {"filtered.jsonl", "filter_report.jsonl", "rejected.jsonl"},
       {"corpus", "filter"}},
      {"partition", {{"filtered.jsonl", "filter"}}, {"partitioned.jsonl"}, {"partition"}},
      {"refine", {{"partitioned.jsonl", "partition"}}, {"refined.jsonl"}, {"corpus", "refine"}},
      {"stats", {}, {"stats.txt", "stats.jsonl"}, {"stats"}},
      {"timing-report", {}, {}, {}},
  };
  return s;
}

const StageSpec& spec_of(std::string_view name) {
  for (const auto& s : specs())
    if (s.name == name) return s;
  throw ConfigError(fmt::format("unknown stage '{}'", name));
}

std::string hash_of(const fs::path& p) { return hash_hex(hash_file(p)); }

// Content hash of every file under the audio root, in path order.
std::string tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) acc += fs::relative(f, root).generic_string() + ":" + hash_of(f) + "\n";
  return hash_hex(fnv1a64(acc));
}

class StageRegistry {
 public:
  explicit StageRegistry(fs::path work) : path_(work / "stages.json"), work_(std::move(work)) {
    if (fs::exists(path_)) {
      data_ = json::parse(read_file(path_), nullptr, false);
      if (data_.is_discarded() || !data_.is_object()) throw IoError(fmt::format("{} is corrupt", path_.string()));
    } else {
      data_ = json::object();
    }
  }

  // Throws StaleArtifactError unless `stage`'s upstream chain is intact.
  void require_fresh(const StageSpec& stage, const PipelineConfig& cfg, std::vector<std::string>& seen) const {
    for (const auto& in : stage.inputs) check_artifact(in, cfg, seen);
  }

  void check_artifact(const Input& in, const PipelineConfig& cfg, std::vector<std::string>& seen) const {
    const fs::path p = work_ / in.artifact;
    if (!fs::exists(p))
      throw StaleArtifactError(fmt::format("missing {}: run '{}' first", in.artifact, in.producer));
    if (!data_.contains(in.producer))
      throw StaleArtifactError(fmt::format("{} was not produced by '{}' in this work dir: re-run '{}'", in.artifact,
                                           in.producer, in.producer));
    const auto& rec = data_[in.producer];
    if (rec["outputs"].value(in.artifact, "") != hash_of(p))
      throw StaleArtifactError(
          fmt::format("{} changed after '{}' wrote it (hash mismatch): re-run '{}'", in.artifact, in.producer, in.producer));
    if (std::find(seen.begin(), seen.end(), in.producer) != seen.end()) return;
    seen.push_back(in.producer);
    const auto& producer = spec_of(in.producer);
    if (rec.value("config", "") != hash_hex(fnv1a64(cfg.fingerprint(producer.sections))))
      throw StaleArtifactError(
          fmt::format("'{}' ran with different settings than the current config: re-run '{}'", in.producer, in.producer));
    for (const auto& [name, h] : rec["inputs"].items()) {
      const std::string now = name == "@audio_root" ? tree_hash(cfg.audio_root()) : hash_of(work_ / name);
      if (now != h.get<std::string>())
        throw StaleArtifactError(fmt::format("'{}' is out of date: {} changed since it ran; re-run '{}'", in.producer,
                                             name == "@audio_root" ? "the audio tree" : name, in.producer));
    }
    require_fresh(producer, cfg, seen);
  }

  void stamp(const StageSpec& stage, const PipelineConfig& cfg, const std::map<std::string, std::string>& inputs) {
    json rec;
    rec["config"] = hash_hex(fnv1a64(cfg.fingerprint(stage.sections)));
    rec["inputs"] = json::object();
    for (const auto& [k, v] : inputs) rec["inputs"][k] = v;
    rec["outputs"] = json::object();
    for (const auto& o : stage.outputs)
      if (fs::exists(work_ / o)) rec["outputs"][o] = hash_of(work_ / o);
    data_[stage.name] = rec;
    write_file_atomic(path_, data_.dump(2) + "\n");
  }

 private:
  fs::path path_;
  fs::path work_;
  json data_;
};

template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  const auto k = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  for (std::size_t t = 1; t < k; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  if (!in) throw IoError(fmt::format("cannot read {}", p.string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ValidationError(fmt::format("{}:{}: not JSON", p.string(), lineno));
    out.push_back(std::move(j));
  }
  return out;
}

double video_hours(const Manifest& m) {
  double h = 0.0;
  for (const auto& v : m.videos) h += v.duration_s / 3600.0;
  return h;
}

double segment_hours(const Manifest& m) {
  double h = 0.0;
  for (const auto& s : m.segments) h += s.duration_s() / 3600.0;
  return h;
}

struct StageWork {
  StageOutcome outcome;
  double audio_hours = 0.0;
  std::map<std::string, std::string> extra_inputs;
};

// ---- individual stages ----------------------------------------------------

StageWork do_ingest(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  auto r = ingest_audio_dir(cfg.audio_root(), cfg.language(), cfg.ingest_workers());
  save_manifest(work / "videos.jsonl", r.manifest);
  std::string report;
  std::size_t errors = 0;
  for (const auto& issue : r.report) {
    const bool err = issue.severity == IngestIssue::Severity::kError;
    errors += err ? 1 : 0;
    report += JsonLine().str("path", issue.path).str("severity", err ? "error" : "warning").str("message", issue.message).finish() + "\n";
    log_event(err ? LogLevel::kWarn : LogLevel::kInfo, "ingest_issue", JsonLine().str("path", issue.path).str("message", issue.message));
  }
  write_file_atomic(work / "ingest_report.jsonl", report);
  w.audio_hours = video_hours(r.manifest);
  w.extra_inputs["@audio_root"] = tree_hash(cfg.audio_root());
  w.outcome.summary = fmt::format("ingested {} videos ({} h), {} unreadable", r.manifest.videos.size(),
                                  format_fixed(w.audio_hours, 4), errors);
  return w;
}

StageWork do_detect(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  Manifest m = load_manifest(work / "videos.jsonl");
  ProcessBackend backend(cfg.backend_command("transcriber"));
  std::vector<TranscribeRequest> reqs;
  for (const auto& v : m.videos) {
    if (!(v.duration_s > 0)) continue;
    const Window win = mid_window(v.duration_s);
    TranscribeRequest r;
    r.id = v.id;
    r.audio_path = v.path;
    r.start_s = win.start_s;
    r.end_s = win.end_s;
    r.task = TranscribeTask::kDetect;
    reqs.push_back(r);
    w.audio_hours += (win.end_s - win.start_s) / 3600.0;
  }
  auto res = transcribe_batch(backend, reqs, cfg.batch("workers.transcribe"));
  std::map<std::string, const TranscribeResponse*> by_id;
  for (const auto& r : res.responses) by_id[r.id] = &r;
  std::size_t target = 0, other = 0;
  for (auto& v : m.videos) {
    v.detected_language.reset();
    v.language_prob.reset();
    auto it = by_id.find(v.id);
    if (it == by_id.end() || !it->second->detected_language) continue;
    v.detected_language = it->second->detected_language;
    v.language_prob = it->second->language_prob;
    (*v.detected_language == cfg.language() ? target : other) += 1;
  }
  for (const auto& p : res.parked)
    log_event(LogLevel::kWarn, "video_parked", JsonLine().str("id", p.id).str("reason", p.reason));
  save_manifest(work / "videos.lang.jsonl", m);
  w.outcome.parked = res.parked.size();
  w.outcome.summary = fmt::format("{} videos in {}, {} in other languages (excluded), {} parked", target, cfg.language(),
                                  other, res.parked.size());
  return w;
}

StageWork do_transcribe(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  const Manifest m = load_manifest(work / "videos.lang.jsonl");
  const double win = cfg.window_s();
  std::vector<TranscribeRequest> reqs;
  for (const auto& v : m.videos) {
    if (v.detected_language != cfg.language()) continue;
    const auto n = static_cast<std::size_t>(std::ceil(v.duration_s / win));
    for (std::size_t k = 0; k < n; ++k) {
      TranscribeRequest r;
      r.id = fmt::format("{}-w{:04d}", v.id, k);
      r.audio_path = v.path;
      r.start_s = static_cast<double>(k) * win;
      r.end_s = std::min(v.duration_s, static_cast<double>(k + 1) * win);
      r.language_hint = cfg.language();
      if (r.end_s - r.start_s <= 0) continue;
      reqs.push_back(r);
      w.audio_hours += (r.end_s - r.start_s) / 3600.0;
    }
  }
  ProcessBackend backend(cfg.backend_command("transcriber"));
  BatchResult<TranscribeResponse> res = cfg.file_handoff()
                                            ? backend.transcribe_via_files(reqs, work / "handoff")
                                            : transcribe_batch(backend, reqs, cfg.batch("workers.transcribe"));
  std::map<std::string, const TranscribeResponse*> by_id;
  for (const auto& r : res.responses) by_id[r.id] = &r;
  std::map<std::string, std::string> parked;
  for (const auto& p : res.parked) parked[p.id] = p.reason;
  std::string out;
  for (const auto& r : reqs) {
    const std::string video = r.id.substr(0, r.id.rfind("-w"));
    if (auto it = by_id.find(r.id); it != by_id.end()) {
      out += JsonLine()
                 .str("kind", "window")
                 .str("id", r.id)
                 .str("video", video)
                 .num("start_s", r.start_s)
                 .num("end_s", r.end_s)
                 .str("text", it->second->text)
                 .finish() +
             "\n";
    } else {
      out += JsonLine().str("kind", "parked").str("id", r.id).str("video", video).str("reason", parked[r.id]).finish() + "\n";
      log_event(LogLevel::kWarn, "window_parked", JsonLine().str("id", r.id).str("reason", parked[r.id]));
    }
  }
  write_file_atomic(work / "transcripts.jsonl", out);
  w.outcome.parked = res.parked.size();
  w.outcome.summary = fmt::format("transcribed {} windows, {} parked", res.responses.size(), res.parked.size());
  return w;
}

StageWork do_align(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  struct Win {
    std::string id, video, text;
    double start_s = 0, end_s = 0;
  };
  std::vector<Win> wins;
  for (const auto& j : read_jsonl(work / "transcripts.jsonl")) {
    if (j.value("kind", "") != "window") continue;
    Win x{j["id"], j["video"], j["text"], j["start_s"], j["end_s"]};
    if (trim(x.text).empty()) continue;
    wins.push_back(std::move(x));
    w.audio_hours += (wins.back().end_s - wins.back().start_s) / 3600.0;
  }
  const Manifest m = load_manifest(work / "videos.lang.jsonl");
  fs::create_directories(work / "emissions");
  std::vector<EmitRequest> reqs;
  for (const auto& x : wins) {
    const VideoRecord* v = m.find_video(x.video);
    if (!v) throw ValidationError(fmt::format("window {} references unknown video {}", x.id, x.video));
    reqs.push_back({x.id, v->path, x.start_s, x.end_s, (work / "emissions" / (x.id + ".emis")).string()});
  }
  ProcessBackend backend(cfg.backend_command("transcriber"));
  auto res = emit_batch(backend, reqs, cfg.batch("workers.transcribe"));
  std::map<std::string, std::string> emitted, parked;
  for (const auto& r : res.responses) emitted[r.id] = r.path;
  for (const auto& p : res.parked) parked[p.id] = p.reason;

  std::vector<std::string> lines(wins.size());
  std::atomic<std::size_t> failed{0};
  parallel_for(wins.size(), static_cast<int>(cfg.batch("workers.align").parallelism), [&](std::size_t i) {
    const auto& x = wins[i];
    auto fail = [&](const std::string& why) {
      ++failed;
      lines[i] = JsonLine().str("kind", "align_failed").str("id", x.id).str("video", x.video).str("reason", why).finish();
    };
    auto it = emitted.find(x.id);
    if (it == emitted.end()) return fail(parked[x.id]);
    try {
      const EmissionMatrix e = load_emissions(it->second);
      const auto toks = tokens_for_transcript(x.text, e);
      if (toks.empty()) return fail("transcript has no alignable characters");
      std::vector<std::uint32_t> ids;
      for (const auto& t : toks) ids.push_back(t.vocab_index);
      const auto path = viterbi_align(e, ids);
      const auto spans = token_spans(path, e);
      std::string arr = "[";
      for (std::size_t k = 0; k < spans.size(); ++k) {
        const auto& tok = toks[spans[k].token_index];
        if (k) arr += ',';
        arr += fmt::format("[{},{},{},{},{}]", tok.byte_begin, tok.byte_end, format_fixed(x.start_s + spans[k].start_s),
                           format_fixed(x.start_s + spans[k].end_s), format_fixed(spans[k].mean_log_score));
      }
      arr += ']';
      lines[i] = JsonLine()
                     .str("kind", "alignment")
                     .str("id", x.id)
                     .str("video", x.video)
                     .num("start_s", x.start_s)
                     .num("end_s", x.end_s)
                     .str("text", x.text)
                     .num("score", path.total_log_score)
                     .raw("spans", arr)
                     .finish();
    } catch (const Error& e) {
      fail(e.what());
    }
  });
  std::string out;
  for (auto& l : lines) out += l + "\n";
  write_file_atomic(work / "alignments.jsonl", out);
  w.outcome.parked = res.parked.size();
  w.outcome.summary = fmt::format("aligned {} windows, {} failed", wins.size() - failed.load(), failed.load());
  return w;
}

StageWork do_segment(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  const Manifest videos = load_manifest(work / "videos.lang.jsonl");
  const SegmentationConfig seg = cfg.segmentation();
  Manifest out;
  out.language = cfg.language();
  out.videos = videos.videos;
  std::map<std::string, std::size_t> ordinal;
  std::size_t dropped = 0;
  for (const auto& j : read_jsonl(work / "alignments.jsonl")) {
    if (j.value("kind", "") != "alignment") continue;
    const std::string video = j["video"];
    const std::string text = j["text"];
    const VideoRecord* v = videos.find_video(video);
    if (!v) throw ValidationError(fmt::format("alignment {} references unknown video {}", j["id"].get<std::string>(), video));
    w.audio_hours += (j["end_s"].get<double>() - j["start_s"].get<double>()) / 3600.0;
    std::vector<TokenSpan> spans;
    std::vector<std::pair<std::size_t, std::size_t>> bytes;
    for (const auto& s : j["spans"]) {
      TokenSpan t;
      t.token_index = spans.size();
      t.start_s = s[2].get<double>();
      t.end_s = s[3].get<double>();
      t.mean_log_score = s[4].get<double>();
      spans.push_back(t);
      bytes.emplace_back(s[0].get<std::size_t>(), s[1].get<std::size_t>());
    }
    const auto r = segment_utterances(spans, seg);
    dropped += r.dropped.size();
    for (const auto& u : r.utterances) {
      const auto b = bytes[u.first_span].first;
      const auto e = bytes[u.last_span].second;
      Segment s;
      s.id = make_segment_id(video, ordinal[video]++);
      s.video = video;
      s.channel = v->channel;
      s.start_s = std::max(0.0, u.start_s);
      s.end_s = std::min(v->duration_s, u.end_s);
      s.raw_text = trim(text.substr(b, e - b));
      s.text = s.raw_text;
      s.language = cfg.language();
      s.source = LabelSource::whisper();
      if (s.end_s <= s.start_s) {
        ++dropped;
        --ordinal[video];
        continue;
      }
      out.segments.push_back(std::move(s));
    }
  }
  out.canonicalize();
  out.validate();
  save_manifest(work / "segments.jsonl", out);
  w.outcome.summary = fmt::format("{} segments ({} h), {} pieces shorter than {} s dropped", out.segments.size(),
                                  format_fixed(segment_hours(out), 4), dropped, seg.min_s);
  return w;
}

StageWork do_normalize(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  Manifest m = load_manifest(work / "segments.jsonl");
  const LanguageProfile profile = cfg.profile();
  std::size_t empty = 0;
  for (auto& s : m.segments) {
    s.text = normalize(s.raw_text, profile);
    if (s.text.empty()) ++empty;
  }
  save_manifest(work / "normalized.jsonl", m);
  w.audio_hours = segment_hours(m);
  w.outcome.summary = fmt::format("normalized {} segments ({} now empty)", m.segments.size(), empty);
  return w;
}

StageWork do_filter(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  const Manifest m = load_manifest(work / "normalized.jsonl");
  const FilterConfig fc = cfg.filter();
  std::unique_ptr<ProcessBackend> backend;
  std::unique_ptr<CachingLid> lid;
  if (fc.lid_enabled) {
    backend = std::make_unique<ProcessBackend>(cfg.backend_command("lid"));
    lid = std::make_unique<CachingLid>(*backend);
  }
  auto r = apply_all(m, fc, lid.get(), cfg.batch("workers.lid"));
  save_manifest(work / "filtered.jsonl", r.retained);
  write_file_atomic(work / "filter_report.jsonl", filter_report_jsonl(r.report));
  write_file_atomic(work / "rejected.jsonl", rejections_jsonl(r.rejections));
  for (const auto& rej : r.rejections)
    log_event(LogLevel::kDebug, "segment_rejected",
              JsonLine().str("id", rej.segment.id).str("rule", rule_name(rej.rule)).str("reason", rej.reason));
  w.audio_hours = segment_hours(m);
  w.outcome.parked = r.parked.size();
  w.outcome.summary = format_filter_report(r.report);
  return w;
}

StageWork do_partition(const PipelineConfig& cfg, const fs::path& work) {
  StageWork w;
  const Manifest m = load_manifest(work / "filtered.jsonl");
  Manifest out = assign_splits(m, cfg.dev_hours(), cfg.test_hours(), cfg.partition_seed());
  save_manifest(work / "partitioned.jsonl", out);
  w.audio_hours = segment_hours(m);
  const auto st = compute_stats(out, cfg.bin_width_s());
  w.outcome.summary = fmt::format("TRAIN {} h, DEV {} h, TEST {} h", format_fixed(st.splits.at(Split::kTrain).hours, 4),
                                  format_fixed(st.splits.at(Split::kDev).hours, 4),
                                  format_fixed(st.splits.at(Split::kTest).hours, 4));
  return w;
}

StageWork do_refine(const PipelineConfig& cfg, const fs::path& work, const StageOptions& opts) {
  StageWork w;
  const Manifest m = load_manifest(work / "partitioned.jsonl");
  bool any_train = false;
  for (const auto& [ch, sp] : m.splits) any_train = any_train || sp == Split::kTrain;
  Manifest p;
  p.language = m.language;
  Manifest held = p;
  std::set<std::string> used_videos;
  for (const auto& s : m.segments) {
    const Split sp = m.split_of(s.channel);
    if (!any_train || sp == Split::kTrain || sp == Split::kUnassigned) {
      p.segments.push_back(s);
      used_videos.insert(s.video);
      p.splits[s.channel] = sp;
    } else {
      held.segments.push_back(s);
    }
  }
  for (const auto& v : m.videos)
    if (used_videos.count(v.id)) p.videos.push_back(v);
  p.canonicalize();

  RefineConfig rc = cfg.refine();
  rc.stop_after = opts.stop_after;
  const LanguageProfile profile = cfg.profile();
  const std::string tcmd = cfg.backend_command("transcriber");
  const std::string mcmd = cfg.backend_command("trainer");
  auto transcriber = std::make_unique<ProcessBackend>(tcmd);
  std::unique_ptr<ProcessBackend> trainer_own;
  ProcessBackend* trainer = transcriber.get();
  if (mcmd != tcmd) {
    trainer_own = std::make_unique<ProcessBackend>(mcmd);
    trainer = trainer_own.get();
  }
  RefineBackends be{*transcriber, *trainer, &profile};
  const auto res = run_refinement(p, rc, be, work / "refine");
  w.audio_hours = segment_hours(p) * static_cast<double>(res.iterations.size());
  if (!res.finished) {
    w.outcome.interrupted = true;
    w.outcome.summary = fmt::format("stopped after iteration {} of {}; re-run refine to resume", res.completed_iteration, rc.n);
    return w;
  }
  Manifest out = res.refined;
  out.language = m.language;
  out.videos = m.videos;
  out.splits = m.splits;
  for (const auto& s : held.segments) out.segments.push_back(s);
  out.canonicalize();
  save_manifest(work / "refined.jsonl", out);
  std::string lines;
  for (const auto& it : res.iterations)
    lines += fmt::format("iteration {}: {} of {} retained ({} h), student {}\n", it.iteration, it.retained, it.candidates,
                         format_fixed(it.retained_hours, 4), it.student.id);
  w.outcome.summary = lines + fmt::format("refined set: {} segments", res.refined.segments.size());
  return w;
}

StageWork do_stats(const PipelineConfig& cfg, const fs::path& work, const StageOptions& opts,
                   std::vector<Input>& dynamic_inputs) {
  StageWork w;
  fs::path in;
  if (opts.manifest) {
    in = *opts.manifest;
  } else {
    static const std::vector<Input> order = {{"refined.jsonl", "refine"},     {"partitioned.jsonl", "partition"},
                                             {"filtered.jsonl", "filter"},    {"normalized.jsonl", "normalize"},
                                             {"segments.jsonl", "segment"},   {"videos.lang.jsonl", "detect-lang"},
                                             {"videos.jsonl", "ingest"}};
    for (const auto& o : order) {
      if (fs::exists(work / o.artifact)) {
        in = work / o.artifact;
        dynamic_inputs.push_back(o);
        break;
      }
    }
    if (in.empty()) throw StaleArtifactError("no manifest to summarize: run 'ingest' first");
  }
  const Manifest m = load_manifest(in);
  const auto st = compute_stats(m, cfg.bin_width_s());
  const std::string table = format_stats_table(st);
  write_file_atomic(work / "stats.txt", table);
  write_file_atomic(work / "stats.jsonl", stats_to_json(st));
  w.audio_hours = segment_hours(m);
  w.outcome.summary = fmt::format("statistics of {}\n{}", in.filename().string(), table);
  return w;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& s : specs()) v.push_back(s.name);
    return v;
  }();
  return names;
}

std::vector<std::string> stage_outputs(std::string_view name) { return spec_of(name).outputs; }

StageOutcome run_stage(std::string_view name, const PipelineConfig& cfg, const StageOptions& opts) {
  const StageSpec& spec = spec_of(name);
  cfg.validate();
  const fs::path work = cfg.work_dir();
  fs::create_directories(work);

  if (spec.name == "timing-report") {
    StageOutcome o;
    o.summary = format_timing_table(load_timings(work / "timing.jsonl"));
    return o;
  }

  StageRegistry reg(work);
  std::vector<std::string> seen;
  reg.require_fresh(spec, cfg, seen);

  const auto t0 = std::chrono::steady_clock::now();
  StageWork w;
  std::vector<Input> dynamic_inputs;
  if (spec.name == "ingest") w = do_ingest(cfg, work);
  else if (spec.name == "detect-lang") w = do_detect(cfg, work);
  else if (spec.name == "transcribe") w = do_transcribe(cfg, work);
  else if (spec.name == "align") w = do_align(cfg, work);
  else if (spec.name == "segment") w = do_segment(cfg, work);
  else if (spec.name == "normalize") w = do_normalize(cfg, work);
  else if (spec.name == "filter") w = do_filter(cfg, work);
  else if (spec.name == "partition") w = do_partition(cfg, work);
  else if (spec.name == "refine") w = do_refine(cfg, work, opts);
  else if (spec.name == "stats") {
    // the stats input is chosen at run time, so its freshness is checked here
    w = do_stats(cfg, work, opts, dynamic_inputs);
    for (const auto& in : dynamic_inputs) reg.check_artifact(in, cfg, seen);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  StageTiming t{spec.name, wall, w.audio_hours};
  std::ofstream(work / "timing.jsonl", std::ios::app) << timing_to_json(t) << "\n";
  log_event(LogLevel::kInfo, "stage_done",
            JsonLine().str("stage", spec.name).num("wall_s", wall, 3).num("audio_hours", w.audio_hours, 4).str("rtf", fmt::format("{:.3e}", t.rtf())));
  if (w.outcome.interrupted) return w.outcome;

  std::map<std::string, std::string> inputs = w.extra_inputs;
  for (const auto& in : spec.inputs) inputs[in.artifact] = hash_of(work / in.artifact);
  for (const auto& in : dynamic_inputs) inputs[in.artifact] = hash_of(work / in.artifact);
  reg.stamp(spec, cfg, inputs);
  return w.outcome;
}

}  // namespace gsb
