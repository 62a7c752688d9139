#include "gsb/manifest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gsb/audio.hpp"

namespace gsb {
namespace {

using nlohmann::json;

double json_number(const json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

std::optional<std::string> opt_str(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

std::optional<double> opt_num(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return json_number(*it);
}

std::string video_line(const VideoRecord& v) {
  JsonLine l;
  l.str("kind", "video").str("id", v.id).str("channel", v.channel).str("path", v.path);
  l.num("duration_s", v.duration_s).integer("sample_rate_hz", v.sample_rate_hz).integer("channels", v.channels);
  if (v.detected_language) l.str("detected_language", *v.detected_language);
  if (v.language_prob) l.num("language_prob", *v.language_prob);
  if (v.topic) l.str("topic", *v.topic);
  if (v.format) l.str("format", *v.format);
  return l.finish();
}

VideoRecord video_from_json(const json& j) {
  VideoRecord v;
  v.id = j.at("id").get<std::string>();
  v.channel = j.at("channel").get<std::string>();
  v.path = j.at("path").get<std::string>();
  v.duration_s = json_number(j.at("duration_s"));
  v.sample_rate_hz = j.at("sample_rate_hz").get<int>();
  v.channels = j.at("channels").get<int>();
  v.detected_language = opt_str(j, "detected_language");
  v.language_prob = opt_num(j, "language_prob");
  v.topic = opt_str(j, "topic");
  v.format = opt_str(j, "format");
  return v;
}

Segment segment_from_json(const json& j) {
  Segment s;
  s.id = j.at("id").get<std::string>();
  s.video = j.at("video").get<std::string>();
  s.channel = j.at("channel").get<std::string>();
  s.start_s = json_number(j.at("start_s"));
  s.end_s = json_number(j.at("end_s"));
  s.text = j.at("text").get<std::string>();
  s.raw_text = j.value("raw_text", s.text);
  s.language = j.value("language", std::string{});
  s.source = LabelSource::parse(j.value("source", std::string("whisper")));
  s.lid_score = opt_num(j, "lid_score");
  s.cer_vs_prev = opt_num(j, "cer_vs_prev");
  return s;
}

// Closest reachable subset sum in fixed-point units. Returns the chosen
// item indices.
std::vector<std::size_t> closest_subset(const std::vector<std::int64_t>& w, std::int64_t lo, std::int64_t target,
                                        std::int64_t hi) {
  std::int64_t total = 0;
  for (auto x : w) total += x;
  const auto cap = static_cast<std::size_t>(std::min(total, hi)) + 1;
  // first_item[s]: item that first made sum s reachable; -1 = unreachable, -2 = empty set.
  std::vector<std::int32_t> first_item(cap, -1);
  first_item[0] = -2;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto wk = static_cast<std::size_t>(w[k]);
    if (wk == 0 || wk >= cap) continue;
    for (std::size_t s = cap - 1; s >= wk; --s) {
      if (first_item[s] == -1 && first_item[s - wk] != -1 && first_item[s - wk] != static_cast<std::int32_t>(k))
        first_item[s] = static_cast<std::int32_t>(k);
      if (s == wk) break;
    }
  }
  std::int64_t best = -1;
  for (std::int64_t s = std::max<std::int64_t>(lo, 0); s < static_cast<std::int64_t>(cap); ++s) {
    if (first_item[static_cast<std::size_t>(s)] == -1) continue;
    if (best < 0 || std::llabs(s - target) < std::llabs(best - target)) best = s;
  }
  std::vector<std::size_t> chosen;
  if (best <= 0) return chosen;
  auto s = static_cast<std::size_t>(best);
  while (s > 0) {
    const auto k = static_cast<std::size_t>(first_item[s]);
    chosen.push_back(k);
    s -= static_cast<std::size_t>(w[k]);
  }
  return chosen;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kDev: return "DEV";
    case Split::kTest: return "TEST";
    case Split::kUnassigned: return "UNASSIGNED";
  }
  return "UNASSIGNED";
}

Split parse_split(std::string_view name) {
  if (name == "TRAIN") return Split::kTrain;
  if (name == "DEV") return Split::kDev;
  if (name == "TEST") return Split::kTest;
  if (name == "UNASSIGNED") return Split::kUnassigned;
  throw ValidationError(fmt::format("unknown split '{}'", name));
}

std::string LabelSource::to_string() const {
  switch (kind) {
    case Kind::kWhisper: return "whisper";
    case Kind::kTeacher: return fmt::format("teacher:{}", iteration);
    case Kind::kManual: return "manual";
  }
  return "whisper";
}

LabelSource LabelSource::parse(std::string_view s) {
  if (s == "whisper") return whisper();
  if (s == "manual") return manual();
  if (s.starts_with("teacher:")) {
    const int i = std::stoi(std::string(s.substr(8)));
    if (i < 1) throw ValidationError(fmt::format("teacher iteration must be >= 1 in '{}'", s));
    return teacher(i);
  }
  throw ValidationError(fmt::format("unknown label source '{}'", s));
}

SegmentId make_segment_id(std::string_view video, std::size_t ordinal) { return fmt::format("{}-{:05d}", video, ordinal); }

const VideoRecord* Manifest::find_video(std::string_view id) const {
  auto it = std::lower_bound(videos.begin(), videos.end(), id,
                             [](const VideoRecord& v, std::string_view k) { return v.id < k; });
  if (it != videos.end() && it->id == id) return &*it;
  // Not canonicalized yet: fall back to a scan.
  for (const auto& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

Split Manifest::split_of(std::string_view channel) const {
  auto it = splits.find(std::string(channel));
  return it == splits.end() ? Split::kUnassigned : it->second;
}

void Manifest::canonicalize() {
  std::sort(videos.begin(), videos.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(segments.begin(), segments.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& v : videos) splits.try_emplace(v.channel, Split::kUnassigned);
  for (const auto& s : segments) splits.try_emplace(s.channel, Split::kUnassigned);
}

std::vector<std::string> Manifest::violations() const {
  std::vector<std::string> out;
  std::set<std::string> video_ids;
  for (const auto& v : videos) {
    if (!video_ids.insert(v.id).second) out.push_back(fmt::format("duplicate video id {}", v.id));
    if (!(v.duration_s > 0.0)) out.push_back(fmt::format("video {} has non-positive duration", v.id));
    if (!splits.contains(v.channel)) out.push_back(fmt::format("channel {} has no split entry", v.channel));
    if (v.language_prob && (*v.language_prob < 0.0 || *v.language_prob > 1.0))
      out.push_back(fmt::format("video {} language_prob outside [0,1]", v.id));
  }
  std::set<std::string> seg_ids;
  for (const auto& s : segments) {
    if (!seg_ids.insert(s.id).second) out.push_back(fmt::format("duplicate segment id {}", s.id));
    const auto* v = find_video(s.video);
    if (!v) {
      out.push_back(fmt::format("segment {} references unknown video {}", s.id, s.video));
      continue;
    }
    if (v->channel != s.channel) out.push_back(fmt::format("segment {} channel disagrees with its video", s.id));
    if (!(s.start_s >= 0.0 && s.start_s < s.end_s && s.end_s <= v->duration_s + 1e-6))
      out.push_back(fmt::format("segment {} bounds [{}, {}] outside video duration {}", s.id, s.start_s, s.end_s,
                                v->duration_s));
    const Split sp = split_of(s.channel);
    if (sp != Split::kUnassigned && s.text.empty())
      out.push_back(fmt::format("segment {} in {} has empty text", s.id, split_name(sp)));
    if (s.source.kind == LabelSource::Kind::kTeacher && s.source.iteration < 1)
      out.push_back(fmt::format("segment {} has teacher source with iteration < 1", s.id));
    if (!splits.contains(s.channel)) out.push_back(fmt::format("channel {} has no split entry", s.channel));
  }
  return out;
}

void Manifest::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = fmt::format("manifest has {} violation(s):", v.size());
  for (const auto& x : v) msg += "\n  " + x;
  throw ValidationError(msg);
}

std::string segment_to_json_line(const Segment& s) {
  JsonLine l;
  l.str("kind", "segment").str("id", s.id).str("video", s.video).str("channel", s.channel);
  l.num("start_s", s.start_s).num("end_s", s.end_s);
  l.str("text", s.text).str("raw_text", s.raw_text).str("language", s.language).str("source", s.source.to_string());
  if (s.lid_score) l.num("lid_score", *s.lid_score);
  if (s.cer_vs_prev) l.num("cer_vs_prev", *s.cer_vs_prev);
  return l.finish();
}

Segment segment_from_json_line(std::string_view line) { return segment_from_json(json::parse(line)); }

std::string serialize_manifest(const Manifest& m) {
  std::string out;
  if (m.language) out += JsonLine().str("kind", "corpus").str("language", *m.language).finish() + "\n";
  for (const auto& v : m.videos) out += video_line(v) + "\n";
  for (const auto& s : m.segments) out += segment_to_json_line(s) + "\n";
  for (const auto& [c, sp] : m.splits)
    out += JsonLine().str("kind", "split").str("channel", c).str("split", split_name(sp)).finish() + "\n";
  return out;
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "video") {
        m.videos.push_back(video_from_json(j));
      } else if (kind == "segment") {
        m.segments.push_back(segment_from_json(j));
      } else if (kind == "split") {
        m.splits[j.at("channel").get<std::string>()] = parse_split(j.at("split").get<std::string>());
      } else if (kind == "corpus") {
        m.language = opt_str(j, "language");
      } else {
        throw ValidationError(fmt::format("unknown record kind '{}'", kind));
      }
    } catch (const json::exception& e) {
      throw ValidationError(fmt::format("manifest line {}: {}", line_no, e.what()));
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

void save_manifest(const std::filesystem::path& path, const Manifest& m) { write_file_atomic(path, serialize_manifest(m)); }

// ---------------------------------------------------------------------------

const std::vector<std::string>& known_topics() {
  static const std::vector<std::string> v = {
      "Agriculture", "Art",      "Business", "Climate",       "Culture",  "Economics", "Education",
      "Entertainment", "Health", "History",  "Literature",    "Music",    "Politics",  "Relationships",
      "Shopping",    "Society",  "Sport",    "Technology",    "Travel"};
  return v;
}

const std::vector<std::string>& known_formats() {
  static const std::vector<std::string> v = {"Audiobook", "Commentary", "Lecture", "Monologue",
                                             "Movie",     "News",       "Talk",    "Vlog"};
  return v;
}

IngestResult ingest_audio_dir(const std::filesystem::path& root, std::string_view language, int workers) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(fmt::format("audio root {} does not exist", root.string()));

  struct Task {
    fs::path path;
    std::string channel;
    std::optional<std::string> topic;
    std::optional<std::string> format;
  };
  IngestResult result;
  std::vector<Task> tasks;
  std::vector<fs::path> channel_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) channel_dirs.push_back(e.path());
  std::sort(channel_dirs.begin(), channel_dirs.end());

  auto check_tag = [&](const fs::path& where, const std::optional<std::string>& tag,
                       const std::vector<std::string>& vocab, const char* what) {
    if (tag && std::find(vocab.begin(), vocab.end(), *tag) == vocab.end())
      result.report.push_back({where.string(), IngestIssue::Severity::kWarning,
                               fmt::format("{} '{}' is outside the controlled vocabulary", what, *tag)});
  };

  for (const auto& dir : channel_dirs) {
    std::optional<std::string> topic, format;
    const auto meta = dir / "channel.json";
    if (fs::exists(meta)) {
      try {
        const auto j = json::parse(read_file(meta));
        topic = opt_str(j, "topic");
        format = opt_str(j, "format");
        check_tag(meta, topic, known_topics(), "topic");
        check_tag(meta, format, known_formats(), "format");
      } catch (const std::exception& e) {
        result.report.push_back({meta.string(), IngestIssue::Severity::kWarning, e.what()});
      }
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) tasks.push_back({f, dir.filename().string(), topic, format});
  }

  struct Outcome {
    std::optional<VideoRecord> video;
    std::vector<std::string> warnings;
    std::string error;
  };
  std::vector<Outcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto& t = tasks[i];
      auto& o = outcomes[i];
      try {
        const auto info = probe_wav(t.path, &o.warnings);
        if (info.frames == 0) {
          o.error = "audio contains no samples";
          continue;
        }
        VideoRecord v;
        v.id = t.path.stem().string();
        v.channel = t.channel;
        v.path = t.path.string();
        v.duration_s = info.duration_s();
        v.sample_rate_hz = info.sample_rate_hz;
        v.channels = info.channels;
        v.topic = t.topic;
        v.format = t.format;
        o.video = std::move(v);
      } catch (const std::exception& e) {
        o.error = e.what();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < std::min(n_threads, tasks.size()); ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  // Single-writer assembly in deterministic (path) order.
  auto& m = result.manifest;
  m.language = std::string(language);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& o = outcomes[i];
    const auto path = tasks[i].path.string();
    for (auto& w : o.warnings) result.report.push_back({path, IngestIssue::Severity::kWarning, w});
    if (!o.video) {
      result.report.push_back({path, IngestIssue::Severity::kError, o.error});
      continue;
    }
    if (!seen.insert(o.video->id).second) {
      result.report.push_back({path, IngestIssue::Severity::kError, "duplicate video id " + o.video->id});
      continue;
    }
    m.videos.push_back(std::move(*o.video));
  }
  m.canonicalize();
  return result;
}

// ---------------------------------------------------------------------------

std::map<ChannelId, double> channel_hours(const Manifest& m) {
  std::map<ChannelId, double> hours;
  for (const auto& v : m.videos) hours.try_emplace(v.channel, 0.0);
  for (const auto& [c, sp] : m.splits) hours.try_emplace(c, 0.0);
  if (!m.segments.empty()) {
    for (const auto& s : m.segments) hours[s.channel] += s.duration_s() / 3600.0;
  } else {
    for (const auto& v : m.videos) hours[v.channel] += v.duration_s / 3600.0;
  }
  return hours;
}

Manifest assign_splits(const Manifest& m, double dev_target_h, double test_target_h, std::uint64_t seed) {
  if (dev_target_h < 0 || test_target_h < 0) throw ValidationError("split targets must be non-negative");
  const auto hours = channel_hours(m);
  double total = 0.0;
  for (const auto& [c, h] : hours) total += h;
  if (dev_target_h + test_target_h > 0 && !(dev_target_h + test_target_h < total))
    throw SplitTargetError(fmt::format("DEV+TEST targets ({} h) must be below the corpus total ({} h)",
                                       dev_target_h + test_target_h, total),
                           0.0, 0.0);

  struct Item {
    ChannelId channel;
    double hours;
    std::uint64_t tie;
  };
  std::vector<Item> items;
  for (const auto& [c, h] : hours) items.push_back({c, h, mix_seed(seed, c)});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.hours != b.hours) return a.hours > b.hours;
    if (a.tie != b.tie) return a.tie < b.tie;
    return a.channel < b.channel;
  });

  const double dev_lo = dev_target_h * (1 - kSplitTolerance), dev_hi = dev_target_h * (1 + kSplitTolerance);
  const double test_lo = test_target_h * (1 - kSplitTolerance), test_hi = test_target_h * (1 + kSplitTolerance);
  auto in_window = [](double v, double lo, double hi) { return v >= lo - 1e-9 && v <= hi + 1e-9; };

  std::map<ChannelId, Split> assign;
  double dev = 0.0, test = 0.0;
  for (const auto& it : items) {
    const bool dev_ok = it.hours > 0 && dev < dev_lo && dev + it.hours <= dev_hi + 1e-9;
    const bool test_ok = it.hours > 0 && test < test_lo && test + it.hours <= test_hi + 1e-9;
    Split s = Split::kTrain;
    if (dev_ok && test_ok) {
      s = (test_lo - test) > (dev_lo - dev) ? Split::kTest : Split::kDev;
    } else if (dev_ok) {
      s = Split::kDev;
    } else if (test_ok) {
      s = Split::kTest;
    }
    if (s == Split::kDev) dev += it.hours;
    if (s == Split::kTest) test += it.hours;
    assign[it.channel] = s;
  }

  if (!in_window(dev, dev_lo, dev_hi) || !in_window(test, test_lo, test_hi)) {
    // Greedy missed; search exact subset sums in fixed-point units fine
    // enough that the tolerance window spans hundreds of them.
    const double unit = std::max(100.0, 4000.0 / std::max(dev_hi, test_hi));
    auto units = [&](double h) { return static_cast<std::int64_t>(std::llround(h * unit)); };
    std::vector<std::int64_t> w;
    for (const auto& it : items) w.push_back(units(it.hours));
    auto dev_pick = closest_subset(w, units(dev_lo), units(dev_target_h), units(dev_hi));
    std::vector<bool> taken(items.size(), false);
    dev = 0.0;
    for (auto k : dev_pick) {
      taken[k] = true;
      dev += items[k].hours;
    }
    std::vector<std::int64_t> w2;
    std::vector<std::size_t> idx2;
    for (std::size_t k = 0; k < items.size(); ++k)
      if (!taken[k]) {
        w2.push_back(w[k]);
        idx2.push_back(k);
      }
    auto test_pick = closest_subset(w2, units(test_lo), units(test_target_h), units(test_hi));
    test = 0.0;
    for (auto& [c, s] : assign) s = Split::kTrain;
    for (auto k : dev_pick) assign[items[k].channel] = Split::kDev;
    for (auto k : test_pick) {
      assign[items[idx2[k]].channel] = Split::kTest;
      test += items[idx2[k]].hours;
    }
    if (!in_window(dev, dev_lo, dev_hi) || !in_window(test, test_lo, test_hi)) {
      // Report the closest totals reachable without the window constraint.
      auto dev_any = closest_subset(w, 0, units(dev_target_h), units(total));
      double best_dev = 0.0;
      for (auto k : dev_any) best_dev += items[k].hours;
      throw SplitTargetError(
          fmt::format("split targets unattainable at channel granularity: DEV {:.3f} h (target {:.3f}), "
                      "TEST {:.3f} h (target {:.3f}); closest achievable DEV total {:.3f} h",
                      dev, dev_target_h, test, test_target_h, best_dev),
          best_dev, test);
    }
  }

  Manifest out = m;
  for (const auto& [c, s] : assign) out.splits[c] = s;
  return out;
}

CorpusStats compute_stats(const Manifest& m, double bin_width_s) {
  if (!(bin_width_s > 0)) throw ValidationError("histogram bin width must be positive");
  CorpusStats st;
  st.bin_width_s = bin_width_s;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest, Split::kUnassigned}) st.splits[s];
  double max_dur = 0.0;
  for (const auto& s : m.segments) max_dur = std::max(max_dur, s.duration_s());
  const std::size_t bins = m.segments.empty() ? 0 : static_cast<std::size_t>(std::floor(max_dur / bin_width_s)) + 1;
  for (auto& [sp, ss] : st.splits) ss.histogram.assign(bins, 0);

  std::map<Split, std::set<std::string>> texts;
  for (const auto& s : m.segments) {
    const Split sp = m.split_of(s.channel);
    auto& ss = st.splits[sp];
    const double d = s.duration_s();
    ss.segments += 1;
    ss.channel_hours[s.channel] += d / 3600.0;
    const auto bin = std::min(bins - 1, static_cast<std::size_t>(std::floor(std::max(0.0, d) / bin_width_s)));
    ss.histogram[bin] += 1;
    if (!texts[sp].insert(s.text).second) ss.duplicate_transcripts += 1;
  }
  for (auto& [sp, ss] : st.splits) {
    double total_s = 0.0;
    for (const auto& s : m.segments)
      if (m.split_of(s.channel) == sp) total_s += s.duration_s();
    ss.hours = total_s / 3600.0;
  }
  return st;
}

std::string format_stats_table(const CorpusStats& s) {
  std::string out = fmt::format("{:<12}{:>12}{:>12}{:>12}{:>14}\n", "split", "hours", "segments", "channels", "dup-texts");
  for (const auto& [sp, ss] : s.splits)
    out += fmt::format("{:<12}{:>12.4f}{:>12}{:>12}{:>14}\n", split_name(sp), ss.hours, ss.segments,
                       ss.channel_hours.size(), ss.duplicate_transcripts);
  out += fmt::format("\nduration histogram (bin width {} s)\n", s.bin_width_s);
  const auto& any = s.splits.begin()->second.histogram;
  for (std::size_t b = 0; b < any.size(); ++b) {
    out += fmt::format("[{:>6.1f},{:>6.1f})", b * s.bin_width_s, (b + 1) * s.bin_width_s);
    for (const auto& [sp, ss] : s.splits) out += fmt::format(" {:>8}", ss.histogram[b]);
    out += "\n";
  }
  return out;
}

std::string stats_to_json(const CorpusStats& s) {
  std::string out;
  for (const auto& [sp, ss] : s.splits) {
    std::string hist = "[";
    for (std::size_t b = 0; b < ss.histogram.size(); ++b) hist += (b ? "," : "") + std::to_string(ss.histogram[b]);
    hist += "]";
    std::string ch = "{";
    bool first = true;
    for (const auto& [c, h] : ss.channel_hours) {
      ch += (first ? "" : ",") + json_quote(c) + ":" + format_fixed(h, 9);
      first = false;
    }
    ch += "}";
    out += JsonLine()
               .str("kind", "split_stats")
               .str("split", split_name(sp))
               .num("hours", ss.hours, 9)
               .integer("segments", static_cast<std::int64_t>(ss.segments))
               .num("bin_width_s", s.bin_width_s)
               .raw("histogram", hist)
               .raw("channel_hours", ch)
               .integer("duplicate_transcripts", static_cast<std::int64_t>(ss.duplicate_transcripts))
               .finish() +
           "\n";
  }
  return out;
}

}  // namespace gsb
