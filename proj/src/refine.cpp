#include "gsb/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gsb/metrics.hpp"

namespace gsb {

namespace fs = std::filesystem;

std::vector<Manifest> split_pseudo_set(const Manifest& p, int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError(fmt::format("number of splits must be at least 1, got {}", n));
  std::map<ChannelId, double> hours;
  for (const auto& s : p.segments) hours[s.channel] += s.duration_s() / 3600.0;
  std::vector<std::pair<ChannelId, double>> channels(hours.begin(), hours.end());
  if (static_cast<std::size_t>(n) > channels.size())
    throw ValidationError(fmt::format("cannot divide {} channels into {} channel-atomic splits", channels.size(), n));
  std::sort(channels.begin(), channels.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    const auto ka = mix_seed(seed, a.first), kb = mix_seed(seed, b.first);
    if (ka != kb) return ka < kb;
    return a.first < b.first;
  });

  std::vector<double> load(static_cast<std::size_t>(n), 0.0);
  std::map<ChannelId, std::size_t> owner;
  for (const auto& [ch, h] : channels) {
    const auto k = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    owner[ch] = k;
    load[k] += h;
  }

  std::vector<Manifest> out(static_cast<std::size_t>(n));
  for (auto& m : out) m.language = p.language;
  for (const auto& s : p.segments) out[owner.at(s.channel)].segments.push_back(s);
  for (const auto& v : p.videos) {
    auto it = owner.find(v.channel);
    if (it != owner.end()) out[it->second].videos.push_back(v);
  }
  for (const auto& [ch, sp] : p.splits) {
    auto it = owner.find(ch);
    if (it != owner.end()) out[it->second].splits[ch] = sp;
  }
  for (auto& m : out) m.canonicalize();
  return out;
}

namespace {

Manifest shell_of(const Manifest& m) {
  Manifest out;
  out.language = m.language;
  out.videos = m.videos;
  out.splits = m.splits;
  return out;
}

GateResult gate(const Manifest& pairs, const TeacherOutputs& teacher_out, double tau, std::optional<int> relabel_iter) {
  GateResult r;
  r.retained = shell_of(pairs);
  for (const auto& s : pairs.segments) {
    auto it = teacher_out.find(s.id);
    if (it == teacher_out.end()) {
      r.parked.push_back(s.id);
      continue;
    }
    const double c = cer(s.text, it->second);
    const bool keep = c <= tau;
    r.records.push_back({s.id, c, keep});
    if (!keep) continue;
    Segment kept = s;
    kept.cer_vs_prev = c;
    if (relabel_iter) {
      kept.text = it->second;
      kept.source = LabelSource::teacher(*relabel_iter);
    }
    r.retained.segments.push_back(std::move(kept));
  }
  r.retained.canonicalize();
  return r;
}

}  // namespace

GateResult filter_by_cer(const Manifest& pairs, const TeacherOutputs& teacher_out, double tau) {
  return gate(pairs, teacher_out, tau, std::nullopt);
}

GateResult relabel(const Manifest& pj, const TeacherOutputs& teacher_out, double tau, int iteration) {
  if (iteration < 1) throw ValidationError("teacher iteration must be at least 1");
  return gate(pj, teacher_out, tau, iteration);
}

std::vector<std::string> RefineConfig::violations() const {
  std::vector<std::string> v;
  if (n < 1) v.push_back(fmt::format("refine.n must be at least 1, got {}", n));
  if (!(tau >= 0.0)) v.push_back(fmt::format("refine.tau must be non-negative, got {}", tau));
  if (noise_config.empty()) v.push_back("refine.noise_config is required (pass the trainer's noise settings)");
  if (capacities.empty()) v.push_back("refine.capacities must list at least one capacity tag");
  for (std::size_t i = 0; i < capacities.size(); ++i) {
    try {
      capacity_rank(capacities[i]);
      if (i > 0 && capacity_rank(capacities[i]) < capacity_rank(capacities[i - 1]))
        v.push_back(fmt::format("refine.capacities shrinks from {} to {}", capacities[i - 1], capacities[i]));
    } catch (const ValidationError& e) {
      v.push_back(e.what());
    }
  }
  if (stop_after && (*stop_after < 0 || *stop_after > n))
    v.push_back(fmt::format("refine.stop_after {} is outside 0..{}", *stop_after, n));
  return v;
}

void RefineConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid refinement config:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ValidationError(msg);
}

std::string RefineConfig::capacity_for(int model_index) const {
  const auto k = static_cast<std::size_t>(std::max(1, model_index) - 1);
  return capacities.at(std::min(k, capacities.size() - 1));
}

// ---------------------------------------------------------------------------
// Run directory

namespace {

fs::path split_path(const fs::path& dir, int j) { return dir / "splits" / fmt::format("P{}.jsonl", j); }
fs::path refined_path(const fs::path& dir, int i) { return dir / fmt::format("R_{}.jsonl", i); }
fs::path gate_path(const fs::path& dir, int i) { return dir / fmt::format("gate_{}.jsonl", i); }
fs::path teacher_cache_path(const fs::path& dir, int i, int j) {
  return dir / "teacher" / fmt::format("iter{}_P{}.jsonl", i, j);
}
fs::path state_path(const fs::path& dir) { return dir / "state.json"; }
fs::path config_path(const fs::path& dir) { return dir / "config.json"; }

struct TeacherPass {
  TeacherOutputs outputs;
  std::vector<ParkedItem> parked;
};

TeacherPass load_teacher_cache(const fs::path& path) {
  TeacherPass t;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id")) throw CheckpointError(fmt::format("corrupt teacher cache {}", path.string()));
    if (j.contains("parked")) {
      t.parked.push_back({j["id"].get<std::string>(), j["parked"].get<std::string>(), j.value("attempts", 0)});
    } else {
      t.outputs[j["id"].get<std::string>()] = j.at("text").get<std::string>();
    }
  }
  return t;
}

TeacherPass teacher_pass(const Manifest& pj, const ModelHandle& teacher, int i, int j, const RefineConfig& cfg,
                         RefineBackends& backends, const fs::path& dir) {
  const auto cache = teacher_cache_path(dir, i, j);
  if (fs::exists(cache)) return load_teacher_cache(cache);

  std::vector<TranscribeRequest> reqs;
  reqs.reserve(pj.segments.size());
  for (const auto& s : pj.segments) {
    const VideoRecord* v = pj.find_video(s.video);
    if (!v) throw ValidationError(fmt::format("segment {} references unknown video {}", s.id, s.video));
    TranscribeRequest r;
    r.id = s.id;
    r.audio_path = v->path;
    r.start_s = s.start_s;
    r.end_s = s.end_s;
    r.language_hint = s.language.empty() ? pj.language.value_or("") : s.language;
    r.model = teacher.id;
    reqs.push_back(std::move(r));
  }
  auto res = transcribe_batch(backends.transcriber, reqs, cfg.batch);

  TeacherPass t;
  std::string body;
  for (auto& r : res.responses) {
    std::string text = backends.profile ? normalize(r.text, *backends.profile) : r.text;
    body += JsonLine().str("id", r.id).str("text", text).finish() + "\n";
    t.outputs[r.id] = std::move(text);
  }
  for (auto& p : res.parked) {
    log_event(LogLevel::kWarn, "teacher_parked",
              JsonLine().integer("iteration", i).str("id", p.id).str("reason", p.reason));
    body += JsonLine().str("id", p.id).str("parked", p.reason).integer("attempts", p.attempts).finish() + "\n";
  }
  t.parked = std::move(res.parked);
  fs::create_directories(cache.parent_path());
  write_file_atomic(cache, body);
  return t;
}

std::string gate_report(int iteration, const std::vector<std::pair<int, GateResult>>& gates) {
  std::string lines;
  std::size_t candidates = 0, retained = 0, parked = 0;
  constexpr double kBin = 0.05;
  constexpr int kBins = 20;
  std::vector<std::size_t> hist(kBins + 1, 0);
  for (const auto& [j, g] : gates) {
    for (const auto& r : g.records) {
      lines += JsonLine()
                   .str("kind", "gate")
                   .str("id", r.id)
                   .integer("split", j)
                   .num("cer", r.cer)
                   .boolean("retained", r.retained)
                   .finish() +
               "\n";
      ++candidates;
      if (r.retained) ++retained;
      const auto b = std::isfinite(r.cer) ? std::min<std::int64_t>(kBins, static_cast<std::int64_t>(r.cer / kBin)) : kBins;
      ++hist[static_cast<std::size_t>(b)];
    }
    parked += g.parked.size();
  }
  std::string out = JsonLine()
                        .str("kind", "gate_summary")
                        .integer("iteration", iteration)
                        .integer("splits", static_cast<std::int64_t>(gates.size()))
                        .integer("candidates", static_cast<std::int64_t>(candidates))
                        .integer("retained", static_cast<std::int64_t>(retained))
                        .num("retention", candidates ? static_cast<double>(retained) / static_cast<double>(candidates) : 0.0)
                        .integer("parked", static_cast<std::int64_t>(parked))
                        .finish() +
                    "\n";
  for (int b = 0; b <= kBins; ++b) {
    JsonLine l;
    l.str("kind", "cer_bin").num("lo", b * kBin, 2);
    if (b < kBins) {
      l.num("hi", (b + 1) * kBin, 2);
    } else {
      l.str("hi", "inf");
    }
    out += l.integer("count", static_cast<std::int64_t>(hist[static_cast<std::size_t>(b)])).finish() + "\n";
  }
  return out + lines;
}

Manifest union_of(const std::vector<std::pair<int, GateResult>>& gates, const Manifest& like) {
  Manifest r = shell_of(like);
  r.videos.clear();
  r.splits.clear();
  std::map<SegmentId, Segment> segs;
  std::map<VideoId, VideoRecord> videos;
  for (const auto& [j, g] : gates) {
    for (const auto& s : g.retained.segments) {
      auto [it, inserted] = segs.insert_or_assign(s.id, s);
      if (!inserted)
        log_event(LogLevel::kWarn, "duplicate_segment_in_union", JsonLine().str("id", s.id).integer("split", j));
    }
    for (const auto& v : g.retained.videos) videos.emplace(v.id, v);
    for (const auto& [ch, sp] : g.retained.splits) r.splits[ch] = sp;
  }
  for (auto& [id, s] : segs) r.segments.push_back(std::move(s));
  for (auto& [id, v] : videos) r.videos.push_back(std::move(v));
  r.canonicalize();
  return r;
}

void commit_state(const fs::path& dir, const RefinementState& st) {
  const int completed = st.iteration - 1;
  const std::string refined = read_file(refined_path(dir, completed));
  std::string splits_hash;
  for (std::size_t j = 0; j < st.splits.size(); ++j)
    splits_hash += hash_hex(hash_file(split_path(dir, static_cast<int>(j) + 1)));
  write_file_atomic(state_path(dir), JsonLine()
                                         .integer("completed_iteration", completed)
                                         .str("teacher_id", st.teacher.id)
                                         .str("teacher_capacity", st.teacher.capacity)
                                         .str("refined_hash", hash_hex(fnv1a64(refined)))
                                         .str("splits_hash", hash_hex(fnv1a64(splits_hash)))
                                         .finish() +
                                         "\n");
}

std::string config_snapshot(const Manifest& p, const RefineConfig& cfg) {
  Manifest canon = p;
  canon.canonicalize();
  std::string caps;
  for (const auto& c : cfg.capacities) caps += (caps.empty() ? "" : ",") + c;
  return JsonLine()
             .integer("n", cfg.n)
             .num("tau", cfg.tau)
             .boolean("relabel_enabled", cfg.relabel_enabled)
             .str("noise_config", cfg.noise_config)
             .str("capacities", caps)
             .str("seed", std::to_string(cfg.seed))
             .str("input_hash", hash_hex(fnv1a64(serialize_manifest(canon))))
             .finish() +
         "\n";
}

}  // namespace

RefinementState run_iteration(const RefinementState& state, const RefineConfig& cfg, RefineBackends backends,
                              const fs::path& run_dir, IterationSummary* summary) {
  const int i = state.iteration;
  if (i < 1 || i > static_cast<int>(state.splits.size()))
    throw ValidationError(fmt::format("iteration {} is outside 1..{}", i, state.splits.size()));
  if (state.teacher.empty()) throw ValidationError(fmt::format("iteration {} has no teacher model", i));

  std::vector<std::pair<int, GateResult>> gates;
  const int last = i == 1 ? 1 : i;
  for (int j = 1; j <= last; ++j) {
    const Manifest& pj = state.splits[static_cast<std::size_t>(j - 1)];
    const auto pass = teacher_pass(pj, state.teacher, i, j, cfg, backends, run_dir);
    if (i == 1 || !state.relabel_enabled) {
      gates.emplace_back(j, filter_by_cer(pj, pass.outputs, state.tau));
    } else {
      gates.emplace_back(j, relabel(pj, pass.outputs, state.tau, i));
    }
  }
  Manifest r = union_of(gates, state.splits.front());
  save_manifest(refined_path(run_dir, i), r);
  write_file_atomic(gate_path(run_dir, i), gate_report(i, gates));

  TrainRequest req;
  req.manifest_path = refined_path(run_dir, i).string();
  req.capacity = cfg.capacity_for(i + 1);
  req.noise_config = state.noise_config;
  req.seed = mix_seed(cfg.seed, fmt::format("train:{}", i + 1));
  const TrainResponse student = train_checked(backends.trainer, req, r, state.teacher.capacity);

  RefinementState next = state;
  next.refined = load_manifest(refined_path(run_dir, i));
  next.iteration = i + 1;
  next.teacher = student.handle;
  commit_state(run_dir, next);

  if (summary) {
    summary->iteration = i;
    summary->retained = next.refined.segments.size();
    summary->candidates = 0;
    summary->parked = 0;
    for (const auto& [j, g] : gates) {
      summary->candidates += g.records.size() + g.parked.size();
      summary->parked += g.parked.size();
    }
    summary->retained_hours = 0.0;
    for (const auto& s : next.refined.segments) summary->retained_hours += s.duration_s() / 3600.0;
    summary->student = student.handle;
  }
  log_event(LogLevel::kInfo, "refine_iteration",
            JsonLine()
                .integer("iteration", i)
                .integer("retained", static_cast<std::int64_t>(next.refined.segments.size()))
                .str("student", student.handle.id));
  return next;
}

Manifest load_iteration_manifest(const fs::path& run_dir, int iteration) {
  const auto p = refined_path(run_dir, iteration);
  if (!fs::exists(p)) throw CheckpointError(fmt::format("run has no manifest for iteration {}", iteration));
  return load_manifest(p);
}

RefineResult run_refinement(const Manifest& p, const RefineConfig& cfg, RefineBackends backends, const fs::path& run_dir) {
  cfg.validate();
  fs::create_directories(run_dir / "splits");
  const std::string snapshot = config_snapshot(p, cfg);

  RefinementState st;
  st.tau = cfg.tau;
  st.relabel_enabled = cfg.relabel_enabled;
  st.noise_config = cfg.noise_config;

  if (fs::exists(state_path(run_dir))) {
    if (!fs::exists(config_path(run_dir)) || read_file(config_path(run_dir)) != snapshot)
      throw CheckpointError(
          fmt::format("{} holds a run with a different configuration or input; use a fresh directory", run_dir.string()));
    auto j = nlohmann::json::parse(read_file(state_path(run_dir)), nullptr, false);
    if (j.is_discarded() || !j.contains("completed_iteration") || !j.contains("teacher_id"))
      throw CheckpointError(fmt::format("unreadable checkpoint {}", state_path(run_dir).string()));
    const int completed = j["completed_iteration"].get<int>();
    if (completed < 0 || completed > cfg.n) throw CheckpointError(fmt::format("checkpoint iteration {} out of range", completed));
    std::string splits_hash;
    for (int k = 1; k <= cfg.n; ++k) {
      if (!fs::exists(split_path(run_dir, k))) throw CheckpointError(fmt::format("checkpoint is missing split P{}", k));
      splits_hash += hash_hex(hash_file(split_path(run_dir, k)));
      st.splits.push_back(load_manifest(split_path(run_dir, k)));
    }
    if (hash_hex(fnv1a64(splits_hash)) != j.value("splits_hash", ""))
      throw CheckpointError("split files changed since the checkpoint was written");
    const auto rp = refined_path(run_dir, completed);
    if (!fs::exists(rp) || hash_hex(hash_file(rp)) != j.value("refined_hash", ""))
      throw CheckpointError(fmt::format("refined manifest for iteration {} is missing or modified", completed));
    st.refined = load_manifest(rp);
    st.iteration = completed + 1;
    st.teacher = {j["teacher_id"].get<std::string>(), j.value("teacher_capacity", "")};
    log_event(LogLevel::kInfo, "refine_resume", JsonLine().integer("completed_iteration", completed));
  } else {
    auto splits = split_pseudo_set(p, cfg.n, cfg.seed);
    for (int k = 1; k <= cfg.n; ++k) save_manifest(split_path(run_dir, k), splits[static_cast<std::size_t>(k - 1)]);
    // Work from the files so a resumed run sees exactly the same values.
    for (int k = 1; k <= cfg.n; ++k) st.splits.push_back(load_manifest(split_path(run_dir, k)));
    write_file_atomic(config_path(run_dir), snapshot);
    save_manifest(refined_path(run_dir, 0), st.splits.front());
    st.refined = load_manifest(refined_path(run_dir, 0));

    TrainRequest req;
    req.manifest_path = refined_path(run_dir, 0).string();
    req.capacity = cfg.capacity_for(1);
    req.noise_config = cfg.noise_config;
    req.seed = mix_seed(cfg.seed, "train:1");
    st.teacher = train_checked(backends.trainer, req, st.refined, "").handle;
    st.iteration = 1;
    commit_state(run_dir, st);
  }

  RefineResult result;
  while (st.iteration <= cfg.n) {
    IterationSummary s;
    st = run_iteration(st, cfg, backends, run_dir, &s);
    result.iterations.push_back(s);
    if (cfg.stop_after && st.iteration - 1 == *cfg.stop_after && st.iteration <= cfg.n) break;
  }
  result.completed_iteration = st.iteration - 1;
  result.finished = st.iteration > cfg.n;
  result.refined = st.refined;
  return result;
}

}  // namespace gsb
