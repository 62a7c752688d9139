#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <chrono>
#include <cmath>
#include <fstream>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gsb/filters.hpp"
#include "gsb/manifest.hpp"
#include "gsb/metrics.hpp"
#include "gsb/mock_backends.hpp"
#include "gsb/refine.hpp"
#include "oracles.hpp"

namespace support {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gsb_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline gsb::Segment segment(const std::string& video, const std::string& channel, std::size_t k, double s, double e,
                            const std::string& text, const std::string& language = "id") {
  gsb::Segment x;
  x.id = gsb::make_segment_id(video, k);
  x.video = video;
  x.channel = channel;
  x.start_s = s;
  x.end_s = e;
  x.text = text;
  x.raw_text = text;
  x.language = language;
  return x;
}

inline gsb::VideoRecord video(const std::string& id, const std::string& channel, double duration_s) {
  gsb::VideoRecord v;
  v.id = id;
  v.channel = channel;
  v.path = id + ".wav";
  v.duration_s = duration_s;
  v.sample_rate_hz = 16000;
  return v;
}

// Row-normalized random log-probabilities; index 0 is blank.
inline gsb::EmissionMatrix random_emissions(gsb::SplitMix64& rng, std::size_t T, std::size_t V) {
  gsb::EmissionMatrix e;
  e.frames = T;
  e.vocab_size = V;
  e.blank_index = 0;
  for (std::size_t v = 0; v < V; ++v) e.vocab.push_back(v == 0 ? "<blank>" : std::string(1, static_cast<char>('A' + v - 1)));
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> p(V);
    double z = 0;
    for (auto& x : p) {
      x = 0.05 + rng.uniform();
      z += x;
    }
    for (auto x : p) e.log_probs.push_back(static_cast<float>(std::log(x / z)));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Ten Indonesian segments built so that each rule rejects exactly one:
// a Thai letter (charset), 1.5 s (duration), an English sentence (LID) and
// a repeated channel intro under a cap of one (balance).

struct FilterFixture {
  gsb::Manifest manifest;
  gsb::FilterConfig config;
  std::map<std::string, gsb::LidResponse> lid_table;
  gsb::LidResponse fallback{"", "id", 0.98};
};

inline FilterFixture filter_fixture() {
  FilterFixture f;
  auto& m = f.manifest;
  m.language = "id";
  m.videos = {video("a1", "alpha", 120), video("a2", "alpha", 120), video("b1", "beta", 120)};
  m.segments = {
      segment("a1", "alpha", 0, 0.0, 4.0, "HALO SEMUA SELAMAT DATANG"),
      segment("a1", "alpha", 1, 4.0, 9.0, "HARI INI KITA MEMASAK NASI"),
      segment("a1", "alpha", 2, 9.0, 12.5, "JANGAN LUPA GARAM"),
      segment("a1", "alpha", 3, 12.5, 14.0, "OKE"),                        // too short
      segment("a1", "alpha", 4, 14.0, 20.0, "SEKARANG ก ADUK PELAN"),       // Thai letter
      segment("a2", "alpha", 0, 0.0, 4.0, "HALO SEMUA SELAMAT DATANG"),    // repeated intro
      segment("a2", "alpha", 1, 4.0, 10.0, "THE WEATHER IS NICE TODAY"),  // English
      segment("b1", "beta", 0, 0.0, 4.0, "HALO SEMUA SELAMAT DATANG"),    // other channel
      segment("b1", "beta", 1, 4.0, 11.0, "BERITA PAGI DARI JAKARTA"),
      segment("b1", "beta", 2, 11.0, 16.0, "CUACA CERAH SEPANJANG HARI"),
  };
  m.splits = {{"alpha", gsb::Split::kUnassigned}, {"beta", gsb::Split::kUnassigned}};
  m.canonicalize();

  f.config.profile = gsb::builtin_profile("id");
  f.config.lid_threshold = 0.90;
  f.config.min_duration_s = 2.0;
  f.config.max_duration_s = 30.0;
  f.config.max_dup_per_channel = 1;
  f.lid_table["THE WEATHER IS NICE TODAY"] = {"", "en", 0.99};
  return f;
}

// Every retained segment checked against each rule on its own.
inline std::vector<std::string> postcondition_violations(const gsb::Manifest& retained, const gsb::FilterConfig& cfg,
                                                          gsb::LidClient& lid) {
  std::vector<std::string> v;
  std::map<std::pair<std::string, std::string>, std::size_t> groups;
  for (const auto& s : retained.segments) {
    if (!gsb::charset_filter(s, cfg.profile).retain) v.push_back(s.id + ": charset");
    if (!gsb::duration_filter(s, cfg.min_duration_s, cfg.max_duration_s).retain) v.push_back(s.id + ": duration");
    if (!gsb::lid_decision(s, lid.identify({s.id, s.text}), cfg.lid_threshold).retain) v.push_back(s.id + ": lid");
    if (++groups[{s.channel, s.text}] > cfg.max_dup_per_channel) v.push_back(s.id + ": balance");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Refinement simulation: a synthetic corpus with hidden reference text,
// first-pass labels corrupted at eps0, and the alpha-contraction trainer.

struct Simulation {
  gsb::Manifest pseudo;                      // P, carrying first-pass labels
  std::map<std::string, std::string> truth;  // hidden reference by segment id
  std::uint64_t seed = 1;
  double eps0 = 0.20;
  double alpha = 0.7;

  gsb::mock::NoiseTranscriber transcriber() const {
    const auto* t = &truth;
    return gsb::mock::NoiseTranscriber(
        [t](const gsb::TranscribeRequest& r) -> std::optional<std::string> {
          auto it = t->find(r.id);
          if (it == t->end()) return std::nullopt;
          return it->second;
        },
        eps0, seed);
  }

  gsb::mock::ContractionTrainer trainer() const {
    const auto* t = &truth;
    return gsb::mock::ContractionTrainer(
        [t](const gsb::Segment& s) -> std::optional<std::string> {
          auto it = t->find(s.id);
          if (it == t->end()) return std::nullopt;
          return it->second;
        },
        alpha);
  }

  // Micro-averaged character error rate of the labels against the hidden
  // reference.
  double hidden_cer(const gsb::Manifest& m) const {
    std::vector<gsb::ScoredPair> pairs;
    for (const auto& s : m.segments) pairs.push_back({s.id, truth.at(s.id), s.text});
    return gsb::score_pairs(pairs, gsb::Granularity::kChar).micro_rate();
  }
};

inline Simulation make_simulation(std::uint64_t seed, double eps0 = 0.20, double alpha = 0.7, int channels = 12,
                                  int videos_per_channel = 3, int segments_per_video = 12) {
  static const std::vector<std::string> words = {
      "SAYA", "KAMU", "KITA",  "MEREKA", "PERGI",  "MAKAN", "RUMAH",  "PASAR", "HARI",  "INI",    "BESOK",
      "PAGI", "MALAM", "HUJAN", "CERAH", "BERITA", "KOTA",  "JALAN",  "MOBIL", "AIR",   "KOPI",   "TEMAN",
      "BUKU", "SEKOLAH", "GURU", "MURID", "BELAJAR", "LAGU", "MUSIK", "SENANG", "SEDIH", "CEPAT", "LAMBAT"};
  Simulation sim;
  sim.seed = seed;
  sim.eps0 = eps0;
  sim.alpha = alpha;
  gsb::SplitMix64 rng(gsb::mix_seed(seed, "simulation"));
  auto& p = sim.pseudo;
  p.language = "id";
  for (int c = 0; c < channels; ++c) {
    const std::string ch = "ch" + std::to_string(c);
    p.splits[ch] = gsb::Split::kTrain;
    for (int v = 0; v < videos_per_channel; ++v) {
      const std::string vid = ch + "v" + std::to_string(v);
      double t = 0;
      for (int k = 0; k < segments_per_video; ++k) {
        const auto n = 3 + rng.below(6);
        std::string text;
        for (std::size_t w = 0; w < n; ++w) text += (w ? " " : "") + words[rng.below(words.size())];
        const double d = 2.0 + 8.0 * rng.uniform();
        auto s = segment(vid, ch, static_cast<std::size_t>(k), t, t + d, text);
        sim.truth[s.id] = text;
        p.segments.push_back(std::move(s));
        t += d + 0.5;
      }
      p.videos.push_back(video(vid, ch, t + 1.0));
    }
  }
  // First-pass labels are what the base model (no model id) produces.
  auto tr = sim.transcriber();
  for (auto& s : p.segments) {
    gsb::TranscribeRequest r;
    r.id = s.id;
    s.text = tr.transcribe(r).text;
    s.raw_text = s.text;
  }
  p.canonicalize();
  return sim;
}

struct SimulationRun {
  std::vector<double> hidden_cer;  // of R after iterations 1..n
  std::vector<gsb::Manifest> refined;
  gsb::RefineResult result;
  bool gate_sound = true;
};

inline gsb::RefineConfig simulation_config(int n = 3, double tau = 0.10, bool relabel = true) {
  gsb::RefineConfig cfg;
  cfg.n = n;
  cfg.tau = tau;
  cfg.relabel_enabled = relabel;
  cfg.noise_config = "specaugment=on";
  cfg.capacities = {"M"};
  cfg.seed = 1;
  cfg.batch.parallelism = 4;
  cfg.batch.backoff_base = std::chrono::milliseconds(1);
  return cfg;
}

// Runs the algorithm and reads back every intermediate R. Gate soundness is
// checked against the recorded gate reports: every retained id has a
// retained gate record with cer <= tau.
inline SimulationRun run_simulation(const Simulation& sim, const gsb::RefineConfig& cfg, const fs::path& dir) {
  auto transcriber = sim.transcriber();
  auto trainer = sim.trainer();
  SimulationRun run;
  run.result = gsb::run_refinement(sim.pseudo, cfg, {transcriber, trainer, nullptr}, dir);
  std::map<std::string, std::string> first_pass;
  for (const auto& s : sim.pseudo.segments) first_pass[s.id] = s.text;
  for (int i = 1; i <= run.result.completed_iteration; ++i) {
    auto r = gsb::load_iteration_manifest(dir, i);
    run.hidden_cer.push_back(sim.hidden_cer(r));
    // the teacher outputs recorded for this iteration, across all splits
    std::map<std::string, std::string> teacher;
    for (int j = 1; j <= i; ++j) {
      std::ifstream in(dir / "teacher" / ("iter" + std::to_string(i) + "_P" + std::to_string(j) + ".jsonl"));
      std::string line;
      while (std::getline(in, line)) {
        auto js = nlohmann::json::parse(line);
        if (js.contains("text")) teacher[js["id"].get<std::string>()] = js["text"].get<std::string>();
      }
    }
    for (const auto& s : r.segments) {
      auto it = teacher.find(s.id);
      if (it == teacher.end()) {
        run.gate_sound = false;
        continue;
      }
      const auto ref = oracle::chars(first_pass.at(s.id));
      const double c = ref.empty() ? 0.0
                                   : static_cast<double>(oracle::edit_distance(ref, oracle::chars(it->second))) /
                                         static_cast<double>(ref.size());
      if (c > cfg.tau + 1e-12 || !s.cer_vs_prev || *s.cer_vs_prev > cfg.tau + 1e-12) run.gate_sound = false;
    }
    run.refined.push_back(std::move(r));
  }
  return run;
}

}  // namespace support
