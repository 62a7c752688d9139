#include "gsb/mock_backends.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "gsb/metrics.hpp"
#include "gsb/wire.hpp"

namespace gsb::mock {

std::string corrupt(std::string_view text, double rate, std::uint64_t seed) {
  const std::u32string in = utf8_to_u32(text);
  std::vector<char32_t> alphabet;
  for (char32_t c : in)
    if (c != U' ') alphabet.push_back(c);
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  if (alphabet.empty() || rate <= 0.0) return std::string(text);

  SplitMix64 rng(seed);
  std::u32string out;
  out.reserve(in.size() + 8);
  for (char32_t c : in) {
    if (rng.uniform() >= rate) {
      out.push_back(c);
      continue;
    }
    switch (rng.below(3)) {
      case 0: {
        if (alphabet.size() < 2) {
          out.push_back(c);
          break;
        }
        char32_t r = c;
        while (r == c) r = alphabet[rng.below(alphabet.size())];
        out.push_back(r);
        break;
      }
      case 1:
        break;
      default:
        out.push_back(c);
        out.push_back(alphabet[rng.below(alphabet.size())]);
        break;
    }
  }
  return u32_to_utf8(out);
}

double difficulty(std::string_view key, std::uint64_t seed) {
  SplitMix64 rng(mix_seed(seed, key));
  return 2.0 * rng.uniform();
}

std::string encode_model_id(const MockModel& m) {
  return fmt::format("mock:{}:{}:{}", m.capacity, format_fixed(m.error_rate), m.tag);
}

std::optional<MockModel> parse_model_id(std::string_view id) {
  const auto parts = split(id, ':');
  if (parts.size() != 4 || parts[0] != "mock") return std::nullopt;
  MockModel m;
  m.capacity = parts[1];
  try {
    std::size_t used = 0;
    m.error_rate = std::stod(parts[2], &used);
    if (used != parts[2].size()) return std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
  m.tag = parts[3];
  return m;
}

TranscribeResponse EchoTranscriber::transcribe(const TranscribeRequest& req) {
  auto it = texts_.find(req.id);
  if (it == texts_.end()) throw BackendError(fmt::format("no fixture text for '{}'", req.id), false);
  return {req.id, it->second, std::nullopt, std::nullopt, std::nullopt};
}

TranscribeResponse NoiseTranscriber::transcribe(const TranscribeRequest& req) {
  double rate = base_rate_;
  if (!req.model.empty()) {
    auto m = parse_model_id(req.model);
    if (!m) throw BackendError(fmt::format("unknown model '{}'", req.model), false);
    rate = m->error_rate;
  }
  auto ref = truth_(req);
  if (!ref) throw BackendError(fmt::format("no reference for '{}'", req.id), false);
  TranscribeResponse r;
  r.id = req.id;
  r.text = corrupt(*ref, rate * difficulty(req.id, seed_), mix_seed(seed_, req.model + "|" + req.id));
  return r;
}

TrainResponse ContractionTrainer::train(const TrainRequest& req) {
  ++calls_;
  const std::string bytes = read_file(req.manifest_path);
  const Manifest m = parse_manifest(bytes);
  if (m.segments.empty()) throw BackendError("training manifest is empty", false);
  ErrorCounts total;
  for (const auto& s : m.segments) {
    auto ref = truth_(s);
    if (!ref) throw BackendError(fmt::format("no reference for training segment '{}'", s.id), false);
    const auto c = error_counts(*ref, s.text, Granularity::kChar);
    total.edits += c.edits;
    total.ref_tokens += c.ref_tokens;
  }
  const double label_cer =
      total.ref_tokens == 0 ? 0.0 : static_cast<double>(total.edits) / static_cast<double>(total.ref_tokens);
  MockModel model;
  model.capacity = req.capacity;
  model.error_rate = alpha_ * label_cer;
  model.tag = hash_hex(fnv1a64(bytes, mix_seed(req.seed, req.capacity + "|" + req.noise_config)));
  TrainResponse r;
  r.handle = {encode_model_id(model), req.capacity};
  r.summary = JsonLine()
                  .integer("segments", static_cast<std::int64_t>(m.segments.size()))
                  .num("label_cer", label_cer)
                  .num("model_error_rate", model.error_rate)
                  .finish();
  return r;
}

LidResponse TableLid::identify(const LidRequest& req) {
  auto it = table_.find(req.text);
  LidResponse r;
  if (it != table_.end()) {
    r = it->second;
  } else if (fallback_) {
    r = *fallback_;
  } else {
    throw BackendError(fmt::format("no LID entry for '{}'", req.text), false);
  }
  r.id = req.id;
  return r;
}

LidResponse WordlistLid::identify(const LidRequest& req) {
  LidResponse r;
  r.id = req.id;
  r.language = "und";
  std::vector<std::string> words;
  for (auto& w : split(req.text, ' '))
    if (!w.empty()) words.push_back(w);
  if (words.empty()) return r;
  std::size_t best = 0;
  for (const auto& [lang, list] : lists_) {
    const auto hits = static_cast<std::size_t>(
        std::count_if(words.begin(), words.end(), [&](const std::string& w) { return list.count(w) > 0; }));
    if (hits > best) {
      best = hits;
      r.language = lang;
    }
  }
  r.confidence = static_cast<double>(best) / static_cast<double>(words.size());
  return r;
}

// ---------------------------------------------------------------------------

TruthIndex TruthIndex::load(const std::filesystem::path& path) {
  std::vector<VideoTruth> videos;
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open truth file {}", path.string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ValidationError(fmt::format("{}:{}: not JSON", path.string(), lineno));
    VideoTruth v;
    v.video = j.at("video").get<std::string>();
    v.language = j.at("language").get<std::string>();
    for (const auto& w : j.at("words")) {
      v.words.push_back({w.at("w").get<std::string>(), w.at("start_s").get<double>(), w.at("end_s").get<double>()});
    }
    videos.push_back(std::move(v));
  }
  return from_videos(std::move(videos));
}

TruthIndex TruthIndex::from_videos(std::vector<VideoTruth> videos) {
  TruthIndex t;
  for (auto& v : videos) {
    std::string id = v.video;
    t.videos_.emplace(std::move(id), std::move(v));
  }
  return t;
}

const VideoTruth* TruthIndex::find(std::string_view video) const {
  auto it = videos_.find(video);
  return it == videos_.end() ? nullptr : &it->second;
}

std::vector<TimedWord> TruthIndex::words_in_window(std::string_view video, double start_s, double end_s) const {
  std::vector<TimedWord> out;
  const auto* v = find(video);
  if (!v) return out;
  for (const auto& w : v->words) {
    const double mid = 0.5 * (w.start_s + w.end_s);
    if (mid >= start_s && mid < end_s) out.push_back(w);
  }
  return out;
}

std::optional<std::string> TruthIndex::text_in_window(std::string_view video, double start_s, double end_s) const {
  if (!find(video)) return std::nullopt;
  std::string out;
  for (const auto& w : words_in_window(video, start_s, end_s)) {
    if (!out.empty()) out += ' ';
    out += w.text;
  }
  return out;
}

std::vector<std::string> TruthIndex::video_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, v] : videos_) out.push_back(id);
  return out;
}

std::vector<std::string> TruthIndex::alphabet() const {
  std::set<char32_t> chars;
  for (const auto& [id, v] : videos_)
    for (const auto& w : v.words)
      for (char32_t c : utf8_to_u32(to_upper(w.text))) chars.insert(c);
  std::vector<std::string> out;
  for (char32_t c : chars) out.push_back(code_point_to_utf8(c));
  return out;
}

std::string TruthIndex::serialize() const {
  std::string out;
  for (const auto& [id, v] : videos_) {
    std::string words = "[";
    for (std::size_t i = 0; i < v.words.size(); ++i) {
      if (i) words += ',';
      words += JsonLine()
                   .str("w", v.words[i].text)
                   .num("start_s", v.words[i].start_s, 3)
                   .num("end_s", v.words[i].end_s, 3)
                   .finish();
    }
    words += ']';
    out += JsonLine().str("video", v.video).str("language", v.language).raw("words", words).finish();
    out += '\n';
  }
  return out;
}

EmissionMatrix synth_emissions(const std::vector<TimedWord>& words, double start_s, double end_s,
                               const std::vector<std::string>& alphabet, float frame_s) {
  EmissionMatrix e;
  e.frame_duration_s = frame_s;
  e.vocab = {"<blank>", "<star>"};
  e.vocab.insert(e.vocab.end(), alphabet.begin(), alphabet.end());
  e.vocab_size = e.vocab.size();
  e.blank_index = 0;
  e.star_index = 1;
  const auto T = static_cast<std::size_t>(std::max<std::int64_t>(1, round_half_away((end_s - start_s) / frame_s)));
  e.frames = T;

  std::vector<std::uint32_t> label(T, 0);
  auto frame_of = [&](double t) {
    const auto f = round_half_away((t - start_s) / frame_s);
    return static_cast<std::size_t>(std::clamp<std::int64_t>(f, 0, static_cast<std::int64_t>(T)));
  };
  auto index_of = [&](char32_t c) -> std::uint32_t {
    const std::string s = code_point_to_utf8(c);
    auto it = std::lower_bound(alphabet.begin(), alphabet.end(), s);
    if (it != alphabet.end() && *it == s) return static_cast<std::uint32_t>(2 + (it - alphabet.begin()));
    return 1;
  };
  for (const auto& w : words) {
    const std::u32string chars = utf8_to_u32(to_upper(w.text));
    const std::size_t f0 = frame_of(w.start_s), f1 = frame_of(w.end_s);
    if (chars.empty() || f1 <= f0) continue;
    const std::size_t n = f1 - f0, c = chars.size();
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t a = f0 + k * n / c, b = f0 + (k + 1) * n / c;
      const std::uint32_t idx = index_of(chars[k]);
      for (std::size_t f = a; f < b; ++f) label[f] = idx;
      if (k + 1 < c && b - a >= 2 && index_of(chars[k + 1]) == idx) label[b - 1] = 0;
    }
  }

  const double hit = std::log(0.9);
  const double miss = std::log(0.1 / static_cast<double>(e.vocab_size - 1));
  e.log_probs.assign(T * e.vocab_size, static_cast<float>(miss));
  for (std::size_t t = 0; t < T; ++t) e.log_probs[t * e.vocab_size + label[t]] = static_cast<float>(hit);
  return e;
}

// ---------------------------------------------------------------------------

namespace {

std::string video_of(const std::string& audio_path) { return std::filesystem::path(audio_path).stem().string(); }

std::map<std::string, std::set<std::string>> wordlists(const TruthIndex& truth, const LanguageProfile& profile) {
  std::map<std::string, std::set<std::string>> lists;
  for (const auto& id : truth.video_ids()) {
    const auto* v = truth.find(id);
    for (const auto& w : v->words) {
      for (auto& piece : split(normalize(w.text, profile), ' '))
        if (!piece.empty()) lists[v->language].insert(piece);
    }
  }
  return lists;
}

}  // namespace

MockService::MockService(TruthIndex truth, LanguageProfile profile, ServiceOptions opts)
    : truth_(std::move(truth)),
      profile_(std::move(profile)),
      opts_(opts),
      transcriber_(
          [this](const TranscribeRequest& r) -> std::optional<std::string> {
            auto raw = truth_.text_in_window(video_of(r.audio_path), r.start_s, r.end_s);
            if (!raw || r.model.empty()) return raw;
            return normalize(*raw, profile_);
          },
          opts.whisper_rate, opts.seed),
      trainer_(
          [this](const Segment& s) -> std::optional<std::string> {
            auto raw = truth_.text_in_window(s.video, s.start_s, s.end_s);
            if (!raw) return std::nullopt;
            return normalize(*raw, profile_);
          },
          opts.alpha),
      lid_(wordlists(truth_, profile_)) {}

std::vector<std::string> MockService::roles() const { return {"transcriber", "trainer", "lid"}; }

void MockService::handle(const nlohmann::json& request, const std::function<void(const nlohmann::json&)>& send) {
  const std::string rid = request.value("rid", "");
  auto reply = [&](nlohmann::json j) {
    j["rid"] = rid;
    send(j);
  };
  try {
    const std::string kind = request.value("kind", "");
    if (kind == "transcribe" || kind == "detect") {
      const auto req = wire::transcribe_request(request);
      if (req.task == TranscribeTask::kDetect) {
        const auto* v = truth_.find(video_of(req.audio_path));
        if (!v) throw BackendError(fmt::format("unknown audio '{}'", req.audio_path), false);
        TranscribeResponse r{req.id, "", std::nullopt, v->language, opts_.language_prob};
        reply(wire::to_json(r));
      } else {
        reply(wire::to_json(transcriber_.transcribe(req)));
      }
    } else if (kind == "emit") {
      const auto req = wire::emit_request(request);
      const auto words = truth_.words_in_window(video_of(req.audio_path), req.start_s, req.end_s);
      save_emissions(req.output_path, synth_emissions(words, req.start_s, req.end_s, truth_.alphabet()));
      reply(wire::to_json(EmitResponse{req.id, req.output_path}));
    } else if (kind == "train") {
      const auto req = wire::train_request(request);
      auto left = opts_.train_delay;
      while (left.count() > 0) {
        const auto step = std::min(left, opts_.heartbeat_every);
        std::this_thread::sleep_for(step);
        left -= step;
        send(nlohmann::json{{"rid", rid}, {"heartbeat", true}});
      }
      reply(wire::to_json(trainer_.train(req)));
    } else if (kind == "lid") {
      reply(wire::to_json(lid_.identify(wire::lid_request(request))));
    } else if (kind == "batch") {
      const std::string req_file = wire::field<std::string>(request, "request_file");
      const std::string resp_file = wire::field<std::string>(request, "response_file");
      std::ifstream in(req_file);
      if (!in) throw BackendError(fmt::format("cannot read request file {}", req_file), false);
      std::string line, body;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        std::string id = j.is_object() ? j.value("id", "") : "";
        try {
          body += wire::to_json(transcriber_.transcribe(wire::transcribe_request(j))).dump();
        } catch (const std::exception& e) {
          body += nlohmann::json{{"id", id}, {"ok", false}, {"error", e.what()}}.dump();
        }
        body += '\n';
      }
      write_file_atomic(resp_file, body);
      reply(nlohmann::json{{"ok", true}});
    } else {
      reply(wire::failure(rid, fmt::format("unknown request kind '{}'", kind), false));
    }
  } catch (const BackendError& e) {
    send(wire::failure(rid, e.what(), e.transient()));
  } catch (const std::exception& e) {
    send(wire::failure(rid, e.what(), false));
  }
}

}  // namespace gsb::mock
