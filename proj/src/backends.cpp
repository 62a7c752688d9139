#include "gsb/backends.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "gsb/subprocess.hpp"
#include "gsb/wire.hpp"

namespace gsb {

int capacity_rank(std::string_view tag) {
  static constexpr std::string_view kOrder[] = {"S", "M", "L", "XL"};
  for (std::size_t i = 0; i < std::size(kOrder); ++i)
    if (kOrder[i] == tag) return static_cast<int>(i);
  throw ValidationError(fmt::format("unknown capacity tag '{}' (expected S, M, L or XL)", tag));
}

void check_capacity_order(std::string_view teacher, std::string_view student) {
  if (capacity_rank(student) < capacity_rank(teacher))
    throw ValidationError(fmt::format("student capacity {} is smaller than teacher capacity {}", student, teacher));
}

EmitResponse Transcriber::emit(const EmitRequest&) {
  throw BackendError("this transcriber does not produce emissions", false);
}

LidResponse CachingLid::identify(const LidRequest& req) {
  {
    std::lock_guard lock(mu_);
    auto it = cache_.find(req.text);
    if (it != cache_.end()) {
      LidResponse r = it->second;
      r.id = req.id;
      return r;
    }
  }
  LidResponse r = inner_.identify(req);
  std::lock_guard lock(mu_);
  // first answer wins if two threads raced on the same text
  auto [it, inserted] = cache_.emplace(req.text, r);
  LidResponse out = it->second;
  out.id = req.id;
  return out;
}

std::size_t CachingLid::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

namespace {

template <class Req, class Resp, class Call>
BatchResult<Resp> run_batch(std::span<const Req> reqs, const BatchOptions& opts, Call call) {
  BatchResult<Resp> out;
  if (reqs.empty()) return out;
  const int max_attempts = std::max(1, opts.max_attempts);
  std::vector<std::optional<Resp>> answers(reqs.size());
  std::vector<std::optional<ParkedItem>> parked(reqs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> attempts{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= reqs.size()) return;
      const Req& req = reqs[i];
      for (int attempt = 1;; ++attempt) {
        attempts.fetch_add(1);
        std::string reason;
        bool transient = false;
        try {
          Resp r = call(req);
          if (r.id != req.id) {
            reason = fmt::format("response id '{}' does not match request", r.id);
          } else {
            answers[i] = std::move(r);
            break;
          }
        } catch (const BackendError& e) {
          reason = e.what();
          transient = e.transient();
        } catch (const std::exception& e) {
          reason = e.what();
        }
        if (!transient || attempt >= max_attempts) {
          parked[i] = ParkedItem{req.id, reason, attempt};
          break;
        }
        std::this_thread::sleep_for(opts.backoff_base * (1LL << (attempt - 1)));
      }
    }
  };

  const std::size_t n_threads =
      std::min<std::size_t>(reqs.size(), static_cast<std::size_t>(std::max(1, opts.parallelism)));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  for (std::size_t i = 0; i < reqs.size(); ++i) {
    if (answers[i]) out.responses.push_back(std::move(*answers[i]));
    if (parked[i]) out.parked.push_back(std::move(*parked[i]));
  }
  out.attempts = attempts.load();
  return out;
}

}  // namespace

BatchResult<TranscribeResponse> transcribe_batch(Transcriber& t, std::span<const TranscribeRequest> reqs,
                                                 const BatchOptions& opts) {
  return run_batch<TranscribeRequest, TranscribeResponse>(reqs, opts,
                                                          [&](const TranscribeRequest& r) { return t.transcribe(r); });
}

BatchResult<EmitResponse> emit_batch(Transcriber& t, std::span<const EmitRequest> reqs, const BatchOptions& opts) {
  return run_batch<EmitRequest, EmitResponse>(reqs, opts, [&](const EmitRequest& r) { return t.emit(r); });
}

BatchResult<LidResponse> identify_batch(LidClient& lid, std::span<const LidRequest> reqs, const BatchOptions& opts) {
  return run_batch<LidRequest, LidResponse>(reqs, opts, [&](const LidRequest& r) { return lid.identify(r); });
}

Window mid_window(double duration_s, double width_s) {
  const double mid = duration_s / 2.0;
  return {std::max(0.0, mid - width_s / 2.0), std::min(duration_s, mid + width_s / 2.0)};
}

DetectOutcome detect_language_mid_window(VideoRecord& video, Transcriber& t, const BatchOptions& opts) {
  if (!(video.duration_s > 0.0))
    throw ValidationError(fmt::format("video {} has no duration; cannot pick a detection window", video.id));
  const Window w = mid_window(video.duration_s);
  TranscribeRequest req;
  req.id = video.id;
  req.audio_path = video.path;
  req.start_s = w.start_s;
  req.end_s = w.end_s;
  req.task = TranscribeTask::kDetect;
  auto res = transcribe_batch(t, std::span(&req, 1), opts);
  DetectOutcome out;
  if (!res.parked.empty()) {
    out.error = res.parked.front().reason;
    return out;
  }
  const auto& r = res.responses.front();
  if (!r.detected_language) {
    out.error = "backend returned no detected language";
    return out;
  }
  out.language = r.detected_language;
  out.prob = r.language_prob;
  video.detected_language = r.detected_language;
  video.language_prob = r.language_prob;
  return out;
}

TrainResponse train_checked(Trainer& trainer, const TrainRequest& req, const Manifest& training_set,
                            std::string_view teacher_capacity) {
  if (training_set.segments.empty()) throw ValidationError("refusing to train on an empty manifest");
  capacity_rank(req.capacity);
  if (!teacher_capacity.empty()) check_capacity_order(teacher_capacity, req.capacity);
  TrainResponse r = trainer.train(req);
  if (r.handle.empty()) throw BackendError("trainer returned an empty model handle", false);
  if (r.handle.capacity != req.capacity)
    throw BackendError(
        fmt::format("trainer answered capacity {} for a {} request", r.handle.capacity, req.capacity), false);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::chrono::milliseconds audio_timeout(const ProcessOptions& o, double audio_s) {
  const auto scaled = std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil(o.realtime_timeout_factor * audio_s * 1000.0)));
  return std::max(o.min_request_timeout, scaled);
}

}  // namespace

ProcessBackend::ProcessBackend(const std::string& command, ProcessOptions opts)
    : client_(std::make_unique<ProtocolClient>(command, opts.handshake_timeout)), opts_(opts) {}

ProcessBackend::~ProcessBackend() = default;

TranscribeResponse ProcessBackend::transcribe(const TranscribeRequest& req) {
  auto j = client_->call(wire::to_json(req), audio_timeout(opts_, req.end_s - req.start_s));
  return wire::transcribe_response(j);
}

EmitResponse ProcessBackend::emit(const EmitRequest& req) {
  auto j = client_->call(wire::to_json(req), audio_timeout(opts_, req.end_s - req.start_s));
  return wire::emit_response(j);
}

TrainResponse ProcessBackend::train(const TrainRequest& req) {
  auto j = client_->call(wire::to_json(req), opts_.heartbeat_timeout, true);
  return wire::train_response(j);
}

LidResponse ProcessBackend::identify(const LidRequest& req) {
  auto j = client_->call(wire::to_json(req), opts_.lid_timeout);
  return wire::lid_response(j);
}

BatchResult<TranscribeResponse> ProcessBackend::transcribe_via_files(std::span<const TranscribeRequest> reqs,
                                                                     const std::filesystem::path& scratch_dir) {
  BatchResult<TranscribeResponse> out;
  if (reqs.empty()) return out;
  std::filesystem::create_directories(scratch_dir);
  std::string body;
  double audio_s = 0.0;
  for (const auto& r : reqs) {
    body += wire::to_json(r).dump();
    body += '\n';
    audio_s += r.end_s - r.start_s;
  }
  const std::string stamp = hash_hex(fnv1a64(body));
  const auto req_path = scratch_dir / fmt::format("requests-{}.jsonl", stamp);
  const auto resp_path = scratch_dir / fmt::format("responses-{}.jsonl", stamp);
  write_file_atomic(req_path, body);
  std::filesystem::remove(resp_path);

  client_->call(wire::json{{"kind", "batch"}, {"request_file", req_path.string()}, {"response_file", resp_path.string()}},
                audio_timeout(opts_, audio_s), true);
  out.attempts = reqs.size();

  std::map<std::string, TranscribeResponse> got;
  std::map<std::string, std::string> failed;
  std::ifstream in(resp_path);
  if (!in) throw BackendError(fmt::format("backend wrote no response file {}", resp_path.string()), false);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = wire::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("id")) continue;
    if (j.value("ok", false)) {
      auto r = wire::transcribe_response(j);
      got.emplace(r.id, std::move(r));
    } else {
      failed.emplace(j["id"].get<std::string>(), j.value("error", std::string("unspecified")));
    }
  }
  for (const auto& r : reqs) {
    if (auto it = got.find(r.id); it != got.end()) {
      out.responses.push_back(it->second);
    } else if (auto f = failed.find(r.id); f != failed.end()) {
      out.parked.push_back({r.id, f->second, 1});
    } else {
      out.parked.push_back({r.id, "missing from response file", 1});
    }
  }
  return out;
}

std::string ProcessBackend::stderr_tail() const { return client_->stderr_tail(); }

}  // namespace gsb
