#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/common.hpp"
#include "gsb/manifest.hpp"

namespace gsb {

inline constexpr std::string_view kProtocolVersion = "gsb/1";

class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient) : Error(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

// Model identity as issued by a trainer. Capacity tags order S < M < L < XL.
struct ModelHandle {
  std::string id;
  std::string capacity;

  bool empty() const { return id.empty(); }
  bool operator==(const ModelHandle&) const = default;
};

// Rank of a capacity tag; throws ValidationError for unknown tags.
int capacity_rank(std::string_view tag);
// Throws ValidationError when `student` is smaller than `teacher`.
void check_capacity_order(std::string_view teacher, std::string_view student);

enum class TranscribeTask { kTranscribe, kDetect };

struct TranscribeRequest {
  std::string id;
  std::string audio_path;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string language_hint;
  std::string model;  // empty: the backend's default (first-pass) model
  TranscribeTask task = TranscribeTask::kTranscribe;
};

struct TranscribeResponse {
  std::string id;
  std::string text;
  std::optional<double> avg_logprob;
  std::optional<std::string> detected_language;
  std::optional<double> language_prob;
};

// Acoustic emissions for a window, written by the backend as an EMIS1 file.
struct EmitRequest {
  std::string id;
  std::string audio_path;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string output_path;
};

struct EmitResponse {
  std::string id;
  std::string path;
};

struct TrainRequest {
  std::string manifest_path;
  std::string capacity;
  std::string noise_config;
  std::uint64_t seed = 0;
};

struct TrainResponse {
  ModelHandle handle;
  std::string summary;
};

struct LidRequest {
  std::string id;
  std::string text;
};

struct LidResponse {
  std::string id;
  std::string language;
  double confidence = 0.0;
};

// Backend roles. Implementations throw BackendError on failure and must be
// safe to call from several threads at once.
class Transcriber {
 public:
  virtual ~Transcriber() = default;
  virtual TranscribeResponse transcribe(const TranscribeRequest& req) = 0;
  virtual EmitResponse emit(const EmitRequest& req);
};

class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual TrainResponse train(const TrainRequest& req) = 0;
};

class LidClient {
 public:
  virtual ~LidClient() = default;
  virtual LidResponse identify(const LidRequest& req) = 0;
};

// Memoizes identify() by text, so repeated filter runs see identical scores.
class CachingLid : public LidClient {
 public:
  explicit CachingLid(LidClient& inner) : inner_(inner) {}
  LidResponse identify(const LidRequest& req) override;
  std::size_t cache_size() const;

 private:
  LidClient& inner_;
  mutable std::mutex mu_;
  std::map<std::string, LidResponse, std::less<>> cache_;
};

// ---------------------------------------------------------------------------
// Batch orchestration

struct BatchOptions {
  int parallelism = 4;
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{200};  // doubles after each failed attempt
};

struct ParkedItem {
  std::string id;
  std::string reason;
  int attempts = 0;
};

template <class Resp>
struct BatchResult {
  std::vector<Resp> responses;  // in request order, failed ones omitted
  std::vector<ParkedItem> parked;
  std::size_t attempts = 0;     // total calls made, retries included
};

// Every request ends up answered or parked, never both. Transient failures
// are retried with exponential backoff; permanent ones park immediately.
BatchResult<TranscribeResponse> transcribe_batch(Transcriber& t, std::span<const TranscribeRequest> reqs,
                                                 const BatchOptions& opts = {});
BatchResult<EmitResponse> emit_batch(Transcriber& t, std::span<const EmitRequest> reqs,
                                     const BatchOptions& opts = {});
BatchResult<LidResponse> identify_batch(LidClient& lid, std::span<const LidRequest> reqs,
                                        const BatchOptions& opts = {});

struct Window {
  double start_s = 0.0;
  double end_s = 0.0;
};

inline constexpr double kDetectWindowS = 30.0;

// [mid - 15, mid + 15] clamped to the recording.
Window mid_window(double duration_s, double width_s = kDetectWindowS);

struct DetectOutcome {
  std::optional<std::string> language;
  std::optional<double> prob;
  std::optional<std::string> error;  // set when the video was parked
};

// Runs detection on the middle window and stores the result on the video.
DetectOutcome detect_language_mid_window(VideoRecord& video, Transcriber& t, const BatchOptions& opts = {});

// Rejects empty manifests and capacity downgrades before calling the trainer.
TrainResponse train_checked(Trainer& trainer, const TrainRequest& req, const Manifest& training_set,
                            std::string_view teacher_capacity);

// ---------------------------------------------------------------------------
// Wire protocol (line-delimited JSON over a child's stdin/stdout)

struct ProcessOptions {
  std::chrono::milliseconds handshake_timeout{10000};
  std::chrono::milliseconds min_request_timeout{5000};
  double realtime_timeout_factor = 10.0;            // transcribe/emit: factor x audio length
  std::chrono::milliseconds heartbeat_timeout{180000};  // train: max silence between heartbeats
  std::chrono::milliseconds lid_timeout{10000};
};

class ProtocolClient;

// Speaks gsb/1 to a child process launched from `command` (shell-style
// word splitting, no substitution). One child per instance; requests are
// multiplexed and matched by id.
class ProcessBackend : public Transcriber, public Trainer, public LidClient {
 public:
  explicit ProcessBackend(const std::string& command, ProcessOptions opts = {});
  ~ProcessBackend() override;

  TranscribeResponse transcribe(const TranscribeRequest& req) override;
  EmitResponse emit(const EmitRequest& req) override;
  TrainResponse train(const TrainRequest& req) override;
  LidResponse identify(const LidRequest& req) override;

  // File-handoff mode: requests written to a file, answers read back from
  // another. Ids missing from the response file come back as parked.
  BatchResult<TranscribeResponse> transcribe_via_files(std::span<const TranscribeRequest> reqs,
                                                       const std::filesystem::path& scratch_dir);

  std::string stderr_tail() const;

 private:
  std::unique_ptr<ProtocolClient> client_;
  ProcessOptions opts_;
};

}  // namespace gsb
