#pragma once

#include <sys/types.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace gsb {

// Shell-style word splitting without command substitution or globbing side
// effects. Throws ValidationError on malformed input.
std::vector<std::string> split_command(const std::string& command);

// A child process with piped stdin/stdout/stderr. stderr is drained on a
// background thread and the tail kept for diagnostics.
class Subprocess {
 public:
  explicit Subprocess(const std::vector<std::string>& argv);
  ~Subprocess();
  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  // Throws BackendError if the child has gone away.
  void write_line(std::string_view line);
  // nullopt on timeout; throws BackendError at end of stream.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  void close_stdin();
  // Waits up to `grace` for exit, then kills. Returns the exit status.
  int terminate(std::chrono::milliseconds grace);
  std::string stderr_tail() const;
  pid_t pid() const { return pid_; }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int err_fd_ = -1;
  std::string out_buf_;
  std::thread err_thread_;
  mutable std::mutex err_mu_;
  std::string err_tail_;
  bool reaped_ = false;
  int status_ = 0;
};

// Request/response multiplexing over one Subprocess. Each call gets a fresh
// "rid"; a reader thread routes answers and heartbeats back to their caller.
class ProtocolClient {
 public:
  ProtocolClient(const std::string& command, std::chrono::milliseconds handshake_timeout);
  ~ProtocolClient();

  // With `heartbeat` the timeout restarts whenever the child sends a
  // heartbeat for this request. Throws BackendError (transient on timeout or
  // when the backend flags the failure as transient).
  nlohmann::json call(nlohmann::json request, std::chrono::milliseconds timeout, bool heartbeat = false);
  std::string stderr_tail() const { return proc_.stderr_tail(); }
  const nlohmann::json& handshake() const { return handshake_; }

 private:
  struct Slot {
    std::optional<nlohmann::json> response;
    std::chrono::steady_clock::time_point last_seen;
  };
  void reader_loop();

  Subprocess proc_;
  nlohmann::json handshake_;
  std::mutex write_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Slot> slots_;
  std::uint64_t next_rid_ = 1;
  bool dead_ = false;
  std::string death_reason_;
  std::atomic<bool> stop_{false};
  std::thread reader_;
};

}  // namespace gsb
