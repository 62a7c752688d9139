#include "gsb/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>
#include <wordexp.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "gsb/backends.hpp"

extern char** environ;

namespace gsb {
namespace {

constexpr std::size_t kStderrTail = 8192;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void make_pipe(int fds[2]) {
  if (::pipe2(fds, O_CLOEXEC) != 0) throw BackendError(fmt::format("pipe: {}", std::strerror(errno)), false);
}

}  // namespace

std::vector<std::string> split_command(const std::string& command) {
  wordexp_t we{};
  const int rc = ::wordexp(command.c_str(), &we, WRDE_NOCMD | WRDE_UNDEF);
  if (rc != 0) {
    if (rc == WRDE_NOSPACE) ::wordfree(&we);
    throw ValidationError(fmt::format("cannot parse backend command '{}'", command));
  }
  std::vector<std::string> argv(we.we_wordv, we.we_wordv + we.we_wordc);
  ::wordfree(&we);
  if (argv.empty()) throw ValidationError("backend command is empty");
  return argv;
}

Subprocess::Subprocess(const std::vector<std::string>& argv) {
  if (argv.empty()) throw ValidationError("empty argv");
  ignore_sigpipe();
  int in[2], out[2], err[2];
  make_pipe(in);
  make_pipe(out);
  make_pipe(err);

  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_adddup2(&fa, in[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&fa, out[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&fa, err[1], STDERR_FILENO);

  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const int rc = ::posix_spawnp(&pid_, cargv[0], &fa, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  ::close(in[0]);
  ::close(out[1]);
  ::close(err[1]);
  if (rc != 0) {
    ::close(in[1]);
    ::close(out[0]);
    ::close(err[0]);
    throw BackendError(fmt::format("cannot launch '{}': {}", argv[0], std::strerror(rc)), false);
  }
  in_fd_ = in[1];
  out_fd_ = out[0];
  err_fd_ = err[0];
  err_thread_ = std::thread([this] {
    char buf[4096];
    for (;;) {
      const ssize_t n = ::read(err_fd_, buf, sizeof buf);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      std::lock_guard lock(err_mu_);
      err_tail_.append(buf, static_cast<std::size_t>(n));
      if (err_tail_.size() > kStderrTail) err_tail_.erase(0, err_tail_.size() - kStderrTail);
    }
  });
}

Subprocess::~Subprocess() {
  terminate(std::chrono::milliseconds(2000));
  if (out_fd_ >= 0) ::close(out_fd_);
}

void Subprocess::write_line(std::string_view line) {
  if (in_fd_ < 0) throw BackendError("backend stdin already closed", false);
  std::string buf(line);
  buf.push_back('\n');
  std::size_t off = 0;
  while (off < buf.size()) {
    const ssize_t n = ::write(in_fd_, buf.data() + off, buf.size() - off);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw BackendError(fmt::format("write to backend failed: {}", std::strerror(errno)), false);
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> Subprocess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto nl = out_buf_.find('\n');
    if (nl != std::string::npos) {
      std::string line = out_buf_.substr(0, nl);
      out_buf_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{out_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw BackendError(fmt::format("poll failed: {}", std::strerror(errno)), false);
    if (rc == 0) return std::nullopt;
    char buf[65536];
    const ssize_t n = ::read(out_fd_, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      if (!out_buf_.empty()) {
        std::string line;
        line.swap(out_buf_);
        return line;
      }
      throw BackendError("backend closed its output", false);
    }
    out_buf_.append(buf, static_cast<std::size_t>(n));
  }
}

void Subprocess::close_stdin() {
  if (in_fd_ >= 0) {
    ::close(in_fd_);
    in_fd_ = -1;
  }
}

int Subprocess::terminate(std::chrono::milliseconds grace) {
  close_stdin();
  if (!reaped_ && pid_ > 0) {
    const auto deadline = std::chrono::steady_clock::now() + grace;
    for (;;) {
      const pid_t r = ::waitpid(pid_, &status_, WNOHANG);
      if (r == pid_ || (r < 0 && errno != EINTR)) break;
      if (std::chrono::steady_clock::now() >= deadline) {
        ::kill(pid_, SIGKILL);
        while (::waitpid(pid_, &status_, 0) < 0 && errno == EINTR) {
        }
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    reaped_ = true;
  }
  if (err_thread_.joinable()) err_thread_.join();
  if (err_fd_ >= 0) {
    ::close(err_fd_);
    err_fd_ = -1;
  }
  return status_;
}

std::string Subprocess::stderr_tail() const {
  std::lock_guard lock(err_mu_);
  return err_tail_;
}

// ---------------------------------------------------------------------------

ProtocolClient::ProtocolClient(const std::string& command, std::chrono::milliseconds handshake_timeout)
    : proc_(split_command(command)) {
  std::optional<std::string> line;
  try {
    line = proc_.read_line(handshake_timeout);
  } catch (const BackendError&) {
    throw BackendError(fmt::format("backend '{}' exited before handshake: {}", command, proc_.stderr_tail()), false);
  }
  if (!line) throw BackendError(fmt::format("backend '{}' sent no handshake", command), false);
  handshake_ = nlohmann::json::parse(*line, nullptr, false);
  if (handshake_.is_discarded() || handshake_.value("protocol", "") != kProtocolVersion)
    throw BackendError(fmt::format("backend '{}' does not speak {}: {}", command, kProtocolVersion, *line), false);
  reader_ = std::thread([this] { reader_loop(); });
}

ProtocolClient::~ProtocolClient() {
  stop_ = true;
  proc_.close_stdin();
  if (reader_.joinable()) reader_.join();
  proc_.terminate(std::chrono::milliseconds(2000));
}

void ProtocolClient::reader_loop() {
  while (!stop_) {
    std::optional<std::string> line;
    try {
      line = proc_.read_line(std::chrono::milliseconds(100));
    } catch (const BackendError& e) {
      std::lock_guard lock(mu_);
      dead_ = true;
      death_reason_ = e.what();
      cv_.notify_all();
      return;
    }
    if (!line) continue;
    auto j = nlohmann::json::parse(*line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("rid") || !j["rid"].is_string()) continue;
    std::lock_guard lock(mu_);
    auto it = slots_.find(j["rid"].get<std::string>());
    if (it == slots_.end()) continue;  // caller gave up already
    if (j.value("heartbeat", false)) {
      it->second.last_seen = std::chrono::steady_clock::now();
    } else {
      it->second.response = std::move(j);
    }
    cv_.notify_all();
  }
}

nlohmann::json ProtocolClient::call(nlohmann::json request, std::chrono::milliseconds timeout, bool heartbeat) {
  std::string rid;
  {
    std::lock_guard lock(mu_);
    if (dead_) throw BackendError(fmt::format("backend is gone ({}): {}", death_reason_, proc_.stderr_tail()), false);
    rid = std::to_string(next_rid_++);
    slots_[rid].last_seen = std::chrono::steady_clock::now();
  }
  request["rid"] = rid;
  try {
    std::lock_guard wl(write_mu_);
    proc_.write_line(request.dump());
  } catch (...) {
    std::lock_guard lock(mu_);
    slots_.erase(rid);
    throw;
  }

  const auto started = std::chrono::steady_clock::now();
  std::unique_lock lock(mu_);
  for (;;) {
    auto& slot = slots_.at(rid);
    if (slot.response) break;
    if (dead_) {
      slots_.erase(rid);
      throw BackendError(fmt::format("backend exited mid-request ({}): {}", death_reason_, proc_.stderr_tail()), false);
    }
    const auto deadline = (heartbeat ? slot.last_seen : started) + timeout;
    if (std::chrono::steady_clock::now() >= deadline) {
      slots_.erase(rid);
      throw BackendError(fmt::format("request {} timed out after {} ms{}", request.value("kind", "?"), timeout.count(),
                                     heartbeat ? " without a heartbeat" : ""),
                         true);
    }
    cv_.wait_until(lock, deadline);
  }
  nlohmann::json resp = std::move(*slots_.at(rid).response);
  slots_.erase(rid);
  lock.unlock();
  if (!resp.value("ok", false)) {
    throw BackendError(fmt::format("backend error: {}", resp.value("error", std::string("unspecified"))),
                       resp.value("transient", false));
  }
  return resp;
}

}  // namespace gsb
