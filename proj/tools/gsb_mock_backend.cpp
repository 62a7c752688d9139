// Serves transcribe, detect, emit, train and lid requests over stdin/stdout
// from a synthetic-corpus truth file. Stands in for the real model runners in
// the toy pipeline and the protocol tests.

#include <condition_variable>
#include <cstdio>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gsb/mock_backends.hpp"
#include "gsb/wire.hpp"

using nlohmann::json;

namespace {

struct Faults {
  int flaky = 0;          // transient failures before each id succeeds
  int die_after = 0;      // exit once this many requests arrived (0: never)
  std::set<std::string> hang_ids;
  bool bad_handshake = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mock model backend speaking the gsb/1 line protocol"};
  std::string truth_path, profile = "id";
  gsb::mock::ServiceOptions opts;
  long train_delay_ms = 0, heartbeat_ms = 60000;
  int workers = 4;
  Faults faults;
  std::vector<std::string> hang;
  app.add_option("--truth", truth_path, "truth JSONL (video, language, timed words)")->required()->check(CLI::ExistingFile);
  app.add_option("--profile", profile, "language profile code or .ini path");
  app.add_option("--eps", opts.whisper_rate, "character error rate of the first-pass transcriber");
  app.add_option("--alpha", opts.alpha, "student error = alpha * label CER");
  app.add_option("--seed", opts.seed, "noise seed");
  app.add_option("--train-delay-ms", train_delay_ms, "sleep per train request");
  app.add_option("--heartbeat-ms", heartbeat_ms, "heartbeat period while training");
  app.add_option("--workers", workers, "requests handled concurrently")->check(CLI::PositiveNumber);
  app.add_option("--flaky", faults.flaky, "fail each request id transiently this many times first");
  app.add_option("--die-after", faults.die_after, "exit after receiving this many requests");
  app.add_option("--hang-id", hang, "never answer requests carrying this id");
  app.add_flag("--bad-handshake", faults.bad_handshake, "announce a wrong protocol version");
  CLI11_PARSE(app, argc, argv);
  faults.hang_ids.insert(hang.begin(), hang.end());
  opts.train_delay = std::chrono::milliseconds(train_delay_ms);
  opts.heartbeat_every = std::chrono::milliseconds(std::max(1L, heartbeat_ms));

  std::unique_ptr<gsb::mock::MockService> service;
  try {
    service = std::make_unique<gsb::mock::MockService>(gsb::mock::TruthIndex::load(truth_path),
                                                       gsb::resolve_profile(profile), opts);
  } catch (const std::exception& e) {
    std::cerr << "gsb_mock_backend: " << e.what() << "\n";
    return 1;
  }

  std::mutex out_mu;
  auto send = [&](const json& j) {
    std::lock_guard lock(out_mu);
    std::cout << j.dump() << "\n" << std::flush;
  };
  json hello = gsb::wire::handshake(service->roles());
  if (faults.bad_handshake) hello["protocol"] = "gsb/0";
  send(hello);

  std::mutex q_mu;
  std::condition_variable q_cv;
  std::deque<json> queue;
  bool closed = false;
  std::map<std::string, int> attempts;

  auto worker = [&] {
    for (;;) {
      json req;
      {
        std::unique_lock lock(q_mu);
        q_cv.wait(lock, [&] { return closed || !queue.empty(); });
        if (queue.empty()) return;
        req = std::move(queue.front());
        queue.pop_front();
      }
      const std::string id = req.value("id", "");
      if (faults.hang_ids.count(id)) continue;
      if (faults.flaky > 0) {
        int n;
        {
          std::lock_guard lock(q_mu);
          n = attempts[req.value("kind", "") + "|" + id]++;
        }
        if (n < faults.flaky) {
          send(gsb::wire::failure(req.value("rid", ""), "injected transient failure", true));
          continue;
        }
      }
      service->handle(req, send);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);

  std::string line;
  int received = 0;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      send(gsb::wire::failure("", "request is not a JSON object", false));
      continue;
    }
    if (faults.die_after > 0 && ++received >= faults.die_after) std::_Exit(3);
    {
      std::lock_guard lock(q_mu);
      queue.push_back(std::move(j));
    }
    q_cv.notify_one();
  }
  {
    std::lock_guard lock(q_mu);
    closed = true;
  }
  q_cv.notify_all();
  for (auto& t : pool) t.join();
  return 0;
}
