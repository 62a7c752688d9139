#include <gtest/gtest.h>

#include "gsb/backends.hpp"
#include "gsb/subprocess.hpp"
#include "support.hpp"

namespace {

using namespace std::chrono_literals;

class MockProcess : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::make_unique<support::TempDir>(::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::vector<gsb::mock::VideoTruth> videos = {
        {"pagi", "id", {{"selamat", 0.2, 0.8}, {"pagi", 0.9, 1.4}, {"semua", 1.6, 2.2}}},
        {"hello", "en", {{"good", 0.1, 0.5}, {"morning", 0.6, 1.2}}},
    };
    truth_ = dir_->path / "truth.jsonl";
    gsb::write_file_atomic(truth_, gsb::mock::TruthIndex::from_videos(videos).serialize());
  }

  std::string command(const std::string& extra = "") const {
    return std::string(GSB_MOCK_BACKEND) + " --truth " + truth_.string() + " --eps 0 " + extra;
  }

  gsb::TranscribeRequest req(const std::string& id, const std::string& video = "pagi") const {
    gsb::TranscribeRequest r;
    r.id = id;
    r.audio_path = (dir_->path / (video + ".wav")).string();
    r.start_s = 0;
    r.end_s = 2.5;
    return r;
  }

  std::unique_ptr<support::TempDir> dir_;
  std::filesystem::path truth_;
};

gsb::ProcessOptions quick() {
  gsb::ProcessOptions o;
  o.handshake_timeout = 5000ms;
  o.min_request_timeout = 2000ms;
  o.lid_timeout = 2000ms;
  o.heartbeat_timeout = 2000ms;
  return o;
}

TEST(SplitCommand, Words) {
  EXPECT_EQ(gsb::split_command("a b  c"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(gsb::split_command("a 'b c' \"d e\""), (std::vector<std::string>{"a", "b c", "d e"}));
  EXPECT_EQ(gsb::split_command(R"(a\ b)"), (std::vector<std::string>{"a b"}));
  EXPECT_THROW(gsb::split_command("a 'open"), gsb::ValidationError);
  EXPECT_THROW(gsb::split_command("   "), gsb::ValidationError);
}

TEST_F(MockProcess, AnswersEveryRole) {
  gsb::ProcessBackend b(command(), quick());
  const auto t = b.transcribe(req("w1"));
  EXPECT_EQ(t.id, "w1");
  EXPECT_EQ(t.text, "selamat pagi semua");

  auto d = req("pagi", "hello");
  d.task = gsb::TranscribeTask::kDetect;
  EXPECT_EQ(b.transcribe(d).detected_language, "en");

  const auto l = b.identify({"q", "GOOD MORNING"});
  EXPECT_EQ(l.language, "en");
  EXPECT_DOUBLE_EQ(l.confidence, 1.0);

  gsb::Manifest m;
  m.segments.push_back(support::segment("pagi", "c", 0, 0, 2.5, "SELAMAT PAGI SEMUA"));
  gsb::save_manifest(dir_->path / "train.jsonl", m);
  const auto tr = b.train({(dir_->path / "train.jsonl").string(), "M", "specaugment=on", 3});
  EXPECT_EQ(tr.handle.capacity, "M");
  const auto model = gsb::mock::parse_model_id(tr.handle.id);
  ASSERT_TRUE(model);
  EXPECT_DOUBLE_EQ(model->error_rate, 0.0);

  gsb::EmitRequest e{"e1", req("x").audio_path, 0, 2.5, (dir_->path / "e1.emis").string()};
  EXPECT_EQ(b.emit(e).path, e.output_path);
  EXPECT_EQ(gsb::load_emissions(e.output_path).frames, 125u);
}

TEST_F(MockProcess, ConcurrentRequestsAreMatchedById) {
  gsb::ProcessBackend b(command("--workers 4"), quick());
  std::vector<gsb::TranscribeRequest> reqs;
  for (int i = 0; i < 60; ++i) reqs.push_back(req("w" + std::to_string(i), i % 2 ? "pagi" : "hello"));
  gsb::BatchOptions o;
  o.parallelism = 8;
  const auto r = gsb::transcribe_batch(b, reqs, o);
  ASSERT_EQ(r.responses.size(), 60u);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    EXPECT_EQ(r.responses[i].id, reqs[i].id);
    EXPECT_EQ(r.responses[i].text, i % 2 ? "selamat pagi semua" : "good morning");
  }
}

TEST_F(MockProcess, TransientFailuresAreRetried) {
  gsb::ProcessBackend b(command("--flaky 1"), quick());
  std::vector<gsb::TranscribeRequest> reqs;
  for (int i = 0; i < 10; ++i) reqs.push_back(req("w" + std::to_string(i)));
  gsb::BatchOptions o;
  o.max_attempts = 3;
  o.backoff_base = 1ms;
  const auto r = gsb::transcribe_batch(b, reqs, o);
  EXPECT_EQ(r.responses.size(), 10u);
  EXPECT_EQ(r.attempts, 20u);
  EXPECT_THROW(
      {
        try {
          b.identify({"fresh", "HALO"});
        } catch (const gsb::BackendError& e) {
          EXPECT_TRUE(e.transient());
          throw;
        }
      },
      gsb::BackendError);
}

TEST_F(MockProcess, DeadChildFailsEveryLaterCall) {
  gsb::ProcessBackend b(command("--die-after 2"), quick());
  EXPECT_NO_THROW(b.transcribe(req("a")));
  EXPECT_THROW(b.transcribe(req("b")), gsb::BackendError);
  EXPECT_THROW(b.transcribe(req("c")), gsb::BackendError);
  std::vector<gsb::TranscribeRequest> reqs = {req("d"), req("e")};
  gsb::BatchOptions o;
  o.backoff_base = 1ms;
  const auto r = gsb::transcribe_batch(b, reqs, o);
  EXPECT_EQ(r.parked.size(), 2u);
}

TEST_F(MockProcess, HungRequestTimesOutAndOthersProceed) {
  auto o = quick();
  o.min_request_timeout = 300ms;
  o.realtime_timeout_factor = 0.0;
  gsb::ProcessBackend b(command("--hang-id stuck"), o);
  try {
    b.transcribe(req("stuck"));
    FAIL() << "expected a timeout";
  } catch (const gsb::BackendError& e) {
    EXPECT_TRUE(e.transient());
  }
  EXPECT_EQ(b.transcribe(req("fine")).text, "selamat pagi semua");
}

TEST_F(MockProcess, WrongProtocolVersionIsRejected) {
  EXPECT_THROW(gsb::ProcessBackend(command("--bad-handshake"), quick()), gsb::BackendError);
}

TEST_F(MockProcess, MissingExecutableIsABackendError) {
  EXPECT_THROW(gsb::ProcessBackend("/nonexistent/backend --x", quick()), gsb::BackendError);
}

TEST_F(MockProcess, HeartbeatsKeepLongTrainingAlive) {
  gsb::Manifest m;
  m.segments.push_back(support::segment("pagi", "c", 0, 0, 2.5, "SELAMAT PAGI SEMUA"));
  gsb::save_manifest(dir_->path / "train.jsonl", m);
  const gsb::TrainRequest tr{(dir_->path / "train.jsonl").string(), "M", "n", 1};
  auto o = quick();
  o.heartbeat_timeout = 400ms;
  {
    gsb::ProcessBackend b(command("--train-delay-ms 1200 --heartbeat-ms 100"), o);
    EXPECT_NO_THROW(b.train(tr));
  }
  {
    gsb::ProcessBackend b(command("--train-delay-ms 1200 --heartbeat-ms 1200"), o);
    EXPECT_THROW(b.train(tr), gsb::BackendError);
  }
}

TEST_F(MockProcess, FileHandoffAccountsForEveryRequest) {
  gsb::ProcessBackend b(command(), quick());
  std::vector<gsb::TranscribeRequest> reqs = {req("a"), req("b", "hello"), req("c", "unknown")};
  const auto r = b.transcribe_via_files(reqs, dir_->path / "scratch");
  ASSERT_EQ(r.responses.size(), 2u);
  EXPECT_EQ(r.responses[1].text, "good morning");
  ASSERT_EQ(r.parked.size(), 1u);
  EXPECT_EQ(r.parked[0].id, "c");
}

}  // namespace
