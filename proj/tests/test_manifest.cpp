#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "gsb/audio.hpp"
#include "gsb/manifest.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gsb_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

gsb::Segment seg(const std::string& video, const std::string& channel, std::size_t k, double s, double e,
                 const std::string& text = "TEXT") {
  gsb::Segment x;
  x.id = gsb::make_segment_id(video, k);
  x.video = video;
  x.channel = channel;
  x.start_s = s;
  x.end_s = e;
  x.text = text;
  x.raw_text = text;
  x.language = "id";
  return x;
}

// One video per channel holding a single segment of the given length.
gsb::Manifest corpus(const std::vector<double>& channel_hours) {
  gsb::Manifest m;
  m.language = "id";
  for (std::size_t c = 0; c < channel_hours.size(); ++c) {
    const std::string ch = "ch" + std::to_string(c);
    gsb::VideoRecord v;
    v.id = ch + "_v";
    v.channel = ch;
    v.path = v.id + ".wav";
    v.duration_s = channel_hours[c] * 3600.0;
    v.sample_rate_hz = 16000;
    m.videos.push_back(v);
    m.segments.push_back(seg(v.id, ch, 0, 0.0, v.duration_s));
    m.splits[ch] = gsb::Split::kUnassigned;
  }
  m.canonicalize();
  return m;
}

TEST(SegmentId, LexicalOrderIsTemporalOrder) {
  EXPECT_EQ(gsb::make_segment_id("vid", 7), "vid-00007");
  for (std::size_t k = 0; k < 2000; k += 7) EXPECT_LT(gsb::make_segment_id("v", k), gsb::make_segment_id("v", k + 1));
}

TEST(ManifestFile, RoundTrip) {
  gsb::Manifest m = corpus({0.01, 0.02});
  m.videos[0].detected_language = "id";
  m.videos[0].language_prob = 0.97;
  m.videos[0].topic = "Sport";
  m.segments[0].lid_score = 0.5;
  m.segments[0].cer_vs_prev = 0.125;
  m.segments[0].source = gsb::LabelSource::teacher(2);
  m.segments[0].text = "QUOTE \" AND \\ BACKSLASH ก";
  m.splits["ch0"] = gsb::Split::kDev;
  const auto text = gsb::serialize_manifest(m);
  const auto back = gsb::parse_manifest(text);
  EXPECT_EQ(back, m);
  EXPECT_EQ(gsb::serialize_manifest(back), text);
}

TEST(ManifestFile, ParseErrorsNameTheLine) {
  try {
    gsb::parse_manifest("{\"kind\":\"corpus\"}\nnot json\n");
    FAIL();
  } catch (const gsb::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(gsb::parse_manifest("{\"kind\":\"nonsense\"}\n"), gsb::ValidationError);
}

TEST(Manifest, Violations) {
  auto m = corpus({0.01});
  EXPECT_TRUE(m.violations().empty());
  auto bad = m;
  bad.segments.push_back(seg("ghost", "ch0", 1, 0, 1));
  EXPECT_FALSE(bad.violations().empty());
  bad = m;
  bad.segments[0].end_s = bad.videos[0].duration_s + 5;
  EXPECT_FALSE(bad.violations().empty());
  bad = m;
  bad.splits["ch0"] = gsb::Split::kTrain;
  bad.segments[0].text.clear();
  EXPECT_FALSE(bad.violations().empty());
  bad = m;
  bad.splits.clear();
  EXPECT_FALSE(bad.violations().empty());
  bad = m;
  bad.segments.push_back(bad.segments[0]);
  EXPECT_FALSE(bad.violations().empty());
  EXPECT_THROW(bad.validate(), gsb::ValidationError);
}

TEST(LabelSource, RoundTrip) {
  for (auto s : {gsb::LabelSource::whisper(), gsb::LabelSource::teacher(3), gsb::LabelSource::manual()})
    EXPECT_EQ(gsb::LabelSource::parse(s.to_string()), s);
  EXPECT_THROW(gsb::LabelSource::parse("teacher:0"), gsb::ValidationError);
}

TEST(Ingest, EmptyDirectory) {
  TempDir d("ingest_empty");
  const auto r = gsb::ingest_audio_dir(d.path, "id");
  EXPECT_TRUE(r.manifest.videos.empty());
  EXPECT_TRUE(r.manifest.segments.empty());
}

TEST(Ingest, MissingRootIsFatal) {
  EXPECT_THROW(gsb::ingest_audio_dir("/nonexistent/gsb/root", "id"), gsb::IoError);
}

TEST(Ingest, OneSecondMonoFile) {
  TempDir d("ingest_one");
  fs::create_directories(d.path / "chan");
  gsb::AudioBuffer b;
  b.samples.assign(16000, 0.0f);
  gsb::write_wav(d.path / "chan" / "talk.wav", b);
  const auto r = gsb::ingest_audio_dir(d.path, "id");
  ASSERT_EQ(r.manifest.videos.size(), 1u);
  const auto& v = r.manifest.videos[0];
  EXPECT_EQ(v.id, "talk");
  EXPECT_EQ(v.channel, "chan");
  EXPECT_DOUBLE_EQ(v.duration_s, 1.0);
  EXPECT_EQ(v.sample_rate_hz, 16000);
  EXPECT_EQ(r.manifest.language, "id");
}

TEST(Ingest, CorruptFileIsReportedNotFatal) {
  TempDir d("ingest_corrupt");
  fs::create_directories(d.path / "a");
  fs::create_directories(d.path / "b");
  gsb::AudioBuffer b;
  b.samples.assign(8000, 0.1f);
  gsb::write_wav(d.path / "a" / "one.wav", b);
  gsb::write_wav(d.path / "b" / "two.wav", b);
  const auto bytes = gsb::encode_wav(b);
  std::ofstream(d.path / "b" / "three.wav", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 20);
  std::ofstream(d.path / "a" / "channel.json") << R"({"topic": "Sport", "format": "Podcast"})";
  const auto r = gsb::ingest_audio_dir(d.path, "id", 3);
  EXPECT_EQ(r.manifest.videos.size(), 2u);
  std::size_t errors = 0, warnings = 0;
  for (const auto& i : r.report) (i.severity == gsb::IngestIssue::Severity::kError ? errors : warnings)++;
  EXPECT_EQ(errors, 1u);
  EXPECT_EQ(warnings, 1u);  // "Podcast" is outside the format vocabulary
  EXPECT_EQ(r.manifest.videos[0].topic, "Sport");
}

TEST(AssignSplits, ThreeEqualChannels) {
  const auto m = gsb::assign_splits(corpus({10, 10, 10}), 10, 10, 1);
  std::map<gsb::Split, int> n;
  for (const auto& [c, s] : m.splits) ++n[s];
  EXPECT_EQ(n[gsb::Split::kDev], 1);
  EXPECT_EQ(n[gsb::Split::kTest], 1);
  EXPECT_EQ(n[gsb::Split::kTrain], 1);
}

TEST(AssignSplits, ZeroTargetsLeaveEverythingInTrain) {
  const auto m = gsb::assign_splits(corpus({1, 2, 3}), 0, 0, 1);
  for (const auto& [c, s] : m.splits) EXPECT_EQ(s, gsb::Split::kTrain);
}

double split_hours(const gsb::Manifest& m, gsb::Split s) {
  double h = 0;
  for (const auto& x : m.segments)
    if (m.split_of(x.channel) == s) h += x.duration_s() / 3600.0;
  return h;
}

TEST(AssignSplits, RandomChannelsLandInWindow) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    gsb::SplitMix64 rng(seed);
    std::vector<double> hours;
    for (int c = 0; c < 20; ++c) hours.push_back(0.5 + 7.5 * rng.uniform());
    ASSERT_TRUE(oracle::two_bins_feasible(hours, 9, 11, 9, 11)) << "fixture has no feasible split, seed " << seed;
    const auto m = gsb::assign_splits(corpus(hours), 10, 10, seed);
    EXPECT_GE(split_hours(m, gsb::Split::kDev), 9.0);
    EXPECT_LE(split_hours(m, gsb::Split::kDev), 11.0);
    EXPECT_GE(split_hours(m, gsb::Split::kTest), 9.0);
    EXPECT_LE(split_hours(m, gsb::Split::kTest), 11.0);
    EXPECT_EQ(m.splits.size(), 20u);
    EXPECT_EQ(gsb::assign_splits(corpus(hours), 10, 10, seed), m);
  }
}

TEST(AssignSplits, UnattainableTargetsReportClosestTotals) {
  try {
    gsb::assign_splits(corpus({5, 5, 5, 5}), 7.5, 1.0, 1);
    FAIL();
  } catch (const gsb::SplitTargetError& e) {
    EXPECT_GT(e.closest_dev_h(), 0.0);
  }
  EXPECT_THROW(gsb::assign_splits(corpus({1, 1}), 5, 5, 1), gsb::SplitTargetError);
}

TEST(Stats, SmallExample) {
  gsb::Manifest m = corpus({});
  gsb::VideoRecord v;
  v.id = "v";
  v.channel = "c";
  v.duration_s = 100;
  m.videos.push_back(v);
  m.segments = {seg("v", "c", 0, 0, 2), seg("v", "c", 1, 10, 13), seg("v", "c", 2, 20, 25)};
  m.splits["c"] = gsb::Split::kTrain;
  const auto st = gsb::compute_stats(m, 1.0);
  EXPECT_NEAR(st.splits.at(gsb::Split::kTrain).hours, 10.0 / 3600.0, 1e-12);
  EXPECT_EQ(st.splits.at(gsb::Split::kTrain).segments, 3u);
  EXPECT_EQ(st.splits.at(gsb::Split::kTrain).duplicate_transcripts, 2u);
  EXPECT_FALSE(gsb::format_stats_table(st).empty());
}

TEST(Stats, EmptyManifest) {
  const auto st = gsb::compute_stats(gsb::Manifest{}, 1.0);
  for (const auto& [s, ss] : st.splits) {
    EXPECT_EQ(ss.hours, 0.0);
    EXPECT_EQ(ss.segments, 0u);
  }
}

TEST(Stats, Conservation) {
  gsb::SplitMix64 rng(17);
  std::vector<double> hours;
  for (int c = 0; c < 12; ++c) hours.push_back(0.001 + 0.01 * rng.uniform());
  auto m = corpus(hours);
  // split each channel's segment into several pieces
  std::vector<gsb::Segment> pieces;
  for (const auto& s : m.segments) {
    double t = 0;
    std::size_t k = 0;
    while (t < s.end_s - 0.5) {
      const double e = std::min(s.end_s, t + 0.5 + 20 * rng.uniform());
      pieces.push_back(seg(s.video, s.channel, k++, t, e, "T" + std::to_string(rng.below(3))));
      t = e;
    }
  }
  m.segments = pieces;
  int c = 0;
  for (auto& [ch, sp] : m.splits) sp = static_cast<gsb::Split>(c++ % 4);
  const auto st = gsb::compute_stats(m, 1.5);
  std::size_t total = 0;
  for (const auto& [sp, ss] : st.splits) {
    std::size_t bins = 0;
    for (auto n : ss.histogram) bins += n;
    EXPECT_EQ(bins, ss.segments);
    double ch = 0;
    for (const auto& [c, h] : ss.channel_hours) ch += h;
    EXPECT_NEAR(ch, ss.hours, 1e-6 * std::max(1e-9, ss.hours));
    EXPECT_NEAR(ss.hours, split_hours(m, sp), 1e-6 * std::max(1e-9, ss.hours));
    total += ss.segments;
  }
  EXPECT_EQ(total, m.segments.size());
}

}  // namespace
