#include <gtest/gtest.h>

#include "gsb/filters.hpp"
#include "support.hpp"

namespace {

using support::segment;

TEST(CharsetFilter, Examples) {
  const auto& th = gsb::builtin_profile("th");
  EXPECT_TRUE(gsb::charset_filter(segment("v", "c", 0, 0, 3, "สวัสดี ครับ", "th"), th).retain);
  EXPECT_FALSE(gsb::charset_filter(segment("v", "c", 0, 0, 3, "สวัสดี A", "th"), th).retain);
  const auto empty = gsb::charset_filter(segment("v", "c", 0, 0, 3, "", "th"), th);
  EXPECT_FALSE(empty.retain);
  EXPECT_EQ(empty.reason, "empty-text");
}

TEST(DurationFilter, ClosedInterval) {
  EXPECT_FALSE(gsb::duration_filter(segment("v", "c", 0, 0, 1.5, "X"), 2.0, 30.0).retain);
  EXPECT_TRUE(gsb::duration_filter(segment("v", "c", 0, 0, 2.0, "X"), 2.0, 30.0).retain);
  EXPECT_TRUE(gsb::duration_filter(segment("v", "c", 0, 0, 30.0, "X"), 2.0, 30.0).retain);
  EXPECT_FALSE(gsb::duration_filter(segment("v", "c", 0, 0, 31.0, "X"), 2.0, 30.0).retain);
}

TEST(LidFilter, Comparisons) {
  auto s = segment("v", "c", 0, 0, 3, "HALO");
  EXPECT_TRUE(gsb::lid_decision(s, {"", "id", 0.99}, 0.95).retain);
  EXPECT_FALSE(gsb::lid_decision(s, {"", "id", 0.80}, 0.95).retain);
  EXPECT_TRUE(gsb::lid_decision(s, {"", "id", 0.95}, 0.95).retain);
  EXPECT_FALSE(gsb::lid_decision(s, {"", "en", 1.0}, 0.0).retain);
}

TEST(LidFilter, RecordsScoreAndPropagatesFailure) {
  gsb::mock::TableLid lid({{"HALO", {"", "id", 0.93}}});
  auto s = segment("v", "c", 0, 0, 3, "HALO");
  EXPECT_TRUE(gsb::lid_filter(s, 0.9, lid).retain);
  ASSERT_TRUE(s.lid_score.has_value());
  EXPECT_DOUBLE_EQ(*s.lid_score, 0.93);
  auto unknown = segment("v", "c", 1, 0, 3, "SIAPA");
  EXPECT_THROW(gsb::lid_filter(unknown, 0.9, lid), gsb::BackendError);
}

TEST(Balance, CapKeepsEarliest) {
  std::vector<gsb::Segment> s;
  for (std::size_t k = 0; k < 8; ++k) s.push_back(segment("v" + std::to_string(7 - k), "c", 0, 0, 3, "INTRO"));
  auto r = gsb::balance(s, 5);
  EXPECT_EQ(r.retained.size(), 5u);
  EXPECT_EQ(r.suppressed_per_channel.at("c"), 3u);
  r = gsb::balance(s, 1);
  ASSERT_EQ(r.retained.size(), 1u);
  EXPECT_EQ(r.retained[0].video, "v0");

  // same video: start time decides
  std::vector<gsb::Segment> t = {segment("v", "c", 1, 10, 13, "INTRO"), segment("v", "c", 0, 0, 3, "INTRO")};
  r = gsb::balance(t, 1);
  ASSERT_EQ(r.retained.size(), 1u);
  EXPECT_EQ(r.retained[0].start_s, 0.0);
}

TEST(Balance, ScopeIsPerChannel) {
  std::vector<gsb::Segment> s = {segment("a", "c1", 0, 0, 3, "INTRO"), segment("b", "c2", 0, 0, 3, "INTRO")};
  EXPECT_EQ(gsb::balance(s, 1).retained.size(), 2u);
}

TEST(ApplyAll, EmptyManifest) {
  auto f = support::filter_fixture();
  gsb::mock::TableLid lid({}, f.fallback);
  const auto out = gsb::apply_all(gsb::Manifest{}, f.config, &lid);
  EXPECT_TRUE(out.retained.segments.empty());
  EXPECT_EQ(out.report.input, 0u);
  EXPECT_EQ(out.report.rejected_total(), 0u);
  EXPECT_TRUE(out.report.reconciles());
}

TEST(ApplyAll, FixtureRejectsOnePerRule) {
  auto f = support::filter_fixture();
  gsb::mock::TableLid table(f.lid_table, f.fallback);
  const auto out = gsb::apply_all(f.manifest, f.config, &table);
  for (auto r : {gsb::FilterRule::kCharset, gsb::FilterRule::kDuration, gsb::FilterRule::kLid, gsb::FilterRule::kBalance})
    EXPECT_EQ(out.report.rejected.at(r), 1u) << gsb::rule_name(r);
  EXPECT_EQ(out.report.retained, 6u);
  EXPECT_TRUE(out.report.reconciles());
  EXPECT_EQ(out.report.duplicates_suppressed.at("alpha"), 1u);
  std::map<gsb::FilterRule, std::string> who;
  for (const auto& r : out.rejections) who[r.rule] = r.segment.id;
  EXPECT_EQ(who[gsb::FilterRule::kCharset], "a1-00004");
  EXPECT_EQ(who[gsb::FilterRule::kDuration], "a1-00003");
  EXPECT_EQ(who[gsb::FilterRule::kLid], "a2-00001");
  EXPECT_EQ(who[gsb::FilterRule::kBalance], "a2-00000");
  EXPECT_TRUE(support::postcondition_violations(out.retained, f.config, table).empty());
  for (const auto& s : out.retained.segments) EXPECT_TRUE(s.lid_score.has_value());
}

TEST(ApplyAll, AllPassingManifestIsIdentityOnSegmentsKept) {
  auto f = support::filter_fixture();
  gsb::mock::TableLid table(f.lid_table, f.fallback);
  const auto once = gsb::apply_all(f.manifest, f.config, &table);
  gsb::CachingLid cached(table);
  const auto a = gsb::apply_all(once.retained, f.config, &cached);
  EXPECT_EQ(a.retained, once.retained);
  EXPECT_EQ(a.report.rejected_total(), 0u);
}

TEST(ApplyAll, IdempotentWithCachedScores) {
  auto f = support::filter_fixture();
  gsb::mock::TableLid table(f.lid_table, f.fallback);
  gsb::CachingLid cached(table);
  const auto once = gsb::apply_all(f.manifest, f.config, &cached);
  const auto twice = gsb::apply_all(once.retained, f.config, &cached);
  EXPECT_EQ(gsb::serialize_manifest(twice.retained), gsb::serialize_manifest(once.retained));
  EXPECT_GT(cached.cache_size(), 0u);
}

TEST(ApplyAll, BackendFailuresAreParkedNeverRetained) {
  auto f = support::filter_fixture();
  // no fallback: every text outside the table fails permanently
  gsb::mock::TableLid table(f.lid_table);
  gsb::BatchOptions b;
  b.backoff_base = std::chrono::milliseconds(1);
  const auto out = gsb::apply_all(f.manifest, f.config, &table, b);
  EXPECT_EQ(out.report.retained, 0u);
  EXPECT_EQ(out.report.parked, 7u);
  EXPECT_TRUE(out.report.reconciles());
}

TEST(ApplyAll, RetainedSetDoesNotDependOnRuleToggleOrderOfIndependentRules) {
  // Turning off a rule and applying it afterwards on its own keeps the same set.
  auto f = support::filter_fixture();
  gsb::mock::TableLid table(f.lid_table, f.fallback);
  const auto all = gsb::apply_all(f.manifest, f.config, &table);
  auto no_charset = f.config;
  no_charset.charset_enabled = false;
  auto step = gsb::apply_all(f.manifest, no_charset, &table);
  gsb::Manifest after = step.retained;
  std::erase_if(after.segments, [&](const gsb::Segment& s) { return !gsb::charset_filter(s, f.config.profile).retain; });
  EXPECT_EQ(after.segments, all.retained.segments);
}

TEST(ApplyAll, PostconditionSweepOnRandomManifests) {
  const auto& prof = gsb::builtin_profile("id");
  const std::vector<std::string> texts = {"HALO", "SELAMAT PAGI", "APA KABAR", "HELLO THERE", "ก", "", "TERIMA KASIH"};
  gsb::SplitMix64 rng(21);
  for (int round = 0; round < 50; ++round) {
    gsb::Manifest m;
    m.language = "id";
    for (int c = 0; c < 3; ++c) {
      const std::string ch = "c" + std::to_string(c);
      m.splits[ch] = gsb::Split::kUnassigned;
      const std::string vid = ch + "v";
      double t = 0;
      for (std::size_t k = 0; k < 12; ++k) {
        const double d = 0.5 + 35 * rng.uniform();
        m.segments.push_back(segment(vid, ch, k, t, t + d, texts[rng.below(texts.size())]));
        t += d;
      }
      m.videos.push_back(support::video(vid, ch, t + 1));
    }
    m.canonicalize();
    gsb::mock::TableLid table({{"HELLO THERE", {"", "en", 0.97}}, {"APA KABAR", {"", "id", 0.6}}}, gsb::LidResponse{"", "id", 0.95});
    gsb::FilterConfig cfg;
    cfg.profile = prof;
    cfg.max_dup_per_channel = 1 + rng.below(3);
    const auto out = gsb::apply_all(m, cfg, &table);
    ASSERT_TRUE(out.report.reconciles());
    const auto v = support::postcondition_violations(out.retained, cfg, table);
    ASSERT_TRUE(v.empty()) << v.front();
  }
}

TEST(FilterConfig, Violations) {
  gsb::FilterConfig c;
  c.profile = gsb::builtin_profile("id");
  EXPECT_TRUE(c.violations().empty());
  c.lid_threshold = 1.5;
  c.min_duration_s = 40;
  c.max_dup_per_channel = 0;
  EXPECT_EQ(c.violations().size(), 3u);
  EXPECT_THROW(c.validate(), gsb::ValidationError);
  gsb::FilterConfig no_lid;
  no_lid.profile = c.profile;
  EXPECT_THROW(gsb::apply_all(gsb::Manifest{}, no_lid, nullptr), gsb::ValidationError);
}

TEST(FilterReport, Outputs) {
  auto f = support::filter_fixture();
  gsb::mock::TableLid table(f.lid_table, f.fallback);
  const auto out = gsb::apply_all(f.manifest, f.config, &table);
  const auto jl = gsb::filter_report_jsonl(out.report);
  EXPECT_NE(jl.find("\"filter_summary\""), std::string::npos);
  EXPECT_FALSE(gsb::format_filter_report(out.report).empty());
  const auto side = gsb::rejections_jsonl(out.rejections);
  EXPECT_EQ(std::count(side.begin(), side.end(), '\n'), 4);
}

}  // namespace
