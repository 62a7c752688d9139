#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gsb/metrics.hpp"
#include "oracles.hpp"

namespace {

std::string random_text(gsb::SplitMix64& rng, std::size_t max_len, const std::string& alphabet) {
  const auto n = rng.below(max_len + 1);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

TEST(Tokenize, CharDropsSpaces) {
  auto t = gsb::tokenize("ab c", gsb::Granularity::kChar);
  EXPECT_EQ(t.tokens, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Tokenize, WordsSplitOnWhitespaceRuns) {
  auto t = gsb::tokenize("  ab \t c  ", gsb::Granularity::kWord);
  EXPECT_EQ(t.tokens, (std::vector<std::string>{"ab", "c"}));
}

TEST(Tokenize, CharIsCodePointBased) {
  auto t = gsb::tokenize("กข ค", gsb::Granularity::kChar);
  EXPECT_EQ(t.tokens.size(), 3u);
}

TEST(EditDistance, KittenSitting) {
  auto a = gsb::tokenize("kitten", gsb::Granularity::kChar);
  auto b = gsb::tokenize("sitting", gsb::Granularity::kChar);
  EXPECT_EQ(gsb::edit_distance(a, b), 3u);
  EXPECT_EQ(oracle::edit_distance(a.tokens, b.tokens), 3u);
}

TEST(EditDistance, EmptyAgainstAnything) {
  auto e = gsb::tokenize("", gsb::Granularity::kChar);
  auto b = gsb::tokenize("abcd", gsb::Granularity::kChar);
  EXPECT_EQ(gsb::edit_distance(e, b), 4u);
  EXPECT_EQ(gsb::edit_distance(b, e), 4u);
  EXPECT_EQ(gsb::edit_distance(b, b), 0u);
}

TEST(EditDistance, GranularityMismatchThrows) {
  auto a = gsb::tokenize("a b", gsb::Granularity::kChar);
  auto b = gsb::tokenize("a b", gsb::Granularity::kWord);
  EXPECT_THROW(gsb::edit_distance(a, b), gsb::GranularityMismatch);
}

TEST(Cer, Examples) {
  EXPECT_DOUBLE_EQ(gsb::cer("abc", "abc"), 0.0);
  EXPECT_DOUBLE_EQ(gsb::cer("sitting", "kitten"), 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(gsb::cer("ab", "abcd"), 1.0);
  EXPECT_DOUBLE_EQ(gsb::cer("", ""), 0.0);
  EXPECT_TRUE(std::isinf(gsb::cer("", "x")));
  EXPECT_GT(gsb::cer("a", "bcde"), 1.0);
}

TEST(Wer, Examples) {
  EXPECT_DOUBLE_EQ(gsb::wer("a b c", "a x c"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(gsb::wer("a b c", "a b c"), 0.0);
  EXPECT_DOUBLE_EQ(gsb::wer("a b c", ""), 1.0);
}

TEST(Metric, LanguageChoice) {
  EXPECT_EQ(gsb::metric_for_language("th"), gsb::Granularity::kChar);
  EXPECT_EQ(gsb::metric_for_language("id"), gsb::Granularity::kWord);
  EXPECT_EQ(gsb::metric_for_language("vi"), gsb::Granularity::kWord);
}

TEST(EditDistance, MatchesRecursionOracleOnRandomPairs) {
  gsb::SplitMix64 rng(11);
  for (int i = 0; i < 400; ++i) {
    const auto a = random_text(rng, 12, "abcde");
    const auto b = random_text(rng, 12, "abcde");
    const auto ta = gsb::tokenize(a, gsb::Granularity::kChar);
    const auto tb = gsb::tokenize(b, gsb::Granularity::kChar);
    ASSERT_EQ(gsb::edit_distance(ta, tb), oracle::edit_distance(oracle::chars(a), oracle::chars(b))) << a << " / " << b;
  }
}

TEST(EditDistance, WordLevelMatchesOracle) {
  gsb::SplitMix64 rng(12);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_text(rng, 12, "ab c");
    const auto b = random_text(rng, 12, "ab c");
    const auto ta = gsb::tokenize(a, gsb::Granularity::kWord);
    const auto tb = gsb::tokenize(b, gsb::Granularity::kWord);
    ASSERT_EQ(gsb::edit_distance(ta, tb), oracle::edit_distance(oracle::words(a), oracle::words(b)));
  }
}

TEST(EditDistance, MetricAxioms) {
  gsb::SplitMix64 rng(13);
  for (int i = 0; i < 300; ++i) {
    const auto a = gsb::tokenize(random_text(rng, 12, "abcde"), gsb::Granularity::kChar);
    const auto b = gsb::tokenize(random_text(rng, 12, "abcde"), gsb::Granularity::kChar);
    const auto c = gsb::tokenize(random_text(rng, 12, "abcde"), gsb::Granularity::kChar);
    EXPECT_EQ(gsb::edit_distance(a, a), 0u);
    EXPECT_EQ(gsb::edit_distance(a, b), gsb::edit_distance(b, a));
    EXPECT_LE(gsb::edit_distance(a, c), gsb::edit_distance(a, b) + gsb::edit_distance(b, c));
  }
}

TEST(EditDistance, EqualSuffixNeverIncreasesDistance) {
  gsb::SplitMix64 rng(14);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_text(rng, 8, "abc");
    const auto b = random_text(rng, 8, "abc");
    const auto s = random_text(rng, 5, "abc");
    auto d = [](const std::string& x, const std::string& y) {
      return gsb::edit_distance(gsb::tokenize(x, gsb::Granularity::kChar), gsb::tokenize(y, gsb::Granularity::kChar));
    };
    EXPECT_LE(d(a + s, b + s), d(a, b));
  }
}

TEST(Cer, TimesRefLengthIsInteger) {
  gsb::SplitMix64 rng(15);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_text(rng, 12, "abcde");
    const auto b = random_text(rng, 12, "abcde");
    if (a.empty()) continue;
    const double x = gsb::cer(a, b) * static_cast<double>(a.size());
    EXPECT_NEAR(x, std::round(x), 1e-9);
  }
}

TEST(ScorePairs, MicroAverage) {
  std::vector<gsb::ScoredPair> pairs = {{"a", "a b c d", "a b c d"}, {"b", "a b", "x y"}};
  const auto r = gsb::score_pairs(pairs, gsb::Granularity::kWord);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_DOUBLE_EQ(r.records[1].rate, 1.0);
  EXPECT_EQ(r.total.edits, 2u);
  EXPECT_EQ(r.total.ref_tokens, 6u);
  EXPECT_DOUBLE_EQ(r.micro_rate(), 2.0 / 6.0);
  const auto jsonl = gsb::score_report_jsonl(r);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 3);
}

}  // namespace
