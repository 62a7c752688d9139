#include <gtest/gtest.h>

#include "fuzz_text.hpp"
#include "gsb/textnorm.hpp"

namespace {

const gsb::LanguageProfile& id() { return gsb::builtin_profile("id"); }
const gsb::LanguageProfile& th() { return gsb::builtin_profile("th"); }
const gsb::LanguageProfile& vi() { return gsb::builtin_profile("vi"); }

TEST(Normalize, Empty) { EXPECT_EQ(gsb::normalize("", id()), ""); }

TEST(Normalize, IndonesianGreetingWithDigit) {
  EXPECT_EQ(gsb::normalize("Hello, world! 2", id()), "HELLO WORLD DUA");
}

TEST(Normalize, FullwidthDigitFoldsBeforeExpansion) {
  EXPECT_EQ(gsb::nfkc("２"), "2");
  EXPECT_EQ(gsb::normalize("２", id()), "DUA");
}

TEST(ExpandNumerals, ShippedTables) {
  EXPECT_EQ(gsb::expand_numerals("0", th()), "ศูนย์");
  EXPECT_EQ(gsb::expand_numerals("10", id()), "sepuluh");
  EXPECT_EQ(gsb::expand_numerals("no digits here", id()), "no digits here");
}

TEST(SpellNumber, Indonesian) {
  const auto& r = id().numerals;
  EXPECT_EQ(gsb::spell_number(0, r), "nol");
  EXPECT_EQ(gsb::spell_number(11, r), "sebelas");
  EXPECT_EQ(gsb::spell_number(17, r), "tujuh belas");
  EXPECT_EQ(gsb::spell_number(21, r), "dua puluh satu");
  EXPECT_EQ(gsb::spell_number(100, r), "seratus");
  EXPECT_EQ(gsb::spell_number(115, r), "seratus lima belas");
  EXPECT_EQ(gsb::spell_number(1000, r), "seribu");
  EXPECT_EQ(gsb::spell_number(2024, r), "dua ribu dua puluh empat");
  EXPECT_EQ(gsb::spell_number(999999, r), "sembilan ratus sembilan puluh sembilan ribu sembilan ratus sembilan puluh sembilan");
}

TEST(SpellNumber, Thai) {
  const auto& r = th().numerals;
  EXPECT_EQ(gsb::spell_number(11, r), "สิบเอ็ด");
  EXPECT_EQ(gsb::spell_number(20, r), "ยี่สิบ");
  EXPECT_EQ(gsb::spell_number(21, r), "ยี่สิบเอ็ด");
  EXPECT_EQ(gsb::spell_number(101, r), "หนึ่งร้อยเอ็ด");
  EXPECT_EQ(gsb::spell_number(100000, r), "หนึ่งแสน");
}

TEST(SpellNumber, Vietnamese) {
  const auto& r = vi().numerals;
  EXPECT_EQ(gsb::spell_number(10, r), "mười");
  EXPECT_EQ(gsb::spell_number(15, r), "mười lăm");
  EXPECT_EQ(gsb::spell_number(21, r), "hai mươi mốt");
  EXPECT_EQ(gsb::spell_number(105, r), "một trăm linh năm");
}

TEST(ExpandNumerals, LongAndZeroLedRunsReadDigitByDigit) {
  EXPECT_EQ(gsb::expand_numerals("1234567", id()), "satu dua tiga empat lima enam tujuh");
  EXPECT_EQ(gsb::expand_numerals("007", id()), "nol nol tujuh");
  EXPECT_EQ(gsb::expand_numerals("a12b", id()), "a dua belas b");
}

TEST(StripPunctuation, Basics) {
  EXPECT_EQ(gsb::strip_punctuation("a,b."), "ab");
  EXPECT_EQ(gsb::strip_punctuation("!?.,;:"), "");
  EXPECT_EQ(gsb::strip_punctuation("“สวัสดี” ครับ"), "สวัสดี ครับ");
  EXPECT_EQ(gsb::strip_punctuation("rock'n'roll", true), "rock'n'roll");
  EXPECT_EQ(gsb::strip_punctuation("'quoted'", true), "quoted");
}

TEST(Profile, InvariantsOfShippedProfiles) {
  for (const auto* p : {&id(), &th(), &vi()}) {
    EXPECT_TRUE(p->permits(U' ')) << p->code;
    for (const auto& d : p->numerals.digits) EXPECT_FALSE(d.empty()) << p->code;
  }
  EXPECT_TRUE(th().permits(U'ก'));
  EXPECT_FALSE(th().permits(U'A'));
  EXPECT_TRUE(vi().permits(U'Ệ'));
}

TEST(Profile, ParseErrors) {
  EXPECT_THROW(gsb::parse_profile("[profile]\ncode = xx\n"), gsb::ProfileError);
  EXPECT_THROW(gsb::builtin_profile("zz"), gsb::Error);
}

TEST(Normalize, FuzzIdempotentAndPure) {
  for (const auto* p : {&id(), &th(), &vi()}) {
    gsb::SplitMix64 rng(gsb::mix_seed(5, p->code));
    for (int i = 0; i < 2000; ++i) {
      const auto x = fuzz::random_string(rng);
      const auto y = gsb::normalize(x, *p);
      ASSERT_EQ(gsb::normalize(y, *p), y) << p->code << ": " << x;
      const auto v = fuzz::purity_violations(y, p->script_has_case);
      ASSERT_TRUE(v.empty()) << p->code << ": " << x << " -> " << y << " (" << v.front() << ")";
    }
  }
}

}  // namespace
