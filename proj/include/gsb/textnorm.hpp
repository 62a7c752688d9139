#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsb/common.hpp"

namespace gsb {

struct CodePointRange {
  char32_t first = 0;
  char32_t last = 0;
};

// Number-word composition rules. Everything language-specific lives in the
// profile file; the engine below only knows places, groups and overrides.
struct NumeralRules {
  enum class Grouping {
    kPositional,  // one word per decimal place up to 10^5 (th)
    kThousands,   // spell 0..999 then add the thousands word (id, vi)
  };
  Grouping grouping = Grouping::kThousands;
  std::string separator = " ";
  std::array<std::string, 10> digits;
  std::map<int, std::string> places;                       // place (1..5) -> word
  std::map<std::pair<int, int>, std::string> place_digit;  // (place, digit) -> compound word
  std::map<int, std::string> overrides;                    // two-digit remainder (10..99) -> words
  // ones digit d after a tens digit >= min_tens: d -> (min_tens, word)
  std::map<int, std::pair<int, std::string>> ones_after_tens;
  std::map<int, std::string> ones_after_higher;  // ones digit d after any higher non-zero place
  std::string zero_tens_filler;                  // inserted for "hundreds, zero tens, ones" (vi "linh")
  bool pad_inner_groups = false;                 // spell "zero hundreds" in non-leading groups
};

struct LanguageProfile {
  std::string code;
  std::vector<CodePointRange> charset;
  NumeralRules numerals;
  bool script_has_case = false;
  bool keep_intraword_apostrophe = false;

  bool permits(char32_t c) const;
};

class ProfileError : public Error {
 public:
  using Error::Error;
};

// Declarative INI profile: [profile], [numerals], [digits], [places],
// [place_digit], [overrides], [ones_after_tens], [ones_after_higher].
LanguageProfile parse_profile(std::string_view text);
LanguageProfile load_profile(const std::filesystem::path& path);
// Shipped defaults for th, id, vi (compiled in from data/profiles).
const LanguageProfile& builtin_profile(std::string_view code);
// A path to an .ini file or a built-in language code.
LanguageProfile resolve_profile(std::string_view path_or_code);

// NFKC -> uppercase (if cased) -> numeral expansion -> punctuation strip ->
// whitespace collapse. Repeats until the output is stable.
std::string normalize(std::string_view text, const LanguageProfile& profile);

// Replaces each maximal run of ASCII digits. Runs of up to 6 digits without
// a leading zero are read as numbers; others digit by digit.
std::string expand_numerals(std::string_view text, const LanguageProfile& profile);

// Spells 0..999999 with the profile's rules.
std::string spell_number(std::uint32_t n, const NumeralRules& rules);

// Drops Unicode P* and S* code points. With keep_intraword_apostrophe, an
// apostrophe between two letters survives.
std::string strip_punctuation(std::string_view text, bool keep_intraword_apostrophe = false);

std::string nfkc(std::string_view text);
std::string to_upper(std::string_view text);
// Collapses whitespace and control-character runs to single spaces and trims.
std::string collapse_whitespace(std::string_view text);

bool is_punctuation(char32_t c);
bool is_symbol(char32_t c);

}  // namespace gsb
