#include "gsb/textnorm.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <mutex>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace gsb {
namespace detail {
std::string_view embedded_profile(std::string_view code);
}

namespace {

namespace pt = boost::property_tree;

const pt::ptree& empty_tree() {
  static const pt::ptree t;
  return t;
}

std::string to_utf8(const icu::UnicodeString& u) {
  std::string out;
  u.toUTF8String(out);
  return out;
}

icu::UnicodeString from_utf8(std::string_view s) {
  return icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<std::int32_t>(s.size())));
}

char32_t parse_code_point(const std::string& tok) {
  std::string t = trim(tok);
  if (t.size() > 2 && (t[0] == 'U' || t[0] == 'u') && t[1] == '+') t = t.substr(2);
  try {
    std::size_t used = 0;
    const auto v = std::stoul(t, &used, 16);
    if (used != t.size() || v > 0x10FFFF) throw ProfileError("bad code point '" + tok + "'");
    return static_cast<char32_t>(v);
  } catch (const std::logic_error&) {
    throw ProfileError("bad code point '" + tok + "'");
  }
}

std::vector<CodePointRange> parse_charset(const std::string& spec) {
  std::vector<CodePointRange> out;
  for (const auto& part : split(spec, ',')) {
    const auto p = trim(part);
    if (p.empty()) continue;
    const auto dash = p.find('-');
    if (dash == std::string::npos) {
      const auto c = parse_code_point(p);
      out.push_back({c, c});
    } else {
      const auto a = parse_code_point(p.substr(0, dash));
      const auto b = parse_code_point(p.substr(dash + 1));
      if (b < a) throw ProfileError("reversed charset range '" + p + "'");
      out.push_back({a, b});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ProfileError(fmt::format("'{}' expects a boolean, got '{}'", key, v));
}

int parse_int(const std::string& v, const std::string& what) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw ProfileError(fmt::format("bad integer '{}' in {}", v, what));
    return x;
  } catch (const std::logic_error&) {
    throw ProfileError(fmt::format("bad integer '{}' in {}", v, what));
  }
}

std::pair<int, int> parse_pair(const std::string& key, const std::string& what) {
  const auto c = key.find(':');
  if (c == std::string::npos) throw ProfileError(fmt::format("{} key '{}' must be 'a:b'", what, key));
  return {parse_int(key.substr(0, c), what), parse_int(key.substr(c + 1), what)};
}

// Table words are stored NFKC-folded so expansion output is already normal.
std::string word(const std::string& v) { return nfkc(trim(v)); }

const icu::Normalizer2& nfkc_instance() {
  UErrorCode status = U_ZERO_ERROR;
  const auto* n = icu::Normalizer2::getNFKCInstance(status);
  if (U_FAILURE(status) || n == nullptr) throw Error("ICU NFKC data unavailable");
  return *n;
}

bool is_space_like(char32_t c) {
  const auto t = u_charType(static_cast<UChar32>(c));
  return u_isUWhiteSpace(static_cast<UChar32>(c)) || t == U_CONTROL_CHAR || t == U_SPACE_SEPARATOR ||
         t == U_LINE_SEPARATOR || t == U_PARAGRAPH_SEPARATOR;
}

bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'\u2019'; }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Spells 1..999. `leading` is false for a group that follows a thousands word;
// `higher_nonzero` tells whether any digit above this group is non-zero.
void spell_group(std::uint32_t g, bool leading, bool higher_nonzero, const NumeralRules& r,
                 std::vector<std::string>& out) {
  const int h = static_cast<int>(g / 100);
  const int rem = static_cast<int>(g % 100);
  const int t = rem / 10;
  const int u = rem % 10;
  const bool pad = !leading && r.pad_inner_groups;
  auto place_word = [&](int place, int digit) {
    if (auto it = r.place_digit.find({place, digit}); it != r.place_digit.end()) return it->second;
    auto pw = r.places.find(place);
    if (pw == r.places.end()) throw ProfileError(fmt::format("profile lacks a word for place {}", place));
    return r.digits[static_cast<std::size_t>(digit)] + r.separator + pw->second;
  };
  if (h > 0) {
    out.push_back(place_word(2, h));
  } else if (pad && rem > 0) {
    out.push_back(r.digits[0] + r.separator + r.places.at(2));
  }
  if (rem == 0) return;
  if (auto it = r.overrides.find(rem); it != r.overrides.end()) {
    out.push_back(it->second);
    return;
  }
  if (t > 0) {
    out.push_back(place_word(1, t));
  } else if ((h > 0 || pad) && !r.zero_tens_filler.empty()) {
    out.push_back(r.zero_tens_filler);
  }
  if (u == 0) return;
  if (auto it = r.ones_after_tens.find(u); t > 0 && it != r.ones_after_tens.end() && t >= it->second.first) {
    out.push_back(it->second.second);
  } else if (auto hi = r.ones_after_higher.find(u);
             (t > 0 || h > 0 || higher_nonzero) && hi != r.ones_after_higher.end()) {
    out.push_back(hi->second);
  } else {
    out.push_back(r.digits[static_cast<std::size_t>(u)]);
  }
}

std::string expand_impl(std::string_view text, const LanguageProfile& profile, bool upper) {
  const auto& rules = profile.numerals;
  const bool spaced = !rules.separator.empty();
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] < '0' || text[i] > '9') {
      out += text[i++];
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
    const auto run = text.substr(i, j - i);
    std::string words;
    if (run.size() <= 6 && !(run.size() > 1 && run[0] == '0')) {
      words = spell_number(static_cast<std::uint32_t>(std::stoul(std::string(run))), rules);
    } else {
      std::vector<std::string> parts;
      for (char c : run) parts.push_back(rules.digits[static_cast<std::size_t>(c - '0')]);
      words = join(parts, rules.separator);
    }
    if (upper) words = to_upper(words);
    // pad only against neighbouring text so a bare number stays bare
    if (spaced && !out.empty() && out.back() != ' ') out += ' ';
    out += words;
    if (spaced && j < text.size() && text[j] != ' ') out += ' ';
    i = j;
  }
  return out;
}

std::string normalize_once(std::string_view text, const LanguageProfile& profile) {
  std::string s = nfkc(text);
  if (profile.script_has_case) s = to_upper(s);
  s = expand_impl(s, profile, profile.script_has_case);
  s = strip_punctuation(s, profile.keep_intraword_apostrophe);
  return collapse_whitespace(s);
}

}  // namespace

bool LanguageProfile::permits(char32_t c) const {
  return std::any_of(charset.begin(), charset.end(), [c](const CodePointRange& r) { return c >= r.first && c <= r.last; });
}

LanguageProfile parse_profile(std::string_view text) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ProfileError(std::string("profile syntax: ") + e.what());
  }
  LanguageProfile p;
  const auto& prof = tree.get_child("profile", empty_tree());
  p.code = prof.get<std::string>("code", "");
  if (p.code.empty()) throw ProfileError("profile needs [profile] code");
  p.script_has_case = parse_bool(prof.get<std::string>("script_has_case", "false"), "script_has_case");
  p.keep_intraword_apostrophe =
      parse_bool(prof.get<std::string>("keep_intraword_apostrophe", "false"), "keep_intraword_apostrophe");
  p.charset = parse_charset(prof.get<std::string>("charset", ""));
  if (!p.permits(U' ')) throw ProfileError("charset must include the space character");

  auto& r = p.numerals;
  const auto& num = tree.get_child("numerals", empty_tree());
  const auto grouping = num.get<std::string>("grouping", "thousands");
  if (grouping == "positional") {
    r.grouping = NumeralRules::Grouping::kPositional;
  } else if (grouping == "thousands") {
    r.grouping = NumeralRules::Grouping::kThousands;
  } else {
    throw ProfileError("grouping must be 'positional' or 'thousands'");
  }
  const auto sep = num.get<std::string>("separator", "space");
  r.separator = sep == "none" ? "" : " ";
  r.zero_tens_filler = word(num.get<std::string>("zero_tens_filler", ""));
  r.pad_inner_groups = parse_bool(num.get<std::string>("pad_inner_groups", "false"), "pad_inner_groups");

  std::array<bool, 10> seen{};
  for (const auto& [k, v] : tree.get_child("digits", empty_tree())) {
    const int d = parse_int(k, "[digits]");
    if (d < 0 || d > 9) throw ProfileError("[digits] keys must be 0..9");
    r.digits[static_cast<std::size_t>(d)] = word(v.data());
    seen[static_cast<std::size_t>(d)] = true;
  }
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
    throw ProfileError("[digits] must cover 0..9");
  for (const auto& [k, v] : tree.get_child("places", empty_tree())) r.places[parse_int(k, "[places]")] = word(v.data());
  const int top_place = r.grouping == NumeralRules::Grouping::kPositional ? 5 : 3;
  for (int place = 1; place <= top_place; ++place)
    if (!r.places.contains(place)) throw ProfileError(fmt::format("[places] lacks place {}", place));
  for (const auto& [k, v] : tree.get_child("place_digit", empty_tree())) r.place_digit[parse_pair(k, "[place_digit]")] = word(v.data());
  for (const auto& [k, v] : tree.get_child("overrides", empty_tree())) {
    const int n = parse_int(k, "[overrides]");
    if (n < 10 || n > 99) throw ProfileError("[overrides] keys must be two-digit values");
    r.overrides[n] = word(v.data());
  }
  for (const auto& [k, v] : tree.get_child("ones_after_tens", empty_tree())) {
    const auto [min_tens, digit] = parse_pair(k, "[ones_after_tens]");
    r.ones_after_tens[digit] = {min_tens, word(v.data())};
  }
  for (const auto& [k, v] : tree.get_child("ones_after_higher", empty_tree()))
    r.ones_after_higher[parse_int(k, "[ones_after_higher]")] = word(v.data());
  return p;
}

LanguageProfile load_profile(const std::filesystem::path& path) { return parse_profile(read_file(path)); }

const LanguageProfile& builtin_profile(std::string_view code) {
  static std::mutex mu;
  static std::map<std::string, LanguageProfile, std::less<>> cache;
  std::lock_guard lock(mu);
  if (auto it = cache.find(code); it != cache.end()) return it->second;
  const auto text = detail::embedded_profile(code);
  if (text.empty()) throw ProfileError(fmt::format("no built-in profile for language '{}'", code));
  return cache.emplace(std::string(code), parse_profile(text)).first->second;
}

LanguageProfile resolve_profile(std::string_view path_or_code) {
  if (std::filesystem::exists(std::filesystem::path(path_or_code))) return load_profile(std::filesystem::path(path_or_code));
  return builtin_profile(path_or_code);
}

std::string spell_number(std::uint32_t n, const NumeralRules& r) {
  if (n > 999999) throw Error(fmt::format("spell_number supports 0..999999, got {}", n));
  if (n == 0) return r.digits[0];
  std::vector<std::string> parts;
  if (r.grouping == NumeralRules::Grouping::kPositional) {
    // Places 5..2 are plain digit+place words; the last two go through the
    // group speller so tens/ones rules apply.
    bool higher = false;
    for (int place = 5; place >= 2; --place) {
      std::uint32_t div = 1;
      for (int k = 0; k < place; ++k) div *= 10;
      const int d = static_cast<int>((n / div) % 10);
      if (d == 0) continue;
      if (auto it = r.place_digit.find({place, d}); it != r.place_digit.end()) {
        parts.push_back(it->second);
      } else {
        parts.push_back(r.digits[static_cast<std::size_t>(d)] + r.separator + r.places.at(place));
      }
      higher = true;
    }
    if (n % 100 != 0) spell_group(n % 100, true, higher, r, parts);
    return join(parts, r.separator);
  }
  const std::uint32_t thousands = n / 1000;
  const std::uint32_t rest = n % 1000;
  if (thousands > 0) {
    if (auto it = r.place_digit.find({3, 1}); thousands == 1 && it != r.place_digit.end()) {
      parts.push_back(it->second);
    } else {
      spell_group(thousands, true, false, r, parts);
      parts.push_back(r.places.at(3));
    }
  }
  if (rest > 0) spell_group(rest, thousands == 0, thousands > 0, r, parts);
  return join(parts, r.separator);
}

std::string expand_numerals(std::string_view text, const LanguageProfile& profile) {
  return expand_impl(text, profile, false);
}

bool is_punctuation(char32_t c) {
  switch (u_charType(static_cast<UChar32>(c))) {
    case U_CONNECTOR_PUNCTUATION:
    case U_DASH_PUNCTUATION:
    case U_START_PUNCTUATION:
    case U_END_PUNCTUATION:
    case U_INITIAL_PUNCTUATION:
    case U_FINAL_PUNCTUATION:
    case U_OTHER_PUNCTUATION:
      return true;
    default:
      return false;
  }
}

bool is_symbol(char32_t c) {
  switch (u_charType(static_cast<UChar32>(c))) {
    case U_MATH_SYMBOL:
    case U_CURRENCY_SYMBOL:
    case U_MODIFIER_SYMBOL:
    case U_OTHER_SYMBOL:
      return true;
    default:
      return false;
  }
}

std::string strip_punctuation(std::string_view text, bool keep_intraword_apostrophe) {
  const auto cps = utf8_to_u32(text);
  std::u32string out;
  out.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (!is_punctuation(c) && !is_symbol(c)) {
      out.push_back(c);
      continue;
    }
    if (keep_intraword_apostrophe && is_apostrophe(c) && i > 0 && i + 1 < cps.size() &&
        u_isalpha(static_cast<UChar32>(cps[i - 1])) && u_isalpha(static_cast<UChar32>(cps[i + 1]))) {
      out.push_back(c);
    }
  }
  return u32_to_utf8(out);
}

std::string nfkc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const auto out = nfkc_instance().normalize(from_utf8(text), status);
  if (U_FAILURE(status)) throw Error(std::string("NFKC failed: ") + u_errorName(status));
  return to_utf8(out);
}

std::string to_upper(std::string_view text) {
  auto u = from_utf8(text);
  u.toUpper(icu::Locale::getRoot());
  return to_utf8(u);
}

std::string collapse_whitespace(std::string_view text) {
  const auto cps = utf8_to_u32(text);
  std::u32string out;
  bool pending_space = false;
  for (char32_t c : cps) {
    if (is_space_like(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return u32_to_utf8(out);
}

std::string normalize(std::string_view text, const LanguageProfile& profile) {
  std::string cur = normalize_once(text, profile);
  // Case mapping and mark removal can leave text that a further pass would
  // change (e.g. a combining mark exposed by stripping). Iterate to a fixed point.
  for (int pass = 0; pass < 8; ++pass) {
    auto next = normalize_once(cur, profile);
    if (next == cur) return cur;
    cur = std::move(next);
  }
  return cur;
}

}  // namespace gsb
