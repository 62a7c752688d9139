#include "gsb/metrics.hpp"

#include <unicode/uchar.h>

#include <limits>

#include <fmt/format.h>

namespace gsb {
namespace {

bool is_ws(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

std::u32string chars_without_space(std::string_view text) {
  std::u32string out;
  for (char32_t c : utf8_to_u32(text))
    if (!is_ws(c)) out.push_back(c);
  return out;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::u32string cur;
  for (char32_t c : utf8_to_u32(text)) {
    if (is_ws(c)) {
      if (!cur.empty()) out.push_back(u32_to_utf8(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(u32_to_utf8(cur));
  return out;
}

}  // namespace

std::string_view granularity_name(Granularity g) { return g == Granularity::kChar ? "cer" : "wer"; }

TokenSequence tokenize(std::string_view text, Granularity granularity) {
  TokenSequence t;
  t.granularity = granularity;
  if (granularity == Granularity::kWord) {
    t.tokens = words(text);
  } else {
    for (char32_t c : chars_without_space(text)) t.tokens.push_back(code_point_to_utf8(c));
  }
  return t;
}

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b) {
  if (a.granularity != b.granularity) throw GranularityMismatch("edit_distance needs sequences of the same granularity");
  return levenshtein(a.tokens, b.tokens);
}

ErrorCounts error_counts(std::string_view ref, std::string_view hyp, Granularity g) {
  if (g == Granularity::kChar) {
    const auto r = chars_without_space(ref);
    const auto h = chars_without_space(hyp);
    return {levenshtein(r, h), r.size()};
  }
  const auto r = words(ref);
  const auto h = words(hyp);
  return {levenshtein(r, h), r.size()};
}

double error_rate(std::string_view ref, std::string_view hyp, Granularity g) {
  const auto c = error_counts(ref, hyp, g);
  if (c.ref_tokens == 0) return c.edits == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(c.edits) / static_cast<double>(c.ref_tokens);
}

double cer(std::string_view ref, std::string_view hyp) { return error_rate(ref, hyp, Granularity::kChar); }
double wer(std::string_view ref, std::string_view hyp) { return error_rate(ref, hyp, Granularity::kWord); }

Granularity metric_for_language(std::string_view code) {
  return code == "th" ? Granularity::kChar : Granularity::kWord;
}

double ScoreReport::micro_rate() const {
  if (total.ref_tokens == 0) return total.edits == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(total.edits) / static_cast<double>(total.ref_tokens);
}

ScoreReport score_pairs(std::span<const ScoredPair> pairs, Granularity g) {
  ScoreReport r;
  r.granularity = g;
  for (const auto& p : pairs) {
    ScoreRecord rec;
    rec.id = p.id;
    rec.counts = error_counts(p.ref, p.hyp, g);
    rec.rate = rec.counts.ref_tokens == 0
                   ? (rec.counts.edits == 0 ? 0.0 : std::numeric_limits<double>::infinity())
                   : static_cast<double>(rec.counts.edits) / static_cast<double>(rec.counts.ref_tokens);
    r.total.edits += rec.counts.edits;
    r.total.ref_tokens += rec.counts.ref_tokens;
    r.records.push_back(std::move(rec));
  }
  return r;
}

std::string score_report_jsonl(const ScoreReport& r) {
  std::string out;
  const auto metric = granularity_name(r.granularity);
  for (const auto& rec : r.records) {
    out += JsonLine()
               .str("kind", "score")
               .str("id", rec.id)
               .str("metric", metric)
               .num("rate", rec.rate)
               .integer("edits", static_cast<std::int64_t>(rec.counts.edits))
               .integer("ref_tokens", static_cast<std::int64_t>(rec.counts.ref_tokens))
               .finish() +
           "\n";
  }
  out += JsonLine()
             .str("kind", "aggregate")
             .str("metric", metric)
             .num("micro_rate", r.micro_rate())
             .integer("edits", static_cast<std::int64_t>(r.total.edits))
             .integer("ref_tokens", static_cast<std::int64_t>(r.total.ref_tokens))
             .integer("pairs", static_cast<std::int64_t>(r.records.size()))
             .finish() +
         "\n";
  return out;
}

}  // namespace gsb
