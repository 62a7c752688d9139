#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/common.hpp"

namespace gsb {

enum class Granularity { kChar, kWord };

std::string_view granularity_name(Granularity g);

// Char granularity: Unicode scalar values, whitespace removed.
// Word granularity: whitespace-separated runs.
struct TokenSequence {
  std::vector<std::string> tokens;
  Granularity granularity = Granularity::kChar;
};

TokenSequence tokenize(std::string_view text, Granularity granularity);

// Unit-cost Levenshtein distance over any random-access sequences.
template <class A, class B>
std::size_t levenshtein(const A& a, const B& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

class GranularityMismatch : public Error {
 public:
  using Error::Error;
};

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b);

struct ErrorCounts {
  std::size_t edits = 0;
  std::size_t ref_tokens = 0;
};

ErrorCounts error_counts(std::string_view ref, std::string_view hyp, Granularity g);

// edits / |ref tokens|. Empty ref: 0 when hyp is empty too, +inf otherwise.
double error_rate(std::string_view ref, std::string_view hyp, Granularity g);
double cer(std::string_view ref, std::string_view hyp);
double wer(std::string_view ref, std::string_view hyp);

// Thai is scored by CER on space-stripped characters; Indonesian and
// Vietnamese by WER.
Granularity metric_for_language(std::string_view code);

struct ScoredPair {
  std::string id;
  std::string ref;
  std::string hyp;
};

struct ScoreRecord {
  std::string id;
  double rate = 0.0;
  ErrorCounts counts;
};

struct ScoreReport {
  Granularity granularity = Granularity::kChar;
  std::vector<ScoreRecord> records;
  ErrorCounts total;
  // total edits / total reference tokens
  double micro_rate() const;
};

ScoreReport score_pairs(std::span<const ScoredPair> pairs, Granularity g);
// One record per pair, then an aggregate record.
std::string score_report_jsonl(const ScoreReport& r);

}  // namespace gsb
