#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/backends.hpp"
#include "gsb/manifest.hpp"
#include "gsb/textnorm.hpp"

namespace gsb {

enum class FilterRule { kCharset, kDuration, kLid, kBalance };

std::string_view rule_name(FilterRule r);

struct FilterConfig {
  LanguageProfile profile;  // supplies the charset and the target language
  double lid_threshold = 0.90;
  double min_duration_s = 2.0;
  double max_duration_s = 30.0;
  std::size_t max_dup_per_channel = 5;
  bool charset_enabled = true;
  bool duration_enabled = true;
  bool lid_enabled = true;
  bool balance_enabled = true;

  std::vector<std::string> violations() const;
  void validate() const;  // throws ValidationError listing every violation
};

struct Decision {
  bool retain = true;
  std::string reason;  // empty when retained

  static Decision keep() { return {}; }
  static Decision reject(std::string why) { return {false, std::move(why)}; }
};

Decision charset_filter(const Segment& s, const LanguageProfile& profile);
Decision duration_filter(const Segment& s, double min_s, double max_s);
// Pure comparison against an LID answer: top-1 must be the segment's
// language and the confidence at least `threshold`.
Decision lid_decision(const Segment& s, const LidResponse& answer, double threshold);
// Calls the backend and records the score on the segment. Backend failures
// propagate as BackendError; the caller parks the segment.
Decision lid_filter(Segment& s, double threshold, LidClient& lid);

struct BalanceResult {
  std::vector<Segment> retained;
  std::vector<Segment> suppressed;
  std::map<ChannelId, std::size_t> suppressed_per_channel;
};

// Per (channel, text) group keeps the first `max_dup` occurrences ordered by
// (video id, start time). Output keeps the input order.
BalanceResult balance(std::span<const Segment> segments, std::size_t max_dup);

struct Rejection {
  Segment segment;
  FilterRule rule = FilterRule::kCharset;
  std::string reason;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t retained = 0;
  double retained_hours = 0.0;
  std::map<FilterRule, std::size_t> rejected;
  std::size_t parked = 0;  // LID unavailable; neither retained nor rejected
  std::map<ChannelId, std::size_t> duplicates_suppressed;

  std::size_t rejected_total() const;
  // input == retained + rejected_total() + parked
  bool reconciles() const;
};

struct FilterOutcome {
  Manifest retained;
  std::vector<Rejection> rejections;
  std::vector<ParkedItem> parked;
  FilterReport report;
};

// charset -> duration -> LID -> balance; the first rule to reject a segment
// is the one it is attributed to. LID requests go out in one bounded batch.
FilterOutcome apply_all(const Manifest& m, const FilterConfig& cfg, LidClient* lid, const BatchOptions& batch = {});

std::string filter_report_jsonl(const FilterReport& r);
std::string format_filter_report(const FilterReport& r);
// Side manifest of rejected segments: the segment record plus rule and reason.
std::string rejections_jsonl(std::span<const Rejection> rs);

}  // namespace gsb
