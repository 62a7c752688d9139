#include "gsb/filters.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace gsb {

std::string_view rule_name(FilterRule r) {
  switch (r) {
    case FilterRule::kCharset:
      return "charset";
    case FilterRule::kDuration:
      return "duration";
    case FilterRule::kLid:
      return "lid";
    case FilterRule::kBalance:
      return "balance";
  }
  return "?";
}

std::vector<std::string> FilterConfig::violations() const {
  std::vector<std::string> v;
  if (!(lid_threshold >= 0.0 && lid_threshold <= 1.0))
    v.push_back(fmt::format("lid_threshold {} is outside [0, 1]", lid_threshold));
  if (!(min_duration_s >= 0.0)) v.push_back(fmt::format("min_duration_s {} is negative", min_duration_s));
  if (!(min_duration_s < max_duration_s))
    v.push_back(fmt::format("min_duration_s {} must be below max_duration_s {}", min_duration_s, max_duration_s));
  if (max_dup_per_channel < 1) v.push_back("max_dup_per_channel must be at least 1");
  if (charset_enabled && profile.charset.empty()) v.push_back("charset filter enabled but the profile has no charset");
  return v;
}

void FilterConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid filter config:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ValidationError(msg);
}

Decision charset_filter(const Segment& s, const LanguageProfile& profile) {
  if (s.text.empty()) return Decision::reject("empty-text");
  for (char32_t c : utf8_to_u32(s.text)) {
    if (!profile.permits(c)) return Decision::reject(fmt::format("code point U+{:04X} outside charset", static_cast<std::uint32_t>(c)));
  }
  return Decision::keep();
}

Decision duration_filter(const Segment& s, double min_s, double max_s) {
  const double d = s.duration_s();
  if (d < min_s) return Decision::reject(fmt::format("duration {} s below minimum {} s", format_fixed(d, 3), min_s));
  if (d > max_s) return Decision::reject(fmt::format("duration {} s above maximum {} s", format_fixed(d, 3), max_s));
  return Decision::keep();
}

Decision lid_decision(const Segment& s, const LidResponse& answer, double threshold) {
  if (answer.language != s.language)
    return Decision::reject(fmt::format("language {} detected, expected {}", answer.language, s.language));
  if (answer.confidence < threshold)
    return Decision::reject(fmt::format("confidence {} below threshold {}", format_fixed(answer.confidence, 4), threshold));
  return Decision::keep();
}

Decision lid_filter(Segment& s, double threshold, LidClient& lid) {
  const LidResponse r = lid.identify({s.id, s.text});
  s.lid_score = r.confidence;
  return lid_decision(s, r, threshold);
}

BalanceResult balance(std::span<const Segment> segments, std::size_t max_dup) {
  std::vector<std::size_t> order(segments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = segments[a];
    const auto& y = segments[b];
    if (x.video != y.video) return x.video < y.video;
    if (x.start_s != y.start_s) return x.start_s < y.start_s;
    return x.id < y.id;
  });
  std::map<std::pair<std::string_view, std::string_view>, std::size_t> seen;
  std::vector<bool> keep(segments.size(), false);
  for (std::size_t i : order) {
    auto& n = seen[{segments[i].channel, segments[i].text}];
    keep[i] = n < max_dup;
    ++n;
  }
  BalanceResult r;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (keep[i]) {
      r.retained.push_back(segments[i]);
    } else {
      r.suppressed.push_back(segments[i]);
      ++r.suppressed_per_channel[segments[i].channel];
    }
  }
  return r;
}

std::size_t FilterReport::rejected_total() const {
  std::size_t n = 0;
  for (const auto& [rule, c] : rejected) n += c;
  return n;
}

bool FilterReport::reconciles() const { return input == retained + rejected_total() + parked; }

FilterOutcome apply_all(const Manifest& m, const FilterConfig& cfg, LidClient* lid, const BatchOptions& batch) {
  cfg.validate();
  if (cfg.lid_enabled && lid == nullptr) throw ValidationError("LID filter enabled but no LID backend supplied");

  FilterOutcome out;
  out.report.input = m.segments.size();
  for (auto r : {FilterRule::kCharset, FilterRule::kDuration, FilterRule::kLid, FilterRule::kBalance})
    out.report.rejected[r] = 0;

  auto reject = [&](const Segment& s, FilterRule rule, std::string reason) {
    out.rejections.push_back({s, rule, std::move(reason)});
    ++out.report.rejected[rule];
  };

  std::vector<Segment> stage;
  for (const auto& s : m.segments) {
    if (cfg.charset_enabled) {
      if (auto d = charset_filter(s, cfg.profile); !d.retain) {
        reject(s, FilterRule::kCharset, d.reason);
        continue;
      }
    }
    if (cfg.duration_enabled) {
      if (auto d = duration_filter(s, cfg.min_duration_s, cfg.max_duration_s); !d.retain) {
        reject(s, FilterRule::kDuration, d.reason);
        continue;
      }
    }
    stage.push_back(s);
  }

  if (cfg.lid_enabled) {
    std::vector<LidRequest> reqs;
    reqs.reserve(stage.size());
    for (const auto& s : stage) reqs.push_back({s.id, s.text});
    auto res = identify_batch(*lid, reqs, batch);
    std::map<std::string, const LidResponse*> by_id;
    for (const auto& r : res.responses) by_id[r.id] = &r;
    std::set<std::string> parked_ids;
    for (const auto& p : res.parked) parked_ids.insert(p.id);
    std::vector<Segment> passed;
    for (auto& s : stage) {
      auto it = by_id.find(s.id);
      if (it == by_id.end()) continue;  // parked
      s.lid_score = it->second->confidence;
      Segment probe = s;
      if (probe.language.empty()) probe.language = cfg.profile.code;
      if (auto d = lid_decision(probe, *it->second, cfg.lid_threshold); !d.retain) {
        reject(s, FilterRule::kLid, d.reason);
        continue;
      }
      passed.push_back(std::move(s));
    }
    out.parked = std::move(res.parked);
    out.report.parked = out.parked.size();
    stage = std::move(passed);
  }

  if (cfg.balance_enabled) {
    auto b = balance(stage, cfg.max_dup_per_channel);
    for (const auto& s : b.suppressed) reject(s, FilterRule::kBalance, fmt::format("duplicate transcript beyond cap {}", cfg.max_dup_per_channel));
    out.report.duplicates_suppressed = std::move(b.suppressed_per_channel);
    stage = std::move(b.retained);
  }

  out.retained.language = m.language;
  out.retained.videos = m.videos;
  out.retained.splits = m.splits;
  out.retained.segments = std::move(stage);
  out.retained.canonicalize();
  out.report.retained = out.retained.segments.size();
  for (const auto& s : out.retained.segments) out.report.retained_hours += s.duration_s() / 3600.0;
  return out;
}

std::string filter_report_jsonl(const FilterReport& r) {
  std::string out = JsonLine()
                        .str("kind", "filter_summary")
                        .integer("input", static_cast<std::int64_t>(r.input))
                        .integer("retained", static_cast<std::int64_t>(r.retained))
                        .num("retained_hours", r.retained_hours)
                        .integer("rejected", static_cast<std::int64_t>(r.rejected_total()))
                        .integer("parked", static_cast<std::int64_t>(r.parked))
                        .finish() +
                    "\n";
  for (const auto& [rule, n] : r.rejected) {
    out += JsonLine().str("kind", "filter_rule").str("rule", rule_name(rule)).integer("rejected", static_cast<std::int64_t>(n)).finish();
    out += '\n';
  }
  for (const auto& [ch, n] : r.duplicates_suppressed) {
    out += JsonLine().str("kind", "duplicates").str("channel", ch).integer("suppressed", static_cast<std::int64_t>(n)).finish();
    out += '\n';
  }
  return out;
}

std::string format_filter_report(const FilterReport& r) {
  std::string out = fmt::format("{:<12}{:>10}\n", "rule", "rejected");
  for (const auto& [rule, n] : r.rejected) out += fmt::format("{:<12}{:>10}\n", rule_name(rule), n);
  out += fmt::format("{:<12}{:>10}\n", "parked", r.parked);
  out += fmt::format("{:<12}{:>10}\n", "retained", r.retained);
  out += fmt::format("input {} segments, retained {} h\n", r.input, format_fixed(r.retained_hours, 4));
  return out;
}

std::string rejections_jsonl(std::span<const Rejection> rs) {
  std::string out;
  for (const auto& r : rs) {
    out += JsonLine()
               .str("kind", "rejection")
               .str("rule", rule_name(r.rule))
               .str("reason", r.reason)
               .raw("segment", segment_to_json_line(r.segment))
               .finish();
    out += '\n';
  }
  return out;
}

}  // namespace gsb
