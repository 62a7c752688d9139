#include "gsb/align.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include <fmt/format.h>

namespace gsb {
namespace {

constexpr char kMagic[5] = {'E', 'M', 'I', 'S', '1'};
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw EmissionError(EmissionErrorCode::kTruncated, fmt::format("truncated {}", what));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

std::uint32_t label_of(std::uint32_t state, std::span<const std::uint32_t> tokens, std::uint32_t blank) {
  return (state % 2 == 0) ? blank : tokens[state / 2];
}

}  // namespace

void check_emissions(const EmissionMatrix& e) {
  if (e.frames == 0 || e.vocab_size == 0) throw EmissionError(EmissionErrorCode::kEmpty, "emission matrix is empty");
  if (e.log_probs.size() != e.frames * e.vocab_size)
    throw EmissionError(EmissionErrorCode::kShapeOverflow, "log_probs size disagrees with T x V");
  if (e.vocab.size() != e.vocab_size) throw EmissionError(EmissionErrorCode::kBadHeader, "vocab size disagrees with V");
  if (e.blank_index >= e.vocab_size) throw EmissionError(EmissionErrorCode::kBadIndex, "blank index outside vocabulary");
  if (e.star_index && (*e.star_index >= e.vocab_size || *e.star_index == e.blank_index))
    throw EmissionError(EmissionErrorCode::kBadIndex, "star index outside vocabulary or equal to blank");
  if (!(e.frame_duration_s > 0.0f) || !std::isfinite(e.frame_duration_s))
    throw EmissionError(EmissionErrorCode::kBadHeader, "frame duration must be positive");
  for (std::size_t i = 0; i < e.log_probs.size(); ++i)
    if (std::isnan(e.log_probs[i]))
      throw EmissionError(EmissionErrorCode::kNaN,
                          fmt::format("NaN at frame {} entry {}", i / e.vocab_size, i % e.vocab_size));
}

bool rows_normalized(const EmissionMatrix& e, double tol) {
  for (std::size_t t = 0; t < e.frames; ++t) {
    const auto r = e.row(t);
    const double mx = *std::max_element(r.begin(), r.end());
    if (!std::isfinite(mx)) return false;
    double acc = 0.0;
    for (float v : r) acc += std::exp(static_cast<double>(v) - mx);
    if (std::abs(mx + std::log(acc)) > tol) return false;
  }
  return true;
}

EmissionMatrix parse_emissions(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw EmissionError(EmissionErrorCode::kBadMagic, "missing EMIS1 magic");
  ByteReader in(bytes.subspan(sizeof kMagic));
  EmissionMatrix e;
  const std::uint32_t t = in.u32("header");
  const std::uint32_t v = in.u32("header");
  e.blank_index = in.u32("header");
  const auto star = static_cast<std::int32_t>(in.u32("header"));
  e.frame_duration_s = in.f32("header");
  if (t == 0 || v == 0) throw EmissionError(EmissionErrorCode::kEmpty, fmt::format("empty emission shape {}x{}", t, v));
  if (star < -1) throw EmissionError(EmissionErrorCode::kBadIndex, "star index must be -1 or a vocab index");
  if (star >= 0) e.star_index = static_cast<std::uint32_t>(star);
  const std::uint64_t cells = static_cast<std::uint64_t>(t) * v;
  if (cells > in.remaining() / 4)
    throw EmissionError(EmissionErrorCode::kShapeOverflow,
                        fmt::format("shape {}x{} needs more bytes than the file holds", t, v));
  e.frames = t;
  e.vocab_size = v;
  const auto cells_bytes = in.take(static_cast<std::size_t>(cells) * 4, "log-prob block");
  e.log_probs.resize(static_cast<std::size_t>(cells));
  for (std::size_t i = 0; i < e.log_probs.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(cells_bytes[4 * i + static_cast<std::size_t>(k)]) << (8 * k);
    std::memcpy(&e.log_probs[i], &bits, 4);
  }
  e.vocab.reserve(v);
  for (std::uint32_t k = 0; k < v; ++k) {
    const std::uint32_t len = in.u32("vocab entry length");
    const auto s = in.take(len, "vocab entry");
    e.vocab.emplace_back(reinterpret_cast<const char*>(s.data()), s.size());
  }
  check_emissions(e);
  return e;
}

EmissionMatrix load_emissions(const std::filesystem::path& path) { return parse_emissions(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_emissions(const EmissionMatrix& e) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(e.frames));
  put_u32(out, static_cast<std::uint32_t>(e.vocab_size));
  put_u32(out, e.blank_index);
  put_u32(out, e.star_index ? *e.star_index : 0xFFFFFFFFu);
  put_f32(out, e.frame_duration_s);
  for (float f : e.log_probs) put_f32(out, f);
  for (const auto& s : e.vocab) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void save_emissions(const std::filesystem::path& path, const EmissionMatrix& e) {
  const auto b = encode_emissions(e);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

std::size_t min_frames_for(std::span<const std::uint32_t> tokens) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < tokens.size(); ++i)
    if (tokens[i] == tokens[i - 1]) ++repeats;
  return tokens.size() + repeats;
}

AlignmentPath viterbi_align(const EmissionMatrix& e, std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) throw AlignmentError(AlignmentErrorCode::kEmptyTranscript, "nothing to align");
  for (auto tok : tokens) {
    if (tok >= e.vocab_size || tok == e.blank_index)
      throw AlignmentError(AlignmentErrorCode::kInvalidToken, fmt::format("token {} is blank or outside vocabulary", tok));
  }
  const std::size_t T = e.frames;
  const std::size_t need = min_frames_for(tokens);
  if (T < need)
    throw AlignmentError(AlignmentErrorCode::kInfeasible,
                         fmt::format("{} frames cannot hold {} tokens (needs {})", T, tokens.size(), need));

  const std::size_t S = 2 * tokens.size() + 1;
  std::vector<double> prev(S, kNegInf), cur(S, kNegInf);
  // 0 = stay, 1 = from s-1, 2 = from s-2
  std::vector<std::uint8_t> back(T * S, 0);
  prev[0] = e.at(0, e.blank_index);
  prev[1] = e.at(0, tokens[0]);
  for (std::size_t t = 1; t < T; ++t) {
    const auto row = e.row(t);
    for (std::size_t s = 0; s < S; ++s) {
      double best = prev[s];
      std::uint8_t from = 0;
      const bool skip_ok = s % 2 == 1 && s >= 3 && tokens[s / 2] != tokens[s / 2 - 1];
      if (skip_ok && prev[s - 2] > best) {
        best = prev[s - 2];
        from = 2;
      }
      if (s >= 1 && prev[s - 1] > best) {
        best = prev[s - 1];
        from = 1;
      }
      back[t * S + s] = from;
      cur[s] = best == kNegInf ? kNegInf : best + static_cast<double>(row[label_of(static_cast<std::uint32_t>(s), tokens, e.blank_index)]);
    }
    std::swap(prev, cur);
  }

  std::size_t end = S - 2;
  if (prev[S - 1] > prev[S - 2]) end = S - 1;
  if (prev[end] == kNegInf)
    throw AlignmentError(AlignmentErrorCode::kInfeasible, "no finite-scoring path through the emissions");

  AlignmentPath p;
  p.tokens.assign(tokens.begin(), tokens.end());
  p.total_log_score = prev[end];
  p.states.resize(T);
  std::size_t s = end;
  for (std::size_t t = T; t-- > 0;) {
    p.states[t] = static_cast<std::uint32_t>(s);
    if (t > 0) s -= back[t * S + s];
  }
  return p;
}

double path_score(const EmissionMatrix& e, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> states) {
  double acc = 0.0;
  for (std::size_t t = 0; t < states.size(); ++t)
    acc += static_cast<double>(e.at(t, label_of(states[t], tokens, e.blank_index)));
  return acc;
}

bool is_valid_ctc_path(std::span<const std::uint32_t> tokens, std::span<const std::uint32_t> states) {
  if (tokens.empty() || states.empty()) return false;
  const std::uint32_t S = static_cast<std::uint32_t>(2 * tokens.size() + 1);
  if (states.front() > 1) return false;
  if (states.back() + 2 < S) return false;
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (states[t] >= S) return false;
    if (t == 0) continue;
    const std::uint32_t a = states[t - 1], b = states[t];
    if (b < a) return false;
    if (b - a > 2) return false;
    if (b - a == 2 && !(b % 2 == 1 && tokens[b / 2] != tokens[b / 2 - 1])) return false;
  }
  return true;
}

std::vector<TokenSpan> token_spans(const AlignmentPath& p, const EmissionMatrix& e) {
  std::vector<TokenSpan> spans;
  const double fd = e.frame_duration_s;
  std::size_t t = 0;
  while (t < p.states.size()) {
    const auto s = p.states[t];
    if (s % 2 == 0) {
      ++t;
      continue;
    }
    std::size_t u = t;
    double acc = 0.0;
    const auto tok = p.tokens[s / 2];
    while (u < p.states.size() && p.states[u] == s) {
      acc += e.at(u, tok);
      ++u;
    }
    TokenSpan sp;
    sp.token_index = s / 2;
    sp.start_frame = t;
    sp.end_frame = u - 1;
    sp.start_s = static_cast<double>(t) * fd;
    sp.end_s = static_cast<double>(u) * fd;
    sp.mean_log_score = acc / static_cast<double>(u - t);
    spans.push_back(sp);
    t = u;
  }
  return spans;
}

namespace {

void split_long(std::span<const TokenSpan> spans, std::size_t first, std::size_t last, const SegmentationConfig& cfg,
                std::vector<Utterance>& out) {
  const double dur = spans[last].end_s - spans[first].start_s;
  if (dur <= cfg.max_s || first == last) {
    out.push_back({spans[first].start_s, spans[last].end_s, first, last});
    return;
  }
  std::size_t cut = first;
  double widest = -1.0;
  for (std::size_t k = first; k < last; ++k) {
    const double gap = spans[k + 1].start_s - spans[k].end_s;
    if (gap > widest) {
      widest = gap;
      cut = k;
    }
  }
  split_long(spans, first, cut, cfg, out);
  split_long(spans, cut + 1, last, cfg, out);
}

}  // namespace

SegmentationResult segment_utterances(std::span<const TokenSpan> spans, const SegmentationConfig& cfg) {
  SegmentationResult r;
  if (spans.empty()) return r;
  std::vector<Utterance> pieces;
  std::size_t first = 0;
  for (std::size_t k = 0; k + 1 <= spans.size(); ++k) {
    const bool boundary = k + 1 == spans.size() || spans[k + 1].start_s - spans[k].end_s >= cfg.gap_s;
    if (!boundary) continue;
    split_long(spans, first, k, cfg, pieces);
    first = k + 1;
  }
  for (const auto& u : pieces) {
    if (u.end_s - u.start_s < cfg.min_s) {
      r.dropped.push_back(u);
    } else {
      r.utterances.push_back(u);
    }
  }
  return r;
}

std::vector<AlignToken> tokens_for_transcript(std::string_view text, const EmissionMatrix& e) {
  std::unordered_map<std::string, std::uint32_t> index;
  for (std::uint32_t v = 0; v < e.vocab.size(); ++v)
    if (v != e.blank_index && (!e.star_index || v != *e.star_index)) index.emplace(e.vocab[v], v);
  const auto word_sep = index.find("|");

  std::vector<AlignToken> out;
  const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto len = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  bool in_unknown = false;
  bool pending_sep = false;
  while (i < len) {
    const auto begin = static_cast<std::size_t>(i);
    UChar32 c;
    U8_NEXT(p, i, len, c);
    const auto end = static_cast<std::size_t>(i);
    if (c >= 0 && u_isUWhiteSpace(c)) {
      in_unknown = false;
      if (word_sep != index.end() && !out.empty()) pending_sep = true;
      continue;
    }
    auto lookup = [&](UChar32 x) -> std::optional<std::uint32_t> {
      if (x < 0) return std::nullopt;
      auto it = index.find(code_point_to_utf8(static_cast<char32_t>(x)));
      if (it == index.end()) return std::nullopt;
      return it->second;
    };
    auto v = lookup(c);
    if (!v) v = lookup(u_tolower(c));
    if (!v) v = lookup(u_toupper(c));
    if (pending_sep) {
      out.push_back({word_sep->second, begin, begin});
      pending_sep = false;
    }
    if (v) {
      out.push_back({*v, begin, end});
      in_unknown = false;
    } else if (e.star_index) {
      if (in_unknown) {
        out.back().byte_end = end;
      } else {
        out.push_back({*e.star_index, begin, end});
        in_unknown = true;
      }
    }
  }
  return out;
}

}  // namespace gsb
