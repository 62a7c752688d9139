#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsb/common.hpp"

namespace gsb {

// Frames x vocabulary log-probabilities, row-major.
struct EmissionMatrix {
  std::size_t frames = 0;
  std::size_t vocab_size = 0;
  std::vector<float> log_probs;
  float frame_duration_s = 0.02f;
  std::vector<std::string> vocab;
  std::uint32_t blank_index = 0;
  std::optional<std::uint32_t> star_index;

  float at(std::size_t t, std::size_t v) const { return log_probs[t * vocab_size + v]; }
  std::span<const float> row(std::size_t t) const { return {log_probs.data() + t * vocab_size, vocab_size}; }
};

enum class EmissionErrorCode { kBadMagic, kTruncated, kShapeOverflow, kEmpty, kNaN, kBadIndex, kBadHeader };

class EmissionError : public Error {
 public:
  EmissionError(EmissionErrorCode code, const std::string& what) : Error(what), code_(code) {}
  EmissionErrorCode code() const { return code_; }

 private:
  EmissionErrorCode code_;
};

// Binary layout: "EMIS1", u32 T, u32 V, u32 blank, i32 star (-1 absent),
// f32 frame duration, T*V f32 row-major, then V x (u32 length, UTF-8 bytes).
// All integers and floats little-endian.
EmissionMatrix parse_emissions(std::span<const std::uint8_t> bytes);
EmissionMatrix load_emissions(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_emissions(const EmissionMatrix& e);
void save_emissions(const std::filesystem::path& path, const EmissionMatrix& e);

// Checks shape, indices and NaNs; throws EmissionError.
void check_emissions(const EmissionMatrix& e);
// True when every row's logsumexp is within `tol` of zero.
bool rows_normalized(const EmissionMatrix& e, double tol = 1e-3);

// Expanded CTC state sequence: state 2k is a blank, 2k+1 is token k.
struct AlignmentPath {
  std::vector<std::uint32_t> states;
  std::vector<std::uint32_t> tokens;
  double total_log_score = 0.0;
};

enum class AlignmentErrorCode { kEmptyTranscript, kInvalidToken, kInfeasible };

class AlignmentError : public Error {
 public:
  AlignmentError(AlignmentErrorCode code, const std::string& what) : Error(what), code_(code) {}
  AlignmentErrorCode code() const { return code_; }

 private:
  AlignmentErrorCode code_;
};

// Minimum frames a CTC path over `tokens` needs (tokens + adjacent repeats).
std::size_t min_frames_for(std::span<const std::uint32_t> tokens);

// Best-scoring CTC path. Ties prefer staying over advancing, then the lower
// predecessor state; the final state prefers the lower index.
AlignmentPath viterbi_align(const EmissionMatrix& e, std::span<const std::uint32_t> tokens);

// Left-to-right sum of the path's emission log-probs.
double path_score(const EmissionMatrix& e, std::span<const std::uint32_t> tokens,
                  std::span<const std::uint32_t> states);
bool is_valid_ctc_path(std::span<const std::uint32_t> tokens, std::span<const std::uint32_t> states);

struct TokenSpan {
  std::size_t token_index = 0;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // inclusive
  double start_s = 0.0;
  double end_s = 0.0;         // end of end_frame
  double mean_log_score = 0.0;
};

std::vector<TokenSpan> token_spans(const AlignmentPath& p, const EmissionMatrix& e);

struct SegmentationConfig {
  double gap_s = 0.5;
  double min_s = 1.0;
  double max_s = 30.0;
};

struct Utterance {
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t first_span = 0;
  std::size_t last_span = 0;  // inclusive
};

struct SegmentationResult {
  std::vector<Utterance> utterances;
  std::vector<Utterance> dropped;  // shorter than min_s
};

// Cuts at silences >= gap_s, splits anything longer than max_s at its largest
// internal gap, and drops pieces shorter than min_s.
SegmentationResult segment_utterances(std::span<const TokenSpan> spans, const SegmentationConfig& cfg);

// A transcript unit mapped onto the vocabulary, with its byte range in the
// source text.
struct AlignToken {
  std::uint32_t vocab_index = 0;
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
};

// Characters map to vocab entries (with a case-folded fallback). Whitespace
// maps to "|" when the vocabulary has it and is dropped otherwise. Runs of
// unknown characters collapse to one star token, or are dropped without one.
std::vector<AlignToken> tokens_for_transcript(std::string_view text, const EmissionMatrix& e);

}  // namespace gsb
