#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gsb/common.hpp"

namespace gsb {

inline constexpr int kCanonicalSampleRate = 16000;
inline constexpr int kMinSampleRate = 8000;
inline constexpr int kMaxSampleRate = 192000;

// Interleaved samples in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate_hz = kCanonicalSampleRate;
  int channels = 1;

  std::size_t frames() const { return channels > 0 ? samples.size() / static_cast<std::size_t>(channels) : 0; }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(frames()) / sample_rate_hz : 0.0;
  }
};

enum class WavErrorCode {
  kNotRiff,
  kNotWave,
  kTruncatedHeader,
  kMissingFormat,
  kMissingData,
  kUnsupportedCodec,
  kBadFormat,
};

class WavError : public Error {
 public:
  WavError(WavErrorCode code, const std::string& what) : Error(what), code_(code) {}
  WavErrorCode code() const { return code_; }

 private:
  WavErrorCode code_;
};

enum class SampleFormat { kPcm16, kFloat32 };

// Header-level facts about a WAV file, without decoding samples.
struct WavInfo {
  SampleFormat format = SampleFormat::kPcm16;
  int sample_rate_hz = 0;
  int channels = 0;
  std::uint64_t frames = 0;
  double duration_s() const { return sample_rate_hz > 0 ? static_cast<double>(frames) / sample_rate_hz : 0.0; }
};

// Parses RIFF/WAVE PCM16 or float32. Unknown chunks are skipped. When the
// declared data size exceeds the bytes present, the shorter length wins and
// a warning is appended to `warnings` (if given).
AudioBuffer parse_wav(std::span<const std::uint8_t> bytes, std::vector<std::string>* warnings = nullptr);

// Reads only the chunk headers of a file on disk.
WavInfo probe_wav(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

AudioBuffer read_wav(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

std::vector<std::uint8_t> encode_wav(const AudioBuffer& b, SampleFormat format = SampleFormat::kPcm16);
void write_wav(const std::filesystem::path& path, const AudioBuffer& b, SampleFormat format = SampleFormat::kPcm16);

// Per-frame arithmetic mean across channels.
AudioBuffer downmix(const AudioBuffer& b);

// Windowed-sinc polyphase resampler (Hann window, 32 taps per phase).
AudioBuffer resample(const AudioBuffer& b, int target_hz);

// Slice [start_s, end_s) with nearest-sample rounding (ties away from zero).
AudioBuffer extract_segment(const AudioBuffer& b, double start_s, double end_s);

// downmix + resample to 16 kHz mono.
AudioBuffer canonicalize(const AudioBuffer& b);

}  // namespace gsb
