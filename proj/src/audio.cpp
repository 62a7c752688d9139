#include "gsb/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

namespace gsb {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

struct WavLayout {
  WavInfo info;
  std::uint64_t data_offset = 0;
  std::uint64_t data_bytes = 0;
};

// Reads up to n bytes at offset; returns how many were read.
using ReadAt = std::function<std::size_t(std::uint64_t offset, std::uint8_t* out, std::size_t n)>;

WavLayout walk_chunks(const ReadAt& read, std::uint64_t total, std::vector<std::string>* warnings) {
  std::uint8_t hdr[12];
  const auto got = read(0, hdr, 12);
  if (got >= 4 && std::memcmp(hdr, "RIFF", 4) != 0) throw WavError(WavErrorCode::kNotRiff, "missing RIFF magic");
  if (got < 12) throw WavError(WavErrorCode::kTruncatedHeader, "truncated RIFF header");
  if (std::memcmp(hdr + 8, "WAVE", 4) != 0) throw WavError(WavErrorCode::kNotWave, "RIFF form type is not WAVE");

  WavLayout layout;
  bool have_fmt = false;
  bool have_data = false;
  std::uint16_t tag = 0;
  std::uint16_t bits = 0;
  std::uint16_t block_align = 0;
  std::uint64_t pos = 12;
  while (pos + 8 <= total && !(have_fmt && have_data)) {
    std::uint8_t ch[8];
    if (read(pos, ch, 8) < 8) break;
    const std::uint32_t size = le32(ch + 4);
    const std::uint64_t body = pos + 8;
    if (std::memcmp(ch, "fmt ", 4) == 0) {
      if (size < 16 || body + size > total) throw WavError(WavErrorCode::kTruncatedHeader, "truncated fmt chunk");
      std::uint8_t f[40] = {};
      const std::size_t want = std::min<std::size_t>(size, sizeof f);
      if (read(body, f, want) < want) throw WavError(WavErrorCode::kTruncatedHeader, "truncated fmt chunk");
      tag = le16(f);
      layout.info.channels = le16(f + 2);
      layout.info.sample_rate_hz = static_cast<int>(le32(f + 4));
      block_align = le16(f + 12);
      bits = le16(f + 14);
      if (tag == kFormatExtensible) {
        if (size < 26) throw WavError(WavErrorCode::kTruncatedHeader, "truncated WAVE_FORMAT_EXTENSIBLE");
        tag = le16(f + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(ch, "data", 4) == 0) {
      layout.data_offset = body;
      const std::uint64_t avail = total > body ? total - body : 0;
      layout.data_bytes = size;
      if (size > avail) {
        if (warnings) warnings->push_back(fmt::format("data chunk declares {} bytes but only {} present", size, avail));
        layout.data_bytes = avail;
      }
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw WavError(WavErrorCode::kMissingFormat, "no fmt chunk");
  if (!have_data) throw WavError(WavErrorCode::kMissingData, "no data chunk");

  if (tag == kFormatPcm && bits == 16) {
    layout.info.format = SampleFormat::kPcm16;
  } else if (tag == kFormatFloat && bits == 32) {
    layout.info.format = SampleFormat::kFloat32;
  } else {
    throw WavError(WavErrorCode::kUnsupportedCodec, fmt::format("unsupported codec tag {} with {} bits", tag, bits));
  }
  const int ch = layout.info.channels;
  const int rate = layout.info.sample_rate_hz;
  if (ch < 1) throw WavError(WavErrorCode::kBadFormat, "channel count must be >= 1");
  if (rate < kMinSampleRate || rate > kMaxSampleRate)
    throw WavError(WavErrorCode::kBadFormat, fmt::format("sample rate {} outside [{}, {}]", rate, kMinSampleRate, kMaxSampleRate));
  const std::uint64_t frame_bytes = static_cast<std::uint64_t>(ch) * (bits / 8);
  if (block_align != 0 && block_align != frame_bytes)
    throw WavError(WavErrorCode::kBadFormat, "block align disagrees with channels x sample size");
  if (layout.data_bytes % frame_bytes != 0) {
    if (warnings) warnings->push_back("data chunk ends mid-frame; trailing bytes ignored");
    layout.data_bytes -= layout.data_bytes % frame_bytes;
  }
  layout.info.frames = layout.data_bytes / frame_bytes;
  return layout;
}

void decode_samples(const std::uint8_t* p, std::uint64_t bytes, SampleFormat format, std::vector<float>& out) {
  if (format == SampleFormat::kPcm16) {
    out.resize(bytes / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto v = static_cast<std::int16_t>(le16(p + 2 * i));
      out[i] = static_cast<float>(v) / 32768.0f;
    }
  } else {
    out.resize(bytes / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::uint32_t bitsv = le32(p + 4 * i);
      float v;
      std::memcpy(&v, &bitsv, 4);
      if (!std::isfinite(v)) v = 0.0f;
      out[i] = std::clamp(v, -1.0f, 1.0f);
    }
  }
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

AudioBuffer parse_wav(std::span<const std::uint8_t> bytes, std::vector<std::string>* warnings) {
  const ReadAt read = [&](std::uint64_t off, std::uint8_t* out, std::size_t n) -> std::size_t {
    if (off >= bytes.size()) return 0;
    const std::size_t k = std::min<std::size_t>(n, bytes.size() - off);
    std::memcpy(out, bytes.data() + off, k);
    return k;
  };
  const auto layout = walk_chunks(read, bytes.size(), warnings);
  AudioBuffer b;
  b.sample_rate_hz = layout.info.sample_rate_hz;
  b.channels = layout.info.channels;
  decode_samples(bytes.data() + layout.data_offset, layout.data_bytes, layout.info.format, b.samples);
  return b;
}

WavInfo probe_wav(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto total = static_cast<std::uint64_t>(in.tellg());
  const ReadAt read = [&](std::uint64_t off, std::uint8_t* out, std::size_t n) -> std::size_t {
    in.clear();
    in.seekg(static_cast<std::streamoff>(off));
    in.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount());
  };
  return walk_chunks(read, total, warnings).info;
}

AudioBuffer read_wav(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  const auto bytes = read_file_bytes(path);
  return parse_wav(bytes, warnings);
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& b, SampleFormat format) {
  const std::uint16_t bytes_per_sample = format == SampleFormat::kPcm16 ? 2 : 4;
  const auto data_bytes = static_cast<std::uint32_t>(b.samples.size() * bytes_per_sample);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put32(out, 16);
  put16(out, format == SampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  put16(out, static_cast<std::uint16_t>(b.channels));
  put32(out, static_cast<std::uint32_t>(b.sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(b.sample_rate_hz * b.channels * bytes_per_sample));
  put16(out, static_cast<std::uint16_t>(b.channels * bytes_per_sample));
  put16(out, static_cast<std::uint16_t>(8 * bytes_per_sample));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put32(out, data_bytes);
  for (float s : b.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    if (format == SampleFormat::kPcm16) {
      const auto v = static_cast<std::int16_t>(std::clamp<long>(std::lround(c * 32768.0f), -32768, 32767));
      put16(out, static_cast<std::uint16_t>(v));
    } else {
      std::uint32_t bits;
      std::memcpy(&bits, &c, 4);
      put32(out, bits);
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& b, SampleFormat format) {
  const auto bytes = encode_wav(b, format);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

AudioBuffer downmix(const AudioBuffer& b) {
  if (b.channels <= 1) return b;
  AudioBuffer out;
  out.sample_rate_hz = b.sample_rate_hz;
  out.channels = 1;
  const std::size_t n = b.frames();
  const auto ch = static_cast<std::size_t>(b.channels);
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < ch; ++c) acc += b.samples[i * ch + c];
    out.samples[i] = static_cast<float>(acc / static_cast<double>(ch));
  }
  return out;
}

AudioBuffer resample(const AudioBuffer& b, int target_hz) {
  if (target_hz <= 0) throw Error(fmt::format("resample target must be positive, got {}", target_hz));
  if (b.channels != 1) throw Error("resample expects mono input; downmix first");
  if (target_hz == b.sample_rate_hz) return b;

  constexpr int kTaps = 32;
  constexpr int kHalf = kTaps / 2;
  const int g = std::gcd(b.sample_rate_hz, target_hz);
  const std::int64_t up = target_hz / g;
  const std::int64_t down = b.sample_rate_hz / g;
  // Cutoff relative to the input Nyquist; below 1 when decimating.
  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));

  // Phase p places the output sample p/up of an input sample past the base index.
  std::vector<float> bank(static_cast<std::size_t>(up * kTaps));
  for (std::int64_t p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    double sum = 0.0;
    std::array<double, kTaps> h{};
    for (int k = 0; k < kTaps; ++k) {
      const double x = frac - static_cast<double>(k - kHalf + 1);  // distance to input index base + k - kHalf + 1
      const double w = std::abs(x) >= kHalf ? 0.0 : 0.5 * (1.0 + std::cos(std::numbers::pi * x / kHalf));
      h[static_cast<std::size_t>(k)] = cutoff * sinc(cutoff * x) * w;
      sum += h[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < kTaps; ++k)
      bank[static_cast<std::size_t>(p * kTaps + k)] = static_cast<float>(h[static_cast<std::size_t>(k)] / sum);
  }

  const auto in_len = static_cast<std::int64_t>(b.samples.size());
  const std::int64_t out_len = (2 * in_len * up + down) / (2 * down);  // round, ties away from zero
  AudioBuffer out;
  out.sample_rate_hz = target_hz;
  out.channels = 1;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t base = (n * down) / up;
    const std::int64_t phase = (n * down) % up;
    const float* h = &bank[static_cast<std::size_t>(phase * kTaps)];
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      const std::int64_t idx = base + k - kHalf + 1;
      if (idx < 0 || idx >= in_len) continue;
      acc += static_cast<double>(h[k]) * b.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

AudioBuffer extract_segment(const AudioBuffer& b, double start_s, double end_s) {
  const double dur = b.duration_s();
  const double eps = 0.5 / b.sample_rate_hz;
  if (!(start_s >= 0.0) || !(start_s < end_s) || end_s > dur + eps)
    throw Error(fmt::format("segment [{}, {}) outside [0, {}]", start_s, end_s, dur));
  const auto frames = static_cast<std::int64_t>(b.frames());
  const auto first = std::clamp<std::int64_t>(round_half_away(start_s * b.sample_rate_hz), 0, frames);
  const auto last = std::clamp<std::int64_t>(round_half_away(end_s * b.sample_rate_hz), first, frames);
  AudioBuffer out;
  out.sample_rate_hz = b.sample_rate_hz;
  out.channels = b.channels;
  const auto ch = static_cast<std::int64_t>(b.channels);
  out.samples.assign(b.samples.begin() + first * ch, b.samples.begin() + last * ch);
  return out;
}

AudioBuffer canonicalize(const AudioBuffer& b) { return resample(downmix(b), kCanonicalSampleRate); }

}  // namespace gsb
