#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "gsb/audio.hpp"
#include "oracles.hpp"

namespace {

gsb::AudioBuffer sine(double hz, int rate, double seconds, double amp = 0.5) {
  gsb::AudioBuffer b;
  b.sample_rate_hz = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  for (std::size_t i = 0; i < n; ++i)
    b.samples.push_back(static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate)));
  return b;
}

// Peak bin and the energy outside the three bins around it, in dB relative
// to the energy inside them.
std::pair<std::size_t, double> spectrum_peak(const std::vector<float>& x) {
  const auto mag = oracle::dft_magnitude(x);
  std::size_t peak = 1;
  for (std::size_t k = 1; k < mag.size(); ++k)
    if (mag[k] > mag[peak]) peak = k;
  double in = 0, out = 0;
  for (std::size_t k = 1; k < mag.size(); ++k) {
    const double e = mag[k] * mag[k];
    (k + 1 >= peak && k <= peak + 1 ? in : out) += e;
  }
  return {peak, 10.0 * std::log10(out / in)};
}

TEST(Wav, Pcm16MonoOneSecond) {
  gsb::AudioBuffer b;
  b.samples.assign(16000, 0.25f);
  const auto bytes = gsb::encode_wav(b);
  const auto back = gsb::parse_wav(bytes);
  EXPECT_EQ(back.sample_rate_hz, 16000);
  EXPECT_EQ(back.channels, 1);
  EXPECT_DOUBLE_EQ(back.duration_s(), 1.0);
  EXPECT_NEAR(back.samples[100], 0.25f, 1.0 / 32768);
}

TEST(Wav, Float32RoundTripIsExact) {
  auto b = sine(440, 22050, 0.1);
  const auto back = gsb::parse_wav(gsb::encode_wav(b, gsb::SampleFormat::kFloat32));
  EXPECT_EQ(back.samples, b.samples);
  EXPECT_EQ(back.sample_rate_hz, 22050);
}

TEST(Wav, EmptyDataChunk) {
  gsb::AudioBuffer b;
  const auto back = gsb::parse_wav(gsb::encode_wav(b));
  EXPECT_TRUE(back.samples.empty());
  EXPECT_EQ(back.duration_s(), 0.0);
}

TEST(Wav, UnknownChunksAreSkipped) {
  gsb::AudioBuffer b;
  b.samples = {0.5f, -0.5f, 0.25f};
  auto bytes = gsb::encode_wav(b);
  // splice a LIST chunk between fmt and data
  const std::vector<std::uint8_t> list = {'L', 'I', 'S', 'T', 4, 0, 0, 0, 'a', 'b', 'c', 'd'};
  bytes.insert(bytes.begin() + 36, list.begin(), list.end());
  std::uint32_t riff;
  std::memcpy(&riff, bytes.data() + 4, 4);
  riff += static_cast<std::uint32_t>(list.size());
  std::memcpy(bytes.data() + 4, &riff, 4);
  const auto back = gsb::parse_wav(bytes);
  ASSERT_EQ(back.samples.size(), 3u);
  EXPECT_NEAR(back.samples[1], -0.5f, 1e-4);
}

TEST(Wav, DeclaredLengthLongerThanDataWarns) {
  gsb::AudioBuffer b;
  b.samples.assign(100, 0.1f);
  auto bytes = gsb::encode_wav(b);
  bytes.resize(bytes.size() - 40);
  std::vector<std::string> warnings;
  const auto back = gsb::parse_wav(bytes, &warnings);
  EXPECT_EQ(back.samples.size(), 80u);
  EXPECT_FALSE(warnings.empty());
}

gsb::WavErrorCode wav_error(std::span<const std::uint8_t> bytes) {
  try {
    gsb::parse_wav(bytes);
  } catch (const gsb::WavError& e) {
    return e.code();
  }
  ADD_FAILURE() << "parsed";
  return gsb::WavErrorCode::kBadFormat;
}

TEST(Wav, TypedErrors) {
  gsb::AudioBuffer b;
  b.samples.assign(10, 0.0f);
  auto good = gsb::encode_wav(b);
  auto not_riff = good;
  not_riff[0] = 'X';
  EXPECT_EQ(wav_error(not_riff), gsb::WavErrorCode::kNotRiff);
  auto not_wave = good;
  not_wave[8] = 'X';
  EXPECT_EQ(wav_error(not_wave), gsb::WavErrorCode::kNotWave);
  auto mp3 = good;
  mp3[20] = 0x55;  // format tag: MPEG layer 3
  EXPECT_EQ(wav_error(mp3), gsb::WavErrorCode::kUnsupportedCodec);
  std::span<const std::uint8_t> tiny(good.data(), 6);
  EXPECT_EQ(wav_error(tiny), gsb::WavErrorCode::kTruncatedHeader);
}

TEST(Wav, TruncationsAndCorruptionNeverCrash) {
  auto stereo = sine(300, 8000, 0.01);
  stereo.channels = 2;
  stereo.samples.resize(stereo.samples.size() / 2 * 2);
  const auto good = gsb::encode_wav(stereo);
  for (std::size_t cut = 0; cut <= good.size(); ++cut) {
    std::span<const std::uint8_t> prefix(good.data(), cut);
    try {
      const auto b = gsb::parse_wav(prefix);
      EXPECT_LE(b.samples.size() * 2, cut);
    } catch (const gsb::WavError&) {
    }
  }
  gsb::SplitMix64 rng(9);
  for (int i = 0; i < 2000; ++i) {
    auto bad = good;
    for (int k = 0; k < 3; ++k) bad[rng.below(44)] = static_cast<std::uint8_t>(rng.below(256));
    try {
      gsb::parse_wav(bad);
    } catch (const gsb::WavError&) {
    }
  }
}

TEST(Downmix, StereoRampWithEqualChannels) {
  gsb::AudioBuffer b;
  b.channels = 2;
  for (int i = 0; i < 64; ++i) {
    const float x = static_cast<float>(i) / 64.0f - 0.5f;
    b.samples.push_back(x);
    b.samples.push_back(x);
  }
  const auto parsed = gsb::parse_wav(gsb::encode_wav(b));
  const auto mono = gsb::downmix(parsed);
  ASSERT_EQ(mono.samples.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(mono.samples[i], parsed.samples[2 * i]);
}

TEST(Downmix, MonoIsIdentityAndOppositeChannelsCancel) {
  auto m = sine(100, 8000, 0.01);
  EXPECT_EQ(gsb::downmix(m).samples, m.samples);
  gsb::AudioBuffer st;
  st.channels = 2;
  for (float x : m.samples) {
    st.samples.push_back(x);
    st.samples.push_back(-x);
  }
  for (float y : gsb::downmix(st).samples) EXPECT_EQ(y, 0.0f);
}

TEST(Downmix, Linear) {
  gsb::SplitMix64 rng(4);
  gsb::AudioBuffer a, b;
  a.channels = b.channels = 3;
  for (int i = 0; i < 300; ++i) {
    a.samples.push_back(static_cast<float>(rng.uniform() - 0.5));
    b.samples.push_back(static_cast<float>(rng.uniform() - 0.5));
  }
  const float alpha = 0.3f, beta = -0.7f;
  gsb::AudioBuffer mix = a;
  for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] = alpha * a.samples[i] + beta * b.samples[i];
  const auto lhs = gsb::downmix(mix);
  const auto da = gsb::downmix(a), db = gsb::downmix(b);
  for (std::size_t i = 0; i < lhs.samples.size(); ++i)
    EXPECT_NEAR(lhs.samples[i], alpha * da.samples[i] + beta * db.samples[i], 1e-6);
}

TEST(Resample, LengthAndIdentity) {
  gsb::AudioBuffer b;
  b.sample_rate_hz = 48000;
  b.samples.assign(48000, 0.0f);
  const auto r = gsb::resample(b, 16000);
  EXPECT_NEAR(static_cast<double>(r.samples.size()), 16000.0, 1.0);
  EXPECT_EQ(r.sample_rate_hz, 16000);
  auto s = sine(440, 16000, 0.05);
  EXPECT_EQ(gsb::resample(s, 16000).samples, s.samples);
  EXPECT_THROW(gsb::resample(s, 0), gsb::Error);
  const auto odd = gsb::resample(sine(440, 44100, 0.37), 16000);
  EXPECT_NEAR(static_cast<double>(odd.samples.size()), std::round(0.37 * 44100 * 16000.0 / 44100), 1.0);
}

TEST(Resample, SineKeepsItsFrequencyAndStaysClean) {
  const auto r = gsb::resample(sine(1000, 48000, 1.0), 16000);
  // 1600 samples from the middle: exactly 100 periods, 10 Hz per bin
  std::vector<float> mid(r.samples.begin() + 4000, r.samples.begin() + 5600);
  const auto [peak, side_db] = spectrum_peak(mid);
  EXPECT_NEAR(static_cast<double>(peak), 100.0, 1.0);
  EXPECT_LT(side_db, -30.0);
}

TEST(Resample, RoundTripPreservesPeakBin) {
  const auto src = sine(700, 16000, 0.5);
  const auto back = gsb::resample(gsb::resample(src, 44100), 16000);
  std::vector<float> a(src.samples.begin() + 1600, src.samples.begin() + 3200);
  std::vector<float> b(back.samples.begin() + 1600, back.samples.begin() + 3200);
  EXPECT_EQ(spectrum_peak(a).first, spectrum_peak(b).first);
}

TEST(ExtractSegment, Slices) {
  auto b = sine(200, 8000, 1.0);
  EXPECT_EQ(gsb::extract_segment(b, 0.0, 1.0).samples, b.samples);
  EXPECT_EQ(gsb::extract_segment(b, 0.0, 1.0 / 8000).samples.size(), 1u);
  EXPECT_THROW(gsb::extract_segment(b, 0.5, 0.4), gsb::Error);
  EXPECT_THROW(gsb::extract_segment(b, 0.0, 1.5), gsb::Error);
  gsb::SplitMix64 rng(8);
  for (int i = 0; i < 50; ++i) {
    double c1 = rng.uniform() * 0.5, c2 = 0.5 + rng.uniform() * 0.5;
    auto x = gsb::extract_segment(b, 0.0, c1);
    auto y = gsb::extract_segment(b, c1, c2);
    auto z = gsb::extract_segment(b, c2, 1.0);
    std::vector<float> all = x.samples;
    all.insert(all.end(), y.samples.begin(), y.samples.end());
    all.insert(all.end(), z.samples.begin(), z.samples.end());
    ASSERT_EQ(all, b.samples);
  }
}

TEST(Canonicalize, StereoFortyFourKToMonoSixteenK) {
  auto s = sine(500, 44100, 0.2);
  gsb::AudioBuffer st;
  st.sample_rate_hz = 44100;
  st.channels = 2;
  for (float x : s.samples) {
    st.samples.push_back(x);
    st.samples.push_back(x);
  }
  const auto c = gsb::canonicalize(st);
  EXPECT_EQ(c.channels, 1);
  EXPECT_EQ(c.sample_rate_hz, 16000);
  EXPECT_NEAR(c.duration_s(), 0.2, 1e-3);
}

}  // namespace
