#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "oracles.hpp"
#include "selab/dsp.hpp"
#include "selab/error.hpp"
#include "selab/gradcheck.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"
#include "selab/wav.hpp"

using namespace selab;
using namespace selab::dsp;

namespace {

std::vector<float> random_signal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
  return x;
}

std::vector<float> cosine(std::size_t n, double hz, double amp = 1.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>(amp * std::cos(2 * std::numbers::pi * hz * i / 16000.0));
  return x;
}

// Voiced-speech-like test signal: harmonic stack with drifting pitch and a
// syllabic envelope.
std::vector<float> harmonic_signal(std::size_t n) {
  std::vector<float> x(n);
  double phase = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = i / 16000.0;
    const double f0 = 120 + 30 * std::sin(2 * std::numbers::pi * 1.5 * t);
    phase += 2 * std::numbers::pi * f0 / 16000.0;
    double v = 0;
    for (int h = 1; h <= 12; ++h) v += std::sin(h * phase) / h;
    x[i] = static_cast<float>(0.3 * v * (0.55 + 0.45 * std::sin(2 * std::numbers::pi * 4 * t)));
  }
  return x;
}

std::span<const float> interior(const std::vector<float>& x, int window_len, std::size_t len) {
  return std::span<const float>(x).subspan(window_len, len - 2 * window_len);
}

}  // namespace

TEST(Stft, OneSecondGives49By257) {
  auto s = stft(std::vector<float>(16000, 0.1f));
  EXPECT_EQ(s.frames, 49);
  EXPECT_EQ(s.bins, 257);
}

TEST(Stft, ZeroInputGivesZeroSpectrogram) {
  auto s = stft(std::vector<float>(4000, 0.0f));
  for (float v : s.real) EXPECT_EQ(v, 0.0f);
  for (float v : s.imag) EXPECT_EQ(v, 0.0f);
}

TEST(Stft, MatchesDirectDft) {
  auto x = random_signal(2000, 3);
  auto s = stft(x);
  for (std::int64_t t : {0, 2, 4}) {
    auto ref = oracle::frame_dft(x, t * 320, 400, 512);
    for (int k = 0; k < 257; ++k) {
      EXPECT_NEAR(s.re(t, k), ref[k].real(), 1e-4);
      EXPECT_NEAR(s.im(t, k), ref[k].imag(), 1e-4);
    }
  }
}

TEST(Stft, CosinePeaksAtBin32) {
  auto x = cosine(16000, 1000.0);
  auto s = stft(x);
  auto ref = oracle::frame_dft(x, 0, 400, 512);
  int ref_peak = 0;
  for (int k = 1; k < 257; ++k)
    if (std::abs(ref[k]) > std::abs(ref[ref_peak])) ref_peak = k;
  ASSERT_EQ(ref_peak, 32);
  for (std::int64_t t = 0; t < s.frames; ++t) {
    int peak = 0;
    for (int k = 1; k < 257; ++k)
      if (s.magnitude(t, k) > s.magnitude(t, peak)) peak = k;
    EXPECT_EQ(peak, 32) << "frame " << t;
  }
}

TEST(Stft, ShortInputIsAnError) {
  EXPECT_THROW(stft(std::vector<float>(399, 0.0f)), ShapeError);
}

TEST(Stft, ConfigValidation) {
  StftConfig bad;
  bad.hop = 500;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.fft_size = 256;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(StftConfig{}.validate());
  EXPECT_EQ(StftConfig{}.bins(), 257);
}

TEST(Stft, FrameCountFormulaProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::int64_t n = 400 + static_cast<std::int64_t>(rng.below(5000));
    const auto s = stft(std::vector<float>(n, 0.0f));
    EXPECT_EQ(s.frames, (n - 400) / 320 + 1) << "n=" << n;
  }
}

TEST(Stft, LinearityProperty) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 1000 + rng.below(3000);
    auto x = random_signal(n, 100 + trial), y = random_signal(n, 200 + trial);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    std::vector<float> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = static_cast<float>(a * x[i] + b * y[i]);
    auto sx = stft(x), sy = stft(y), sz = stft(z);
    double worst = 0;
    for (std::size_t i = 0; i < sz.real.size(); ++i) {
      worst = std::max(worst, std::abs(sz.real[i] - (a * sx.real[i] + b * sy.real[i])));
      worst = std::max(worst, std::abs(sz.imag[i] - (a * sx.imag[i] + b * sy.imag[i])));
    }
    // Bound the float32 storage rounding relative to the spectrum scale.
    double scale = 0;
    for (float v : sz.real) scale = std::max(scale, static_cast<double>(std::abs(v)));
    EXPECT_LT(worst / std::max(scale, 1.0), 1e-5);
  }
}

TEST(Istft, RoundTripRandomAbove40dB) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto x = random_signal(16000, seed);
    auto y = istft(stft(x));
    ASSERT_EQ(y.size(), 15760u);
    std::vector<float> xs(x.begin(), x.begin() + 15760);
    EXPECT_GT(oracle::sisdr(interior(y.samples, 400, 15760), interior(xs, 400, 15760)), 40.0);
  }
}

TEST(Istft, RoundTripSpeechLikeAbove40dB) {
  auto x = harmonic_signal(32000);
  auto y = istft(stft(x));
  const std::size_t len = y.size();
  std::vector<float> xs(x.begin(), x.begin() + len);
  EXPECT_GT(oracle::sisdr(interior(y.samples, 400, len), interior(xs, 400, len)), 40.0);
}

TEST(Istft, ZeroSpectrogramGivesZeroWaveform) {
  ComplexSpectrogram s(10, 257);
  auto y = istft(s);
  EXPECT_EQ(y.size(), static_cast<std::size_t>(9 * 320 + 400));
  for (float v : y.samples) EXPECT_EQ(v, 0.0f);
}

TEST(Istft, SinusoidKeepsDominantBin) {
  auto x = cosine(8000, 1500.0, 0.5);
  auto y = istft(stft(x));
  std::span<const float> xi(x.data() + 400, 4096), yi(y.samples.data() + 400, 4096);
  EXPECT_EQ(oracle::argmax_magnitude_dft(yi), oracle::argmax_magnitude_dft(xi));
}

TEST(Istft, InconsistentBinsIsAnError) {
  ComplexSpectrogram s(4, 256);
  EXPECT_THROW(istft(s), ShapeError);
}

TEST(Stream, MatchesOfflineFrameForFrame) {
  auto x = random_signal(16000, 8);
  auto offline = stft(x);
  StftStream stream;
  std::int64_t t = 0;
  double worst = 0;
  for (std::size_t pos = 0; pos + 320 <= x.size(); pos += 320) {
    auto f = stream.push(std::span<const float>(x).subspan(pos, 320));
    if (!f) continue;
    for (int k = 0; k < 257; ++k) {
      worst = std::max(worst, static_cast<double>(std::abs(f->real[k] - offline.re(t, k))));
      worst = std::max(worst, static_cast<double>(std::abs(f->imag[k] - offline.im(t, k))));
    }
    ++t;
  }
  EXPECT_EQ(t, offline.frames);
  EXPECT_LT(worst, 1e-6);
}

TEST(Stream, NoFrameBeforeOneWindow) {
  StftStream stream;
  std::vector<float> chunk(320, 0.5f);
  EXPECT_FALSE(stream.push(chunk).has_value());
  EXPECT_EQ(stream.frames_emitted(), 0);
  EXPECT_TRUE(stream.push(chunk).has_value());
}

TEST(Stream, FutureChunksDoNotChangeEmittedFrames) {
  auto x = random_signal(6400, 9);
  auto x2 = x;
  for (std::size_t i = 3200; i < x2.size(); ++i) x2[i] = -x2[i] * 3.0f;
  StftStream a, b;
  // Frames emitted after the push ending at 3200 only cover samples < 3200.
  for (std::size_t pos = 0; pos < 3200; pos += 320) {
    auto fa = a.push(std::span<const float>(x).subspan(pos, 320));
    auto fb = b.push(std::span<const float>(x2).subspan(pos, 320));
    ASSERT_EQ(fa.has_value(), fb.has_value());
    if (fa) {
      EXPECT_EQ(fa->real, fb->real);
      EXPECT_EQ(fa->imag, fb->imag);
    }
  }
}

TEST(Stream, WrongChunkSizeIsAnError) {
  StftStream stream;
  std::vector<float> chunk(100, 0.0f);
  EXPECT_THROW(stream.push(chunk), ShapeError);
}

TEST(Stream, SynthesisMatchesOfflineIstft) {
  auto x = random_signal(8000, 10);
  auto s = stft(x);
  auto offline = istft(s);
  IstftStream stream;
  std::vector<float> out;
  for (std::int64_t t = 0; t < s.frames; ++t) {
    SpectrumFrame f{std::vector<float>(s.real.begin() + t * 257, s.real.begin() + (t + 1) * 257),
                    std::vector<float>(s.imag.begin() + t * 257, s.imag.begin() + (t + 1) * 257)};
    auto chunk = stream.push(f);
    EXPECT_EQ(chunk.size(), 320u);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  auto tail = stream.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  ASSERT_EQ(out.size(), offline.size());
  for (std::size_t i = 0; i < out.size(); ++i) ASSERT_EQ(out[i], offline.samples[i]) << i;
}

TEST(DspTensor, SpectrogramTensorRoundTrip) {
  auto s = stft(random_signal(2000, 11));
  auto t = to_tensor(s);
  EXPECT_EQ(t.shape(), (Shape{1, 2, s.frames, 257}));
  auto back = from_tensor(t);
  EXPECT_EQ(back.real, s.real);
  EXPECT_EQ(back.imag, s.imag);
}

TEST(DspTensor, DifferentiableTransformsMatchOffline) {
  auto x = random_signal(4000, 12);
  auto s = stft(x);
  auto t = stft_tensor(Tensor<float>::from({1, 4000}, std::vector<float>(x)));
  auto ref = to_tensor(s);
  for (std::int64_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t.at(i), ref.at(i));
  auto y = istft_tensor(t);
  auto yr = istft(s);
  ASSERT_EQ(y.dim(1), static_cast<std::int64_t>(yr.size()));
  for (std::int64_t i = 0; i < y.numel(); ++i) ASSERT_EQ(y.at(i), yr.samples[i]);
}

TEST(DspTensor, GradCheckSmallConfig) {
  StftConfig cfg;
  cfg.window_len = 12;
  cfg.hop = 8;
  cfg.fft_size = 16;
  Rng rng(13);
  auto x = uniform_tensor<double>({2, 40}, rng, -1, 1, true);
  auto w = uniform_tensor<double>({2, 2, 4, 9}, rng, -1, 1, false);
  auto r1 = check_gradients<double>(
      "stft", [&](const std::vector<Tensor<double>>& v) { return ops::sum(ops::mul(stft_tensor(v[0], cfg), w)); }, {x}, 1e-5, 1e-5);
  EXPECT_TRUE(r1.passed) << r1.max_rel_error;

  auto s = uniform_tensor<double>({2, 2, 5, 9}, rng, -1, 1, true);
  auto wy = uniform_tensor<double>({2, 44}, rng, -1, 1, false);
  auto r2 = check_gradients<double>(
      "istft", [&](const std::vector<Tensor<double>>& v) { return ops::sum(ops::mul(istft_tensor(v[0], cfg), wy)); }, {s}, 1e-5, 1e-5);
  EXPECT_TRUE(r2.passed) << r2.max_rel_error;

  auto r3 = check_gradients<double>(
      "stft_istft", [&](const std::vector<Tensor<double>>& v) {
        auto y = istft_tensor(stft_tensor(v[0], cfg), cfg);
        return ops::sum(ops::square(y));
      }, {x}, 1e-5, 1e-5);
  EXPECT_TRUE(r3.passed) << r3.max_rel_error;
}

TEST(DspTensor, GradCheckDefaultConfigOneFrame) {
  Rng rng(14);
  auto x = uniform_tensor<double>({1, 720}, rng, -1, 1, true);
  auto r = check_gradients<double>(
      "stft_default", [](const std::vector<Tensor<double>>& v) { return ops::sum(ops::square(stft_tensor(v[0]))); }, {x}, 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Wav, Float32RoundTripIsExact) {
  Waveform w{random_signal(1234, 15), 16000};
  auto path = (std::filesystem::temp_directory_path() / "selab_test_f32.wav").string();
  write_wav(path, w, WavFormat::Float32);
  auto back = read_wav(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.samples, w.samples);
  EXPECT_EQ(back.sample_rate, 16000);
}

TEST(Wav, Pcm16RoundTripWithinQuantization) {
  Waveform w{random_signal(500, 16), 16000};
  auto back = decode_wav(encode_wav(w, WavFormat::Pcm16));
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 0.5 / 32768 + 1e-7);
}

TEST(Wav, RejectsOtherRatesAndCorruption) {
  Waveform w{std::vector<float>(100, 0.1f), 44100};
  try {
    decode_wav(encode_wav(w), "clip.wav");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("44100"), std::string::npos);
  }
  auto good = encode_wav(Waveform{std::vector<float>(100, 0.1f), 16000});
  EXPECT_THROW(decode_wav(good.substr(0, 50)), FormatError);
  EXPECT_THROW(decode_wav("RIFX" + good.substr(4)), FormatError);
  auto stereo = good;
  stereo[22] = 2;
  EXPECT_THROW(decode_wav(stereo), FormatError);
  EXPECT_THROW(read_wav("/nonexistent/file.wav"), IoError);
}
