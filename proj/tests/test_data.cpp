#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "selab/data.hpp"
#include "selab/error.hpp"
#include "selab/wav.hpp"

using namespace selab;
using namespace selab::data;
namespace fs = std::filesystem;

namespace {

double energy(const std::vector<float>& x) {
  double e = 0;
  for (float v : x) e += static_cast<double>(v) * v;
  return e;
}

Waveform tone(std::int64_t n, int cycles, bool cosine) {
  Waveform w;
  w.samples.resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = 2 * std::numbers::pi * cycles * i / n;
    w.samples[i] = static_cast<float>(cosine ? std::cos(a) : std::sin(a));
  }
  return w;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("selab_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Snr, ParseFixedAndRange) {
  EXPECT_EQ(SnrSpec::parse("-5"), SnrSpec::fixed(-5));
  EXPECT_EQ(SnrSpec::parse("-5:5"), SnrSpec::range(-5, 5));
  EXPECT_TRUE(SnrSpec::parse("3.5").is_fixed());
  EXPECT_THROW(SnrSpec::parse("5:-5"), ConfigError);
  EXPECT_THROW(SnrSpec::parse("abc"), ConfigError);
  EXPECT_THROW(SnrSpec::parse("1:x"), ConfigError);
  EXPECT_EQ(SnrSpec::parse(SnrSpec::range(-2.25, 7).str()), SnrSpec::range(-2.25, 7));
}

TEST(Snr, DrawsStayInBounds) {
  Rng rng(1);
  auto s = SnrSpec::range(-5, 5);
  for (int i = 0; i < 1000; ++i) {
    const double v = s.draw(rng);
    EXPECT_GE(v, -5);
    EXPECT_LE(v, 5);
  }
}

TEST(Mix, ZeroDbEqualizesEnergy) {
  auto clean = synth_speech(16000, 1);
  auto noise = synth_noise(16000, 2);
  auto m = mix_at_snr(clean, noise, 0.0);
  const double scaled = m.noise_gain * m.noise_gain * energy(noise.samples);
  EXPECT_NEAR(scaled / energy(clean.samples), 1.0, 1e-12);
}

TEST(Mix, MinusFiveDbRatio) {
  auto clean = synth_speech(16000, 3);
  auto noise = synth_noise(16000, 4, NoiseKind::White);
  auto m = mix_at_snr(clean, noise, -5.0);
  const double ratio = m.noise_gain * m.noise_gain * energy(noise.samples) / energy(clean.samples);
  EXPECT_NEAR(ratio, 3.1622776601683795, 1e-9);
}

TEST(Mix, OrthogonalNoiseGivesExactSnr) {
  // Integer-period sine and cosine at different frequencies are orthogonal.
  auto clean = tone(16000, 50, false);
  auto noise = tone(16000, 173, true);
  auto m = mix_at_snr(clean, noise, -5.0);
  EXPECT_NEAR(oracle::sisdr(m.noisy.samples, m.clean.samples), -5.0, 1e-4);
}

TEST(Mix, AchievesRequestedSnrProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<std::int64_t>(2000 + rng.below(20000));
    auto clean = synth_speech(n, 100 + trial);
    auto noise = synth_noise(static_cast<std::int64_t>(500 + rng.below(30000)), 200 + trial,
                             static_cast<NoiseKind>(trial % 4));
    const double snr = rng.uniform(-10, 20);
    auto m = mix_at_snr(clean, noise, snr);
    auto fitted = fit_length(noise, n, nullptr);
    const double achieved =
        10 * std::log10(energy(clean.samples) / (m.noise_gain * m.noise_gain * energy(fitted.samples)));
    EXPECT_NEAR(achieved, snr, 1e-6);
  }
}

// With unit-norm clean c and scaled noise of norm rho = 10^(-snr/20) at angle
// cos to c, SI-SDR = snr + 20 log10(1 + rho cos) - 10 log10(1 - cos^2).
// The 0.1 dB bound for |cos| < 0.01 therefore only holds when rho |cos| is
// small enough; the closed form is checked for every pair.
TEST(Mix, NearOrthogonalNoiseSisdrMatchesSnrProperty) {
  Rng rng(6);
  int checked = 0, bounded = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto clean = synth_speech(16000, 300 + trial);
    auto noise = synth_noise(16000, 400 + trial, static_cast<NoiseKind>(trial % 4));
    double dot = 0;
    for (std::size_t i = 0; i < 16000; ++i) dot += static_cast<double>(clean.samples[i]) * noise.samples[i];
    const double cosang = dot / std::sqrt(energy(clean.samples) * energy(noise.samples));
    if (std::abs(cosang) >= 0.01) continue;
    ++checked;
    const double snr = rng.uniform(-5, 5);
    auto m = mix_at_snr(clean, noise, snr);
    const double got = oracle::sisdr(m.noisy.samples, m.clean.samples);
    const double rho = std::pow(10.0, -snr / 20);
    const double expected = snr + 20 * std::log10(1 + rho * cosang) - 10 * std::log10(1 - cosang * cosang);
    EXPECT_NEAR(got, expected, 1e-3);
    if (rho * std::abs(cosang) < 0.0115) {
      ++bounded;
      EXPECT_LT(std::abs(got - snr), 0.1);
    }
  }
  EXPECT_GE(checked, 10);
  EXPECT_GE(bounded, 5);
}

TEST(Mix, ZeroEnergyIsAnError) {
  Waveform silent{std::vector<float>(100, 0.0f)};
  Waveform loud{std::vector<float>(100, 0.5f)};
  EXPECT_THROW(mix_at_snr(silent, loud, 0), Error);
  EXPECT_THROW(mix_at_snr(loud, silent, 0), Error);
}

TEST(Mix, FitLengthTilesAndCrops) {
  Waveform w{{1, 2, 3}};
  EXPECT_EQ(fit_length(w, 7, nullptr).samples, (std::vector<float>{1, 2, 3, 1, 2, 3, 1}));
  Waveform l{{1, 2, 3, 4, 5, 6}};
  EXPECT_EQ(fit_length(l, 3, nullptr).samples, (std::vector<float>{1, 2, 3}));
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto c = fit_length(l, 3, &rng).samples;
    EXPECT_EQ(c[1], c[0] + 1);
    EXPECT_EQ(c[2], c[0] + 2);
  }
}

TEST(Mix, PeakNormalize) {
  Waveform w{{0.1f, -0.5f, 0.25f}};
  peak_normalize(w, 0.9);
  EXPECT_FLOAT_EQ(w.samples[1], -0.9f);
  EXPECT_FLOAT_EQ(w.samples[0], 0.18f);
}

TEST(Manifest, ParsesFieldsCommentsAndRelativePaths) {
  auto m = parse_manifest("# header\nclean/a.wav\tnoise/b.wav\t-5\n\n/abs/c.wav\tn.wav\t-5:5\t32000\t77\n", "/data");
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].clean_path, "/data/clean/a.wav");
  EXPECT_EQ(m.records[0].snr, SnrSpec::fixed(-5));
  EXPECT_EQ(m.records[0].crop_len, 16000);
  EXPECT_EQ(m.records[1].clean_path, "/abs/c.wav");
  EXPECT_EQ(m.records[1].noise_path, "/data/n.wav");
  EXPECT_EQ(m.records[1].snr, SnrSpec::range(-5, 5));
  EXPECT_EQ(m.records[1].crop_len, 32000);
  EXPECT_EQ(m.records[1].seed, 77u);
  EXPECT_EQ(parse_manifest(format_manifest(m)).records, m.records);
}

TEST(Manifest, ErrorsNameTheLine) {
  try {
    parse_manifest("a\tb\t0\na\tb\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_manifest("a\tb\t5:1\n"), FormatError);
  EXPECT_THROW(parse_manifest("\tb\t0\n"), FormatError);
  EXPECT_THROW(parse_manifest("a\tb\t0\t-3\n"), FormatError);
}

TEST(Iterator, SameSeedIsBitIdentical) {
  auto corpus = synthetic_corpus(6, 16000, SnrSpec::range(-5, 5), 11);
  IteratorOptions opts;
  opts.batch = 4;
  opts.seed = 3;
  MixIterator a(corpus.manifest, opts, memory_loader(corpus.clips));
  MixIterator b(corpus.manifest, opts, memory_loader(corpus.clips));
  for (int k = 0; k < 5; ++k) {
    auto ba = a.next_cycling(), bb = b.next_cycling();
    EXPECT_EQ(ba.record_index, bb.record_index);
    EXPECT_EQ(ba.snr_db, bb.snr_db);
    ASSERT_EQ(ba.noisy_spec.numel(), bb.noisy_spec.numel());
    EXPECT_TRUE(std::equal(ba.noisy_spec.data().begin(), ba.noisy_spec.data().end(), bb.noisy_spec.data().begin()));
    EXPECT_TRUE(std::equal(ba.clean_wave.data().begin(), ba.clean_wave.data().end(), bb.clean_wave.data().begin()));
  }
}

TEST(Iterator, WorkerCountDoesNotChangeOutput) {
  auto corpus = synthetic_corpus(7, 8000, SnrSpec::range(-5, 5), 12);
  IteratorOptions opts;
  opts.batch = 3;
  opts.seed = 9;
  opts.workers = 1;
  MixIterator a(corpus.manifest, opts, memory_loader(corpus.clips));
  opts.workers = 3;
  MixIterator b(corpus.manifest, opts, memory_loader(corpus.clips));
  for (int k = 0; k < 6; ++k) {
    auto ba = a.next_cycling(), bb = b.next_cycling();
    EXPECT_EQ(ba.record_index, bb.record_index);
    EXPECT_TRUE(std::equal(ba.noisy_wave.data().begin(), ba.noisy_wave.data().end(), bb.noisy_wave.data().begin()));
  }
}

TEST(Iterator, OneSecondCropGives49Frames) {
  auto corpus = synthetic_corpus(3, 24000, SnrSpec::fixed(0), 13);
  for (auto& r : corpus.manifest.records) r.crop_len = 16000;
  IteratorOptions opts;
  opts.batch = 2;
  MixIterator it(corpus.manifest, opts, memory_loader(corpus.clips));
  auto b = it.next();
  ASSERT_TRUE(b);
  EXPECT_EQ(b->noisy_spec.shape(), (Shape{2, 2, 49, 257}));
  EXPECT_EQ(b->clean_wave.shape(), (Shape{2, 16000}));
  auto last = it.next();
  ASSERT_TRUE(last);
  EXPECT_EQ(last->noisy_spec.dim(0), 1);
  EXPECT_FALSE(it.next());
}

TEST(Iterator, EpochCoversEveryRecordOnce) {
  auto corpus = synthetic_corpus(9, 4000, SnrSpec::fixed(0), 14);
  IteratorOptions opts;
  opts.batch = 4;
  MixIterator it(corpus.manifest, opts, memory_loader(corpus.clips));
  std::vector<std::size_t> seen;
  while (auto b = it.next()) seen.insert(seen.end(), b->record_index.begin(), b->record_index.end());
  std::sort(seen.begin(), seen.end());
  std::vector<std::size_t> expected(9);
  for (std::size_t i = 0; i < 9; ++i) expected[i] = i;
  EXPECT_EQ(seen, expected);
}

TEST(Iterator, StaticMixingIsEpochInvariantDynamicIsNot) {
  auto corpus = synthetic_corpus(2, 16000, SnrSpec::range(-5, 5), 15);
  for (auto& r : corpus.manifest.records) r.crop_len = 8000;
  IteratorOptions opts;
  opts.mixing = MixingMode::Static;
  auto load = memory_loader(corpus.clips);
  auto s0 = make_item(corpus.manifest.records[0], 0, 0, opts, load);
  auto s1 = make_item(corpus.manifest.records[0], 0, 5, opts, load);
  EXPECT_EQ(s0.noisy.samples, s1.noisy.samples);
  EXPECT_EQ(s0.snr_db, s1.snr_db);
  // Static crop starts at offset 0.
  auto clean = (*corpus.clips)["clean_0"];
  clean.samples.resize(8000);
  peak_normalize(clean, 0.9);
  EXPECT_EQ(s0.clean.samples, clean.samples);

  opts.mixing = MixingMode::Dynamic;
  auto d0 = make_item(corpus.manifest.records[0], 0, 0, opts, load);
  auto d1 = make_item(corpus.manifest.records[0], 0, 1, opts, load);
  EXPECT_NE(d0.snr_db, d1.snr_db);
}

TEST(Iterator, ReadsWavFilesAndReportsBadRecords) {
  TempDir dir;
  dsp::write_wav((dir.path / "c.wav").string(), synth_speech(16000, 1));
  dsp::write_wav((dir.path / "n.wav").string(), synth_noise(9000, 2), dsp::WavFormat::Pcm16);
  {
    std::ofstream(dir.path / "bad.wav") << "not a wav file at all";
    std::ofstream(dir.path / "m.tsv") << "c.wav\tn.wav\t-5\n";
    std::ofstream(dir.path / "missing.tsv") << "c.wav\tn.wav\t-5\nnope.wav\tn.wav\t0\n";
    std::ofstream(dir.path / "corrupt.tsv") << "bad.wav\tn.wav\t0\n";
  }
  MixIterator ok(load_manifest((dir.path / "m.tsv").string()), IteratorOptions{});
  auto b = ok.next();
  ASSERT_TRUE(b);
  EXPECT_NEAR(oracle::sisdr(std::span<const float>(b->noisy_wave.data()), std::span<const float>(b->clean_wave.data())),
              -5.0, 0.5);

  IteratorOptions opts;
  opts.shuffle = false;
  MixIterator missing(load_manifest((dir.path / "missing.tsv").string()), opts);
  try {
    missing.next();
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.wav"), std::string::npos);
  }
  MixIterator corrupt(load_manifest((dir.path / "corrupt.tsv").string()), opts);
  EXPECT_THROW(corrupt.next(), FormatError);
}

TEST(Iterator, RejectsMixedCropLengthsAndShortCrops) {
  auto corpus = synthetic_corpus(2, 4000, SnrSpec::fixed(0), 16);
  corpus.manifest.records[1].crop_len = 3000;
  EXPECT_THROW(MixIterator(corpus.manifest, {}, memory_loader(corpus.clips)), ConfigError);
  corpus.manifest.records[0].crop_len = 300;
  corpus.manifest.records[1].crop_len = 300;
  EXPECT_THROW(MixIterator(corpus.manifest, {}, memory_loader(corpus.clips)), ConfigError);
}

TEST(Synth, DeterministicFiniteAndNonSilent) {
  for (auto kind : {NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble, NoiseKind::Hum}) {
    auto a = synth_noise(4000, 5, kind), b = synth_noise(4000, 5, kind);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_GT(energy(a.samples), 0);
    for (float v : a.samples) ASSERT_TRUE(std::isfinite(v));
  }
  auto s = synth_speech(16000, 7);
  EXPECT_EQ(s.samples, synth_speech(16000, 7).samples);
  EXPECT_NE(s.samples, synth_speech(16000, 8).samples);
  EXPECT_GT(energy(s.samples), 1.0);
}
