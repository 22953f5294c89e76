#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "selab/data.hpp"
#include "selab/dsp.hpp"
#include "selab/gradcheck.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"
#include "selab/teacher.hpp"

using namespace selab;
using namespace selab::teacher;

namespace {

EmbeddingSequence random_sequence(std::int64_t L, std::int64_t T, std::int64_t D, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSequence e;
  e.layers = L;
  e.frames = T;
  e.dim = D;
  e.data.resize(L * T * D);
  for (auto& v : e.data) v = static_cast<float>(rng.normal());
  return e;
}

SebError::Kind kind_of(const std::string& bytes) {
  try {
    decode_seb(bytes);
  } catch (const SebError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return SebError::Kind::BadHeader;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Seb, RoundTripIsBitIdentical) {
  auto e = random_sequence(3, 7, 5, 1);
  e.hop_samples = 320;
  e.sample_rate = 16000;
  const auto bytes = encode_seb(e);
  EXPECT_EQ(bytes.size(), 28u + 4 * 3 * 7 * 5);
  const auto back = decode_seb(bytes);
  EXPECT_EQ(back, e);
  EXPECT_EQ(encode_seb(back), bytes);
}

TEST(Seb, HeaderAndPayloadLayout) {
  auto e = random_sequence(2, 3, 4, 2);
  const auto bytes = encode_seb(e);
  auto u32_at = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
  };
  EXPECT_EQ(bytes.substr(0, 4), "SEB1");
  EXPECT_EQ(u32_at(4), 1u);
  EXPECT_EQ(u32_at(8), 2u);
  EXPECT_EQ(u32_at(12), 3u);
  EXPECT_EQ(u32_at(16), 4u);
  EXPECT_EQ(u32_at(20), 320u);
  EXPECT_EQ(u32_at(24), 16000u);
  // layer-major, then frame-major
  for (std::int64_t l = 0; l < 2; ++l)
    for (std::int64_t t = 0; t < 3; ++t)
      for (std::int64_t d = 0; d < 4; ++d) {
        const std::uint32_t raw = u32_at(28 + 4 * ((l * 3 + t) * 4 + d));
        float f;
        std::memcpy(&f, &raw, 4);
        EXPECT_EQ(f, e.at(l, t, d));
      }
}

TEST(Seb, DistinctErrors) {
  const auto good = encode_seb(random_sequence(2, 3, 4, 3));
  auto bad_magic = good;
  bad_magic[3] = '2';
  EXPECT_EQ(kind_of(bad_magic), SebError::Kind::BadMagic);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_EQ(kind_of(bad_version), SebError::Kind::BadVersion);
  auto zero_dim = good;
  zero_dim[16] = 0;
  EXPECT_EQ(kind_of(zero_dim), SebError::Kind::BadHeader);
  EXPECT_EQ(kind_of(good.substr(0, 20)), SebError::Kind::Truncated);
  EXPECT_EQ(kind_of(good + "x"), SebError::Kind::TrailingBytes);
  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 28, &q, 4);
  EXPECT_EQ(kind_of(nan), SebError::Kind::NonFinite);
  EXPECT_EQ(kind_of(""), SebError::Kind::BadMagic);
}

TEST(Seb, TruncationNamesExpectedAndActualSize) {
  const auto good = encode_seb(random_sequence(2, 3, 4, 3));
  try {
    decode_seb(good.substr(0, good.size() - 5), "clip.seb");
    FAIL();
  } catch (const SebError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("clip.seb"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected " + std::to_string(good.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find("has " + std::to_string(good.size() - 5)), std::string::npos) << msg;
  }
}

TEST(Seb, LargeTeacherFileAlignsToOneSecond) {
  const auto dir = temp_dir("selab_seb_test");
  auto e = random_sequence(13, 49, 768, 4);
  const auto path = (dir / "x.seb").string();
  save_embeddings(path, e);
  const auto loaded = load_embeddings(path);
  EXPECT_EQ(loaded, e);
  const dsp::StftConfig stft;
  const auto spec_frames = dsp::frame_count(16000, stft);
  EXPECT_EQ(spec_frames, 49);
  EXPECT_EQ(aligned_frames(loaded, spec_frames, stft), 49);
  EXPECT_EQ(aligned_frames(loaded, 50, stft), 49);
  EXPECT_EQ(aligned_frames(loaded, 48, stft), 48);
  EXPECT_THROW(aligned_frames(loaded, 51, stft), ShapeError);
  auto other_hop = loaded;
  other_hop.hop_samples = 160;
  EXPECT_THROW(aligned_frames(other_hop, 49, stft), FormatError);
  EXPECT_EQ(loaded.truncated(48).layer(12).shape(), (Shape{48, 768}));
  EXPECT_EQ(loaded.truncated(48).at(12, 47, 767), loaded.at(12, 47, 767));
  std::filesystem::remove_all(dir);
}

TEST(LayerViews, DominantLogitSelectsLayer) {
  auto e = random_sequence(4, 6, 5, 5).tensor();
  for (int pick = 0; pick < 4; ++pick) {
    std::vector<float> lg(4, -50.f);
    lg[pick] = 50.f;
    auto out = weighted_sum(e, Tensor<float>::from({4}, lg));
    ASSERT_EQ(out.shape(), (Shape{6, 5}));
    for (std::int64_t i = 0; i < 30; ++i) EXPECT_NEAR(out.at(i), e.at(pick * 30 + i), 1e-6);
  }
}

TEST(LayerViews, UniformLogitsGiveLayerMean) {
  auto e = random_sequence(3, 4, 2, 6).tensor();
  auto out = weighted_sum(e, Tensor<float>::zeros({3}));
  for (std::int64_t i = 0; i < 8; ++i)
    EXPECT_NEAR(out.at(i), (e.at(i) + e.at(8 + i) + e.at(16 + i)) / 3.0, 1e-6);
}

TEST(LayerViews, ConvexAndLinearProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t L = 1 + rng.below(5), T = 1 + rng.below(6), D = 1 + rng.below(6);
    auto a = normal_tensor<double>({L, T, D}, rng);
    auto b = normal_tensor<double>({L, T, D}, rng);
    auto lg = normal_tensor<double>({L}, rng, 3.0);
    auto out = weighted_sum(a, lg);
    for (std::int64_t i = 0; i < T * D; ++i) {
      double lo = 1e300, hi = -1e300;
      for (std::int64_t l = 0; l < L; ++l) {
        lo = std::min(lo, a.at(l * T * D + i));
        hi = std::max(hi, a.at(l * T * D + i));
      }
      ASSERT_GE(out.at(i), lo - 1e-9);
      ASSERT_LE(out.at(i), hi + 1e-9);
    }
    auto sum_in = weighted_sum(ops::add(a, ops::mul_scalar(b, 2.0)), lg);
    auto sum_out = ops::add(out, ops::mul_scalar(weighted_sum(b, lg), 2.0));
    for (std::int64_t i = 0; i < T * D; ++i) ASSERT_NEAR(sum_in.at(i), sum_out.at(i), 1e-9);
  }
}

TEST(LayerViews, LengthMismatchThrows) {
  auto e = random_sequence(3, 2, 2, 1).tensor();
  EXPECT_THROW(weighted_sum(e, Tensor<float>::zeros({4})), ShapeError);
}

TEST(LayerViews, WeightedSumGradCheck) {
  Rng rng(8);
  auto e = normal_tensor<double>({3, 4, 2}, rng, 1.0, true);
  auto lg = normal_tensor<double>({3}, rng, 1.0, true);
  auto w = normal_tensor<double>({4, 2}, rng);
  auto r = check_gradients<double>(
      "weighted_sum",
      [w](const std::vector<Tensor<double>>& in) { return ops::sum(ops::mul(weighted_sum(in[0], in[1]), w)); },
      {e, lg}, 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(LayerViews, LastLayer) {
  auto one = random_sequence(1, 5, 3, 9).tensor();
  auto v = last_layer(one);
  EXPECT_EQ(v.shape(), (Shape{5, 3}));
  for (std::int64_t i = 0; i < 15; ++i) EXPECT_EQ(v.at(i), one.at(i));
  auto many = random_sequence(4, 5, 3, 9).tensor();
  auto last = last_layer(many);
  auto ws = weighted_sum(many, Tensor<float>::from({4}, {-50, -50, -50, 50}));
  for (std::int64_t i = 0; i < 15; ++i) {
    EXPECT_EQ(last.at(i), many.at(45 + i));
    EXPECT_NEAR(ws.at(i), last.at(i), 1e-6);
  }
}

TEST(LayerWeights, StartUniform) {
  LayerWeights w(5);
  for (double v : w.weights()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(SyntheticTeacher, DeterministicShapeAndInputDependent) {
  const auto a = data::synth_speech(16000, 1);
  const auto b = data::synth_speech(16000, 2);
  SyntheticTeacher t1(3), t2(3), t3(4);
  const auto ea = t1.embed(a);
  EXPECT_EQ(ea.layers, 4);
  EXPECT_EQ(ea.dim, 64);
  EXPECT_EQ(ea.frames, dsp::frame_count(16000, {}));
  EXPECT_EQ(ea, t2.embed(a));
  EXPECT_NO_THROW(ea.validate());
  const auto eb = t1.embed(b);
  double diff = 0, seed_diff = 0;
  const auto ec = t3.embed(a);
  for (std::size_t i = 0; i < ea.data.size(); ++i) {
    diff += std::abs(ea.data[i] - eb.data[i]);
    seed_diff += std::abs(ea.data[i] - ec.data[i]);
  }
  EXPECT_GT(diff / ea.data.size(), 1e-3);
  EXPECT_GT(seed_diff / ea.data.size(), 1e-3);
}

TEST(SyntheticTeacher, BatchedEmbedMatchesPerClip) {
  const auto a = data::synth_speech(8000, 1);
  const auto b = data::synth_speech(8000, 2);
  SyntheticTeacher t(1);
  auto spec = data::stack_specs({&a, &b}, {});
  auto y = t.embed(spec);
  ASSERT_EQ(y.shape(), (Shape{4, 2, spec.dim(2), 64}));
  const auto eb = t.embed(b);
  const std::int64_t T = spec.dim(2);
  for (std::int64_t l = 0; l < 4; ++l)
    for (std::int64_t i = 0; i < T * 64; ++i)
      ASSERT_NEAR(y.at(((l * 2 + 1) * T) * 64 + i), eb.data[l * T * 64 + i], 1e-5);
}

TEST(SyntheticTeacher, GradCheck) {
  SyntheticTeacher t(2, 2, 3, 9);
  Rng rng(3);
  auto spec = normal_tensor<double>({1, 2, 4, 9}, rng, 1.0, true);
  auto w = normal_tensor<double>({2, 1, 4, 3}, rng);
  auto r = check_gradients<double>(
      "synthetic_teacher",
      [t, w](const std::vector<Tensor<double>>& in) { return ops::sum(ops::mul(t.embed(in[0]), w)); }, {spec},
      1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(FileSource, GathersAlignedBatches) {
  const auto dir = temp_dir("selab_filesource_test");
  auto corpus = data::synthetic_corpus(3, 16000, data::SnrSpec::fixed(0), 5);
  data::IteratorOptions opts;
  opts.batch = 3;
  opts.shuffle = false;
  opts.mixing = data::MixingMode::Static;
  data::MixIterator it(corpus.manifest, opts, data::memory_loader(corpus.clips));
  auto batch = *it.next();
  SyntheticTeacher t(1);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto stem = data::record_stem(i, corpus.manifest.records[i]);
    auto m = data::make_item(corpus.manifest.records[i], i, 0, opts, data::memory_loader(corpus.clips));
    auto clean = t.embed(m.clean);
    if (i == 1) clean = clean.truncated(clean.frames - 1);
    save_embeddings((dir / (stem + ".seb")).string(), clean);
    save_embeddings((dir / (stem + ".noisy.seb")).string(), t.embed(m.noisy));
  }
  FileSource src(dir.string(), corpus.manifest);
  EXPECT_EQ(src.layers(), 4);
  EXPECT_EQ(src.dim(), 64);
  auto c = src.clean(batch);
  EXPECT_EQ(c.shape(), (Shape{4, 3, 48, 64}));
  auto n = src.noisy(batch);
  EXPECT_EQ(n.shape(), (Shape{4, 3, 49, 64}));
  // Matches the in-memory synthetic source on the common frames.
  SyntheticSource syn(t);
  auto ref = syn.noisy(batch);
  for (std::int64_t i = 0; i < ref.numel(); ++i) ASSERT_NEAR(n.at(i), ref.at(i), 1e-5);
  EXPECT_THROW(src.embed_spec(batch.noisy_spec), ConfigError);

  std::filesystem::remove(src.path_for(2, true));
  EXPECT_THROW(FileSource(dir.string(), corpus.manifest), IoError);
  std::filesystem::remove_all(dir);
}
