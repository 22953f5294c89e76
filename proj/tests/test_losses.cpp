#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "selab/dsp.hpp"
#include "selab/error.hpp"
#include "selab/gradcheck.hpp"
#include "selab/losses.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"
#include "selab/teacher.hpp"

using namespace selab;
using namespace selab::losses;

namespace {

Tensor<double> row(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor<double>::from({1, n}, std::move(v));
}

// Discriminator whose score is max(x[..., 0], 0.01 x[..., 0]) at every other frame.
void make_feature_probe(Discriminator<double>& d) {
  auto ps = d.parameters();
  for (auto& p : ps) std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  // conv weights [out, in, 3, 1]: center tap of channel 0 from channel 0.
  for (int l = 0; l < 3; ++l) ps[2 * l].mutable_data()[1] = 1.0;
}

}  // namespace

TEST(Sisdr, ScaledReferenceClampsToMax) {
  Rng rng(1);
  auto ref = normal_tensor<double>({3, 100}, rng);
  for (double c : {0.01, 1.0, 7.5}) {
    auto s = sisdr(ops::mul_scalar(ref, c), ref);
    for (int b = 0; b < 3; ++b) EXPECT_DOUBLE_EQ(s.at(b), 60.0);
  }
}

TEST(Sisdr, HandExamples) {
  // alpha = 1, residual [0, 1], target energy 1 -> 0 dB
  EXPECT_NEAR(sisdr(row({1, 1}), row({1, 0})).item(), 0.0, 1e-6);
  // orthogonal residual with the reference's energy
  EXPECT_NEAR(sisdr(row({1, 1, 0, 0}), row({1, 0, 0, 0})).item(), 0.0, 1e-6);
  EXPECT_NEAR(sisdr(row({3, 0, 4, 0}), row({3, 0, 0, 0})).item(),
              10 * std::log10(9.0 / 16.0), 1e-6);
}

TEST(Sisdr, MatchesOracleOnRandomPairs) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t n = 16 + rng.below(200);
    auto ref = normal_tensor<double>({1, n}, rng);
    auto noise = normal_tensor<double>({1, n}, rng, rng.uniform(0.05, 3.0));
    auto est = ops::add(ref, noise);
    const double want = oracle::sisdr(std::span<const double>(est.data()), std::span<const double>(ref.data()));
    EXPECT_NEAR(sisdr(est, ref).item(), std::clamp(want, -60.0, 60.0), 1e-7);
  }
}

TEST(Sisdr, ScaleInvarianceProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = 8 + rng.below(300);
    auto ref = normal_tensor<double>({2, n}, rng);
    auto est = ops::add(ref, normal_tensor<double>({2, n}, rng, rng.uniform(0.1, 5.0)));
    const double c = std::exp(rng.uniform(-4, 4));
    auto a = sisdr(est, ref), b = sisdr(ops::mul_scalar(est, c), ref);
    for (int i = 0; i < 2; ++i) ASSERT_NEAR(a.at(i), b.at(i), 1e-6) << "c=" << c;
  }
}

TEST(Sisdr, MaximumOnlyForProportionalEstimates) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto ref = normal_tensor<double>({1, 64}, rng);
    auto est = ops::add(ref, normal_tensor<double>({1, 64}, rng, 0.01));
    EXPECT_LT(sisdr(est, ref).item(), 60.0);
  }
}

TEST(Sisdr, Errors) {
  EXPECT_THROW(sisdr(row({1, 2}), row({0, 0})), Error);
  EXPECT_THROW(sisdr(row({1, 2, 3}), row({1, 2})), ShapeError);
}

TEST(Sisdr, FloatAgreesWithDouble) {
  Rng rng(5);
  auto ref = normal_tensor<double>({2, 500}, rng);
  auto est = ops::add(ref, normal_tensor<double>({2, 500}, rng, 0.7));
  auto to_f = [](const Tensor<double>& t) {
    return Tensor<float>::from(t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
  };
  auto d = sisdr(est, ref);
  auto f = sisdr(to_f(est), to_f(ref));
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(d.at(i), f.at(i), 1e-3);
  EXPECT_NEAR(sisdr_loss(est, ref).item(), -(d.at(0) + d.at(1)) / 2, 1e-12);
}

TEST(Distances, L1L2Cosine) {
  Rng rng(6);
  auto a = normal_tensor<double>({2, 3, 4}, rng);
  auto b = normal_tensor<double>({2, 3, 4}, rng);
  double l1 = 0, l2 = 0;
  for (std::int64_t i = 0; i < 24; ++i) {
    l1 += std::abs(a.at(i) - b.at(i));
    l2 += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
  }
  EXPECT_NEAR(mean_l1(a, b).item(), l1 / 24, 1e-12);
  EXPECT_NEAR(mean_l2(a, b).item(), l2 / 24, 1e-12);
  EXPECT_NEAR(cosine_distance(a, a).item(), 0.0, 1e-9);
  EXPECT_NEAR(cosine_distance(a, ops::neg(a)).item(), 2.0, 1e-9);
  EXPECT_THROW(mean_l1(a, Tensor<double>::zeros({2, 3})), ShapeError);
}

TEST(DistillEmbed, Identities) {
  Rng rng(7);
  Linear<double> proj(5, 3, rng);
  auto enc = normal_tensor<double>({2, 4, 5}, rng);
  auto target = proj(enc).detach();
  EXPECT_DOUBLE_EQ(distill_embed(enc, target, proj).item(), 0.0);
  EXPECT_NEAR(distill_embed(enc, ops::add_scalar(target, 1.0), proj).item(), 1.0, 1e-12);
  EXPECT_THROW(distill_embed(enc, Tensor<double>::zeros({2, 4, 4}), proj), ShapeError);
}

TEST(DistillEmbed, MatchesLoopOracle) {
  Rng rng(8);
  Linear<double> proj(5, 3, rng);
  auto enc = normal_tensor<double>({2, 4, 5}, rng);
  auto teach = normal_tensor<double>({2, 4, 3}, rng);
  auto w = proj.weight.data();
  auto bias = proj.bias.data();
  double acc = 0;
  for (int r = 0; r < 8; ++r)
    for (int o = 0; o < 3; ++o) {
      double p = bias[o];
      for (int i = 0; i < 5; ++i) p += w[o * 5 + i] * enc.at(r * 5 + i);
      acc += std::abs(p - teach.at(r * 3 + o));
    }
  EXPECT_NEAR(distill_embed(enc, teach, proj).item(), acc / 24, 1e-12);
}

TEST(Adversarial, ConstantScores) {
  Rng rng(9);
  Discriminator<double> d(4, rng, 8);
  make_feature_probe(d);
  auto feat = [](double v0) {
    std::vector<double> x(2 * 6 * 4, 0.3);
    for (int r = 0; r < 12; ++r) x[r * 4] = v0;
    return Tensor<double>::from({2, 6, 4}, x);
  };
  auto score = d(feat(0.5));
  EXPECT_EQ(score.shape(), (Shape{2, 3}));
  for (auto v : score.data()) EXPECT_DOUBLE_EQ(v, 0.5);

  auto ones = adversarial(feat(1.0), feat(1.0), d);
  EXPECT_DOUBLE_EQ(ones.generator.item(), 0.0);
  EXPECT_DOUBLE_EQ(ones.discriminator.item(), 0.5);
  auto half = adversarial(feat(0.5), feat(0.5), d);
  EXPECT_DOUBLE_EQ(half.discriminator.item(), 0.25);
  EXPECT_DOUBLE_EQ(half.generator.item(), 0.25);
  auto perfect = adversarial(feat(0.0), feat(1.0), d);
  EXPECT_DOUBLE_EQ(perfect.discriminator.item(), 0.0);
  EXPECT_DOUBLE_EQ(perfect.generator.item(), 1.0);
}

TEST(Adversarial, GradientsReachDisjointSides) {
  Rng rng(10);
  Discriminator<double> d(4, rng);
  auto fake = normal_tensor<double>({2, 5, 4}, rng, 1.0, true);
  auto real = normal_tensor<double>({2, 5, 4}, rng);
  auto l = adversarial(fake, real, d);
  backward(l.discriminator);
  EXPECT_FALSE(fake.has_grad());
  for (auto& p : d.parameters()) EXPECT_TRUE(p.has_grad());
  for (auto& p : d.parameters()) p.clear_grad();
  backward(l.generator);
  EXPECT_TRUE(fake.has_grad());
  EXPECT_GE(l.generator.item(), 0.0);
  EXPECT_GE(l.discriminator.item(), 0.0);
}

TEST(Triplet, MarginExamples) {
  auto a = Tensor<double>::zeros({1, 1, 4});
  auto n50 = Tensor<double>::from({1, 1, 4}, {30, 40, 0, 0});
  auto n200 = Tensor<double>::from({1, 1, 4}, {120, 160, 0, 0});
  EXPECT_NEAR(triplet(a, a, n50, 100.0).item(), 50.0, 1e-5);
  EXPECT_DOUBLE_EQ(triplet(a, a, n200, 100.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(LossWeights{}.margin, 100.0);
}

TEST(Triplet, NonNegativeAndZeroBeyondMarginProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t T = 1 + rng.below(5), D = 1 + rng.below(8);
    const double m = rng.uniform(0.1, 10.0);
    auto a = normal_tensor<double>({1, T, D}, rng, 3.0);
    auto p = normal_tensor<double>({1, T, D}, rng, 3.0);
    auto n = normal_tensor<double>({1, T, D}, rng, 3.0);
    ASSERT_GE(triplet(a, p, n, m).item(), 0.0);
    // Push the negative far away along a fixed direction.
    auto far = ops::add_scalar(a, 1000.0);
    ASSERT_DOUBLE_EQ(triplet(a, p, far, m).item(), 0.0);
  }
}

namespace {

losses::EmbeddingFn<double> synthetic_fn(const teacher::SyntheticTeacher& t, const dsp::StftConfig& cfg) {
  losses::EmbeddingFn<double> fn;
  fn.fn = [t, cfg](const Tensor<double>& wave) {
    return teacher::last_layer(t.embed(dsp::stft_tensor(wave, cfg)));
  };
  fn.differentiable = true;
  fn.name = "synthetic";
  return fn;
}

dsp::StftConfig small_stft() {
  dsp::StftConfig c;
  c.window_len = 16;
  c.hop = 8;
  c.fft_size = 16;
  return c;
}

}  // namespace

TEST(DistillOutput, Identities) {
  const auto cfg = small_stft();
  teacher::SyntheticTeacher t(1, 2, 4, cfg.bins());
  auto fn = synthetic_fn(t, cfg);
  Rng rng(12);
  auto ref = normal_tensor<double>({2, 64}, rng);
  EXPECT_DOUBLE_EQ(distill_output(ref, ref, fn).item(), 0.0);
  EXPECT_GT(distill_output(ops::mul_scalar(ref, 2.0), ref, fn).item(), 1e-3);
  fn.differentiable = false;
  EXPECT_THROW(distill_output(ref, ref, fn), ConfigError);
}

TEST(LossGradCheck, AllLosses) {
  Rng rng(13);
  std::vector<GradCheckResult> results;
  auto run = [&](const std::string& name, auto fn, std::vector<Tensor<double>> in) {
    results.push_back(check_gradients<double>(name, fn, std::move(in), 1e-5, 1e-5));
  };
  {
    auto est = normal_tensor<double>({2, 30}, rng, 1.0, true);
    auto ref = normal_tensor<double>({2, 30}, rng, 1.0, true);
    run("sisdr", [](const std::vector<Tensor<double>>& in) { return sisdr_loss(in[0], in[1]); }, {est, ref});
  }
  {
    Linear<double> proj(5, 3, rng);
    auto enc = normal_tensor<double>({2, 4, 5}, rng, 1.0, true);
    auto teach = normal_tensor<double>({2, 4, 3}, rng, 1.0, true);
    run("distill_embed",
        [proj](const std::vector<Tensor<double>>& in) { return distill_embed(in[0], in[1], proj); },
        {enc, teach, proj.weight, proj.bias});
  }
  {
    Discriminator<double> d(3, rng, 4);
    auto fake = normal_tensor<double>({1, 5, 3}, rng, 1.0, true);
    auto real = normal_tensor<double>({1, 5, 3}, rng, 1.0, true);
    auto ins = std::vector<Tensor<double>>{fake, real};
    for (auto& p : d.parameters()) ins.push_back(p);
    run("adversarial_generator",
        [d](const std::vector<Tensor<double>>& in) { return adversarial(in[0], in[1], d).generator; }, ins);
    // The discriminator term sees the fake side detached, so it is checked
    // with a constant fake input.
    ins[0] = fake.clone(false);
    run("adversarial_discriminator",
        [d](const std::vector<Tensor<double>>& in) { return adversarial(in[0], in[1], d).discriminator; }, ins);
  }
  {
    auto a = normal_tensor<double>({2, 3, 4}, rng, 1.0, true);
    auto p = normal_tensor<double>({2, 3, 4}, rng, 1.0, true);
    auto n = normal_tensor<double>({2, 3, 4}, rng, 1.0, true);
    run("triplet", [](const std::vector<Tensor<double>>& in) { return triplet(in[0], in[1], in[2], 1.0); },
        {a, p, n});
    run("mean_l2", [](const std::vector<Tensor<double>>& in) { return mean_l2(in[0], in[1]); }, {a, p});
    run("cosine_distance", [](const std::vector<Tensor<double>>& in) { return cosine_distance(in[0], in[1]); },
        {a, p});
  }
  {
    const auto cfg = small_stft();
    teacher::SyntheticTeacher t(1, 2, 4, cfg.bins());
    auto fn = synthetic_fn(t, cfg);
    auto est = normal_tensor<double>({1, 40}, rng, 1.0, true);
    auto ref = normal_tensor<double>({1, 40}, rng);
    run("distill_output",
        [fn, ref](const std::vector<Tensor<double>>& in) { return distill_output(in[0], ref, fn); }, {est});
  }
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}
