#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "selab/checkpoint.hpp"
#include "selab/error.hpp"
#include "selab/gcrn.hpp"
#include "selab/gradcheck.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"

using namespace selab;
using namespace selab::model;

namespace {

GcrnConfig micro_config() {
  GcrnConfig c;
  c.channels = {2, 4};
  c.freq_strides = {2, 2};
  c.input_bins = 17;
  c.lstm_hidden = 4;
  c.lstm_groups = 2;
  return c;
}

template <typename T>
Tensor<T> random_spec(std::int64_t b, std::int64_t frames, std::int64_t bins, std::uint64_t seed) {
  Rng rng(seed);
  return normal_tensor<T>({b, 2, frames, bins}, rng, 1.0);
}

// Naive LSTM built from primitive ops, one step at a time.
Tensor<double> reference_lstm(const Tensor<double>& xproj, const Tensor<double>& w_hh) {
  const std::int64_t B = xproj.dim(0), steps = xproj.dim(1), h = w_hh.dim(1);
  auto hcur = Tensor<double>::zeros({B, h});
  auto ccur = Tensor<double>::zeros({B, h});
  std::vector<Tensor<double>> outs;
  for (std::int64_t t = 0; t < steps; ++t) {
    auto a = ops::add(ops::reshape(ops::slice(xproj, 1, t, t + 1), {B, 4 * h}),
                      ops::linear(hcur, w_hh, Tensor<double>()));
    auto i = ops::sigmoid(ops::slice(a, 1, 0, h));
    auto f = ops::sigmoid(ops::slice(a, 1, h, 2 * h));
    auto g = ops::tanh(ops::slice(a, 1, 2 * h, 3 * h));
    auto o = ops::sigmoid(ops::slice(a, 1, 3 * h, 4 * h));
    ccur = ops::add(ops::mul(f, ccur), ops::mul(i, g));
    hcur = ops::mul(o, ops::tanh(ccur));
    outs.push_back(ops::reshape(hcur, {B, 1, h}));
  }
  return ops::concat(outs, 1);
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, double(std::abs(a.at(i) - b.at(i))));
  return m;
}

}  // namespace

TEST(GcrnConfig, DefaultPresetGeometry) {
  const auto c = GcrnConfig::default_preset();
  EXPECT_EQ(c.freq_sizes(), (std::vector<std::int64_t>{257, 128, 63, 31, 15, 7}));
  EXPECT_EQ(c.conv_features(), 256 * 7);
  EXPECT_EQ(c.bottleneck_dim(), 256);
}

TEST(GcrnConfig, TextRoundTrip) {
  auto c = GcrnConfig::tiny_preset();
  c.conditioning = Conditioning::Concat;
  c.condition_dim = 12;
  const auto text = c.serialize();
  for (const char* key : {"channels", "freq_strides", "kernel_time", "kernel_freq", "lstm_hidden",
                          "lstm_layers", "lstm_groups", "conditioning", "condition_dim", "input_bins"})
    EXPECT_NE(text.find(std::string("model.") + key + " = "), std::string::npos) << key;
  EXPECT_EQ(GcrnConfig::parse(text), c);
}

TEST(GcrnConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(GcrnConfig::parse("model.chanels = 1,2\n"), ConfigError);
  EXPECT_THROW(GcrnConfig::parse("model.lstm_layers = 3\n"), ConfigError);
  EXPECT_THROW(GcrnConfig::parse("model.lstm_hidden = 65\n"), ConfigError);
  EXPECT_THROW(GcrnConfig::parse("model.freq_strides = 2,2\n"), ConfigError);
  EXPECT_THROW(GcrnConfig::parse("model.conditioning = add\n"), ConfigError);
  EXPECT_THROW(GcrnConfig::parse("model.channels = 4,x\n"), ConfigError);
  try {
    GcrnConfig::parse("model.lstm_groups = 0\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.lstm_groups"), std::string::npos);
  }
}

TEST(GcrnFootprint, DefaultPresetUnderBudget) {
  Gcrn<float> m(GcrnConfig::default_preset(), 1);
  EXPECT_LT(m.param_count(), 4'000'000);
  const auto bytes = encode_checkpoint(m.state_dict()).size();
  EXPECT_LE(bytes, 16'500'000u);
  RecordProperty("params", std::to_string(m.param_count()));
}

TEST(GcrnFootprint, GroupedLstmParameterFormula) {
  const auto c = GcrnConfig::default_preset();
  Gcrn<float> m(c, 1);
  std::int64_t enc_lstm = 0, dec_lstm = 0;
  for (const auto& [name, t] : m.named_parameters()) {
    if (name.rfind("encoder.lstm", 0) == 0) enc_lstm += t.numel();
    if (name.rfind("decoder.lstm", 0) == 0) dec_lstm += t.numel();
  }
  // Per group: input matrix 4h x in/G, recurrent 4h x h, bias 4h with h = H/G.
  const std::int64_t H = 256, G = 2, h = H / G;
  EXPECT_EQ(enc_lstm, G * (4 * h * (1792 / G) + 4 * h * h + 4 * h));
  EXPECT_EQ(dec_lstm, G * (4 * h * (H / G) + 4 * h * h + 4 * h));
  EXPECT_EQ(grouped_lstm_params(1792, 256, 2), enc_lstm);
  // The weight matrices shrink by the group count; only the biases do not.
  const std::int64_t ungrouped = grouped_lstm_params(1792, 256, 1);
  EXPECT_EQ(ungrouped - 4 * H, G * (enc_lstm - 4 * H));
}

TEST(GcrnForward, ShapesAndFiniteness) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 3);
  auto x = random_spec<float>(2, 49, 257, 5);
  auto e = m.encode(x);
  EXPECT_EQ(e.features.shape(), (Shape{2, 49, 64}));
  ASSERT_EQ(e.skips.size(), 3u);
  EXPECT_EQ(e.skips[2].shape(), (Shape{2, 16, 49, 31}));
  auto y = m.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  for (auto v : y.data()) ASSERT_TRUE(std::isfinite(v));
  // forward is exactly encode followed by decode.
  auto y2 = m.decode(e.features, e.skips);
  EXPECT_EQ(max_abs_diff(y, y2), 0.0);
}

TEST(GcrnForward, DefaultPresetShapes) {
  Gcrn<float> m(GcrnConfig::default_preset(), 3);
  auto x = random_spec<float>(1, 8, 257, 5);
  auto y = m.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  for (auto v : y.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(GcrnForward, RejectsWrongBins) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 3);
  EXPECT_THROW(m.forward(random_spec<float>(1, 4, 256, 1)), ShapeError);
  auto e = m.encode(random_spec<float>(1, 4, 257, 1));
  e.skips.pop_back();
  EXPECT_THROW(m.decode(e.features, e.skips), ShapeError);
}

TEST(GcrnForward, ZeroInputsGiveDeterministicBiasResponse) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 3);
  auto e = m.encode(random_spec<float>(1, 6, 257, 1));
  std::vector<Tensor<float>> zero_skips;
  for (const auto& s : e.skips) zero_skips.push_back(Tensor<float>::zeros(s.shape()));
  auto f = Tensor<float>::zeros(e.features.shape());
  auto a = m.decode(f, zero_skips);
  auto b = m.decode(f, zero_skips);
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  for (auto v : a.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(GcrnCausality, FutureFramesNeverAffectThePast) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 11);
  auto x = random_spec<float>(1, 20, 257, 2);
  auto y = m.forward(x);
  auto enc = m.encode(x).features;
  Rng rng(99);
  for (std::int64_t t : {0, 5, 13, 18}) {
    auto x2 = x.clone();
    auto d = x2.mutable_data();
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t f = t + 1; f < 20; ++f)
        for (std::int64_t k = 0; k < 257; ++k) d[(c * 20 + f) * 257 + k] += float(rng.normal());
    auto y2 = m.forward(x2);
    auto enc2 = m.encode(x2).features;
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t f = 0; f <= t; ++f)
        for (std::int64_t k = 0; k < 257; ++k) {
          const auto i = (c * 20 + f) * 257 + k;
          ASSERT_EQ(y.at(i), y2.at(i)) << "t=" << t << " frame " << f;
        }
    for (std::int64_t f = 0; f <= t; ++f)
      for (std::int64_t k = 0; k < 64; ++k) ASSERT_EQ(enc.at(f * 64 + k), enc2.at(f * 64 + k));
  }
}

namespace {

Tensor<float> frame_of(const Tensor<float>& x, std::int64_t t) { return ops::slice(x, 2, t, t + 1); }

double stream_vs_offline(const GcrnConfig& cfg, std::int64_t frames) {
  Gcrn<float> m(cfg, 21);
  auto x = random_spec<float>(1, frames, cfg.input_bins, 4);
  auto y = m.forward(x);
  auto st = m.make_stream();
  std::vector<Tensor<float>> outs;
  for (std::int64_t t = 0; t < frames; ++t) outs.push_back(m.forward_stream(st, frame_of(x, t)));
  return max_abs_diff(y, ops::concat(outs, 2));
}

}  // namespace

TEST(GcrnStream, MatchesOfflineTiny) { EXPECT_LT(stream_vs_offline(GcrnConfig::tiny_preset(), 49), 1e-4); }

TEST(GcrnStream, MatchesOfflineDefault) {
  EXPECT_LT(stream_vs_offline(GcrnConfig::default_preset(), 49), 1e-4);
}

TEST(GcrnStream, FirstFrameDependsOnlyOnFirstFrame) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 21);
  auto x = random_spec<float>(1, 3, 257, 4);
  auto s1 = m.make_stream();
  auto a = m.forward_stream(s1, frame_of(x, 0));
  auto offline = m.forward(frame_of(x, 0));
  EXPECT_LT(max_abs_diff(a, offline), 1e-5);
}

TEST(GcrnStream, InterleavedStreamsAreIndependent) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 21);
  auto x = random_spec<float>(1, 10, 257, 4);
  auto z = random_spec<float>(1, 10, 257, 8);
  auto sa = m.make_stream(), sb = m.make_stream(), solo = m.make_stream();
  for (std::int64_t t = 0; t < 10; ++t) {
    auto a = m.forward_stream(sa, frame_of(x, t));
    m.forward_stream(sb, frame_of(z, t));
    auto ref = m.forward_stream(solo, frame_of(x, t));
    ASSERT_EQ(max_abs_diff(a, ref), 0.0);
  }
  EXPECT_EQ(sa.frames, 10);
}

TEST(GcrnStream, FinishedStateThrows) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 21);
  auto st = m.make_stream();
  auto x = random_spec<float>(1, 2, 257, 4);
  m.forward_stream(st, frame_of(x, 0));
  st.finish();
  EXPECT_THROW(m.forward_stream(st, frame_of(x, 1)), Error);
  EXPECT_THROW(m.forward_stream(st, x), Error);
}

TEST(GcrnConditioning, ZeroConditionMatchesUnconditioned) {
  auto plain_cfg = GcrnConfig::tiny_preset();
  auto cond_cfg = plain_cfg;
  cond_cfg.conditioning = Conditioning::Concat;
  cond_cfg.condition_dim = 10;
  Gcrn<float> plain(plain_cfg, 5), cond(cond_cfg, 5);
  EXPECT_EQ(cond.param_count() - plain.param_count(), 64 * (64 + 10) + 64);
  auto x = random_spec<float>(2, 12, 257, 6);
  auto y0 = plain.forward(x);
  auto y1 = cond.forward(x, Tensor<float>::zeros({2, 12, 10}));
  EXPECT_LT(max_abs_diff(y0, y1), 1e-6);
  // A nonzero condition on the identity-initialized projection changes nothing
  // until the condition half of the weight moves.
  Rng rng(1);
  auto c = normal_tensor<float>({2, 12, 10}, rng);
  EXPECT_LT(max_abs_diff(y0, cond.forward(x, c)), 1e-6);
}

TEST(GcrnConditioning, FrameAlignment) {
  auto cfg = GcrnConfig::tiny_preset();
  cfg.conditioning = Conditioning::Concat;
  cfg.condition_dim = 3;
  Gcrn<float> m(cfg, 5);
  auto x = random_spec<float>(1, 12, 257, 6);
  EXPECT_EQ(m.forward(x, Tensor<float>::zeros({1, 13, 3})).dim(2), 12);
  EXPECT_EQ(m.forward(x, Tensor<float>::zeros({1, 11, 3})).dim(2), 11);
  EXPECT_THROW(m.forward(x, Tensor<float>::zeros({1, 14, 3})), ShapeError);
  EXPECT_THROW(m.forward(x, Tensor<float>::zeros({1, 10, 3})), ShapeError);
  EXPECT_THROW(m.forward(x), ShapeError);
  EXPECT_THROW(m.forward(x, Tensor<float>::zeros({1, 12, 4})), ShapeError);
  Gcrn<float> plain(GcrnConfig::tiny_preset(), 5);
  EXPECT_THROW(plain.forward(x, Tensor<float>::zeros({1, 12, 3})), ShapeError);
}

TEST(GcrnLstm, MatchesPrimitiveReference) {
  Rng rng(3);
  auto xp = normal_tensor<double>({2, 5, 12}, rng);
  auto w = normal_tensor<double>({12, 3}, rng, 0.5);
  auto a = lstm_scan(xp, w);
  auto b = reference_lstm(xp, w);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
}

TEST(GcrnLstm, StateCarriesAcrossCalls) {
  Rng rng(3);
  auto xp = normal_tensor<double>({1, 6, 8}, rng);
  auto w = normal_tensor<double>({8, 2}, rng, 0.5);
  auto full = lstm_scan(xp, w);
  LstmState<double> st;
  auto first = lstm_scan(ops::slice(xp, 1, 0, 4), w, &st);
  auto rest = lstm_scan(ops::slice(xp, 1, 4, 6), w, &st);
  auto joined = ops::concat<double>({first, rest}, 1);
  for (std::int64_t i = 0; i < full.numel(); ++i) EXPECT_NEAR(full.at(i), joined.at(i), 1e-14);
}

TEST(GcrnLstm, GradCheck) {
  Rng rng(4);
  auto xp = normal_tensor<double>({2, 4, 8}, rng, 1.0, true);
  auto w = normal_tensor<double>({8, 2}, rng, 0.5, true);
  auto r = check_gradients<double>(
      "lstm_scan",
      [](const std::vector<Tensor<double>>& in) {
        auto y = lstm_scan(in[0], in[1]);
        return ops::sum(ops::mul(y, y));
      },
      {xp, w}, 1e-5, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

namespace {

GradCheckResult model_gradcheck(const GcrnConfig& cfg, bool without_skips) {
  auto model = std::make_shared<Gcrn<double>>(cfg, 17);
  std::vector<Tensor<double>> inputs{random_spec<double>(1, 4, cfg.input_bins, 9)};
  inputs[0].set_requires_grad(true);
  if (cfg.conditioning == Conditioning::Concat) {
    Rng rng(2);
    inputs.push_back(normal_tensor<double>({1, 4, cfg.condition_dim}, rng, 1.0, true));
  }
  const std::size_t fixed = inputs.size();
  for (const auto& p : model->parameters()) inputs.push_back(p);
  return check_gradients<double>(
      "gcrn",
      [model, fixed, without_skips, cfg](const std::vector<Tensor<double>>& in) {
        Tensor<double> cond = fixed > 1 ? in[1] : Tensor<double>();
        Tensor<double> y;
        if (without_skips) {
          auto e = model->encode(in[0]);
          y = model->decode(e.features, {}, cond);
        } else {
          y = model->forward(in[0], cond);
        }
        return ops::sum(ops::mul(y, y));
      },
      inputs, 1e-5, 1e-5);
}

}  // namespace

TEST(GcrnGradCheck, FullModel) {
  auto r = model_gradcheck(micro_config(), false);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GcrnGradCheck, ConcatConditioning) {
  auto cfg = micro_config();
  cfg.conditioning = Conditioning::Concat;
  cfg.condition_dim = 3;
  auto r = model_gradcheck(cfg, false);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GcrnGradCheck, TeacherInputDecoding) {
  auto r = model_gradcheck(micro_config(), true);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GcrnDecode, WithoutSkipsKeepsShape) {
  Gcrn<float> m(GcrnConfig::tiny_preset(), 3);
  auto x = random_spec<float>(1, 7, 257, 1);
  auto y = m.decode(Tensor<float>::zeros({1, 7, 64}), {});
  EXPECT_EQ(y.shape(), x.shape());
  auto odd = GcrnConfig::tiny_preset();
  odd.channels = {4, 6, 16};
  Gcrn<float> bad(odd, 3);
  EXPECT_THROW(bad.decode(Tensor<float>::zeros({1, 7, 64}), {}), ConfigError);
}

TEST(GcrnCheckpoint, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "selab_gcrn_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.gck").string();
  auto cfg = GcrnConfig::tiny_preset();
  cfg.conditioning = Conditioning::Concat;
  cfg.condition_dim = 5;
  Gcrn<float> m(cfg, 8);
  save_model(path, m, {{"aux.proj.weight", {2, 2}, {1, 2, 3, 4}}});
  auto loaded = load_model(path);
  EXPECT_EQ(loaded.config(), cfg);
  auto x = random_spec<float>(1, 5, 257, 2);
  Rng rng(5);
  auto c = normal_tensor<float>({1, 5, 5}, rng);
  EXPECT_EQ(max_abs_diff(m.forward(x, c), loaded.forward(x, c)), 0.0);

  auto tensors = m.state_dict();
  tensors.push_back({"stray", {1}, {0}});
  EXPECT_THROW(loaded.load_state_dict(tensors), FormatError);
  tensors.pop_back();
  tensors.pop_back();
  EXPECT_THROW(loaded.load_state_dict(tensors), FormatError);
  tensors = m.state_dict();
  tensors[0].shape = {1};
  EXPECT_THROW(loaded.load_state_dict(tensors), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(GcrnCheckpoint, LoadMatchingCopiesOnlyThePrefix) {
  Gcrn<float> a(GcrnConfig::tiny_preset(), 1), b(GcrnConfig::tiny_preset(), 2);
  b.load_matching(a.state_dict(), "encoder.");
  for (std::size_t i = 0; i < a.named_parameters().size(); ++i) {
    const auto& [name, ta] = a.named_parameters()[i];
    const auto& tb = b.named_parameters()[i].second;
    const bool same = std::equal(ta.data().begin(), ta.data().end(), tb.data().begin());
    EXPECT_EQ(same, name.rfind("encoder.", 0) == 0) << name;
  }
}
