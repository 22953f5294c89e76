#include <memory>

#include "selab/dsp.hpp"
#include "selab/gcrn.hpp"
#include "selab/gradcheck.hpp"
#include "selab/losses.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"
#include "selab/teacher.hpp"

namespace selab {

namespace {

using T = double;
using Tn = Tensor<T>;
using Inputs = std::vector<Tn>;
using Fn = std::function<Tn(const Inputs&)>;
namespace o = ops;

constexpr double kStep = 1e-5;
// Whole networks: the longer chain raises the roundoff floor of the
// difference quotient, so a larger step balances it against truncation.
constexpr double kComposedStep = 1e-4;
constexpr double kTolerance = 1e-5;

// Scalar probe with fixed random weights, so that every output element gets
// a distinct gradient.
Tn probe(const Tn& y) {
  Rng rng(0x5eed ^ static_cast<std::uint64_t>(y.numel()));
  auto w = normal_tensor<T>(y.shape(), rng);
  return o::sum(o::mul(y, w));
}

struct Suite {
  Rng rng;
  std::vector<GradCheckResult> results;

  explicit Suite(unsigned seed) : rng(seed) {}

  Tn n(Shape s) { return normal_tensor<T>(std::move(s), rng, 1.0, true); }
  Tn u(Shape s, double lo, double hi) { return uniform_tensor<T>(std::move(s), rng, lo, hi, true); }

  void run(const std::string& name, Fn fn, Inputs in, double step = kStep) {
    results.push_back(check_gradients<T>(name, fn, std::move(in), step, kTolerance));
  }
  void unary(const std::string& name, std::function<Tn(const Tn&)> f, Tn x) {
    run(name, [f](const Inputs& v) { return probe(f(v[0])); }, {std::move(x)});
  }
};

void elementwise(Suite& s) {
  s.run("add", [](const Inputs& v) { return probe(o::add(v[0], v[1])); }, {s.n({2, 3}), s.n({2, 3})});
  s.run("sub", [](const Inputs& v) { return probe(o::sub(v[0], v[1])); }, {s.n({2, 3}), s.n({2, 3})});
  s.run("mul", [](const Inputs& v) { return probe(o::mul(v[0], v[1])); }, {s.n({2, 3}), s.n({2, 3})});
  s.run("div", [](const Inputs& v) { return probe(o::div(v[0], v[1])); }, {s.n({2, 3}), s.u({2, 3}, 0.5, 2.0)});
  s.unary("add_scalar_mul_scalar", [](const Tn& x) { return o::add_scalar(o::mul_scalar(x, 1.7), -0.3); }, s.n({4}));
  s.run("mul_rows", [](const Inputs& v) { return probe(o::mul_rows(v[0], v[1])); }, {s.n({2, 3, 4}), s.n({2, 3})});
  s.unary("neg", [](const Tn& x) { return o::neg(x); }, s.n({5}));
  s.unary("sigmoid", [](const Tn& x) { return o::sigmoid(x); }, s.u({6}, -3, 3));
  s.unary("tanh", [](const Tn& x) { return o::tanh(x); }, s.u({6}, -2, 2));
  s.unary("elu", [](const Tn& x) { return o::elu(x); }, s.u({8}, -2, 2));
  s.unary("leaky_relu", [](const Tn& x) { return o::leaky_relu(x, 0.1); }, s.u({8}, -2, 2));
  // Kinks at 0 and at the clamp bounds are kept clear of the step.
  s.unary("abs", [](const Tn& x) { return o::abs(x); }, Tn::from({4}, {-0.9, -0.2, 0.3, 0.8}, true));
  s.unary("square", [](const Tn& x) { return o::square(x); }, s.n({5}));
  s.unary("sqrt", [](const Tn& x) { return o::sqrt(x, 1e-8); }, s.u({5}, 0.2, 2));
  s.unary("log", [](const Tn& x) { return o::log(x, 1e-8); }, s.u({5}, 0.2, 2));
  s.unary("clamp", [](const Tn& x) { return o::clamp(x, -0.5, 0.5); }, Tn::from({4}, {-0.9, -0.2, 0.3, 0.8}, true));
  s.unary("softmax", [](const Tn& x) { return o::softmax(x); }, s.n({2, 5}));
}

void linear_algebra(Suite& s) {
  s.run("matmul", [](const Inputs& v) { return probe(o::matmul(v[0], v[1])); }, {s.n({3, 4}), s.n({4, 2})});
  s.run("linear", [](const Inputs& v) { return probe(o::linear(v[0], v[1], v[2])); },
        {s.n({2, 3, 5}), s.n({4, 5}), s.n({4})});
  s.run("conv2d",
        [](const Inputs& v) {
          o::Conv2dGeometry g{.stride_t = 1, .stride_f = 2, .pad_t_front = 1, .pad_f_front = 1, .pad_f_back = 1};
          return probe(o::conv2d(v[0], v[1], v[2], g));
        },
        {s.n({2, 2, 4, 7}), s.n({3, 2, 2, 3}), s.n({3})});
  s.run("conv2d_time_stride",
        [](const Inputs& v) {
          o::Conv2dGeometry g{.stride_t = 2, .pad_t_front = 1, .pad_t_back = 1};
          return probe(o::conv2d(v[0], v[1], v[2], g));
        },
        {s.n({1, 3, 7, 2}), s.n({2, 3, 3, 1}), s.n({2})});
  s.run("conv_transpose2d",
        [](const Inputs& v) {
          o::ConvTranspose2dGeometry g{.stride_f = 2, .crop_t_back = 1, .output_pad_f = 1};
          return probe(o::conv_transpose2d(v[0], v[1], v[2], g));
        },
        {s.n({2, 3, 4, 5}), s.n({3, 2, 2, 3}), s.n({2})});
}

void layout(Suite& s) {
  s.run("concat", [](const Inputs& v) { return probe(o::concat<T>({v[0], v[1]}, 1)); },
        {s.n({2, 2, 3}), s.n({2, 1, 3})});
  s.unary("slice", [](const Tn& x) { return o::slice(x, 1, 1, 3); }, s.n({2, 4, 3}));
  s.unary("reshape", [](const Tn& x) { return o::reshape(x, {3, 4}); }, s.n({2, 6}));
  s.unary("permute", [](const Tn& x) { return o::permute(x, {2, 0, 1}); }, s.n({2, 3, 4}));
  s.unary("repeat_interleave", [](const Tn& x) { return o::repeat_interleave(x, 2, 2); }, s.n({2, 2, 3}));
  s.unary("resize_edge", [](const Tn& x) { return o::add(o::resize_edge(x, 1, 5), o::resize_edge(o::resize_edge(x, 1, 2), 1, 5)); },
          s.n({2, 3, 2}));
}

void reductions(Suite& s) {
  s.run("sum_mean", [](const Inputs& v) { return o::add(o::sum(o::square(v[0])), o::mean(v[0])); }, {s.n({3, 2})});
  s.unary("sum_axis", [](const Tn& x) { return o::sum_axis(x, 1); }, s.n({2, 3, 4}));
  s.unary("mean_axis", [](const Tn& x) { return o::mean_axis(x, 0); }, s.n({2, 3, 4}));
  s.unary("l1_norm_last", [](const Tn& x) { return o::l1_norm_last(x); }, s.u({3, 4}, 0.1, 1));
  s.unary("l2_norm_last", [](const Tn& x) { return o::l2_norm_last(x); }, s.n({3, 4}));
  s.run("cosine_similarity_last", [](const Inputs& v) { return probe(o::cosine_similarity_last(v[0], v[1])); },
        {s.n({3, 4}), s.n({3, 4})});
}

dsp::StftConfig small_stft() {
  dsp::StftConfig c;
  c.window_len = 12;
  c.hop = 8;
  c.fft_size = 16;
  return c;
}

void transforms(Suite& s) {
  const auto cfg = small_stft();
  s.unary("stft", [cfg](const Tn& x) { return dsp::stft_tensor(x, cfg); }, s.u({2, 40}, -1, 1));
  s.unary("istft", [cfg](const Tn& x) { return dsp::istft_tensor(x, cfg); }, s.u({2, 2, 5, 9}, -1, 1));
  s.unary("stft_default_window", [](const Tn& x) { return dsp::stft_tensor(x); }, s.u({1, 720}, -1, 1));
  s.run("lstm_scan", [](const Inputs& v) { return probe(model::lstm_scan(v[0], v[1])); },
        {s.n({2, 4, 8}), s.u({8, 2}, -0.7, 0.7)});
  s.run("layer_weighted_sum", [](const Inputs& v) { return probe(teacher::weighted_sum(v[0], v[1])); },
        {s.n({3, 4, 2}), s.n({3})});
  teacher::SyntheticTeacher t(2, 2, 3, 9);
  s.unary("synthetic_teacher", [t](const Tn& x) { return t.embed(x); }, s.n({1, 2, 4, 9}));
}

void loss_terms(Suite& s) {
  s.run("sisdr_loss", [](const Inputs& v) { return losses::sisdr_loss(v[0], v[1]); }, {s.n({2, 30}), s.n({2, 30})});
  {
    // An odd number of rows keeps the bias gradient (a mean of signs) away
    // from an exact zero.
    losses::Linear<T> proj(5, 3, s.rng);
    s.run("distill_embed", [proj](const Inputs& v) { return losses::distill_embed(v[0], v[1], proj); },
          {s.n({1, 5, 5}), s.n({1, 5, 3}), proj.weight, proj.bias});
  }
  {
    losses::Discriminator<T> d(3, s.rng, 4);
    Inputs in{s.n({1, 5, 3}), s.n({1, 5, 3})};
    for (auto& p : d.parameters()) in.push_back(p);
    s.run("adversarial_generator", [d](const Inputs& v) { return losses::adversarial(v[0], v[1], d).generator; }, in);
    // The discriminator term detaches the fake side.
    in[0] = in[0].clone(false);
    s.run("adversarial_discriminator",
          [d](const Inputs& v) { return losses::adversarial(v[0], v[1], d).discriminator; }, in);
  }
  s.run("triplet", [](const Inputs& v) { return losses::triplet(v[0], v[1], v[2], 1.0); },
        {s.n({2, 3, 4}), s.n({2, 3, 4}), s.n({2, 3, 4})});
  s.run("mean_l1", [](const Inputs& v) { return losses::mean_l1(v[0], v[1]); },
        {Tn::from({4}, {0.5, -1.0, 2.0, 0.1}, true), Tn::from({4}, {0.0, 0.3, 1.0, -0.4}, true)});
  s.run("mean_l2", [](const Inputs& v) { return losses::mean_l2(v[0], v[1]); }, {s.n({2, 3, 4}), s.n({2, 3, 4})});
  s.run("cosine_distance", [](const Inputs& v) { return losses::cosine_distance(v[0], v[1]); },
        {s.n({2, 3, 4}), s.n({2, 3, 4})});
  {
    const auto cfg = small_stft();
    teacher::SyntheticTeacher t(1, 2, 4, cfg.bins());
    losses::EmbeddingFn<T> fn;
    fn.fn = [t, cfg](const Tn& wave) { return teacher::last_layer(t.embed(dsp::stft_tensor(wave, cfg))); };
    fn.differentiable = true;
    fn.name = "synthetic";
    auto ref = normal_tensor<T>({1, 40}, s.rng);
    s.run("distill_output", [fn, ref](const Inputs& v) { return losses::distill_output(v[0], ref, fn); },
          {s.n({1, 40})});
  }
}

model::GcrnConfig micro_model() {
  model::GcrnConfig c;
  c.channels = {2, 4};
  c.freq_strides = {2, 2};
  c.input_bins = 17;
  c.lstm_hidden = 4;
  c.lstm_groups = 2;
  return c;
}

void composed(Suite& s) {
  auto check = [&](const std::string& name, model::GcrnConfig cfg, bool teacher_input) {
    auto m = std::make_shared<model::Gcrn<T>>(cfg, 17);
    Inputs in{s.n({1, 2, 4, cfg.input_bins})};
    if (cfg.conditioning == model::Conditioning::Concat) in.push_back(s.n({1, 4, cfg.condition_dim}));
    const std::size_t fixed = in.size();
    for (const auto& p : m->parameters()) in.push_back(p);
    s.run(name,
          [m, fixed, teacher_input](const Inputs& v) {
            Tn cond = fixed > 1 ? v[1] : Tn();
            Tn y;
            if (teacher_input) {
              auto e = m->encode(v[0]);
              y = m->decode(e.features, {}, cond);
            } else {
              y = m->forward(v[0], cond);
            }
            return probe(y);
          },
          in, kComposedStep);
  };
  check("gcrn", micro_model(), false);
  auto concat = micro_model();
  concat.conditioning = model::Conditioning::Concat;
  concat.condition_dim = 3;
  check("gcrn_concat", concat, false);
  check("gcrn_decode_without_skips", micro_model(), true);
  {
    // Waveform in, SI-SDR loss out, through the whole enhancement path.
    auto cfg = small_stft();
    auto mc = micro_model();
    mc.input_bins = cfg.bins();
    auto m = std::make_shared<model::Gcrn<T>>(mc, 5);
    auto clean = normal_tensor<T>({1, 44}, s.rng);
    Inputs in{s.u({1, 44}, -1, 1)};
    for (const auto& p : m->parameters()) in.push_back(p);
    s.run("gcrn_sisdr_end_to_end",
          [m, cfg, clean](const Inputs& v) {
            auto est = dsp::istft_tensor(m->forward(dsp::stft_tensor(v[0], cfg)), cfg);
            return losses::sisdr_loss(est, clean);
          },
          in, kComposedStep);
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(unsigned seed) {
  Suite s(seed);
  elementwise(s);
  linear_algebra(s);
  layout(s);
  reductions(s);
  transforms(s);
  loss_terms(s);
  composed(s);
  return std::move(s.results);
}

}  // namespace selab
