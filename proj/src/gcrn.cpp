#include "selab/gcrn.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "selab/error.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"

namespace selab::model {

using namespace selab::ops;
using selab::to_string;

std::string to_string(Conditioning c) { return c == Conditioning::Concat ? "concat" : "none"; }

Conditioning parse_conditioning(const std::string& s) {
  if (s == "none") return Conditioning::None;
  if (s == "concat") return Conditioning::Concat;
  throw ConfigError("model.conditioning: expected none or concat, got '" + s + "'");
}

GcrnConfig GcrnConfig::tiny_preset() {
  GcrnConfig c;
  c.channels = {4, 8, 16};
  c.freq_strides = {2, 2, 2};
  c.lstm_hidden = 64;
  return c;
}

std::vector<std::int64_t> GcrnConfig::freq_sizes() const {
  std::vector<std::int64_t> f{input_bins};
  for (std::size_t k = 0; k < channels.size() && k < freq_strides.size(); ++k)
    f.push_back(conv_out_size(f.back(), kernel_freq, static_cast<int>(freq_strides[k]), 0, 0));
  return f;
}

std::int64_t GcrnConfig::conv_features() const { return channels.back() * freq_sizes().back(); }

void GcrnConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw ConfigError("model." + field + ": " + msg);
  };
  if (channels.empty()) fail("channels", "at least one block is required");
  for (auto c : channels)
    if (c < 1) fail("channels", "widths must be positive");
  if (freq_strides.size() != channels.size())
    fail("freq_strides", "needs one stride per block (" + std::to_string(channels.size()) + ")");
  for (auto s : freq_strides)
    if (s < 1) fail("freq_strides", "strides must be >= 1");
  if (kernel_time < 1) fail("kernel_time", "must be >= 1");
  if (kernel_freq < 1) fail("kernel_freq", "must be >= 1");
  if (input_bins < kernel_freq) fail("input_bins", "smaller than the frequency kernel");
  std::int64_t f = input_bins;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (f < kernel_freq) fail("channels", "too many blocks for " + std::to_string(input_bins) + " bins");
    f = conv_out_size(f, kernel_freq, static_cast<int>(freq_strides[k]), 0, 0);
  }
  if (lstm_layers < 2 || lstm_layers % 2) fail("lstm_layers", "must be even and >= 2");
  if (lstm_groups < 1) fail("lstm_groups", "must be >= 1");
  if (lstm_hidden < 1 || lstm_hidden % lstm_groups)
    fail("lstm_hidden", "must be a positive multiple of lstm_groups");
  if (conv_features() % lstm_groups)
    fail("lstm_groups", "must divide the bottleneck input width " + std::to_string(conv_features()));
  if (conditioning == Conditioning::Concat && condition_dim < 1)
    fail("condition_dim", "must be positive for concat conditioning");
}

KeyValues GcrnConfig::to_kv(const std::string& prefix) const {
  KeyValues kv;
  kv.set(prefix + "channels", join_ints(channels));
  kv.set(prefix + "freq_strides", join_ints(freq_strides));
  kv.set(prefix + "kernel_time", std::to_string(kernel_time));
  kv.set(prefix + "kernel_freq", std::to_string(kernel_freq));
  kv.set(prefix + "lstm_hidden", std::to_string(lstm_hidden));
  kv.set(prefix + "lstm_layers", std::to_string(lstm_layers));
  kv.set(prefix + "lstm_groups", std::to_string(lstm_groups));
  kv.set(prefix + "conditioning", to_string(conditioning));
  kv.set(prefix + "condition_dim", std::to_string(condition_dim));
  kv.set(prefix + "input_bins", std::to_string(input_bins));
  return kv;
}

GcrnConfig GcrnConfig::from_kv(const KeyValues& all, const std::string& prefix) {
  const KeyValues kv = all.section(prefix);
  kv.reject_unknown({"preset", "channels", "freq_strides", "kernel_time", "kernel_freq", "lstm_hidden",
                     "lstm_layers", "lstm_groups", "conditioning", "condition_dim", "input_bins"},
                    prefix);
  GcrnConfig c;
  if (kv.has("preset")) {
    const auto& p = kv.get("preset");
    if (p == "tiny") c = tiny_preset();
    else if (p != "default") throw ConfigError(prefix + "preset: expected default or tiny, got '" + p + "'");
  }
  c.channels = kv.get_int_list("channels", c.channels);
  c.freq_strides = kv.get_int_list("freq_strides", c.freq_strides);
  c.kernel_time = static_cast<int>(kv.get_int("kernel_time", c.kernel_time));
  c.kernel_freq = static_cast<int>(kv.get_int("kernel_freq", c.kernel_freq));
  c.lstm_hidden = kv.get_int("lstm_hidden", c.lstm_hidden);
  c.lstm_layers = static_cast<int>(kv.get_int("lstm_layers", c.lstm_layers));
  c.lstm_groups = static_cast<int>(kv.get_int("lstm_groups", c.lstm_groups));
  c.conditioning = parse_conditioning(kv.get_string("conditioning", to_string(c.conditioning)));
  c.condition_dim = kv.get_int("condition_dim", c.condition_dim);
  c.input_bins = kv.get_int("input_bins", c.input_bins);
  c.validate();
  return c;
}

GcrnConfig GcrnConfig::parse(const std::string& text) {
  return from_kv(KeyValues::parse(text, "model config"));
}

std::int64_t grouped_lstm_params(std::int64_t input, std::int64_t hidden, int groups) {
  const std::int64_t h = hidden / groups, in = input / groups;
  return groups * (4 * h * in + 4 * h * h + 4 * h);
}

// ---- LSTM recurrence ----------------------------------------------------------

template <typename T>
Tensor<T> lstm_scan(const Tensor<T>& xproj, const Tensor<T>& w_hh, LstmState<T>* state) {
  if (xproj.rank() != 3 || w_hh.rank() != 2 || w_hh.dim(0) != 4 * w_hh.dim(1) ||
      xproj.dim(2) != w_hh.dim(0)) {
    throw ShapeError("lstm_scan: projection " + to_string(xproj.shape()) +
                     " incompatible with recurrent weight " + to_string(w_hh.shape()));
  }
  const std::int64_t B = xproj.dim(0), steps = xproj.dim(1), h = w_hh.dim(1), g4 = 4 * h;
  std::vector<T> h0(B * h, T(0)), c0(B * h, T(0));
  if (state && state->h.defined()) {
    if (state->h.shape() != Shape{B, h} || state->c.shape() != Shape{B, h})
      throw ShapeError("lstm_scan: state shape " + to_string(state->h.shape()) + " does not match batch " +
                       std::to_string(B) + " hidden " + std::to_string(h));
    std::copy(state->h.data().begin(), state->h.data().end(), h0.begin());
    std::copy(state->c.data().begin(), state->c.data().end(), c0.begin());
  }
  auto xd = xproj.data();
  auto wd = w_hh.data();
  // Saved activations per (b, t): gates [4h] after nonlinearity, cell, tanh(cell).
  std::vector<T> gates(B * steps * g4), cells(B * steps * h), tcells(B * steps * h);
  std::vector<T> out(B * steps * h);
  std::vector<T> a(g4);
  for (std::int64_t b = 0; b < B; ++b) {
    const T* hp = h0.data() + b * h;
    const T* cp = c0.data() + b * h;
    for (std::int64_t t = 0; t < steps; ++t) {
      const std::int64_t bt = b * steps + t;
      const T* xr = xd.data() + bt * g4;
      for (std::int64_t r = 0; r < g4; ++r) {
        const T* wr = wd.data() + r * h;
        T acc = xr[r];
        for (std::int64_t j = 0; j < h; ++j) acc += wr[j] * hp[j];
        a[r] = acc;
      }
      T* gr = gates.data() + bt * g4;
      T* cr = cells.data() + bt * h;
      T* tr = tcells.data() + bt * h;
      T* hr = out.data() + bt * h;
      for (std::int64_t j = 0; j < h; ++j) {
        const T i = T(1) / (T(1) + std::exp(-a[j]));
        const T f = T(1) / (T(1) + std::exp(-a[h + j]));
        const T g = std::tanh(a[2 * h + j]);
        const T o = T(1) / (T(1) + std::exp(-a[3 * h + j]));
        gr[j] = i;
        gr[h + j] = f;
        gr[2 * h + j] = g;
        gr[3 * h + j] = o;
        cr[j] = f * cp[j] + i * g;
        tr[j] = std::tanh(cr[j]);
        hr[j] = o * tr[j];
      }
      hp = hr;
      cp = cr;
    }
  }
  if (state) {
    std::vector<T> hl(B * h), cl(B * h);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t j = 0; j < h; ++j) {
        hl[b * h + j] = steps ? out[(b * steps + steps - 1) * h + j] : h0[b * h + j];
        cl[b * h + j] = steps ? cells[(b * steps + steps - 1) * h + j] : c0[b * h + j];
      }
    state->h = Tensor<T>::from({B, h}, std::move(hl));
    state->c = Tensor<T>::from({B, h}, std::move(cl));
  }
  return detail::record<T>(
      {B, steps, h}, std::move(out), "lstm_scan", {xproj, w_hh},
      [B, steps, h, g4, gates = std::move(gates), cells = std::move(cells), tcells = std::move(tcells),
       h0 = std::move(h0), c0 = std::move(c0)](Node<T>& node) {
        Node<T>* px = node.parents[0]->requires_grad ? node.parents[0].get() : nullptr;
        Node<T>* pw = node.parents[1]->requires_grad ? node.parents[1].get() : nullptr;
        const auto& w = node.parents[1]->data;
        T* gx = px ? px->grad_buffer() : nullptr;
        T* gw = pw ? pw->grad_buffer() : nullptr;
        std::vector<T> dh_next(h), dc_next(h), da(g4);
        for (std::int64_t b = 0; b < B; ++b) {
          std::fill(dh_next.begin(), dh_next.end(), T(0));
          std::fill(dc_next.begin(), dc_next.end(), T(0));
          for (std::int64_t t = steps - 1; t >= 0; --t) {
            const std::int64_t bt = b * steps + t;
            const T* gr = gates.data() + bt * g4;
            const T* tr = tcells.data() + bt * h;
            const T* cprev = t ? cells.data() + (bt - 1) * h : c0.data() + b * h;
            const T* hprev = t ? node.data.data() + (bt - 1) * h : h0.data() + b * h;
            const T* gout = node.grad.data() + bt * h;
            for (std::int64_t j = 0; j < h; ++j) {
              const T i = gr[j], f = gr[h + j], g = gr[2 * h + j], o = gr[3 * h + j];
              const T dh = gout[j] + dh_next[j];
              const T dc = dh * o * (T(1) - tr[j] * tr[j]) + dc_next[j];
              da[j] = dc * g * i * (T(1) - i);
              da[h + j] = dc * cprev[j] * f * (T(1) - f);
              da[2 * h + j] = dc * i * (T(1) - g * g);
              da[3 * h + j] = dh * tr[j] * o * (T(1) - o);
              dc_next[j] = dc * f;
            }
            if (gx) {
              T* gxr = gx + bt * g4;
              for (std::int64_t r = 0; r < g4; ++r) gxr[r] += da[r];
            }
            if (gw) {
              for (std::int64_t r = 0; r < g4; ++r) {
                const T d = da[r];
                if (d == T(0)) continue;
                T* gwr = gw + r * h;
                for (std::int64_t j = 0; j < h; ++j) gwr[j] += d * hprev[j];
              }
            }
            std::fill(dh_next.begin(), dh_next.end(), T(0));
            for (std::int64_t r = 0; r < g4; ++r) {
              const T d = da[r];
              if (d == T(0)) continue;
              const T* wr = w.data() + r * h;
              for (std::int64_t j = 0; j < h; ++j) dh_next[j] += d * wr[j];
            }
          }
        }
      });
}

// ---- model ----------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> glu_elu(const Tensor<T>& y) {
  const std::int64_t c = y.dim(1) / 2;
  return elu(mul(slice(y, 1, 0, c), sigmoid(slice(y, 1, c, 2 * c))));
}

// [B, C, T, F] <-> [B, T, C*F]
template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x) {
  return reshape(permute(x, {0, 2, 1, 3}), {x.dim(0), x.dim(2), x.dim(1) * x.dim(3)});
}

template <typename T>
Tensor<T> from_sequence(const Tensor<T>& y, std::int64_t c, std::int64_t f) {
  return permute(reshape(y, {y.dim(0), y.dim(1), c, f}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> uniform_param(Shape shape, Rng& rng, double bound) {
  return uniform_tensor<T>(std::move(shape), rng, -bound, bound, true);
}

}  // namespace

template <typename T>
Tensor<T>& Gcrn<T>::add_param(const std::string& name, Tensor<T> t) {
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

template <typename T>
Gcrn<T>::Gcrn(GcrnConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  freqs_ = config_.freq_sizes();
  Rng rng(derive_seed(seed, 0x67637232));
  const auto& ch = config_.channels;
  const int kt = config_.kernel_time, kf = config_.kernel_freq;
  const std::size_t n = ch.size();
  const std::int64_t H = config_.lstm_hidden;
  const int G = config_.lstm_groups;
  const std::int64_t hg = H / G;
  params_.reserve(8 * n + 6 * config_.lstm_layers * G + 8);

  for (std::size_t k = 0; k < n; ++k) {
    const std::int64_t cin = k ? ch[k - 1] : 2;
    const double bound = 1.0 / std::sqrt(double(cin * kt * kf));
    const std::string p = "encoder.conv" + std::to_string(k + 1);
    Block b;
    b.weight = add_param(p + ".weight", uniform_param<T>({2 * ch[k], cin, kt, kf}, rng, bound));
    b.bias = add_param(p + ".bias", uniform_param<T>({2 * ch[k]}, rng, bound));
    enc_.push_back(b);
  }
  lstm_.resize(config_.lstm_layers);
  for (int l = 0; l < config_.lstm_layers; ++l) {
    const std::int64_t in = (l ? H : config_.conv_features()) / G;
    const double bound = 1.0 / std::sqrt(double(hg));
    const std::string side = l < config_.lstm_layers / 2 ? "encoder" : "decoder";
    for (int g = 0; g < G; ++g) {
      const std::string p = side + ".lstm" + std::to_string(l + 1) + ".group" + std::to_string(g + 1);
      LstmGroup lg;
      lg.w_ih = add_param(p + ".w_ih", uniform_param<T>({4 * hg, in}, rng, bound));
      lg.w_hh = add_param(p + ".w_hh", uniform_param<T>({4 * hg, hg}, rng, bound));
      lg.bias = add_param(p + ".bias", uniform_param<T>({4 * hg}, rng, bound));
      lstm_[l].push_back(lg);
    }
  }
  if (config_.conditioning == Conditioning::Concat) {
    // Identity on the bottleneck half and zero on the condition half, so an
    // untrained projection leaves the unconditioned path unchanged.
    const std::int64_t D = config_.condition_dim;
    std::vector<T> w(H * (H + D), T(0));
    for (std::int64_t i = 0; i < H; ++i) w[i * (H + D) + i] = T(1);
    cond_w_ = add_param("decoder.cond.weight", Tensor<T>::from({H, H + D}, std::move(w), true));
    cond_b_ = add_param("decoder.cond.bias", Tensor<T>::zeros({H}, true));
  }
  {
    const double bound = 1.0 / std::sqrt(double(H));
    bridge_w_ = add_param("decoder.bridge.weight", uniform_param<T>({config_.conv_features(), H}, rng, bound));
    bridge_b_ = add_param("decoder.bridge.bias", uniform_param<T>({config_.conv_features()}, rng, bound));
  }
  for (std::size_t k = n; k >= 1; --k) {
    const std::int64_t cin = ch[k - 1];
    const std::int64_t cout = k > 1 ? 2 * ch[k - 2] : 2;
    const double bound = 1.0 / std::sqrt(double(cin * kt * kf));
    const std::string p = "decoder.deconv" + std::to_string(k);
    Block b;
    b.weight = add_param(p + ".weight", uniform_param<T>({cin, cout, kt, kf}, rng, bound));
    b.bias = add_param(p + ".bias", uniform_param<T>({cout}, rng, bound));
    dec_.push_back(b);
  }
}

template <typename T>
Tensor<T> Gcrn<T>::encode_convs(const Tensor<T>& spec, std::vector<Tensor<T>>& skips,
                                StreamState<T>* stream) const {
  if (spec.rank() != 4 || spec.dim(1) != 2 || spec.dim(3) != config_.input_bins) {
    throw ShapeError("gcrn: expected input [B, 2, frames, " + std::to_string(config_.input_bins) +
                     "], got " + to_string(spec.shape()));
  }
  const int kt = config_.kernel_time;
  Tensor<T> x = spec;
  for (std::size_t k = 0; k < enc_.size(); ++k) {
    Conv2dGeometry g;
    g.stride_f = static_cast<int>(config_.freq_strides[k]);
    if (stream) {
      Tensor<T> window = kt > 1 ? concat<T>({stream->encoder_history[k], x}, 2) : x;
      if (kt > 1) stream->encoder_history[k] = slice(window, 2, 1, kt);
      x = glu_elu(conv2d(window, enc_[k].weight, enc_[k].bias, g));
    } else {
      g.pad_t_front = kt - 1;
      x = glu_elu(conv2d(x, enc_[k].weight, enc_[k].bias, g));
    }
    skips.push_back(x);
  }
  return x;
}

template <typename T>
Tensor<T> Gcrn<T>::shuffle(const Tensor<T>& x) const {
  const int G = config_.lstm_groups;
  if (G == 1) return x;
  const std::int64_t B = x.dim(0), steps = x.dim(1), H = x.dim(2);
  return reshape(permute(reshape(x, {B, steps, G, H / G}), {0, 1, 3, 2}), {B, steps, H});
}

template <typename T>
Tensor<T> Gcrn<T>::run_lstm(const Tensor<T>& x, int layer, StreamState<T>* stream) const {
  const int G = config_.lstm_groups;
  const std::int64_t chunk = x.dim(2) / G;
  std::vector<Tensor<T>> outs;
  for (int g = 0; g < G; ++g) {
    const auto& p = lstm_[layer][g];
    Tensor<T> xg = G == 1 ? x : slice(x, 2, g * chunk, (g + 1) * chunk);
    LstmState<T>* st = stream ? &stream->lstm[layer * G + g] : nullptr;
    outs.push_back(lstm_scan(linear(xg, p.w_ih, p.bias), p.w_hh, st));
  }
  return G == 1 ? outs[0] : concat(outs, 2);
}

template <typename T>
Encoded<T> Gcrn<T>::encode(const Tensor<T>& spec) const {
  Encoded<T> e;
  Tensor<T> h = to_sequence(encode_convs(spec, e.skips, nullptr));
  for (int l = 0; l < config_.lstm_layers / 2; ++l) h = run_lstm(l ? shuffle(h) : h, l, nullptr);
  e.features = h;
  return e;
}

template <typename T>
Tensor<T> Gcrn<T>::decode_impl(const Tensor<T>& features, const std::vector<Tensor<T>>& skips,
                               const Tensor<T>& condition, StreamState<T>* stream) const {
  const std::int64_t H = config_.lstm_hidden;
  if (features.rank() != 3 || features.dim(2) != H)
    throw ShapeError("gcrn decode: expected features [B, frames, " + std::to_string(H) + "], got " +
                     to_string(features.shape()));
  const std::int64_t B = features.dim(0), steps = features.dim(1);
  const std::size_t n = config_.channels.size();
  if (!skips.empty()) {
    if (skips.size() != n)
      throw ShapeError("gcrn decode: expected " + std::to_string(n) + " skips, got " +
                       std::to_string(skips.size()));
    for (std::size_t k = 0; k < n; ++k) {
      const Shape want{B, config_.channels[k], steps, freqs_[k + 1]};
      if (skips[k].shape() != want)
        throw ShapeError("gcrn decode: skip " + std::to_string(k + 1) + " has shape " +
                         to_string(skips[k].shape()) + ", expected " + to_string(want));
    }
  } else {
    for (std::size_t k = 0; k + 1 < n; ++k)
      if (config_.channels[k + 1] % config_.channels[k])
        throw ConfigError("model.channels: teacher-input decoding needs each width to divide the next");
  }

  Tensor<T> h = features;
  for (int l = config_.lstm_layers / 2; l < config_.lstm_layers; ++l) h = run_lstm(shuffle(h), l, stream);

  if (config_.conditioning == Conditioning::Concat) {
    const Shape want{B, steps, config_.condition_dim};
    if (!condition.defined())
      throw ShapeError("gcrn: concat conditioning needs a condition " + to_string(want));
    if (condition.shape() != want)
      throw ShapeError("gcrn: condition shape " + to_string(condition.shape()) + ", expected " +
                       to_string(want));
    h = linear(concat<T>({h, condition}, 2), cond_w_, cond_b_);
  } else if (condition.defined()) {
    throw ShapeError("gcrn: model has no conditioning but a condition was given");
  }

  Tensor<T> d = from_sequence(linear(h, bridge_w_, bridge_b_), config_.channels.back(), freqs_.back());
  const int kt = config_.kernel_time;
  Tensor<T> prev;
  for (std::size_t k = n; k >= 1; --k) {
    Tensor<T> u;
    if (!skips.empty()) {
      u = add(d, skips[k - 1]);
    } else if (k == n) {
      u = d;
    } else {
      // Local duplication in place of the skip.
      const std::int64_t ck = config_.channels[k - 1], r = prev.dim(1) / ck;
      Tensor<T> dup = repeat_interleave(prev, 3, 2);
      const std::int64_t f2 = dup.dim(3);
      dup = mean_axis(reshape(dup, {B, ck, r, steps * f2}), 2);
      dup = resize_edge(reshape(dup, {B, ck, steps, f2}), 3, freqs_[k]);
      u = add(d, dup);
    }
    prev = u;
    const Block& blk = dec_[n - k];
    ConvTranspose2dGeometry g;
    g.stride_f = static_cast<int>(config_.freq_strides[k - 1]);
    g.output_pad_f = static_cast<int>(freqs_[k - 1] - ((freqs_[k] - 1) * g.stride_f + config_.kernel_freq));
    Tensor<T> y;
    if (stream) {
      Tensor<T> window = kt > 1 ? concat<T>({stream->decoder_history[n - k], u}, 2) : u;
      if (kt > 1) stream->decoder_history[n - k] = slice(window, 2, 1, kt);
      g.crop_t_front = kt - 1;
      g.crop_t_back = kt - 1;
      y = conv_transpose2d(window, blk.weight, blk.bias, g);
    } else {
      g.crop_t_back = kt - 1;
      y = conv_transpose2d(u, blk.weight, blk.bias, g);
    }
    d = k > 1 ? glu_elu(y) : y;
  }
  return d;
}

template <typename T>
Tensor<T> Gcrn<T>::decode(const Tensor<T>& features, const std::vector<Tensor<T>>& skips,
                          const Tensor<T>& condition) const {
  return decode_impl(features, skips, condition, nullptr);
}

template <typename T>
Tensor<T> Gcrn<T>::forward(const Tensor<T>& spec, const Tensor<T>& condition) const {
  if (!condition.defined()) {
    auto e = encode(spec);
    return decode(e.features, e.skips);
  }
  if (condition.rank() != 3 || spec.rank() != 4)
    throw ShapeError("gcrn: condition " + to_string(condition.shape()) + " incompatible with input " +
                     to_string(spec.shape()));
  const std::int64_t frames = spec.dim(2), cframes = condition.dim(1);
  if (std::abs(frames - cframes) > 1)
    throw ShapeError("gcrn: condition has " + std::to_string(cframes) + " frames, input has " +
                     std::to_string(frames));
  const std::int64_t common = std::min(frames, cframes);
  Tensor<T> x = frames == common ? spec : slice(spec, 2, 0, common);
  Tensor<T> c = cframes == common ? condition : slice(condition, 1, 0, common);
  auto e = encode(x);
  return decode(e.features, e.skips, c);
}

template <typename T>
StreamState<T> Gcrn<T>::make_stream() const {
  StreamState<T> s;
  s.lstm.resize(config_.lstm_layers * config_.lstm_groups);
  return s;
}

template <typename T>
Tensor<T> Gcrn<T>::forward_stream(StreamState<T>& state, const Tensor<T>& frame,
                                  const Tensor<T>& condition) const {
  if (state.finished) throw Error("gcrn stream: state already finished");
  if (frame.rank() != 4 || frame.dim(2) != 1)
    throw ShapeError("gcrn stream: expected one frame [B, 2, 1, bins], got " + to_string(frame.shape()));
  NoGradGuard no_grad;
  const std::int64_t B = frame.dim(0);
  const int kt = config_.kernel_time;
  if (!state.started) {
    const std::size_t n = config_.channels.size();
    state.encoder_history.clear();
    state.decoder_history.clear();
    for (std::size_t k = 0; k < n; ++k)
      state.encoder_history.push_back(
          Tensor<T>::zeros({B, k ? config_.channels[k - 1] : 2, kt - 1, freqs_[k]}));
    for (std::size_t k = n; k >= 1; --k)
      state.decoder_history.push_back(Tensor<T>::zeros({B, config_.channels[k - 1], kt - 1, freqs_[k]}));
    state.lstm.assign(config_.lstm_layers * config_.lstm_groups, LstmState<T>{});
    state.started = true;
  } else if (state.encoder_history.empty() || state.encoder_history[0].dim(0) != B) {
    throw ShapeError("gcrn stream: batch size changed mid-stream");
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = to_sequence(encode_convs(frame, skips, &state));
  for (int l = 0; l < config_.lstm_layers / 2; ++l) h = run_lstm(l ? shuffle(h) : h, l, &state);
  Tensor<T> out = decode_impl(h, skips, condition, &state);
  ++state.frames;
  return out;
}

template <typename T>
std::vector<Tensor<T>> Gcrn<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Gcrn<T>::encoder_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : params_)
    if (name.rfind("encoder.", 0) == 0) out.push_back(t);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Gcrn<T>::decoder_parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& [name, t] : params_)
    if (name.rfind("decoder.", 0) == 0) out.push_back(t);
  return out;
}

template <typename T>
std::int64_t Gcrn<T>::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
std::vector<NamedTensor> Gcrn<T>::state_dict() const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params_)
    out.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  return out;
}

template <typename T>
void Gcrn<T>::load_matching(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::vector<std::string> problems;
  for (const auto& [name, p] : params_) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto it = by_name.find(name);
    if (it == by_name.end())
      problems.push_back("missing tensor " + name);
    else if (it->second->shape != p.shape())
      problems.push_back("tensor " + name + " has shape " + selab::to_string(it->second->shape) +
                         ", model expects " + selab::to_string(p.shape()));
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint: " + std::to_string(problems.size()) + " mismatched tensor(s):";
    for (const auto& m : problems) msg += "\n  " + m;
    throw FormatError(msg);
  }
  for (auto& [name, p] : params_) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto& src = by_name.at(name)->data;
    auto dst = p.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

template <typename T>
void Gcrn<T>::load_state_dict(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, bool> known;
  for (const auto& [name, p] : params_) known[name] = true;
  for (const auto& t : tensors)
    if (!known.count(t.name) && t.name.rfind("aux.", 0) != 0)
      throw FormatError("checkpoint: unexpected tensor " + t.name);
  load_matching(tensors, "");
}

template class Gcrn<float>;
template class Gcrn<double>;
template Tensor<float> lstm_scan(const Tensor<float>&, const Tensor<float>&, LstmState<float>*);
template Tensor<double> lstm_scan(const Tensor<double>&, const Tensor<double>&, LstmState<double>*);

void save_model(const std::string& path, const Gcrn<float>& model, const std::vector<NamedTensor>& extra) {
  auto tensors = model.state_dict();
  tensors.insert(tensors.end(), extra.begin(), extra.end());
  save_checkpoint(path, tensors);
  std::ofstream cfg(path + ".cfg", std::ios::binary);
  if (!cfg) throw IoError("cannot write " + path + ".cfg");
  cfg << model.config().serialize();
  if (!cfg) throw IoError("failed writing " + path + ".cfg");
}

GcrnConfig load_model_config(const std::string& path) {
  std::ifstream in(path + ".cfg", std::ios::binary);
  if (!in) throw IoError("cannot read model config " + path + ".cfg");
  std::stringstream ss;
  ss << in.rdbuf();
  return GcrnConfig::parse(ss.str());
}

Gcrn<float> load_model(const std::string& path) {
  Gcrn<float> model(load_model_config(path));
  model.load_state_dict(load_checkpoint(path));
  return model;
}

}  // namespace selab::model
