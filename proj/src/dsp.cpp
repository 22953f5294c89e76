#include "selab/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "fft.hpp"
#include "selab/error.hpp"

namespace selab::dsp {

using cplx = std::complex<double>;

void StftConfig::validate() const {
  if (hop <= 0 || hop > window_len || window_len > fft_size)
    throw ConfigError("stft: need 0 < hop <= window_len <= fft_size, got hop=" +
                      std::to_string(hop) + " window_len=" + std::to_string(window_len) +
                      " fft_size=" + std::to_string(fft_size));
  if (fft_size % 2 != 0) throw ConfigError("stft: fft_size must be even");
  if (!(envelope_floor > 0)) throw ConfigError("stft: envelope_floor must be positive");
}

std::vector<double> make_window(WindowType type, int length) {
  std::vector<double> w(length, 1.0);
  const double step = 2.0 * std::numbers::pi / length;
  for (int n = 0; n < length; ++n) {
    switch (type) {
      case WindowType::Hann: w[n] = 0.5 - 0.5 * std::cos(step * n); break;
      case WindowType::Hamming: w[n] = 0.54 - 0.46 * std::cos(step * n); break;
      case WindowType::Rectangular: break;
    }
  }
  return w;
}

std::int64_t frame_count(std::int64_t n, const StftConfig& cfg) {
  if (n < cfg.window_len) return 0;
  return (n - cfg.window_len) / cfg.hop + 1;
}

std::int64_t signal_length(std::int64_t frames, const StftConfig& cfg) {
  return frames == 0 ? 0 : (frames - 1) * cfg.hop + cfg.window_len;
}

ComplexSpectrogram::ComplexSpectrogram(std::int64_t frames, std::int64_t bins)
    : frames(frames), bins(bins), real(frames * bins, 0.0f), imag(frames * bins, 0.0f) {}

double ComplexSpectrogram::magnitude(std::int64_t t, std::int64_t k) const {
  return std::hypot(static_cast<double>(re(t, k)), static_cast<double>(im(t, k)));
}

namespace {

// Per-sample weight applied to each synthesized frame, and its contribution
// to the normalizing envelope.
struct Synthesis {
  std::vector<double> weight;
  std::vector<double> envelope;
};

Synthesis make_synthesis(const StftConfig& cfg, const std::vector<double>& window) {
  Synthesis s;
  s.weight.resize(cfg.window_len);
  s.envelope.resize(cfg.window_len);
  for (int m = 0; m < cfg.window_len; ++m) {
    if (cfg.synthesis == SynthesisType::LeastSquares) {
      s.weight[m] = window[m];
      s.envelope[m] = window[m] * window[m];
    } else {
      s.weight[m] = 1.0;
      s.envelope[m] = window[m];
    }
  }
  return s;
}

// 1 / max(envelope, floor) over a signal of `frames` frames.
std::vector<double> inverse_envelope(std::int64_t frames, const StftConfig& cfg,
                                     const Synthesis& syn) {
  std::vector<double> env(signal_length(frames, cfg), 0.0);
  for (std::int64_t t = 0; t < frames; ++t)
    for (int m = 0; m < cfg.window_len; ++m) env[t * cfg.hop + m] += syn.envelope[m];
  for (auto& e : env) e = 1.0 / std::max(e, cfg.envelope_floor);
  return env;
}

template <typename T>
void analyze_frame(RealFft& fft, const std::vector<double>& window, const T* x,
                   std::vector<double>& frame, std::vector<cplx>& spec) {
  for (std::size_t m = 0; m < window.size(); ++m) frame[m] = window[m] * static_cast<double>(x[m]);
  fft.forward(frame, spec);
}

}  // namespace

ComplexSpectrogram stft(std::span<const float> samples, const StftConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::int64_t>(samples.size());
  if (n < cfg.window_len)
    throw ShapeError("stft: input of " + std::to_string(n) + " samples is shorter than one window (" +
                     std::to_string(cfg.window_len) + ")");
  const auto frames = frame_count(n, cfg);
  const int bins = cfg.bins();
  ComplexSpectrogram s(frames, bins);
  RealFft fft(cfg.fft_size);
  const auto window = make_window(cfg.analysis, cfg.window_len);
  std::vector<double> frame(cfg.window_len);
  std::vector<cplx> spec(bins);
  for (std::int64_t t = 0; t < frames; ++t) {
    analyze_frame(fft, window, samples.data() + t * cfg.hop, frame, spec);
    for (int k = 0; k < bins; ++k) {
      s.real[t * bins + k] = static_cast<float>(spec[k].real());
      s.imag[t * bins + k] = static_cast<float>(spec[k].imag());
    }
  }
  return s;
}

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) { return stft(w.samples, cfg); }

Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg, int sample_rate) {
  cfg.validate();
  if (s.bins != cfg.bins())
    throw ShapeError("istft: spectrogram has " + std::to_string(s.bins) + " bins, config expects " +
                     std::to_string(cfg.bins()));
  if (static_cast<std::int64_t>(s.real.size()) != s.frames * s.bins || s.imag.size() != s.real.size())
    throw ShapeError("istft: real/imag arrays do not match frames x bins");
  const auto window = make_window(cfg.analysis, cfg.window_len);
  const auto syn = make_synthesis(cfg, window);
  const auto inv_env = inverse_envelope(s.frames, cfg, syn);
  std::vector<double> acc(inv_env.size(), 0.0);
  RealFft fft(cfg.fft_size);
  std::vector<cplx> spec(cfg.bins());
  std::vector<double> frame(cfg.fft_size);
  const double scale = 1.0 / cfg.fft_size;
  for (std::int64_t t = 0; t < s.frames; ++t) {
    for (int k = 0; k < cfg.bins(); ++k) spec[k] = {s.re(t, k), s.im(t, k)};
    fft.inverse(spec, frame);
    for (int m = 0; m < cfg.window_len; ++m) acc[t * cfg.hop + m] += syn.weight[m] * frame[m] * scale;
  }
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out.samples[i] = static_cast<float>(acc[i] * inv_env[i]);
  return out;
}

Tensor<float> to_tensor(const ComplexSpectrogram& s) {
  std::vector<float> data(2 * s.frames * s.bins);
  std::copy(s.real.begin(), s.real.end(), data.begin());
  std::copy(s.imag.begin(), s.imag.end(), data.begin() + s.frames * s.bins);
  return Tensor<float>::from({1, 2, s.frames, s.bins}, std::move(data));
}

ComplexSpectrogram from_tensor(const Tensor<float>& t, std::int64_t batch_index) {
  if (t.rank() != 4 || t.dim(1) != 2)
    throw ShapeError("from_tensor: expected [B, 2, T, F], got " + to_string(t.shape()));
  if (batch_index < 0 || batch_index >= t.dim(0))
    throw ShapeError("from_tensor: batch index " + std::to_string(batch_index) + " out of range");
  ComplexSpectrogram s(t.dim(2), t.dim(3));
  const auto plane = s.frames * s.bins;
  auto d = t.data().subspan(batch_index * 2 * plane);
  std::copy(d.begin(), d.begin() + plane, s.real.begin());
  std::copy(d.begin() + plane, d.begin() + 2 * plane, s.imag.begin());
  return s;
}

// ---- differentiable transforms ---------------------------------------------

template <typename T>
Tensor<T> stft_tensor(const Tensor<T>& wave, const StftConfig& cfg) {
  cfg.validate();
  if (wave.rank() != 2) throw ShapeError("stft_tensor: expected [B, N], got " + to_string(wave.shape()));
  const auto batch = wave.dim(0), n = wave.dim(1);
  if (n < cfg.window_len)
    throw ShapeError("stft_tensor: input of " + std::to_string(n) + " samples is shorter than one window");
  const auto frames = frame_count(n, cfg);
  const int bins = cfg.bins();
  const auto plane = frames * bins;
  std::vector<T> out(batch * 2 * plane);
  auto window = std::make_shared<const std::vector<double>>(make_window(cfg.analysis, cfg.window_len));
  {
    RealFft fft(cfg.fft_size);
    std::vector<double> frame(cfg.window_len);
    std::vector<cplx> spec(bins);
    auto x = wave.data();
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t t = 0; t < frames; ++t) {
        analyze_frame(fft, *window, x.data() + b * n + t * cfg.hop, frame, spec);
        T* re = out.data() + b * 2 * plane + t * bins;
        T* im = re + plane;
        for (int k = 0; k < bins; ++k) {
          re[k] = static_cast<T>(spec[k].real());
          im[k] = static_cast<T>(spec[k].imag());
        }
      }
  }
  return detail::record<T>(
      {batch, 2, frames, bins}, std::move(out), "stft", {wave},
      [cfg, window, batch, n, frames, bins, plane](Node<T>& node) {
        Node<T>* x = node.parents[0].get();
        if (!x->requires_grad) return;
        T* gx = x->grad_buffer();
        RealFft fft(cfg.fft_size);
        std::vector<cplx> spec(bins);
        std::vector<double> frame(cfg.fft_size);
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t t = 0; t < frames; ++t) {
            const T* gre = node.grad.data() + b * 2 * plane + t * bins;
            const T* gim = gre + plane;
            for (int k = 0; k < bins; ++k) {
              const double half = (k == 0 || k == bins - 1) ? 1.0 : 0.5;
              spec[k] = {half * gre[k], half * gim[k]};
            }
            fft.inverse(spec, frame);
            T* dst = gx + b * n + t * cfg.hop;
            for (int m = 0; m < cfg.window_len; ++m) dst[m] += static_cast<T>((*window)[m] * frame[m]);
          }
      });
}

template <typename T>
Tensor<T> istft_tensor(const Tensor<T>& spec_in, const StftConfig& cfg) {
  cfg.validate();
  if (spec_in.rank() != 4 || spec_in.dim(1) != 2)
    throw ShapeError("istft_tensor: expected [B, 2, T, F], got " + to_string(spec_in.shape()));
  if (spec_in.dim(3) != cfg.bins())
    throw ShapeError("istft_tensor: spectrogram has " + std::to_string(spec_in.dim(3)) +
                     " bins, config expects " + std::to_string(cfg.bins()));
  const auto batch = spec_in.dim(0), frames = spec_in.dim(2);
  const int bins = cfg.bins();
  const auto plane = frames * bins;
  const auto window = make_window(cfg.analysis, cfg.window_len);
  auto syn = std::make_shared<const Synthesis>(make_synthesis(cfg, window));
  auto inv_env = std::make_shared<const std::vector<double>>(inverse_envelope(frames, cfg, *syn));
  const auto n = static_cast<std::int64_t>(inv_env->size());
  std::vector<T> out(batch * n);
  {
    RealFft fft(cfg.fft_size);
    std::vector<cplx> spec(bins);
    std::vector<double> frame(cfg.fft_size), acc(n);
    const double scale = 1.0 / cfg.fft_size;
    auto s = spec_in.data();
    for (std::int64_t b = 0; b < batch; ++b) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t t = 0; t < frames; ++t) {
        const T* re = s.data() + b * 2 * plane + t * bins;
        const T* im = re + plane;
        for (int k = 0; k < bins; ++k) spec[k] = {static_cast<double>(re[k]), static_cast<double>(im[k])};
        fft.inverse(spec, frame);
        for (int m = 0; m < cfg.window_len; ++m) acc[t * cfg.hop + m] += syn->weight[m] * frame[m] * scale;
      }
      for (std::int64_t i = 0; i < n; ++i) out[b * n + i] = static_cast<T>(acc[i] * (*inv_env)[i]);
    }
  }
  return detail::record<T>(
      {batch, n}, std::move(out), "istft", {spec_in},
      [cfg, syn, inv_env, batch, frames, bins, plane, n](Node<T>& node) {
        Node<T>* p = node.parents[0].get();
        if (!p->requires_grad) return;
        T* gs = p->grad_buffer();
        RealFft fft(cfg.fft_size);
        std::vector<double> frame(cfg.fft_size, 0.0);
        std::vector<cplx> spec(bins);
        const double scale = 1.0 / cfg.fft_size;
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t t = 0; t < frames; ++t) {
            const T* gy = node.grad.data() + b * n + t * cfg.hop;
            const double* ie = inv_env->data() + t * cfg.hop;
            for (int m = 0; m < cfg.window_len; ++m) frame[m] = syn->weight[m] * gy[m] * ie[m];
            fft.forward(frame, spec);
            T* gre = gs + b * 2 * plane + t * bins;
            T* gim = gre + plane;
            for (int k = 0; k < bins; ++k) {
              const double c = (k == 0 || k == bins - 1) ? scale : 2.0 * scale;
              gre[k] += static_cast<T>(c * spec[k].real());
              gim[k] += static_cast<T>(c * spec[k].imag());
            }
          }
      });
}

template Tensor<float> stft_tensor<float>(const Tensor<float>&, const StftConfig&);
template Tensor<double> stft_tensor<double>(const Tensor<double>&, const StftConfig&);
template Tensor<float> istft_tensor<float>(const Tensor<float>&, const StftConfig&);
template Tensor<double> istft_tensor<double>(const Tensor<double>&, const StftConfig&);

// ---- streaming --------------------------------------------------------------

StftStream::StftStream(const StftConfig& cfg)
    : cfg_(cfg), window_(make_window(cfg.analysis, cfg.window_len)) {
  cfg_.validate();
  fft_ = std::make_unique<RealFft>(cfg_.fft_size);
  buffer_.reserve(cfg_.window_len + cfg_.hop);
}
StftStream::~StftStream() = default;
StftStream::StftStream(StftStream&&) noexcept = default;
StftStream& StftStream::operator=(StftStream&&) noexcept = default;

std::optional<SpectrumFrame> StftStream::push(std::span<const float> chunk) {
  if (static_cast<int>(chunk.size()) != cfg_.hop)
    throw ShapeError("stream_push: chunk of " + std::to_string(chunk.size()) + " samples, expected " +
                     std::to_string(cfg_.hop));
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
  seen_ += cfg_.hop;
  if (static_cast<int>(buffer_.size()) < cfg_.window_len) return std::nullopt;
  std::vector<double> frame(cfg_.window_len);
  std::vector<cplx> spec(cfg_.bins());
  analyze_frame(*fft_, window_, buffer_.data(), frame, spec);
  SpectrumFrame out{std::vector<float>(cfg_.bins()), std::vector<float>(cfg_.bins())};
  for (int k = 0; k < cfg_.bins(); ++k) {
    out.real[k] = static_cast<float>(spec[k].real());
    out.imag[k] = static_cast<float>(spec[k].imag());
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + cfg_.hop);
  ++emitted_;
  return out;
}

void StftStream::reset() {
  buffer_.clear();
  seen_ = 0;
  emitted_ = 0;
}

IstftStream::IstftStream(const StftConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  auto syn = make_synthesis(cfg_, make_window(cfg_.analysis, cfg_.window_len));
  synth_ = std::move(syn.weight);
  envelope_weight_ = std::move(syn.envelope);
  env_.assign(cfg_.window_len, 0.0);
  acc_.assign(cfg_.window_len, 0.0);
  fft_ = std::make_unique<RealFft>(cfg_.fft_size);
}
IstftStream::~IstftStream() = default;
IstftStream::IstftStream(IstftStream&&) noexcept = default;
IstftStream& IstftStream::operator=(IstftStream&&) noexcept = default;

std::vector<float> IstftStream::push(const SpectrumFrame& frame) {
  if (static_cast<int>(frame.real.size()) != cfg_.bins() || frame.imag.size() != frame.real.size())
    throw ShapeError("istft stream: frame has " + std::to_string(frame.real.size()) + " bins, expected " +
                     std::to_string(cfg_.bins()));
  std::vector<cplx> spec(cfg_.bins());
  for (int k = 0; k < cfg_.bins(); ++k) spec[k] = {frame.real[k], frame.imag[k]};
  std::vector<double> samples(cfg_.fft_size);
  fft_->inverse(spec, samples);
  const double scale = 1.0 / cfg_.fft_size;
  for (int m = 0; m < cfg_.window_len; ++m) {
    acc_[m] += synth_[m] * samples[m] * scale;
    env_[m] += envelope_weight_[m];
  }
  return finalize(cfg_.hop);
}

std::vector<float> IstftStream::flush() {
  auto out = finalize(cfg_.window_len - cfg_.hop);
  std::fill(acc_.begin(), acc_.end(), 0.0);
  std::fill(env_.begin(), env_.end(), 0.0);
  return out;
}

std::vector<float> IstftStream::finalize(std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = static_cast<float>(acc_[i] * (1.0 / std::max(env_[i], cfg_.envelope_floor)));
  std::move(acc_.begin() + count, acc_.end(), acc_.begin());
  std::fill(acc_.end() - count, acc_.end(), 0.0);
  std::move(env_.begin() + count, env_.end(), env_.begin());
  std::fill(env_.end() - count, env_.end(), 0.0);
  return out;
}

}  // namespace selab::dsp
