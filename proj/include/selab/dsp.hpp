#pragma once

// Short-time Fourier analysis and synthesis, offline and frame-push streaming.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "selab/tensor.hpp"

namespace selab::dsp {

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WindowType { Hann, Hamming, Rectangular };

enum class SynthesisType {
  // sum(w * frame) / sum(w^2): exact inverse wherever the envelope is above the floor.
  LeastSquares,
  // sum(frame) / sum(w): only exact for windows that satisfy constant overlap-add.
  OverlapAdd,
};

struct StftConfig {
  int window_len = 400;
  int hop = 320;
  int fft_size = 512;
  WindowType analysis = WindowType::Hann;
  SynthesisType synthesis = SynthesisType::LeastSquares;
  // Synthesis envelope values below this are clamped, which bounds the
  // amplification at the first and last few samples.
  double envelope_floor = 1e-2;

  int bins() const { return fft_size / 2 + 1; }
  // Throws ConfigError unless 0 < hop <= window_len <= fft_size.
  void validate() const;
};

std::vector<double> make_window(WindowType type, int length);

// floor((n - window_len) / hop) + 1, or 0 when n < window_len.
std::int64_t frame_count(std::int64_t n, const StftConfig& cfg);
// Number of samples covered by `frames` frames.
std::int64_t signal_length(std::int64_t frames, const StftConfig& cfg);

struct ComplexSpectrogram {
  std::int64_t frames = 0;
  std::int64_t bins = 0;
  std::vector<float> real;  // frames x bins, row-major
  std::vector<float> imag;

  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::int64_t frames, std::int64_t bins);

  float re(std::int64_t t, std::int64_t k) const { return real[t * bins + k]; }
  float im(std::int64_t t, std::int64_t k) const { return imag[t * bins + k]; }
  double magnitude(std::int64_t t, std::int64_t k) const;
};

ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg = {});
ComplexSpectrogram stft(std::span<const float> samples, const StftConfig& cfg = {});
Waveform istft(const ComplexSpectrogram& s, const StftConfig& cfg = {},
               int sample_rate = 16000);

// [1, 2, T, F] with channel 0 real and channel 1 imaginary, and back.
Tensor<float> to_tensor(const ComplexSpectrogram& s);
ComplexSpectrogram from_tensor(const Tensor<float>& t, std::int64_t batch_index = 0);

// Differentiable transforms over batches. stft_tensor maps [B, N] to
// [B, 2, T, F]; istft_tensor maps [B, 2, T, F] to [B, (T-1)*hop + window_len].
template <typename T>
Tensor<T> stft_tensor(const Tensor<T>& wave, const StftConfig& cfg = {});
template <typename T>
Tensor<T> istft_tensor(const Tensor<T>& spec, const StftConfig& cfg = {});

struct SpectrumFrame {
  std::vector<float> real;
  std::vector<float> imag;
};

class RealFft;

// Frame-push analysis. Each push takes exactly `hop` samples and yields the
// next frame once `window_len` samples have been seen.
class StftStream {
 public:
  explicit StftStream(const StftConfig& cfg = {});
  ~StftStream();
  StftStream(StftStream&&) noexcept;
  StftStream& operator=(StftStream&&) noexcept;

  std::optional<SpectrumFrame> push(std::span<const float> chunk);
  std::int64_t samples_seen() const { return seen_; }
  std::int64_t frames_emitted() const { return emitted_; }
  void reset();

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  std::vector<float> buffer_;  // samples [emitted_ * hop, seen_)
  std::int64_t seen_ = 0;
  std::int64_t emitted_ = 0;
  std::unique_ptr<RealFft> fft_;
};

// Frame-push synthesis. Each pushed frame finalizes `hop` output samples;
// flush() returns the tail. The concatenated output equals the offline istft.
class IstftStream {
 public:
  explicit IstftStream(const StftConfig& cfg = {});
  ~IstftStream();
  IstftStream(IstftStream&&) noexcept;
  IstftStream& operator=(IstftStream&&) noexcept;

  std::vector<float> push(const SpectrumFrame& frame);
  std::vector<float> flush();

 private:
  std::vector<float> finalize(std::size_t count);

  StftConfig cfg_;
  std::vector<double> synth_;    // per-sample synthesis weight applied to each frame
  std::vector<double> acc_;      // accumulators for the pending window
  std::vector<double> env_;
  std::vector<double> envelope_weight_;
  std::unique_ptr<RealFft> fft_;
};

}  // namespace selab::dsp
