#pragma once

#include <complex>
#include <span>

namespace selab::dsp {

// Real-input FFT of fixed even size backed by FFTW (double precision).
// Plan creation is serialized; execution is reentrant across instances.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  // Unnormalized forward transform; writes bins() values.
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  // Unnormalized Hermitian inverse; imaginary parts of DC and Nyquist are
  // ignored. Writes size() values.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

 private:
  int n_;
  double* real_ = nullptr;
  std::complex<double>* spec_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

}  // namespace selab::dsp
