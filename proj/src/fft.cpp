#include "fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "selab/error.hpp"

namespace selab::dsp {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
  if (n < 2 || n % 2 != 0) throw ConfigError("fft size must be even and >= 2, got " + std::to_string(n));
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(n);
  spec_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(n / 2 + 1));
  auto* spec = reinterpret_cast<fftw_complex*>(spec_);
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spec, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spec, real_, FFTW_ESTIMATE);
  if (!forward_plan_ || !inverse_plan_) throw Error("FFTW planning failed for size " + std::to_string(n));
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  if (forward_plan_) fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  if (inverse_plan_) fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(real_);
  fftw_free(spec_);
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  std::copy(in.begin(), in.end(), real_);
  std::fill(real_ + in.size(), real_ + n_, 0.0);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  std::copy(spec_, spec_ + bins(), out.begin());
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  std::copy(in.begin(), in.begin() + bins(), spec_);
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  std::copy(real_, real_ + n_, out.begin());
}

}  // namespace selab::dsp
