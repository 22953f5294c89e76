#include "selab/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "selab/error.hpp"

namespace selab {

template <typename T>
GradCheckResult check_gradients(
    const std::string& name,
    const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& fn,
    std::vector<Tensor<T>> inputs, double step, double tolerance) {
  auto start = std::chrono::steady_clock::now();
  for (auto& in : inputs) in.clear_grad();
  Tensor<T> loss = fn(inputs);
  backward(loss);

  GradCheckResult result;
  result.name = name;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    std::vector<double> numeric(in.numel(), 0.0);
    auto data = in.mutable_data();
    {
      NoGradGuard no_grad;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const T saved = data[i];
        data[i] = static_cast<T>(saved + step);
        const double plus = fn(inputs).item();
        data[i] = static_cast<T>(saved - step);
        const double minus = fn(inputs).item();
        data[i] = saved;
        numeric[i] = (plus - minus) / (2.0 * step);
      }
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    const double rel = std::sqrt(diff) / denom;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    in.clear_grad();
  }
  result.passed = std::isfinite(result.max_rel_error) && result.max_rel_error < tolerance;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template GradCheckResult check_gradients<float>(
    const std::string&,
    const std::function<Tensor<float>(const std::vector<Tensor<float>>&)>&,
    std::vector<Tensor<float>>, double, double);
template GradCheckResult check_gradients<double>(
    const std::string&,
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>&,
    std::vector<Tensor<double>>, double, double);

}  // namespace selab
