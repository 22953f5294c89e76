#pragma once

// Central finite-difference verification of analytic gradients.

#include <functional>
#include <string>
#include <vector>

#include "selab/tensor.hpp"

namespace selab {

struct GradCheckResult {
  std::string name;
  // max over inputs of |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)
  double max_rel_error = 0;
  double seconds = 0;
  bool passed = false;
};

// `fn` maps the inputs to a scalar loss. Every input with requires_grad is
// perturbed elementwise by +-step. Relative error is measured per input
// tensor as a vector norm ratio (tiny gradients are compared absolutely
// below 1e-12 to avoid dividing by zero).
template <typename T>
GradCheckResult check_gradients(
    const std::string& name,
    const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& fn,
    std::vector<Tensor<T>> inputs, double step, double tolerance);

// The full suite over every differentiable op, every loss and composed
// GCRN paths, in double precision with tolerance 1e-5. Single ops use step
// 1e-5 and whole networks step 1e-4.
std::vector<GradCheckResult> run_gradcheck_suite(unsigned seed = 7);

extern template GradCheckResult check_gradients<float>(
    const std::string&,
    const std::function<Tensor<float>(const std::vector<Tensor<float>>&)>&,
    std::vector<Tensor<float>>, double, double);
extern template GradCheckResult check_gradients<double>(
    const std::string&,
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>&,
    std::vector<Tensor<double>>, double, double);

}  // namespace selab
