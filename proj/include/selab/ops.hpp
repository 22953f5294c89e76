#pragma once

// Differentiable operations. Elementwise binary ops require identical
// shapes; the only broadcast is scalar-by-tensor (the *_scalar ops) plus the
// explicit row scaling in mul_rows. Image-like tensors use the layout
// [batch, channels, time, freq].

#include <vector>

#include "selab/tensor.hpp"

namespace selab::ops {

// Convolution geometry. Time and frequency are the last two axes.
// Causal convolution uses pad_t_front = kernel_t - 1, pad_t_back = 0.
struct Conv2dGeometry {
  int stride_t = 1;
  int stride_f = 1;
  int pad_t_front = 0;
  int pad_t_back = 0;
  int pad_f_front = 0;
  int pad_f_back = 0;
};

// Transposed convolution: the full output of size (in - 1) * stride + kernel
// is cropped by crop_*_front / crop_*_back and extended by output_pad_*.
// With crops equal to a Conv2dGeometry's pads it is that conv's adjoint.
struct ConvTranspose2dGeometry {
  int stride_t = 1;
  int stride_f = 1;
  int crop_t_front = 0;
  int crop_t_back = 0;
  int crop_f_front = 0;
  int crop_f_back = 0;
  int output_pad_t = 0;
  int output_pad_f = 0;
};

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
// x[..., n] * s[...] for every trailing row.
template <typename T> Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);
template <typename T> Tensor<T> elu(const Tensor<T>& x, T alpha = T(1));
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.1));
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
// sqrt(x + eps)
template <typename T> Tensor<T> sqrt(const Tensor<T>& x, T eps = T(0));
// log(x + eps)
template <typename T> Tensor<T> log(const Tensor<T>& x, T eps = T(0));
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
// Softmax over the last axis (max-shifted, so the denominator is >= 1).
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

// [m, k] x [k, n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias);

// x[N, Cin, T, F], weight[Cout, Cin, KT, KF], bias[Cout] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dGeometry& geometry);
// x[N, Cin, T, F], weight[Cin, Cout, KT, KF], bias[Cout] (may be undefined).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias,
                           const ConvTranspose2dGeometry& geometry);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
// Elements [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t begin,
                std::int64_t end);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order);
// Each element along axis repeated `factor` times: [a, b] -> [a, a, b, b].
template <typename T>
Tensor<T> repeat_interleave(const Tensor<T>& x, int axis, int factor);
// Crops to `size` along axis, or extends by repeating the last element.
template <typename T>
Tensor<T> resize_edge(const Tensor<T>& x, int axis, std::int64_t size);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Reductions that drop `axis`.
template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis);

// Norms over the last axis: result drops that axis.
template <typename T> Tensor<T> l1_norm_last(const Tensor<T>& x);
// sqrt(sum x^2 + eps)
template <typename T> Tensor<T> l2_norm_last(const Tensor<T>& x, T eps = T(1e-8));
// <a, b> / (|a| |b| + eps) over the last axis.
template <typename T>
Tensor<T> cosine_similarity_last(const Tensor<T>& a, const Tensor<T>& b,
                                 T eps = T(1e-8));

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// Output sizes, exposed for layer construction and shape checks.
std::int64_t conv_out_size(std::int64_t in, int kernel, int stride,
                           int pad_front, int pad_back);
std::int64_t conv_transpose_out_size(std::int64_t in, int kernel, int stride,
                                     int crop_front, int crop_back,
                                     int output_pad);

}  // namespace selab::ops
