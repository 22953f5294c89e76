#include "selab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "selab/error.hpp"

namespace selab::ops {

namespace {

template <typename T>
Node<T>* grad_target(Node<T>& out, std::size_t i) {
  Node<T>* p = out.parents[i].get();
  return (p && p->requires_grad) ? p : nullptr;
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

int normalize_axis(const char* op, int axis, int rank) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// outer * axis * inner decomposition around one axis.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Applies f elementwise and records dx = g * df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  std::vector<T> y(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  return detail::record<T>(x.shape(), std::move(y), name, {x},
                           [df](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* gx = p->grad_buffer();
                             const auto& xv = p->data;
                             for (std::size_t i = 0; i < out.data.size(); ++i) {
                               gx[i] += out.grad[i] * df(xv[i], out.data[i]);
                             }
                           });
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, int kernel, int stride,
                           int pad_front, int pad_back) {
  std::int64_t span = in + pad_front + pad_back - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

std::int64_t conv_transpose_out_size(std::int64_t in, int kernel, int stride,
                                     int crop_front, int crop_back,
                                     int output_pad) {
  return (in - 1) * stride + kernel - crop_front - crop_back + output_pad;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] + bd[i];
  return detail::record<T>(a.shape(), std::move(y), "add", {a, b},
                           [](Node<T>& out) {
                             for (std::size_t k = 0; k < 2; ++k) {
                               if (Node<T>* p = grad_target(out, k)) {
                                 T* g = p->grad_buffer();
                                 for (std::size_t i = 0; i < out.grad.size(); ++i)
                                   g[i] += out.grad[i];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] - bd[i];
  return detail::record<T>(a.shape(), std::move(y), "sub", {a, b},
                           [](Node<T>& out) {
                             if (Node<T>* p = grad_target(out, 0)) {
                               T* g = p->grad_buffer();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 g[i] += out.grad[i];
                             }
                             if (Node<T>* p = grad_target(out, 1)) {
                               T* g = p->grad_buffer();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                 g[i] -= out.grad[i];
                             }
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * bd[i];
  return detail::record<T>(
      a.shape(), std::move(y), "mul", {a, b}, [](Node<T>& out) {
        const auto& av = out.parents[0]->data;
        const auto& bv = out.parents[1]->data;
        if (Node<T>* p = grad_target(out, 0)) {
          T* g = p->grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * bv[i];
        }
        if (Node<T>* p = grad_target(out, 1)) {
          T* g = p->grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * av[i];
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("div", a, b);
  std::vector<T> y(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] / bd[i];
  return detail::record<T>(
      a.shape(), std::move(y), "div", {a, b}, [](Node<T>& out) {
        const auto& bv = out.parents[1]->data;
        if (Node<T>* p = grad_target(out, 0)) {
          T* g = p->grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] / bv[i];
        }
        if (Node<T>* p = grad_target(out, 1)) {
          T* g = p->grad_buffer();
          for (std::size_t i = 0; i < out.grad.size(); ++i)
            g[i] -= out.grad[i] * out.data[i] / bv[i];
        }
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T v) { return v + s; },
                  [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T v) { return v * s; },
                  [s](T, T) { return s; });
}

template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.rank() < 1) throw ShapeError("mul_rows: x must have rank >= 1");
  Shape rows(x.shape().begin(), x.shape().end() - 1);
  if (s.shape() != rows) {
    throw ShapeError("mul_rows: scale shape " + to_string(s.shape()) +
                     " does not match rows of " + to_string(x.shape()));
  }
  const std::int64_t n = x.dim(-1);
  const std::int64_t r = s.numel();
  std::vector<T> y(x.numel());
  auto xd = x.data(), sd = s.data();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < n; ++j) y[i * n + j] = xd[i * n + j] * sd[i];
  return detail::record<T>(
      x.shape(), std::move(y), "mul_rows", {x, s}, [n, r](Node<T>& out) {
        const auto& xv = out.parents[0]->data;
        const auto& sv = out.parents[1]->data;
        if (Node<T>* p = grad_target(out, 0)) {
          T* g = p->grad_buffer();
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < n; ++j) g[i * n + j] += out.grad[i * n + j] * sv[i];
        }
        if (Node<T>* p = grad_target(out, 1)) {
          T* g = p->grad_buffer();
          for (std::int64_t i = 0; i < r; ++i) {
            T acc = 0;
            for (std::int64_t j = 0; j < n; ++j) acc += out.grad[i * n + j] * xv[i * n + j];
            g[i] += acc;
          }
        }
      });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> elu(const Tensor<T>& x, T alpha) {
  return unary<T>(
      "elu", x, [alpha](T v) { return v > 0 ? v : alpha * std::expm1(v); },
      [alpha](T v, T y) { return v > 0 ? T(1) : y + alpha; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary<T>("leaky_relu", x,
                  [slope](T v) { return v > 0 ? v : slope * v; },
                  [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>("abs", x, [](T v) { return std::abs(v); },
                  [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary<T>("square", x, [](T v) { return v * v; },
                  [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x, T eps) {
  return unary<T>("sqrt", x, [eps](T v) { return std::sqrt(v + eps); },
                  [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x, T eps) {
  return unary<T>("log", x, [eps](T v) { return std::log(v + eps); },
                  [eps](T v, T) { return T(1) / (v + eps); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary<T>("clamp", x,
                  [lo, hi](T v) { return std::clamp(v, lo, hi); },
                  [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: needs rank >= 1");
  const std::int64_t n = x.dim(-1);
  const std::int64_t rows = n ? x.numel() / n : 0;
  std::vector<T> y(x.numel());
  auto xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * n;
    T* yr = y.data() + r * n;
    T mx = *std::max_element(xr, xr + n);
    T s = 0;
    for (std::int64_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (std::int64_t j = 0; j < n; ++j) yr[j] /= s;
  }
  return detail::record<T>(x.shape(), std::move(y), "softmax", {x},
                           [n, rows](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::int64_t r = 0; r < rows; ++r) {
                               const T* yr = out.data.data() + r * n;
                               const T* gr = out.grad.data() + r * n;
                               T dot = 0;
                               for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                               for (std::int64_t j = 0; j < n; ++j)
                                 g[r * n + j] += yr[j] * (gr[j] - dot);
                             }
                           });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) +
                     " by " + to_string(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> y(m * n, T(0));
  auto ad = a.data(), bd = b.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      T av = ad[i * k + p];
      for (std::int64_t j = 0; j < n; ++j) y[i * n + j] += av * bd[p * n + j];
    }
  return detail::record<T>(
      {m, n}, std::move(y), "matmul", {a, b}, [m, k, n](Node<T>& out) {
        const auto& av = out.parents[0]->data;
        const auto& bv = out.parents[1]->data;
        const auto& g = out.grad;
        if (Node<T>* p = grad_target(out, 0)) {
          T* ga = p->grad_buffer();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t q = 0; q < k; ++q) {
              T acc = 0;
              for (std::int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[q * n + j];
              ga[i * k + q] += acc;
            }
        }
        if (Node<T>* p = grad_target(out, 1)) {
          T* gb = p->grad_buffer();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t q = 0; q < k; ++q) {
              T av_iq = av[i * k + q];
              for (std::int64_t j = 0; j < n; ++j) gb[q * n + j] += av_iq * g[i * n + j];
            }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  const std::int64_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  const std::int64_t rows = in ? x.numel() / in : 0;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<T> y(rows * out_dim);
  auto xd = x.data(), wd = weight.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * in;
    for (std::int64_t o = 0; o < out_dim; ++o) {
      const T* wr = wd.data() + o * in;
      T acc = bias.defined() ? bias.data()[o] : T(0);
      for (std::int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      y[r * out_dim + o] = acc;
    }
  }
  return detail::record<T>(
      std::move(shape), std::move(y), "linear", {x, weight, bias},
      [rows, in, out_dim](Node<T>& out) {
        const auto& xv = out.parents[0]->data;
        const auto& wv = out.parents[1]->data;
        const auto& g = out.grad;
        if (Node<T>* p = grad_target(out, 0)) {
          T* gx = p->grad_buffer();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < out_dim; ++o) {
              T go = g[r * out_dim + o];
              if (go == T(0)) continue;
              const T* wr = wv.data() + o * in;
              T* gxr = gx + r * in;
              for (std::int64_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
            }
        }
        if (Node<T>* p = grad_target(out, 1)) {
          T* gw = p->grad_buffer();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < out_dim; ++o) {
              T go = g[r * out_dim + o];
              if (go == T(0)) continue;
              const T* xr = xv.data() + r * in;
              T* gwr = gw + o * in;
              for (std::int64_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
            }
        }
        if (Node<T>* p = grad_target(out, 2)) {
          T* gb = p->grad_buffer();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
        }
      });
}

namespace {

// Dimensions of a convolution seen from its "narrow" (output) side:
// out[n, co, t, f] = sum w[co, ci, i, j] * in[n, ci, t*st + i - pt, f*sf + j - pf]
struct ConvDims {
  std::int64_t n, ci, ti, fi, co, to, fo, kt, kf;
  int st, sf, pt, pf;
};

// Range of output positions o with 0 <= o*stride + k - pad < in_size.
inline void valid_range(std::int64_t out_size, std::int64_t in_size, int stride,
                        int k, int pad, std::int64_t& lo, std::int64_t& hi) {
  std::int64_t off = k - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  std::int64_t last = in_size - 1 - off;
  hi = last < 0 ? -1 : std::min<std::int64_t>(out_size - 1, last / stride);
}

template <typename T>
void conv_forward(const ConvDims& d, const T* x, const T* w, T* y) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.co; ++co) {
      T* yc = y + (n * d.co + co) * d.to * d.fo;
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        const T* xc = x + (n * d.ci + ci) * d.ti * d.fi;
        const T* wc = w + (co * d.ci + ci) * d.kt * d.kf;
        for (int i = 0; i < d.kt; ++i) {
          std::int64_t t_lo, t_hi;
          valid_range(d.to, d.ti, d.st, i, d.pt, t_lo, t_hi);
          for (int j = 0; j < d.kf; ++j) {
            std::int64_t f_lo, f_hi;
            valid_range(d.fo, d.fi, d.sf, j, d.pf, f_lo, f_hi);
            const T wv = wc[i * d.kf + j];
            for (std::int64_t t = t_lo; t <= t_hi; ++t) {
              const T* xr = xc + (t * d.st + i - d.pt) * d.fi + (j - d.pf);
              T* yr = yc + t * d.fo;
              if (d.sf == 1) {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) yr[f] += wv * xr[f];
              } else {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) yr[f] += wv * xr[f * d.sf];
              }
            }
          }
        }
      }
    }
}

// dx += conv^T(dy)
template <typename T>
void conv_backward_input(const ConvDims& d, const T* dy, const T* w, T* dx) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.co; ++co) {
      const T* gc = dy + (n * d.co + co) * d.to * d.fo;
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        T* xc = dx + (n * d.ci + ci) * d.ti * d.fi;
        const T* wc = w + (co * d.ci + ci) * d.kt * d.kf;
        for (int i = 0; i < d.kt; ++i) {
          std::int64_t t_lo, t_hi;
          valid_range(d.to, d.ti, d.st, i, d.pt, t_lo, t_hi);
          for (int j = 0; j < d.kf; ++j) {
            std::int64_t f_lo, f_hi;
            valid_range(d.fo, d.fi, d.sf, j, d.pf, f_lo, f_hi);
            const T wv = wc[i * d.kf + j];
            for (std::int64_t t = t_lo; t <= t_hi; ++t) {
              T* xr = xc + (t * d.st + i - d.pt) * d.fi + (j - d.pf);
              const T* gr = gc + t * d.fo;
              if (d.sf == 1) {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) xr[f] += wv * gr[f];
              } else {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) xr[f * d.sf] += wv * gr[f];
              }
            }
          }
        }
      }
    }
}

// dw += sum x * dy
template <typename T>
void conv_backward_weight(const ConvDims& d, const T* x, const T* dy, T* dw) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t co = 0; co < d.co; ++co) {
      const T* gc = dy + (n * d.co + co) * d.to * d.fo;
      for (std::int64_t ci = 0; ci < d.ci; ++ci) {
        const T* xc = x + (n * d.ci + ci) * d.ti * d.fi;
        T* wc = dw + (co * d.ci + ci) * d.kt * d.kf;
        for (int i = 0; i < d.kt; ++i) {
          std::int64_t t_lo, t_hi;
          valid_range(d.to, d.ti, d.st, i, d.pt, t_lo, t_hi);
          for (int j = 0; j < d.kf; ++j) {
            std::int64_t f_lo, f_hi;
            valid_range(d.fo, d.fi, d.sf, j, d.pf, f_lo, f_hi);
            T acc = 0;
            for (std::int64_t t = t_lo; t <= t_hi; ++t) {
              const T* xr = xc + (t * d.st + i - d.pt) * d.fi + (j - d.pf);
              const T* gr = gc + t * d.fo;
              if (d.sf == 1) {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) acc += xr[f] * gr[f];
              } else {
                for (std::int64_t f = f_lo; f <= f_hi; ++f) acc += xr[f * d.sf] * gr[f];
              }
            }
            wc[i * d.kf + j] += acc;
          }
        }
      }
    }
}

// Bias over [N, C, T, F].
template <typename T>
void add_channel_bias(const T* b, std::int64_t n, std::int64_t c,
                      std::int64_t plane, T* y) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      T* yc = y + (i * c + k) * plane;
      for (std::int64_t p = 0; p < plane; ++p) yc[p] += b[k];
    }
}

template <typename T>
void channel_bias_grad(const T* g, std::int64_t n, std::int64_t c,
                       std::int64_t plane, T* gb) {
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      const T* gc = g + (i * c + k) * plane;
      T acc = 0;
      for (std::int64_t p = 0; p < plane; ++p) acc += gc[p];
      gb[k] += acc;
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dGeometry& g) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  if (g.stride_t < 1 || g.stride_f < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvDims d{};
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.ti = x.dim(2);
  d.fi = x.dim(3);
  d.co = weight.dim(0);
  d.kt = weight.dim(2);
  d.kf = weight.dim(3);
  d.st = g.stride_t;
  d.sf = g.stride_f;
  d.pt = g.pad_t_front;
  d.pf = g.pad_f_front;
  d.to = conv_out_size(d.ti, d.kt, d.st, g.pad_t_front, g.pad_t_back);
  d.fo = conv_out_size(d.fi, d.kf, d.sf, g.pad_f_front, g.pad_f_back);
  if (d.to <= 0 || d.fo <= 0) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) +
                     " too small for weight " + to_string(weight.shape()));
  }
  std::vector<T> y(d.n * d.co * d.to * d.fo, T(0));
  conv_forward(d, x.data().data(), weight.data().data(), y.data());
  if (bias.defined()) add_channel_bias(bias.data().data(), d.n, d.co, d.to * d.fo, y.data());
  return detail::record<T>(
      {d.n, d.co, d.to, d.fo}, std::move(y), "conv2d", {x, weight, bias},
      [d](Node<T>& out) {
        const auto& xv = out.parents[0]->data;
        const auto& wv = out.parents[1]->data;
        if (Node<T>* p = grad_target(out, 0))
          conv_backward_input(d, out.grad.data(), wv.data(), p->grad_buffer());
        if (Node<T>* p = grad_target(out, 1))
          conv_backward_weight(d, xv.data(), out.grad.data(), p->grad_buffer());
        if (Node<T>* p = grad_target(out, 2))
          channel_bias_grad(out.grad.data(), d.n, d.co, d.to * d.fo, p->grad_buffer());
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias,
                           const ConvTranspose2dGeometry& g) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(0)) {
    throw ShapeError("conv_transpose2d: input " + to_string(x.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1))) {
    throw ShapeError("conv_transpose2d: bias " + to_string(bias.shape()) +
                     " incompatible with weight " + to_string(weight.shape()));
  }
  if (g.stride_t < 1 || g.stride_f < 1)
    throw ShapeError("conv_transpose2d: stride must be >= 1");
  if (g.output_pad_t >= g.stride_t || g.output_pad_f >= g.stride_f) {
    throw ShapeError("conv_transpose2d: output padding must be smaller than stride");
  }
  // Seen as the adjoint of a conv whose output is x and whose input is y.
  ConvDims d{};
  d.n = x.dim(0);
  d.co = x.dim(1);
  d.to = x.dim(2);
  d.fo = x.dim(3);
  d.ci = weight.dim(1);
  d.kt = weight.dim(2);
  d.kf = weight.dim(3);
  d.st = g.stride_t;
  d.sf = g.stride_f;
  d.pt = g.crop_t_front;
  d.pf = g.crop_f_front;
  d.ti = conv_transpose_out_size(d.to, d.kt, d.st, g.crop_t_front, g.crop_t_back,
                                 g.output_pad_t);
  d.fi = conv_transpose_out_size(d.fo, d.kf, d.sf, g.crop_f_front, g.crop_f_back,
                                 g.output_pad_f);
  if (d.ti <= 0 || d.fi <= 0) {
    throw ShapeError("conv_transpose2d: crop leaves no output for input " +
                     to_string(x.shape()));
  }
  std::vector<T> y(d.n * d.ci * d.ti * d.fi, T(0));
  conv_backward_input(d, x.data().data(), weight.data().data(), y.data());
  if (bias.defined()) add_channel_bias(bias.data().data(), d.n, d.ci, d.ti * d.fi, y.data());
  return detail::record<T>(
      {d.n, d.ci, d.ti, d.fi}, std::move(y), "conv_transpose2d",
      {x, weight, bias}, [d](Node<T>& out) {
        const auto& xv = out.parents[0]->data;
        const auto& wv = out.parents[1]->data;
        if (Node<T>* p = grad_target(out, 0))
          conv_forward(d, out.grad.data(), wv.data(), p->grad_buffer());
        if (Node<T>* p = grad_target(out, 1))
          conv_backward_weight(d, out.grad.data(), xv.data(), p->grad_buffer());
        if (Node<T>* p = grad_target(out, 2))
          channel_bias_grad(out.grad.data(), d.n, d.ci, d.ti * d.fi, p->grad_buffer());
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int rank = xs[0].rank();
  const int a = normalize_axis("concat", axis, rank);
  Shape shape = xs[0].shape();
  std::vector<std::int64_t> extents;
  std::int64_t total = 0;
  for (const auto& t : xs) {
    bool ok = t.rank() == rank;
    for (int i = 0; ok && i < rank; ++i)
      if (i != a && t.shape()[i] != shape[i]) ok = false;
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + to_string(xs[0].shape()) +
                       " vs " + to_string(t.shape()) + " along axis " +
                       std::to_string(a));
    }
    extents.push_back(t.shape()[a]);
    total += t.shape()[a];
  }
  shape[a] = total;
  AxisSplit s = split_at(shape, a);
  std::vector<T> y(numel(shape));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto xd = xs[k].data();
    const std::int64_t chunk = extents[k] * s.inner;
    for (std::int64_t o = 0; o < s.outer; ++o)
      std::copy_n(xd.data() + o * chunk, chunk, y.data() + o * total * s.inner + offset);
    offset += chunk;
  }
  return detail::record<T>(shape, std::move(y), "concat", xs,
                           [s, total, extents](Node<T>& out) {
                             std::int64_t offset = 0;
                             for (std::size_t k = 0; k < extents.size(); ++k) {
                               const std::int64_t chunk = extents[k] * s.inner;
                               if (Node<T>* p = grad_target(out, k)) {
                                 T* g = p->grad_buffer();
                                 for (std::int64_t o = 0; o < s.outer; ++o) {
                                   const T* src = out.grad.data() + o * total * s.inner + offset;
                                   for (std::int64_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                 }
                               }
                               offset += chunk;
                             }
                           });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t begin,
                std::int64_t end) {
  const int a = normalize_axis("slice", axis, x.rank());
  if (begin < 0 || end > x.shape()[a] || begin > end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for axis " +
                     std::to_string(a) + " of " + to_string(x.shape()));
  }
  AxisSplit s = split_at(x.shape(), a);
  Shape shape = x.shape();
  shape[a] = end - begin;
  const std::int64_t chunk = (end - begin) * s.inner;
  const std::int64_t stride = s.extent * s.inner;
  const std::int64_t off = begin * s.inner;
  std::vector<T> y(numel(shape));
  auto xd = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.data() + o * stride + off, chunk, y.data() + o * chunk);
  return detail::record<T>(shape, std::move(y), "slice", {x},
                           [s, chunk, stride, off](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::int64_t o = 0; o < s.outer; ++o) {
                               const T* src = out.grad.data() + o * chunk;
                               T* dst = g + o * stride + off;
                               for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                             }
                           });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " +
                     to_string(shape));
  }
  std::vector<T> y(x.data().begin(), x.data().end());
  return detail::record<T>(std::move(shape), std::move(y), "reshape", {x},
                           [](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                           });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order) {
  const int rank = x.rank();
  std::vector<int> seen(rank, 0);
  bool ok = static_cast<int>(order.size()) == rank;
  for (int i = 0; ok && i < rank; ++i) {
    if (order[i] < 0 || order[i] >= rank || seen[order[i]]++) ok = false;
  }
  if (!ok) throw ShapeError("permute: invalid axis order for " + to_string(x.shape()));
  Shape shape(rank);
  std::vector<std::int64_t> in_strides(rank, 1), src_stride(rank);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  for (int i = 0; i < rank; ++i) {
    shape[i] = x.shape()[order[i]];
    src_stride[i] = in_strides[order[i]];
  }
  // Flat source index for each destination index, computed once.
  const std::int64_t n = x.numel();
  auto index = std::make_shared<std::vector<std::int64_t>>(n);
  std::vector<std::int64_t> counter(rank, 0);
  std::int64_t src = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    (*index)[k] = src;
    for (int i = rank - 1; i >= 0; --i) {
      src += src_stride[i];
      if (++counter[i] < shape[i]) break;
      src -= src_stride[i] * shape[i];
      counter[i] = 0;
    }
  }
  std::vector<T> y(n);
  auto xd = x.data();
  for (std::int64_t k = 0; k < n; ++k) y[k] = xd[(*index)[k]];
  return detail::record<T>(shape, std::move(y), "permute", {x},
                           [index](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::size_t k = 0; k < index->size(); ++k)
                               g[(*index)[k]] += out.grad[k];
                           });
}

template <typename T>
Tensor<T> repeat_interleave(const Tensor<T>& x, int axis, int factor) {
  const int a = normalize_axis("repeat_interleave", axis, x.rank());
  if (factor < 1) throw ShapeError("repeat_interleave: factor must be >= 1");
  AxisSplit s = split_at(x.shape(), a);
  Shape shape = x.shape();
  shape[a] *= factor;
  std::vector<T> y(numel(shape));
  auto xd = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t e = 0; e < s.extent; ++e)
      for (int r = 0; r < factor; ++r)
        std::copy_n(xd.data() + (o * s.extent + e) * s.inner, s.inner,
                    y.data() + ((o * s.extent + e) * factor + r) * s.inner);
  return detail::record<T>(shape, std::move(y), "repeat_interleave", {x},
                           [s, factor](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::int64_t o = 0; o < s.outer; ++o)
                               for (std::int64_t e = 0; e < s.extent; ++e)
                                 for (int r = 0; r < factor; ++r) {
                                   const T* src = out.grad.data() +
                                                  ((o * s.extent + e) * factor + r) * s.inner;
                                   T* dst = g + (o * s.extent + e) * s.inner;
                                   for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                                 }
                           });
}

template <typename T>
Tensor<T> resize_edge(const Tensor<T>& x, int axis, std::int64_t size) {
  const int a = normalize_axis("resize_edge", axis, x.rank());
  AxisSplit s = split_at(x.shape(), a);
  if (size < 1 || s.extent < 1) throw ShapeError("resize_edge: empty axis");
  Shape shape = x.shape();
  shape[a] = size;
  std::vector<T> y(numel(shape));
  auto xd = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t e = 0; e < size; ++e)
      std::copy_n(xd.data() + (o * s.extent + std::min(e, s.extent - 1)) * s.inner,
                  s.inner, y.data() + (o * size + e) * s.inner);
  return detail::record<T>(shape, std::move(y), "resize_edge", {x},
                           [s, size](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::int64_t o = 0; o < s.outer; ++o)
                               for (std::int64_t e = 0; e < size; ++e) {
                                 const T* src = out.grad.data() + (o * size + e) * s.inner;
                                 T* dst = g + (o * s.extent + std::min(e, s.extent - 1)) * s.inner;
                                 for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                               }
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::record<T>({}, {acc}, "sum", {x}, [](Node<T>& out) {
    Node<T>* p = grad_target(out, 0);
    if (!p) return;
    T* g = p->grad_buffer();
    for (std::size_t i = 0; i < p->data.size(); ++i) g[i] += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  const int a = normalize_axis("sum_axis", axis, x.rank());
  AxisSplit s = split_at(x.shape(), a);
  Shape shape = x.shape();
  shape.erase(shape.begin() + a);
  std::vector<T> y(s.outer * s.inner, T(0));
  auto xd = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t e = 0; e < s.extent; ++e) {
      const T* src = xd.data() + (o * s.extent + e) * s.inner;
      T* dst = y.data() + o * s.inner;
      for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  return detail::record<T>(shape, std::move(y), "sum_axis", {x},
                           [s](Node<T>& out) {
                             Node<T>* p = grad_target(out, 0);
                             if (!p) return;
                             T* g = p->grad_buffer();
                             for (std::int64_t o = 0; o < s.outer; ++o)
                               for (std::int64_t e = 0; e < s.extent; ++e) {
                                 const T* src = out.grad.data() + o * s.inner;
                                 T* dst = g + (o * s.extent + e) * s.inner;
                                 for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                               }
                           });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const std::int64_t n = x.dim(axis);
  if (n == 0) throw ShapeError("mean_axis: empty axis");
  return mul_scalar(sum_axis(x, axis), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> l1_norm_last(const Tensor<T>& x) {
  return sum_axis(abs(x), -1);
}

template <typename T>
Tensor<T> l2_norm_last(const Tensor<T>& x, T eps) {
  return sqrt(sum_axis(square(x), -1), eps);
}

template <typename T>
Tensor<T> cosine_similarity_last(const Tensor<T>& a, const Tensor<T>& b, T eps) {
  require_same_shape("cosine_similarity", a, b);
  auto dot = sum_axis(mul(a, b), -1);
  auto na = l2_norm_last(a, eps);
  auto nb = l2_norm_last(b, eps);
  return div(dot, add_scalar(mul(na, nb), eps));
}

#define SELAB_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                           \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                           \
  template Tensor<T> mul_rows(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> neg(const Tensor<T>&);                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                    \
  template Tensor<T> elu(const Tensor<T>&, T);                                  \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                           \
  template Tensor<T> abs(const Tensor<T>&);                                     \
  template Tensor<T> square(const Tensor<T>&);                                  \
  template Tensor<T> sqrt(const Tensor<T>&, T);                                 \
  template Tensor<T> log(const Tensor<T>&, T);                                  \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                             \
  template Tensor<T> softmax(const Tensor<T>&);                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,                 \
                            const Tensor<T>&);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,                 \
                            const Tensor<T>&, const Conv2dGeometry&);           \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&,       \
                                      const Tensor<T>&,                         \
                                      const ConvTranspose2dGeometry&);          \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                \
  template Tensor<T> slice(const Tensor<T>&, int, std::int64_t, std::int64_t);  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);        \
  template Tensor<T> repeat_interleave(const Tensor<T>&, int, int);             \
  template Tensor<T> resize_edge(const Tensor<T>&, int, std::int64_t);          \
  template Tensor<T> sum(const Tensor<T>&);                                     \
  template Tensor<T> mean(const Tensor<T>&);                                    \
  template Tensor<T> sum_axis(const Tensor<T>&, int);                           \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                          \
  template Tensor<T> l1_norm_last(const Tensor<T>&);                            \
  template Tensor<T> l2_norm_last(const Tensor<T>&, T);                         \
  template Tensor<T> cosine_similarity_last(const Tensor<T>&, const Tensor<T>&, \
                                            T);

SELAB_INSTANTIATE_OPS(float)
SELAB_INSTANTIATE_OPS(double)

#undef SELAB_INSTANTIATE_OPS

}  // namespace selab::ops
