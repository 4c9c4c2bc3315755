// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>

#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"

namespace gwm {

template <typename T>
using EigenRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<EigenRM<T>>;
template <typename T>
using CMap = Eigen::Map<const EigenRM<T>>;

template <typename T>
inline CMap<T> as_mat(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return CMap<T>(t.data().data(), rows, cols);
}

namespace detail {

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// Rows/cols when a tensor is viewed as (prod leading dims, last dim).
template <typename T>
inline std::pair<int64_t, int64_t> mat_dims(const Tensor<T>& t) {
  int64_t cols = t.dim(t.ndim() - 1);
  return {t.numel() / cols, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  TVec<T> y(a.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_op_node<T>(a.shape(), std::move(y), {a, b}, [a, b](TensorNode<T>& out) {
    if (a.requires_grad()) {
      auto& ga = a.raw()->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.raw()->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  TVec<T> y(a.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_op_node<T>(a.shape(), std::move(y), {a, b}, [a, b](TensorNode<T>& out) {
    if (a.requires_grad()) {
      auto& ga = a.raw()->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.raw()->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= out.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  TVec<T> y(a.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_op_node<T>(a.shape(), std::move(y), {a, b}, [a, b](TensorNode<T>& out) {
    if (a.requires_grad()) {
      auto& ga = a.raw()->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.raw()->ensure_grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += out.grad[i] * a.data()[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  TVec<T> y(a.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * c;
  return make_op_node<T>(a.shape(), std::move(y), {a}, [a, c](TensorNode<T>& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.raw()->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i] * c;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  TVec<T> y(a.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + c;
  return make_op_node<T>(a.shape(), std::move(y), {a}, [a](TensorNode<T>& out) {
    if (!a.requires_grad()) return;
    auto& ga = a.raw()->ensure_grad();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += out.grad[i];
  });
}

// y = x + b with b broadcast over rows; x viewed as (N, D), b is (D).
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  auto [n, d] = detail::mat_dims(x);
  check(b.numel() == d, "add_bias: bias dim mismatch");
  TVec<T> y(x.data().size());
  for (int64_t r = 0; r < n; ++r)
    for (int64_t c = 0; c < d; ++c) y[r * d + c] = x.data()[r * d + c] + b.data()[c];
  return make_op_node<T>(x.shape(), std::move(y), {x, b}, [x, b, n, d](TensorNode<T>& out) {
    if (x.requires_grad()) {
      auto& gx = x.raw()->ensure_grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.raw()->ensure_grad();
      for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < d; ++c) gb[c] += out.grad[r * d + c];
    }
  });
}

// y[b,s,:] = x[b,s,:] + p[s,:]  (positional encodings; p broadcast over batch)
template <typename T>
Tensor<T> add_pos(const Tensor<T>& x, const Tensor<T>& p) {
  check(x.ndim() == 3, "add_pos: x must be (B,S,D)");
  int64_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
  check(p.numel() == S * D, "add_pos: pe shape mismatch");
  TVec<T> y(x.data().size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < S * D; ++i) y[b * S * D + i] = x.data()[b * S * D + i] + p.data()[i];
  return make_op_node<T>(x.shape(), std::move(y), {x, p}, [x, p, B, S, D](TensorNode<T>& out) {
    if (x.requires_grad()) {
      auto& gx = x.raw()->ensure_grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
    }
    if (p.requires_grad()) {
      auto& gp = p.raw()->ensure_grad();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < S * D; ++i) gp[i] += out.grad[b * S * D + i];
    }
  });
}

// ---------------------------------------------------------------------------
// activations
//
// Float forwards use Eigen's vectorized array kernels (exp/tanh); the double
// paths keep exact libm scalars for 64-bit gradient checking. Each backward
// differentiates its own forward, so both precisions stay self-consistent.
// ---------------------------------------------------------------------------

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
Tensor<T> elu(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    CArrMap<float> X(x.data().data(), static_cast<int64_t>(y.size()));
    ArrMap<float> Y(y.data(), static_cast<int64_t>(y.size()));
    Y = X.min(0.0f).exp() - 1.0f + X.max(0.0f);  // x>0: x, else expm1(x)
  } else {
    for (size_t i = 0; i < y.size(); ++i) {
      T v = x.data()[i];
      y[i] = v > T(0) ? v : std::expm1(v);
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    if constexpr (std::is_same_v<T, float>) {
      int64_t n = static_cast<int64_t>(gx.size());
      CArrMap<float> X(x.data().data(), n), Yv(out.value.data(), n), G(out.grad.data(), n);
      ArrMap<float> GX(gx.data(), n);
      GX += G * (X > 0.0f).select(Eigen::ArrayXf::Ones(n), Yv + 1.0f);
    } else {
      for (size_t i = 0; i < gx.size(); ++i) {
        T d = x.data()[i] > T(0) ? T(1) : out.value[i] + T(1);
        gx[i] += out.grad[i] * d;
      }
    }
  });
}

// Float: tanh approximation with matching analytic derivative. Double: exact
// erf form.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    constexpr float c1 = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float c2 = 0.044715f;
    int64_t n = static_cast<int64_t>(y.size());
    CArrMap<float> X(x.data().data(), n);
    ArrMap<float> Y(y.data(), n);
    Y = 0.5f * X * (1.0f + (c1 * (X + c2 * X.cube())).tanh());
  } else {
    constexpr double inv_sqrt2 = 0.7071067811865475;
    for (size_t i = 0; i < y.size(); ++i) {
      double v = static_cast<double>(x.data()[i]);
      y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    if constexpr (std::is_same_v<T, float>) {
      constexpr float c1 = 0.7978845608028654f;
      constexpr float c2 = 0.044715f;
      int64_t n = static_cast<int64_t>(gx.size());
      CArrMap<float> X(x.data().data(), n), G(out.grad.data(), n);
      ArrMap<float> GX(gx.data(), n);
      Eigen::ArrayXf t = (c1 * (X + c2 * X.cube())).tanh();
      GX += G * (0.5f * (1.0f + t) + 0.5f * X * (1.0f - t.square()) * c1 * (1.0f + 3.0f * c2 * X.square()));
    } else {
      constexpr double inv_sqrt2 = 0.7071067811865475;
      constexpr double inv_sqrt2pi = 0.3989422804014327;
      for (size_t i = 0; i < gx.size(); ++i) {
        double v = static_cast<double>(x.data()[i]);
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        gx[i] += out.grad[i] * static_cast<T>(cdf + v * pdf);
      }
    }
  });
}

template <typename T>
Tensor<T> tanh_t(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    CArrMap<float> X(x.data().data(), static_cast<int64_t>(y.size()));
    ArrMap<float> Y(y.data(), static_cast<int64_t>(y.size()));
    Y = X.tanh();
  } else {
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x.data()[i]);
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * (T(1) - out.value[i] * out.value[i]);
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    int64_t n = static_cast<int64_t>(y.size());
    CArrMap<float> X(x.data().data(), n);
    ArrMap<float> Y(y.data(), n);
    Y = 0.5f * (0.5f * X).tanh() + 0.5f;  // numerically stable logistic
  } else {
    for (size_t i = 0; i < y.size(); ++i) {
      T v = x.data()[i];
      y[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * out.value[i] * (T(1) - out.value[i]);
  });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    int64_t n = static_cast<int64_t>(y.size());
    CArrMap<float> X(x.data().data(), n);
    ArrMap<float> Y(y.data(), n);
    Y = (X > 20.0f).select(X, (X.exp() + 1.0f).log());
  } else {
    for (size_t i = 0; i < y.size(); ++i) {
      T v = x.data()[i];
      y[i] = v > T(20) ? v : std::log1p(std::exp(v));
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) {
      T v = x.data()[i];
      T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      gx[i] += out.grad[i] * s;
    }
  });
}

template <typename T>
Tensor<T> log_t(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  for (size_t i = 0; i < y.size(); ++i) y[i] = std::log(x.data()[i]);
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] / x.data()[i];
  });
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& x) {
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    CArrMap<float> X(x.data().data(), static_cast<int64_t>(y.size()));
    ArrMap<float> Y(y.data(), static_cast<int64_t>(y.size()));
    Y = X.exp();
  } else {
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::exp(x.data()[i]);
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * out.value[i];
  });
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return make_op_node<T>({1}, {static_cast<T>(acc)}, {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    T g = out.grad[0];
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.data()) acc += static_cast<double>(v);
  int64_t n = x.numel();
  return make_op_node<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}, {x},
                         [x, n](TensorNode<T>& out) {
                           if (!x.requires_grad()) return;
                           auto& gx = x.raw()->ensure_grad();
                           T g = out.grad[0] / static_cast<T>(n);
                           for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
                         });
}

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mse");
  double acc = 0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  int64_t n = a.numel();
  return make_op_node<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}, {a, b},
                         [a, b, n](TensorNode<T>& out) {
                           T g = out.grad[0] * T(2) / static_cast<T>(n);
                           if (a.requires_grad()) {
                             auto& ga = a.raw()->ensure_grad();
                             for (size_t i = 0; i < ga.size(); ++i)
                               ga[i] += g * (a.data()[i] - b.data()[i]);
                           }
                           if (b.requires_grad()) {
                             auto& gb = b.raw()->ensure_grad();
                             for (size_t i = 0; i < gb.size(); ++i)
                               gb[i] -= g * (a.data()[i] - b.data()[i]);
                           }
                         });
}

// Mean binary cross-entropy on logits; targets in [0,1] and never given grads.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::check_same_shape(logits, targets, "bce_with_logits");
  double acc = 0;
  for (size_t i = 0; i < logits.data().size(); ++i) {
    double z = static_cast<double>(logits.data()[i]);
    double t = static_cast<double>(targets.data()[i]);
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  int64_t n = logits.numel();
  return make_op_node<T>({1}, {static_cast<T>(acc / static_cast<double>(n))}, {logits, targets},
                         [logits, targets, n](TensorNode<T>& out) {
                           if (!logits.requires_grad()) return;
                           auto& gz = logits.raw()->ensure_grad();
                           T g = out.grad[0] / static_cast<T>(n);
                           for (size_t i = 0; i < gz.size(); ++i) {
                             T z = logits.data()[i];
                             T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                             : std::exp(z) / (T(1) + std::exp(z));
                             gz[i] += g * (s - targets.data()[i]);
                           }
                         });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  check(shape_numel(new_shape) == x.numel(), "reshape: numel mismatch");
  TVec<T> y = x.data();
  return make_op_node<T>(std::move(new_shape), std::move(y), {x}, [x](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
  });
}

template <typename T>
Tensor<T> stopgrad(const Tensor<T>& x) {
  return Tensor<T>::from_buffer(x.shape(), x.data(), false);
}

// Concatenate along the last dimension; all inputs share leading dims.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_cols: empty");
  int64_t rows = detail::mat_dims(parts[0]).first;
  int64_t total = 0;
  for (auto& p : parts) {
    check(detail::mat_dims(p).first == rows, "concat_cols: row mismatch");
    total += detail::mat_dims(p).second;
  }
  TVec<T> y(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (auto& p : parts) {
    int64_t d = detail::mat_dims(p).second;
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(p.data().data() + r * d, d, y.data() + r * total + off);
    off += d;
  }
  std::vector<int> out_shape = parts[0].shape();
  out_shape.back() = static_cast<int>(total);
  auto parts_copy = parts;
  return make_op_node<T>(std::move(out_shape), std::move(y), parts,
                         [parts_copy, rows, total](TensorNode<T>& out) {
                           int64_t off = 0;
                           for (auto& p : parts_copy) {
                             int64_t d = detail::mat_dims(p).second;
                             if (p.requires_grad()) {
                               auto& gp = p.raw()->ensure_grad();
                               for (int64_t r = 0; r < rows; ++r)
                                 for (int64_t c = 0; c < d; ++c)
                                   gp[r * d + c] += out.grad[r * total + off + c];
                             }
                             off += d;
                           }
                         });
}

// Columns [c0, c1) of x viewed as (N, D).
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  auto [n, d] = detail::mat_dims(x);
  check(0 <= c0 && c0 < c1 && c1 <= d, "slice_cols: bad range");
  int64_t w = c1 - c0;
  TVec<T> y(static_cast<size_t>(n * w));
  for (int64_t r = 0; r < n; ++r) std::copy_n(x.data().data() + r * d + c0, w, y.data() + r * w);
  std::vector<int> out_shape = x.shape();
  out_shape.back() = static_cast<int>(w);
  return make_op_node<T>(std::move(out_shape), std::move(y), {x},
                         [x, n, d, c0, w](TensorNode<T>& out) {
                           if (!x.requires_grad()) return;
                           auto& gx = x.raw()->ensure_grad();
                           for (int64_t r = 0; r < n; ++r)
                             for (int64_t c = 0; c < w; ++c)
                               gx[r * d + c0 + c] += out.grad[r * w + c];
                         });
}

// ---------------------------------------------------------------------------
// token-axis ops (tensors shaped (B, S, D))
// ---------------------------------------------------------------------------

// Concatenate along the token axis.
template <typename T>
Tensor<T> concat_tokens(const std::vector<Tensor<T>>& parts) {
  check(!parts.empty(), "concat_tokens: empty");
  int B = parts[0].dim(0), D = parts[0].dim(2);
  int S = 0;
  for (auto& p : parts) {
    check(p.ndim() == 3 && p.dim(0) == B && p.dim(2) == D, "concat_tokens: shape mismatch");
    S += p.dim(1);
  }
  TVec<T> y(static_cast<size_t>(B) * S * D);
  int off = 0;
  for (auto& p : parts) {
    int s = p.dim(1);
    for (int b = 0; b < B; ++b)
      std::copy_n(p.data().data() + static_cast<int64_t>(b) * s * D, static_cast<int64_t>(s) * D,
                  y.data() + (static_cast<int64_t>(b) * S + off) * D);
    off += s;
  }
  auto parts_copy = parts;
  return make_op_node<T>({B, S, D}, std::move(y), parts,
                         [parts_copy, B, S, D](TensorNode<T>& out) {
                           int off = 0;
                           for (auto& p : parts_copy) {
                             int s = p.dim(1);
                             if (p.requires_grad()) {
                               auto& gp = p.raw()->ensure_grad();
                               for (int b = 0; b < B; ++b)
                                 for (int64_t i = 0; i < static_cast<int64_t>(s) * D; ++i)
                                   gp[static_cast<int64_t>(b) * s * D + i] +=
                                       out.grad[(static_cast<int64_t>(b) * S + off) * D + i];
                             }
                             off += s;
                           }
                         });
}

// Tokens [s0, s1) of x.
template <typename T>
Tensor<T> slice_tokens(const Tensor<T>& x, int s0, int s1) {
  check(x.ndim() == 3, "slice_tokens: need (B,S,D)");
  int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  check(0 <= s0 && s0 < s1 && s1 <= S, "slice_tokens: bad range");
  int w = s1 - s0;
  TVec<T> y(static_cast<size_t>(B) * w * D);
  for (int b = 0; b < B; ++b)
    std::copy_n(x.data().data() + (static_cast<int64_t>(b) * S + s0) * D,
                static_cast<int64_t>(w) * D, y.data() + static_cast<int64_t>(b) * w * D);
  return make_op_node<T>({B, w, D}, std::move(y), {x}, [x, B, S, D, s0, w](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int64_t i = 0; i < static_cast<int64_t>(w) * D; ++i)
        gx[(static_cast<int64_t>(b) * S + s0) * D + i] += out.grad[static_cast<int64_t>(b) * w * D + i];
  });
}

// y[b,m,:] = x[b, idx[b][m], :]
template <typename T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<std::vector<int>>& idx) {
  check(x.ndim() == 3, "gather_tokens: need (B,S,D)");
  int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  check(static_cast<int>(idx.size()) == B, "gather_tokens: batch mismatch");
  int M = static_cast<int>(idx[0].size());
  TVec<T> y(static_cast<size_t>(B) * M * D);
  for (int b = 0; b < B; ++b) {
    check(static_cast<int>(idx[b].size()) == M, "gather_tokens: ragged index set");
    for (int m = 0; m < M; ++m) {
      int s = idx[b][m];
      check(0 <= s && s < S, "gather_tokens: index out of range");
      std::copy_n(x.data().data() + (static_cast<int64_t>(b) * S + s) * D, D,
                  y.data() + (static_cast<int64_t>(b) * M + m) * D);
    }
  }
  auto idx_copy = std::make_shared<std::vector<std::vector<int>>>(idx);
  return make_op_node<T>({B, M, D}, std::move(y), {x}, [x, idx_copy, B, S, D, M](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int m = 0; m < M; ++m) {
        int s = (*idx_copy)[b][m];
        for (int c = 0; c < D; ++c)
          gx[(static_cast<int64_t>(b) * S + s) * D + c] +=
              out.grad[(static_cast<int64_t>(b) * M + m) * D + c];
      }
  });
}

// y = base with y[b, idx[b][m], :] overwritten by visible[b,m,:].
// Positions written from `visible` contribute no gradient to `base`.
template <typename T>
Tensor<T> scatter_tokens(const Tensor<T>& visible, const std::vector<std::vector<int>>& idx,
                         const Tensor<T>& base) {
  check(base.ndim() == 3 && visible.ndim() == 3, "scatter_tokens: need (B,S,D)");
  int B = base.dim(0), S = base.dim(1), D = base.dim(2);
  int M = visible.dim(1);
  check(visible.dim(0) == B && visible.dim(2) == D, "scatter_tokens: shape mismatch");
  TVec<T> y = base.data();
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) {
      int s = idx[b][m];
      check(0 <= s && s < S, "scatter_tokens: index out of range");
      std::copy_n(visible.data().data() + (static_cast<int64_t>(b) * M + m) * D, D,
                  y.data() + (static_cast<int64_t>(b) * S + s) * D);
    }
  auto idx_copy = std::make_shared<std::vector<std::vector<int>>>(idx);
  return make_op_node<T>({B, S, D}, std::move(y), {visible, base},
                         [visible, base, idx_copy, B, S, D, M](TensorNode<T>& out) {
                           if (visible.requires_grad()) {
                             auto& gv = visible.raw()->ensure_grad();
                             for (int b = 0; b < B; ++b)
                               for (int m = 0; m < M; ++m) {
                                 int s = (*idx_copy)[b][m];
                                 for (int c = 0; c < D; ++c)
                                   gv[(static_cast<int64_t>(b) * M + m) * D + c] +=
                                       out.grad[(static_cast<int64_t>(b) * S + s) * D + c];
                               }
                           }
                           if (base.requires_grad()) {
                             std::vector<char> overwritten(static_cast<size_t>(B) * S, 0);
                             for (int b = 0; b < B; ++b)
                               for (int m = 0; m < M; ++m)
                                 overwritten[static_cast<size_t>(b) * S + (*idx_copy)[b][m]] = 1;
                             auto& gb = base.raw()->ensure_grad();
                             for (int b = 0; b < B; ++b)
                               for (int s = 0; s < S; ++s)
                                 if (!overwritten[static_cast<size_t>(b) * S + s])
                                   for (int c = 0; c < D; ++c)
                                     gb[(static_cast<int64_t>(b) * S + s) * D + c] +=
                                         out.grad[(static_cast<int64_t>(b) * S + s) * D + c];
                           }
                         });
}

// Broadcast a (D) parameter to (B, S, D) (learned CLS / mask tokens).
template <typename T>
Tensor<T> tile_token(const Tensor<T>& tok, int B, int S) {
  int D = static_cast<int>(tok.numel());
  TVec<T> y(static_cast<size_t>(B) * S * D);
  for (int64_t i = 0; i < static_cast<int64_t>(B) * S; ++i)
    std::copy_n(tok.data().data(), D, y.data() + i * D);
  return make_op_node<T>({B, S, D}, std::move(y), {tok}, [tok, B, S, D](TensorNode<T>& out) {
    if (!tok.requires_grad()) return;
    auto& gt = tok.raw()->ensure_grad();
    for (int64_t i = 0; i < static_cast<int64_t>(B) * S; ++i)
      for (int c = 0; c < D; ++c) gt[c] += out.grad[i * D + c];
  });
}

// Mean over the token axis: (B,S,D) -> (B,D).
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
  check(x.ndim() == 3, "mean_tokens: need (B,S,D)");
  int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  TVec<T> y(static_cast<size_t>(B) * D, T(0));
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < D; ++c) {
      double acc = 0;
      for (int s = 0; s < S; ++s)
        acc += static_cast<double>(x.data()[(static_cast<int64_t>(b) * S + s) * D + c]);
      y[static_cast<int64_t>(b) * D + c] = static_cast<T>(acc / S);
    }
  return make_op_node<T>({B, D}, std::move(y), {x}, [x, B, S, D](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int s = 0; s < S; ++s)
        for (int c = 0; c < D; ++c)
          gx[(static_cast<int64_t>(b) * S + s) * D + c] +=
              out.grad[static_cast<int64_t>(b) * D + c] / static_cast<T>(S);
  });
}

// Broadcast (B,D) -> (B,S,D) (fusion decoder input).
template <typename T>
Tensor<T> tile_pooled(const Tensor<T>& x, int S) {
  check(x.ndim() == 2, "tile_pooled: need (B,D)");
  int B = x.dim(0), D = x.dim(1);
  TVec<T> y(static_cast<size_t>(B) * S * D);
  for (int b = 0; b < B; ++b)
    for (int s = 0; s < S; ++s)
      std::copy_n(x.data().data() + static_cast<int64_t>(b) * D, D,
                  y.data() + (static_cast<int64_t>(b) * S + s) * D);
  return make_op_node<T>({B, S, D}, std::move(y), {x}, [x, B, S, D](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int s = 0; s < S; ++s)
        for (int c = 0; c < D; ++c)
          gx[static_cast<int64_t>(b) * D + c] += out.grad[(static_cast<int64_t>(b) * S + s) * D + c];
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// y = op(a) * op(b). Transpose flags require 2-D operands; the untransposed
// path flattens leading dims of `a` (so (B,S,D) x (D,E) works directly).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  check(b.ndim() == 2, "matmul: b must be 2-D");
  check((!ta && !tb) || (a.ndim() == 2), "matmul: transpose flags require 2-D a");
  int64_t ar, ac;
  if (a.ndim() == 2) {
    ar = a.dim(0);
    ac = a.dim(1);
  } else {
    auto [r, c] = detail::mat_dims(a);
    ar = r;
    ac = c;
  }
  int64_t br = b.dim(0), bc = b.dim(1);
  int64_t M = ta ? ac : ar, K = ta ? ar : ac;
  int64_t Kb = tb ? bc : br, N = tb ? br : bc;
  check(K == Kb, "matmul: inner dim mismatch " + shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (tb ? "^T" : ""));
  TVec<T> y(static_cast<size_t>(M * N));
  {
    CMap<T> A(a.data().data(), ar, ac), B(b.data().data(), br, bc);
    Map<T> Y(y.data(), M, N);
    if (!ta && !tb)
      Y.noalias() = A * B;
    else if (ta && !tb)
      Y.noalias() = A.transpose() * B;
    else if (!ta && tb)
      Y.noalias() = A * B.transpose();
    else
      Y.noalias() = A.transpose() * B.transpose();
  }
  std::vector<int> out_shape;
  if (a.ndim() > 2) {
    out_shape.assign(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(static_cast<int>(N));
  } else {
    out_shape = {static_cast<int>(M), static_cast<int>(N)};
  }
  return make_op_node<T>(std::move(out_shape), std::move(y), {a, b},
                         [a, b, ta, tb, ar, ac, br, bc, M, N](TensorNode<T>& out) {
                           CMap<T> A(a.data().data(), ar, ac), B(b.data().data(), br, bc);
                           CMap<T> dY(out.grad.data(), M, N);
                           if (a.requires_grad()) {
                             Map<T> dA(a.raw()->ensure_grad().data(), ar, ac);
                             if (!ta && !tb)
                               dA.noalias() += dY * B.transpose();
                             else if (!ta && tb)
                               dA.noalias() += dY * B;
                             else if (ta && !tb)
                               dA.noalias() += B * dY.transpose();
                             else
                               dA.noalias() += B.transpose() * dY.transpose();
                           }
                           if (b.requires_grad()) {
                             Map<T> dB(b.raw()->ensure_grad().data(), br, bc);
                             if (!ta && !tb)
                               dB.noalias() += A.transpose() * dY;
                             else if (ta && !tb)
                               dB.noalias() += A * dY;
                             else if (!ta && tb)
                               dB.noalias() += dY.transpose() * A;
                             else
                               dB.noalias() += dY.transpose() * A.transpose();
                           }
                         });
}

// Batched y[i] = a[i] * op(b[i]); a (G,M,K), b (G,K,N) or (G,N,K) with tb.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool tb = false) {
  check(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0), "bmm: need (G,M,K)x(G,.,.)");
  int G = a.dim(0), M = a.dim(1), K = a.dim(2);
  int N = tb ? b.dim(1) : b.dim(2);
  check((tb ? b.dim(2) : b.dim(1)) == K, "bmm: inner dim mismatch");
  TVec<T> y(static_cast<size_t>(G) * M * N);
  for (int g = 0; g < G; ++g) {
    CMap<T> A(a.data().data() + static_cast<int64_t>(g) * M * K, M, K);
    CMap<T> B(b.data().data() + static_cast<int64_t>(g) * b.dim(1) * b.dim(2), b.dim(1), b.dim(2));
    Map<T> Y(y.data() + static_cast<int64_t>(g) * M * N, M, N);
    if (tb)
      Y.noalias() = A * B.transpose();
    else
      Y.noalias() = A * B;
  }
  int br = b.dim(1), bc = b.dim(2);
  return make_op_node<T>({G, M, N}, std::move(y), {a, b},
                         [a, b, tb, G, M, K, N, br, bc](TensorNode<T>& out) {
                           for (int g = 0; g < G; ++g) {
                             CMap<T> A(a.data().data() + static_cast<int64_t>(g) * M * K, M, K);
                             CMap<T> B(b.data().data() + static_cast<int64_t>(g) * br * bc, br, bc);
                             CMap<T> dY(out.grad.data() + static_cast<int64_t>(g) * M * N, M, N);
                             if (a.requires_grad()) {
                               Map<T> dA(a.raw()->ensure_grad().data() + static_cast<int64_t>(g) * M * K,
                                         M, K);
                               if (tb)
                                 dA.noalias() += dY * B;
                               else
                                 dA.noalias() += dY * B.transpose();
                             }
                             if (b.requires_grad()) {
                               Map<T> dB(b.raw()->ensure_grad().data() + static_cast<int64_t>(g) * br * bc,
                                         br, bc);
                               if (tb)
                                 dB.noalias() += dY.transpose() * A;
                               else
                                 dB.noalias() += A.transpose() * dY;
                             }
                           }
                         });
}

// (B,S,D) -> (B*heads, S, D/heads)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  check(x.ndim() == 3, "split_heads: need (B,S,D)");
  int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  check(D % heads == 0, "split_heads: D not divisible by heads");
  int dh = D / heads;
  TVec<T> y(x.data().size());
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int s = 0; s < S; ++s)
        std::copy_n(x.data().data() + ((static_cast<int64_t>(b) * S + s) * D) + h * dh, dh,
                    y.data() + ((static_cast<int64_t>(b) * heads + h) * S + s) * dh);
  return make_op_node<T>({B * heads, S, dh}, std::move(y), {x},
                         [x, B, S, D, heads, dh](TensorNode<T>& out) {
                           if (!x.requires_grad()) return;
                           auto& gx = x.raw()->ensure_grad();
                           for (int b = 0; b < B; ++b)
                             for (int h = 0; h < heads; ++h)
                               for (int s = 0; s < S; ++s)
                                 for (int c = 0; c < dh; ++c)
                                   gx[(static_cast<int64_t>(b) * S + s) * D + h * dh + c] +=
                                       out.grad[((static_cast<int64_t>(b) * heads + h) * S + s) * dh + c];
                         });
}

// (B*heads, S, dh) -> (B, S, D)
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, int heads) {
  check(x.ndim() == 3, "merge_heads: need (B*h,S,dh)");
  int BH = x.dim(0), S = x.dim(1), dh = x.dim(2);
  check(BH % heads == 0, "merge_heads: batch not divisible by heads");
  int B = BH / heads, D = dh * heads;
  TVec<T> y(x.data().size());
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int s = 0; s < S; ++s)
        std::copy_n(x.data().data() + ((static_cast<int64_t>(b) * heads + h) * S + s) * dh, dh,
                    y.data() + (static_cast<int64_t>(b) * S + s) * D + h * dh);
  return make_op_node<T>({B, S, D}, std::move(y), {x},
                         [x, B, S, D, heads, dh](TensorNode<T>& out) {
                           if (!x.requires_grad()) return;
                           auto& gx = x.raw()->ensure_grad();
                           for (int b = 0; b < B; ++b)
                             for (int h = 0; h < heads; ++h)
                               for (int s = 0; s < S; ++s)
                                 for (int c = 0; c < dh; ++c)
                                   gx[((static_cast<int64_t>(b) * heads + h) * S + s) * dh + c] +=
                                       out.grad[(static_cast<int64_t>(b) * S + s) * D + h * dh + c];
                         });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

// Softmax over the last dimension. The float path exponentiates with Eigen's
// vectorized kernel and normalizes with a double accumulator, keeping row
// sums within 1e-6 of one.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  auto [n, k] = detail::mat_dims(x);
  TVec<T> y(x.data().size());
  if constexpr (std::is_same_v<T, float>) {
    for (int64_t r = 0; r < n; ++r) {
      CArrMap<float> Xi(x.data().data() + r * k, k);
      ArrMap<float> Yi(y.data() + r * k, k);
      float mx = Xi.maxCoeff();
      Yi = (Xi - mx).exp();
      double s = static_cast<double>(Yi.template cast<double>().sum());
      Yi *= static_cast<float>(1.0 / s);
    }
  } else {
    for (int64_t r = 0; r < n; ++r) {
      const T* xi = x.data().data() + r * k;
      T* yi = y.data() + r * k;
      T mx = xi[0];
      for (int64_t i = 1; i < k; ++i) mx = std::max(mx, xi[i]);
      double s = 0;
      for (int64_t i = 0; i < k; ++i) {
        double e = std::exp(static_cast<double>(xi[i] - mx));
        yi[i] = static_cast<T>(e);
        s += e;
      }
      double inv = 1.0 / s;
      for (int64_t i = 0; i < k; ++i) yi[i] = static_cast<T>(static_cast<double>(yi[i]) * inv);
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x, n, k](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    if constexpr (std::is_same_v<T, float>) {
      for (int64_t r = 0; r < n; ++r) {
        CArrMap<float> Yi(out.value.data() + r * k, k), Gy(out.grad.data() + r * k, k);
        ArrMap<float> Gx(gx.data() + r * k, k);
        float dot = (Gy * Yi).sum();
        Gx += Yi * (Gy - dot);
      }
    } else {
      for (int64_t r = 0; r < n; ++r) {
        const T* yi = out.value.data() + r * k;
        const T* gy = out.grad.data() + r * k;
        double dot = 0;
        for (int64_t i = 0; i < k; ++i) dot += static_cast<double>(gy[i]) * static_cast<double>(yi[i]);
        for (int64_t i = 0; i < k; ++i) gx[r * k + i] += yi[i] * (gy[i] - static_cast<T>(dot));
      }
    }
  });
}

// LayerNorm over the last dimension with learned scale/shift.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  auto [n, d] = detail::mat_dims(x);
  check(gamma.numel() == d && beta.numel() == d, "layernorm: param dim mismatch");
  TVec<T> y(x.data().size());
  auto xhat = std::make_shared<std::vector<T>>(x.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  if constexpr (std::is_same_v<T, float>) {
    CArrMap<float> G(gamma.data().data(), d), Bv(beta.data().data(), d);
    for (int64_t r = 0; r < n; ++r) {
      CArrMap<float> Xi(x.data().data() + r * d, d);
      double mu = Xi.template cast<double>().mean();
      double var = (Xi.template cast<double>() - mu).square().mean();
      float is = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*inv_std)[static_cast<size_t>(r)] = is;
      ArrMap<float> Xh(xhat->data() + r * d, d), Yi(y.data() + r * d, d);
      Xh = (Xi - static_cast<float>(mu)) * is;
      Yi = G * Xh + Bv;
    }
  } else {
    for (int64_t r = 0; r < n; ++r) {
      const T* xi = x.data().data() + r * d;
      double mu = 0;
      for (int64_t i = 0; i < d; ++i) mu += static_cast<double>(xi[i]);
      mu /= static_cast<double>(d);
      double var = 0;
      for (int64_t i = 0; i < d; ++i) {
        double c = static_cast<double>(xi[i]) - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
      (*inv_std)[static_cast<size_t>(r)] = static_cast<T>(is);
      for (int64_t i = 0; i < d; ++i) {
        T xh = static_cast<T>((static_cast<double>(xi[i]) - mu) * is);
        (*xhat)[static_cast<size_t>(r * d + i)] = xh;
        y[static_cast<size_t>(r * d + i)] = gamma.data()[i] * xh + beta.data()[i];
      }
    }
  }
  return make_op_node<T>(x.shape(), std::move(y), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, n, d](TensorNode<T>& out) {
                           if (gamma.requires_grad()) {
                             auto& gg = gamma.raw()->ensure_grad();
                             for (int64_t r = 0; r < n; ++r)
                               for (int64_t i = 0; i < d; ++i)
                                 gg[i] += out.grad[r * d + i] * (*xhat)[static_cast<size_t>(r * d + i)];
                           }
                           if (beta.requires_grad()) {
                             auto& gb = beta.raw()->ensure_grad();
                             for (int64_t r = 0; r < n; ++r)
                               for (int64_t i = 0; i < d; ++i) gb[i] += out.grad[r * d + i];
                           }
                           if (x.requires_grad()) {
                             auto& gx = x.raw()->ensure_grad();
                             for (int64_t r = 0; r < n; ++r) {
                               double m1 = 0, m2 = 0;
                               for (int64_t i = 0; i < d; ++i) {
                                 double dyh = static_cast<double>(out.grad[r * d + i]) *
                                              static_cast<double>(gamma.data()[i]);
                                 m1 += dyh;
                                 m2 += dyh * static_cast<double>((*xhat)[static_cast<size_t>(r * d + i)]);
                               }
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               double is = static_cast<double>((*inv_std)[static_cast<size_t>(r)]);
                               for (int64_t i = 0; i < d; ++i) {
                                 double dyh = static_cast<double>(out.grad[r * d + i]) *
                                              static_cast<double>(gamma.data()[i]);
                                 double xh = static_cast<double>((*xhat)[static_cast<size_t>(r * d + i)]);
                                 gx[r * d + i] += static_cast<T>(is * (dyh - m1 - xh * m2));
                               }
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Inverted-scaling dropout. No-op when rate <= 0 or training is false.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  check(rate < 1.0, "dropout: rate must be < 1");
  T keep_inv = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.data().size());
  TVec<T> y(x.data().size());
  for (size_t i = 0; i < y.size(); ++i) {
    T m = rng.next_double() < rate ? T(0) : keep_inv;
    (*mask)[i] = m;
    y[i] = x.data()[i] * m;
  }
  return make_op_node<T>(x.shape(), std::move(y), {x}, [x, mask](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// convolution (NHWC, zero padding)
// ---------------------------------------------------------------------------

struct ConvSpec {
  int kh = 4, kw = 4, stride = 2, pad = 1;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void im2col(const T* x, int B, int H, int W, int C, const ConvSpec& s, int OH, int OW, T* col) {
  int K = s.kh * s.kw * C;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        T* row = col + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * K;
        int iy0 = oy * s.stride - s.pad;
        int ix0 = ox * s.stride - s.pad;
        for (int ky = 0; ky < s.kh; ++ky) {
          int iy = iy0 + ky;
          for (int kx = 0; kx < s.kw; ++kx) {
            int ix = ix0 + kx;
            T* dst = row + (ky * s.kw + kx) * C;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
              std::fill_n(dst, C, T(0));
            } else {
              std::copy_n(x + ((static_cast<int64_t>(b) * H + iy) * W + ix) * C, C, dst);
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int B, int H, int W, int C, const ConvSpec& s, int OH, int OW, T* dx) {
  int K = s.kh * s.kw * C;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const T* row = col + ((static_cast<int64_t>(b) * OH + oy) * OW + ox) * K;
        int iy0 = oy * s.stride - s.pad;
        int ix0 = ox * s.stride - s.pad;
        for (int ky = 0; ky < s.kh; ++ky) {
          int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < s.kw; ++kx) {
            int ix = ix0 + kx;
            if (ix < 0 || ix >= W) continue;
            const T* src = row + (ky * s.kw + kx) * C;
            T* dst = dx + ((static_cast<int64_t>(b) * H + iy) * W + ix) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
}

// x (B,H,W,C), w (kh,kw,C,OC), bias (OC) -> (B,OH,OW,OC)
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const ConvSpec& spec) {
  check(x.ndim() == 4 && w.ndim() == 4, "conv2d: need (B,H,W,C) and (kh,kw,C,OC)");
  int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  check(w.dim(0) == spec.kh && w.dim(1) == spec.kw && w.dim(2) == C, "conv2d: weight shape mismatch");
  int OC = w.dim(3);
  check(bias.numel() == OC, "conv2d: bias mismatch");
  int OH = conv_out_extent(H, spec.kh, spec.stride, spec.pad);
  int OW = conv_out_extent(W, spec.kw, spec.stride, spec.pad);
  int64_t rows = static_cast<int64_t>(B) * OH * OW;
  int K = spec.kh * spec.kw * C;
  auto col = std::make_shared<TVec<T>>(static_cast<size_t>(rows * K));
  im2col(x.data().data(), B, H, W, C, spec, OH, OW, col->data());
  TVec<T> y(static_cast<size_t>(rows * OC));
  {
    CMap<T> Col(col->data(), rows, K), Wm(w.data().data(), K, OC);
    Map<T> Y(y.data(), rows, OC);
    Y.noalias() = Col * Wm;
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), OC);
  }
  return make_op_node<T>(
      {B, OH, OW, OC}, std::move(y), {x, w, bias},
      [x, w, bias, col, spec, B, H, W, C, OH, OW, OC, rows, K](TensorNode<T>& out) {
        CMap<T> dY(out.grad.data(), rows, OC);
        if (w.requires_grad()) {
          CMap<T> Col(col->data(), rows, K);
          Map<T> dW(w.raw()->ensure_grad().data(), K, OC);
          dW.noalias() += Col.transpose() * dY;
        }
        if (bias.requires_grad()) {
          auto& gb = bias.raw()->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < OC; ++c) gb[c] += out.grad[r * OC + c];
        }
        if (x.requires_grad()) {
          TVec<T> dcol(static_cast<size_t>(rows * K));
          CMap<T> Wm(w.data().data(), K, OC);
          Map<T> dCol(dcol.data(), rows, K);
          dCol.noalias() = dY * Wm.transpose();
          col2im_add(dcol.data(), B, H, W, C, spec, OH, OW, x.raw()->ensure_grad().data());
        }
      });
}

// Lay out per-token P*P patch predictions as a full image:
// x (B, rows*cols, P*P) -> (B, rows*P, cols*P); token (r,c) covers the pixel
// block [r*P, (r+1)*P) x [c*P, (c+1)*P), patch values in row-major order.
template <typename T>
Tensor<T> assemble_patches(const Tensor<T>& x, int rows, int cols, int P) {
  check(x.ndim() == 3 && x.dim(1) == rows * cols && x.dim(2) == P * P,
        "assemble_patches: shape mismatch");
  int B = x.dim(0);
  int H = rows * P, W = cols * P;
  TVec<T> y(static_cast<size_t>(B) * H * W);
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const T* patch = x.data().data() + ((static_cast<int64_t>(b) * rows * cols) + r * cols + c) * P * P;
        for (int py = 0; py < P; ++py)
          std::copy_n(patch + py * P, P,
                      y.data() + (static_cast<int64_t>(b) * H + r * P + py) * W + c * P);
      }
  return make_op_node<T>({B, H, W}, std::move(y), {x}, [x, B, rows, cols, P, H, W](TensorNode<T>& out) {
    if (!x.requires_grad()) return;
    auto& gx = x.raw()->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          T* patch = gx.data() + ((static_cast<int64_t>(b) * rows * cols) + r * cols + c) * P * P;
          for (int py = 0; py < P; ++py)
            for (int px = 0; px < P; ++px)
              patch[py * P + px] += out.grad[(static_cast<int64_t>(b) * H + r * P + py) * W + c * P + px];
        }
  });
}

// ---------------------------------------------------------------------------
// categorical sampling with straight-through gradients
// ---------------------------------------------------------------------------

// Forward emits an exact one-hot sample per distribution; backward routes
// gradients as if the output were softmax(logits).
template <typename T>
Tensor<T> categorical_sample_st(const Tensor<T>& logits, Rng& rng) {
  auto [n, k] = detail::mat_dims(logits);
  check(k >= 2, "categorical_sample_st: K must be >= 2");
  for (T v : logits.data()) check(std::isfinite(static_cast<double>(v)), "categorical_sample_st: non-finite logits");
  auto probs = std::make_shared<std::vector<T>>(logits.data().size());
  TVec<T> y(logits.data().size(), T(0));
  for (int64_t r = 0; r < n; ++r) {
    const T* li = logits.data().data() + r * k;
    T* pi = probs->data() + r * k;
    T mx = li[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, li[i]);
    double s = 0;
    for (int64_t i = 0; i < k; ++i) {
      double e = std::exp(static_cast<double>(li[i] - mx));
      pi[i] = static_cast<T>(e);
      s += e;
    }
    for (int64_t i = 0; i < k; ++i) pi[i] = static_cast<T>(static_cast<double>(pi[i]) / s);
    double u = rng.next_double();
    double cum = 0;
    int64_t pick = k - 1;
    for (int64_t i = 0; i < k; ++i) {
      cum += static_cast<double>(pi[i]);
      if (u < cum) {
        pick = i;
        break;
      }
    }
    y[r * k + pick] = T(1);
  }
  return make_op_node<T>(logits.shape(), std::move(y), {logits}, [logits, probs, n, k](TensorNode<T>& out) {
    if (!logits.requires_grad()) return;
    auto& gl = logits.raw()->ensure_grad();
    for (int64_t r = 0; r < n; ++r) {
      const T* pi = probs->data() + r * k;
      const T* gy = out.grad.data() + r * k;
      double dot = 0;
      for (int64_t i = 0; i < k; ++i) dot += static_cast<double>(gy[i]) * static_cast<double>(pi[i]);
      for (int64_t i = 0; i < k; ++i) gl[r * k + i] += pi[i] * (gy[i] - static_cast<T>(dot));
    }
  });
}

// Argmax one-hot (temperature -> 0 limit); same straight-through backward.
template <typename T>
Tensor<T> categorical_mode_st(const Tensor<T>& logits) {
  auto [n, k] = detail::mat_dims(logits);
  auto probs = std::make_shared<std::vector<T>>(logits.data().size());
  TVec<T> y(logits.data().size(), T(0));
  for (int64_t r = 0; r < n; ++r) {
    const T* li = logits.data().data() + r * k;
    T* pi = probs->data() + r * k;
    T mx = li[0];
    int64_t arg = 0;
    for (int64_t i = 1; i < k; ++i)
      if (li[i] > mx) {
        mx = li[i];
        arg = i;
      }
    double s = 0;
    for (int64_t i = 0; i < k; ++i) {
      double e = std::exp(static_cast<double>(li[i] - mx));
      pi[i] = static_cast<T>(e);
      s += e;
    }
    for (int64_t i = 0; i < k; ++i) pi[i] = static_cast<T>(static_cast<double>(pi[i]) / s);
    y[r * k + arg] = T(1);
  }
  return make_op_node<T>(logits.shape(), std::move(y), {logits}, [logits, probs, n, k](TensorNode<T>& out) {
    if (!logits.requires_grad()) return;
    auto& gl = logits.raw()->ensure_grad();
    for (int64_t r = 0; r < n; ++r) {
      const T* pi = probs->data() + r * k;
      const T* gy = out.grad.data() + r * k;
      double dot = 0;
      for (int64_t i = 0; i < k; ++i) dot += static_cast<double>(gy[i]) * static_cast<double>(pi[i]);
      for (int64_t i = 0; i < k; ++i) gl[r * k + i] += pi[i] * (gy[i] - static_cast<T>(dot));
    }
  });
}

// ---------------------------------------------------------------------------
// categorical KL divergence
// ---------------------------------------------------------------------------

// Per-row KL(softmax(lp) || softmax(lq)) over the last dim; output (N).
template <typename T>
Tensor<T> kl_categorical(const Tensor<T>& lp, const Tensor<T>& lq) {
  detail::check_same_shape(lp, lq, "kl_categorical");
  auto [n, k] = detail::mat_dims(lp);
  auto pbuf = std::make_shared<std::vector<T>>(lp.data().size());
  auto qbuf = std::make_shared<std::vector<T>>(lp.data().size());
  auto diff = std::make_shared<std::vector<T>>(lp.data().size());  // logp - logq
  TVec<T> y(static_cast<size_t>(n));
  // log-softmax and the KL sum run in double regardless of T so tiny true
  // divergences never round negative
  auto logsm = [](const T* l, int64_t k, T* p, double* logp) {
    double mx = static_cast<double>(l[0]);
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(l[i]));
    double s = 0;
    for (int64_t i = 0; i < k; ++i) s += std::exp(static_cast<double>(l[i]) - mx);
    double lse = std::log(s) + mx;
    for (int64_t i = 0; i < k; ++i) {
      logp[i] = static_cast<double>(l[i]) - lse;
      p[i] = static_cast<T>(std::exp(logp[i]));
    }
  };
  std::vector<double> logp(static_cast<size_t>(k)), logq(static_cast<size_t>(k));
  for (int64_t r = 0; r < n; ++r) {
    logsm(lp.data().data() + r * k, k, pbuf->data() + r * k, logp.data());
    logsm(lq.data().data() + r * k, k, qbuf->data() + r * k, logq.data());
    double acc = 0;
    for (int64_t i = 0; i < k; ++i) {
      double d = logp[i] - logq[i];
      (*diff)[static_cast<size_t>(r * k + i)] = static_cast<T>(d);
      acc += std::exp(logp[i]) * d;
    }
    y[static_cast<size_t>(r)] = static_cast<T>(acc);
  }
  std::vector<int> out_shape(lp.shape().begin(), lp.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  return make_op_node<T>(std::move(out_shape), std::move(y), {lp, lq},
                         [lp, lq, pbuf, qbuf, diff, n, k](TensorNode<T>& out) {
                           for (int64_t r = 0; r < n; ++r) {
                             T kl = out.value[static_cast<size_t>(r)];
                             T g = out.grad[static_cast<size_t>(r)];
                             if (lp.requires_grad()) {
                               auto& glp = lp.raw()->ensure_grad();
                               for (int64_t i = 0; i < k; ++i) {
                                 T p = (*pbuf)[static_cast<size_t>(r * k + i)];
                                 glp[r * k + i] += g * p * ((*diff)[static_cast<size_t>(r * k + i)] - kl);
                               }
                             }
                             if (lq.requires_grad()) {
                               auto& glq = lq.raw()->ensure_grad();
                               for (int64_t i = 0; i < k; ++i) {
                                 T p = (*pbuf)[static_cast<size_t>(r * k + i)];
                                 T q = (*qbuf)[static_cast<size_t>(r * k + i)];
                                 glq[r * k + i] += g * (q - p);
                               }
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// misc helpers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> randn(std::vector<int> shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(rng.next_normal()) * stddev;
  return t;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace gwm
