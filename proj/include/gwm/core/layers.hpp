// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gwm/core/ops.hpp"
#include "gwm/core/params.hpp"

namespace gwm {

// All layers register their parameters in a ParameterStore under a caller
// chosen prefix at construction and keep Tensor handles; forward() builds
// graph nodes against those handles.

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(ParameterStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
        Init init = Init::he)
      : w_(store.param(prefix + "/w", {in, out}, init, rng)),
        b_(store.param(prefix + "/b", {out}, Init::zeros, rng)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return add_bias(matmul(x, w_), b_); }

 private:
  Tensor<T> w_, b_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& prefix, int dim, T eps, Rng& rng)
      : gamma_(store.param(prefix + "/gamma", {dim}, Init::ones, rng)),
        beta_(store.param(prefix + "/beta", {dim}, Init::zeros, rng)),
        eps_(eps) {}

  Tensor<T> forward(const Tensor<T>& x) const { return layernorm(x, gamma_, beta_, eps_); }

 private:
  Tensor<T> gamma_, beta_;
  T eps_ = T(1e-6);
};

template <typename T>
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParameterStore<T>& store, const std::string& prefix, int dim, int heads,
                         Rng& rng)
      : wqkv_(store.param(prefix + "/wqkv", {dim, 3 * dim}, Init::normal_002, rng)),
        bqkv_(store.param(prefix + "/bqkv", {3 * dim}, Init::zeros, rng)),
        wo_(store.param(prefix + "/wo", {dim, dim}, Init::normal_002, rng)),
        bo_(store.param(prefix + "/bo", {dim}, Init::zeros, rng)),
        heads_(heads),
        dim_(dim) {}

  // x: (B,S,D) -> (B,S,D)
  Tensor<T> forward(const Tensor<T>& x) const {
    int D = dim_;
    Tensor<T> qkv = add_bias(matmul(x, wqkv_), bqkv_);  // (B,S,3D)
    Tensor<T> q = split_heads(slice_cols(qkv, 0, D), heads_);
    Tensor<T> k = split_heads(slice_cols(qkv, D, 2 * D), heads_);
    Tensor<T> v = split_heads(slice_cols(qkv, 2 * D, 3 * D), heads_);
    T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(D / heads_)));
    Tensor<T> scores = scale(bmm(q, k, /*tb=*/true), inv_sqrt);  // (B*h,S,S)
    Tensor<T> probs = softmax(scores);
    Tensor<T> ctx = merge_heads(bmm(probs, v), heads_);  // (B,S,D)
    return add_bias(matmul(ctx, wo_), bo_);
  }

 private:
  Tensor<T> wqkv_, bqkv_, wo_, bo_;
  int heads_ = 1, dim_ = 0;
};

// Pre-norm transformer block: x + Attn(LN(x)); x + MLP(LN(x)). GELU in the
// MLP, dropout on both residual branches.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParameterStore<T>& store, const std::string& prefix, int dim, int heads,
                   int mlp_ratio, T ln_eps, double dropout_rate, Rng& rng)
      : ln1_(store, prefix + "/ln1", dim, ln_eps, rng),
        attn_(store, prefix + "/attn", dim, heads, rng),
        ln2_(store, prefix + "/ln2", dim, ln_eps, rng),
        fc1_(store, prefix + "/fc1", dim, dim * mlp_ratio, rng, Init::normal_002),
        fc2_(store, prefix + "/fc2", dim * mlp_ratio, dim, rng, Init::normal_002),
        dropout_(dropout_rate) {}

  Tensor<T> forward(const Tensor<T>& x, Rng& rng, bool training) const {
    Tensor<T> h = add(x, dropout(attn_.forward(ln1_.forward(x)), dropout_, rng, training));
    Tensor<T> m = fc2_.forward(gelu(fc1_.forward(ln2_.forward(h))));
    return add(h, dropout(m, dropout_, rng, training));
  }

 private:
  LayerNorm<T> ln1_;
  MultiHeadSelfAttention<T> attn_;
  LayerNorm<T> ln2_;
  Dense<T> fc1_, fc2_;
  double dropout_ = 0.0;
};

// Stack of dense layers with ELU activations after every hidden layer.
template <typename T>
class MLP {
 public:
  MLP() = default;
  MLP(ParameterStore<T>& store, const std::string& prefix, int in, std::vector<int> hidden, int out,
      Rng& rng, Init head_init = Init::he)
      : out_dim_(out) {
    int d = in;
    for (size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(store, prefix + "/h" + std::to_string(i), d, hidden[i], rng);
      d = hidden[i];
    }
    head_ = Dense<T>(store, prefix + "/out", d, out, rng, head_init);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (auto& l : layers_) h = elu(l.forward(h));
    return head_.forward(h);
  }

  int out_dim() const { return out_dim_; }

 private:
  std::vector<Dense<T>> layers_;
  Dense<T> head_;
  int out_dim_ = 0;
};

// Single GRU cell; hidden state carries across time in the caller.
template <typename T>
class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParameterStore<T>& store, const std::string& prefix, int in, int hidden, Rng& rng)
      : wz_(store, prefix + "/z", in + hidden, hidden, rng),
        wr_(store, prefix + "/r", in + hidden, hidden, rng),
        wh_(store, prefix + "/h", in + hidden, hidden, rng) {}

  // x: (B,in), h: (B,hidden) -> (B,hidden)
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& h) const {
    Tensor<T> xh = concat_cols<T>({x, h});
    Tensor<T> z = sigmoid(wz_.forward(xh));
    Tensor<T> r = sigmoid(wr_.forward(xh));
    Tensor<T> xrh = concat_cols<T>({x, mul(r, h)});
    Tensor<T> cand = tanh_t(wh_.forward(xrh));
    // h' = (1-z)*cand + z*h
    Tensor<T> one_minus_z = add_scalar(scale(z, T(-1)), T(1));
    return add(mul(one_minus_z, cand), mul(z, h));
  }

 private:
  Dense<T> wz_, wr_, wh_;
};

// 2-D sine/cosine positional encodings over a (rows x cols) grid, dim D.
// First half of D encodes the row coordinate, second half the column.
template <typename T>
Tensor<T> sincos_pos_2d(int rows, int cols, int D) {
  check(D % 4 == 0, "sincos_pos_2d: D must be divisible by 4");
  int quarter = D / 4;
  Tensor<T> pe = Tensor<T>::zeros({rows * cols, D});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      T* row = pe.data().data() + static_cast<int64_t>(r * cols + c) * D;
      for (int i = 0; i < quarter; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / (D / 2.0));
        row[2 * i] = static_cast<T>(std::sin(r * freq));
        row[2 * i + 1] = static_cast<T>(std::cos(r * freq));
        row[D / 2 + 2 * i] = static_cast<T>(std::sin(c * freq));
        row[D / 2 + 2 * i + 1] = static_cast<T>(std::cos(c * freq));
      }
    }
  return pe;
}

}  // namespace gwm
