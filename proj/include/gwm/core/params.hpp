// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gwm/core/ops.hpp"
#include "gwm/core/tensor.hpp"

namespace gwm {

enum class Init { zeros, ones, normal_002, he, small_normal };

// Named parameter container for one optimizer group. Keys are hierarchical
// ("enc/block0/attn/wqkv"); iteration order is the sorted key order so every
// run touches parameters in the same sequence.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> param(const std::string& key, std::vector<int> shape, Init init, Rng& rng) {
    auto it = params_.find(key);
    if (it != params_.end()) {
      check(it->second.shape() == shape, "param: shape mismatch for existing key " + key);
      return it->second;
    }
    Tensor<T> t = Tensor<T>::zeros(shape, true);
    int64_t fan_in = shape.size() >= 2 ? shape_numel(shape) / shape.back() : t.numel();
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(t.data().begin(), t.data().end(), T(1));
        break;
      case Init::normal_002:
        for (auto& v : t.data()) v = static_cast<T>(rng.next_normal() * 0.02);
        break;
      case Init::he:
        for (auto& v : t.data())
          v = static_cast<T>(rng.next_normal() * std::sqrt(2.0 / static_cast<double>(fan_in)));
        break;
      case Init::small_normal:
        for (auto& v : t.data()) v = static_cast<T>(rng.next_normal() * 0.001);
        break;
    }
    params_.emplace(key, t);
    return t;
  }

  bool has(const std::string& key) const { return params_.count(key) > 0; }
  Tensor<T> get(const std::string& key) const {
    auto it = params_.find(key);
    check(it != params_.end(), "ParameterStore: unknown key " + key);
    return it->second;
  }

  const std::map<std::string, Tensor<T>>& all() const { return params_; }
  std::map<std::string, Tensor<T>>& all() { return params_; }

  int64_t total_params() const {
    int64_t n = 0;
    for (auto& [k, t] : params_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [k, t] : params_) t.zero_grad();
  }

  // Copies values from another store with identical keys/shapes (slow critic).
  void copy_values_from(const ParameterStore& other) {
    check(params_.size() == other.params_.size(), "copy_values_from: store size mismatch");
    auto it = other.params_.begin();
    for (auto& [k, t] : params_) {
      check(k == it->first && t.shape() == it->second.shape(), "copy_values_from: key mismatch at " + k);
      t.data() = it->second.data();
      ++it;
    }
  }

  // --- Adam state (one group per store) ---
  struct OptState {
    std::vector<T> m, v;
  };
  std::map<std::string, OptState>& opt_state() { return opt_; }
  const std::map<std::string, OptState>& opt_state() const { return opt_; }
  int64_t& step_counter() { return step_; }
  int64_t step_counter() const { return step_; }

 private:
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, OptState> opt_;
  int64_t step_ = 0;
};

enum class AdamStatus { ok, non_finite_gradient };

struct AdamOpts {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-5;
  double clip = 100.0;  // global grad-norm clip over the group
};

// One Adam step over an explicit named gradient map. The global gradient norm
// over the map is clipped to <= opts.clip before the update. A non-finite
// gradient anywhere leaves the store untouched (including its step counter).
template <typename T>
AdamStatus adam_step(ParameterStore<T>& store, const std::map<std::string, const TVec<T>*>& grads,
                     const AdamOpts& opts) {
  if (grads.empty()) return AdamStatus::ok;
  double sq = 0;
  for (auto& [key, g] : grads) {
    check(store.has(key), "adam_step: gradient for unknown key " + key);
    check(static_cast<int64_t>(g->size()) == store.get(key).numel(), "adam_step: grad shape mismatch at " + key);
    for (T v : *g) {
      if (!std::isfinite(static_cast<double>(v))) return AdamStatus::non_finite_gradient;
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  double norm = std::sqrt(sq);
  double scale_g = (opts.clip > 0 && norm > opts.clip) ? opts.clip / norm : 1.0;

  int64_t t = ++store.step_counter();
  double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(t));
  for (auto& [key, g] : grads) {
    Tensor<T> p = store.get(key);
    auto& st = store.opt_state()[key];
    if (st.m.empty()) {
      st.m.assign(p.data().size(), T(0));
      st.v.assign(p.data().size(), T(0));
    }
    for (size_t i = 0; i < p.data().size(); ++i) {
      double gi = static_cast<double>((*g)[i]) * scale_g;
      double m = opts.beta1 * static_cast<double>(st.m[i]) + (1.0 - opts.beta1) * gi;
      double v = opts.beta2 * static_cast<double>(st.v[i]) + (1.0 - opts.beta2) * gi * gi;
      st.m[i] = static_cast<T>(m);
      st.v[i] = static_cast<T>(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      p.data()[i] -= static_cast<T>(opts.lr * mhat / (std::sqrt(vhat) + opts.eps));
    }
  }
  return AdamStatus::ok;
}

// Convenience: collect accumulated .grad buffers of every parameter that has
// one, step, then clear them.
template <typename T>
AdamStatus adam_step_from_grads(ParameterStore<T>& store, const AdamOpts& opts) {
  std::map<std::string, const TVec<T>*> grads;
  for (auto& [key, p] : store.all())
    if (p.has_grad()) grads.emplace(key, &p.grad_ref());
  AdamStatus st = adam_step(store, grads, opts);
  store.zero_grads();
  return st;
}

}  // namespace gwm
