// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gwm/core/layers.hpp"
#include "gwm/core/ops.hpp"

namespace gwm::model {

// Recurrent state-space world model: gated recurrent deterministic path plus
// categorical stochastic latents with straight-through samples. The posterior
// (representation model) conditions on the fused observation embedding; the
// prior (predictive memory model) sees only past state and action.
struct RssmConfig {
  int deter = 1024;
  int stoch_dims = 32;     // number of categoricals
  int stoch_classes = 32;  // classes per categorical
  int hidden = 1024;       // posterior/prior MLP hidden width
  int embed_dim = 256;     // fused observation embedding width
  int action_dim = 2;
  int head_layers = 4;     // reward / continuation heads
  int head_units = 400;
  float beta = 1.0f;       // KL scale
  float free_nats = 0.0f;  // KL below this contributes a constant (no gradient)
  bool kl_balance = false;
  float kl_balance_alpha = 0.8f;
  bool embed_pred = true;  // predict the fused embedding from the posterior

  int stoch_flat() const { return stoch_dims * stoch_classes; }
  int feature_dim() const { return deter + stoch_flat(); }
};

template <typename T>
struct LatentState {
  Tensor<T> deter;   // (B, deter)
  Tensor<T> stoch;   // (B, dims*classes) one-hot blocks
  Tensor<T> logits;  // (B, dims*classes)
};

template <typename T>
class Rssm {
 public:
  Rssm(ParameterStore<T>& store, const std::string& prefix, const RssmConfig& cfg, Rng& rng)
      : cfg_(cfg),
        input_proj_(store, prefix + "/input", cfg.stoch_flat() + cfg.action_dim, cfg.deter, rng),
        gru_(store, prefix + "/gru", cfg.deter, cfg.deter, rng),
        prior_mlp_(store, prefix + "/prior", cfg.deter, {cfg.hidden}, cfg.stoch_flat(), rng,
                   Init::normal_002),
        posterior_mlp_(store, prefix + "/posterior", cfg.deter + cfg.embed_dim, {cfg.hidden},
                       cfg.stoch_flat(), rng, Init::normal_002),
        reward_head_(store, prefix + "/reward",
                     cfg.feature_dim(), std::vector<int>(static_cast<size_t>(cfg.head_layers), cfg.head_units), 1,
                     rng, Init::normal_002),
        cont_head_(store, prefix + "/cont",
                   cfg.feature_dim(), std::vector<int>(static_cast<size_t>(cfg.head_layers), cfg.head_units), 1,
                   rng, Init::normal_002),
        embed_head_(store, prefix + "/embed",
                    cfg.feature_dim(), std::vector<int>(static_cast<size_t>(cfg.head_layers), cfg.head_units),
                    cfg.embed_dim, rng, Init::normal_002) {}

  const RssmConfig& config() const { return cfg_; }

  LatentState<T> initial(int batch) const {
    LatentState<T> s;
    s.deter = Tensor<T>::zeros({batch, cfg_.deter});
    s.stoch = Tensor<T>::zeros({batch, cfg_.stoch_flat()});
    s.logits = Tensor<T>::zeros({batch, cfg_.stoch_flat()});
    return s;
  }

  // Shared recurrent update: deter_t = GRU(f(stoch_{t-1}, a_{t-1}), deter_{t-1}).
  Tensor<T> step_deter(const LatentState<T>& prev, const Tensor<T>& action) const {
    Tensor<T> x = elu(input_proj_.forward(concat_cols<T>({prev.stoch, action})));
    return gru_.forward(x, prev.deter);
  }

  Tensor<T> prior_logits(const Tensor<T>& deter) const { return prior_mlp_.forward(deter); }
  Tensor<T> posterior_logits(const Tensor<T>& deter, const Tensor<T>& embed) const {
    return posterior_mlp_.forward(concat_cols<T>({deter, embed}));
  }

  // Gradient-check mode: the stochastic state becomes the softmax
  // expectation, whose forward is smooth and whose backward is identical to
  // the straight-through estimator's.
  void set_expected_stoch(bool on) { expected_stoch_ = on; }

  LatentState<T> sample_state(const Tensor<T>& deter, const Tensor<T>& logits, Rng& rng) const {
    LatentState<T> s;
    s.deter = deter;
    s.logits = logits;
    int B = deter.dim(0);
    Tensor<T> shaped = reshape(logits, {B * cfg_.stoch_dims, cfg_.stoch_classes});
    Tensor<T> sample = expected_stoch_ ? softmax(shaped) : categorical_sample_st(shaped, rng);
    s.stoch = reshape(sample, {B, cfg_.stoch_flat()});
    return s;
  }

  LatentState<T> mode_state(const Tensor<T>& deter, const Tensor<T>& logits) const {
    LatentState<T> s;
    s.deter = deter;
    s.logits = logits;
    int B = deter.dim(0);
    Tensor<T> shaped = reshape(logits, {B * cfg_.stoch_dims, cfg_.stoch_classes});
    s.stoch = reshape(categorical_mode_st(shaped), {B, cfg_.stoch_flat()});
    return s;
  }

  struct ObserveOutput {
    LatentState<T> posterior;
    LatentState<T> prior;
  };

  ObserveOutput observe(const LatentState<T>& prev, const Tensor<T>& action, const Tensor<T>& embed,
                        Rng& rng) const {
    Tensor<T> deter = step_deter(prev, action);
    ObserveOutput out;
    Tensor<T> prior_l = prior_logits(deter);
    Tensor<T> post_l = posterior_logits(deter, embed);
    out.prior = sample_state(deter, prior_l, rng);
    out.posterior = sample_state(deter, post_l, rng);
    return out;
  }

  // Predictive path only; never touches an observation embedding.
  LatentState<T> imagine(const LatentState<T>& prev, const Tensor<T>& action, Rng& rng) const {
    Tensor<T> deter = step_deter(prev, action);
    return sample_state(deter, prior_logits(deter), rng);
  }

  LatentState<T> imagine_mode(const LatentState<T>& prev, const Tensor<T>& action) const {
    Tensor<T> deter = step_deter(prev, action);
    return mode_state(deter, prior_logits(deter));
  }

  Tensor<T> feature(const LatentState<T>& s) const { return concat_cols<T>({s.deter, s.stoch}); }

  Tensor<T> reward(const Tensor<T>& feature) const { return reward_head_.forward(feature); }
  Tensor<T> cont_logit(const Tensor<T>& feature) const { return cont_head_.forward(feature); }
  Tensor<T> embed_pred(const Tensor<T>& feature) const { return embed_head_.forward(feature); }

  // Mean over the batch of the summed categorical KL(posterior || prior).
  Tensor<T> kl_term(const LatentState<T>& posterior, const LatentState<T>& prior) const {
    return kl_from_logits(posterior.logits, prior.logits);
  }

  Tensor<T> kl_from_logits(const Tensor<T>& post_logits, const Tensor<T>& prior_logits_t) const {
    int B = post_logits.dim(0);
    auto shape2 = [&](const Tensor<T>& t) {
      return reshape(t, {B * cfg_.stoch_dims, cfg_.stoch_classes});
    };
    if (!cfg_.kl_balance) {
      Tensor<T> rows = kl_categorical(shape2(post_logits), shape2(prior_logits_t));
      return scale(mean(rows), static_cast<T>(cfg_.stoch_dims));
    }
    // DreamerV2-style balancing, behind the config flag (default off)
    Tensor<T> lhs = kl_categorical(shape2(stopgrad(post_logits)), shape2(prior_logits_t));
    Tensor<T> rhs = kl_categorical(shape2(post_logits), shape2(stopgrad(prior_logits_t)));
    T a = static_cast<T>(cfg_.kl_balance_alpha);
    return scale(add(scale(mean(lhs), a), scale(mean(rhs), T(1) - a)),
                 static_cast<T>(cfg_.stoch_dims));
  }

  struct WmLoss {
    Tensor<T> total;
    double reward_mse = 0, cont_bce = 0, kl = 0, embed_mse = 0;
  };

  // Sequence loss: mean over time of [reward MSE + continuation log-loss +
  // fused-embedding MSE + beta * KL(posterior || prior)]. Eq. 5 is stated as
  // a maximized objective; this is its minimized negation with the
  // prediction terms expanded. The embedding term is the feature-space
  // reconstruction of the masked-world-model lineage; without it the
  // posterior has no reason to encode observations once rewards go sparse,
  // and it collapses onto the prior. Disable with embed_pred = false.
  WmLoss wm_loss(const std::vector<LatentState<T>>& posteriors,
                 const std::vector<LatentState<T>>& priors,
                 const std::vector<Tensor<T>>& reward_targets,
                 const std::vector<Tensor<T>>& cont_targets, float beta,
                 const std::vector<Tensor<T>>* embed_targets = nullptr) const {
    check(posteriors.size() == priors.size() && posteriors.size() == reward_targets.size() &&
              posteriors.size() == cont_targets.size(),
          "wm_loss: sequence length mismatch");
    check(!cfg_.embed_pred || (embed_targets && embed_targets->size() == posteriors.size()),
          "wm_loss: embed prediction enabled but targets missing");
    int L = static_cast<int>(posteriors.size());
    check(L >= 1, "wm_loss: empty sequence");
    WmLoss out;
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (int t = 0; t < L; ++t) {
      Tensor<T> feat = feature(posteriors[static_cast<size_t>(t)]);
      Tensor<T> r_mse = mse(reward(feat), reward_targets[static_cast<size_t>(t)]);
      Tensor<T> c_bce = bce_with_logits(cont_logit(feat), cont_targets[static_cast<size_t>(t)]);
      Tensor<T> kl = kl_from_logits(posteriors[static_cast<size_t>(t)].logits,
                                    priors[static_cast<size_t>(t)].logits);
      out.reward_mse += static_cast<double>(r_mse.item());
      out.cont_bce += static_cast<double>(c_bce.item());
      out.kl += static_cast<double>(kl.item());
      if (cfg_.free_nats > 0 && kl.item() < cfg_.free_nats)
        kl = Tensor<T>::scalar(static_cast<T>(cfg_.free_nats));  // free bits: no collapse pressure
      Tensor<T> step = add(add(r_mse, c_bce), scale(kl, static_cast<T>(beta)));
      if (cfg_.embed_pred) {
        Tensor<T> e_mse = mse(embed_pred(feat), (*embed_targets)[static_cast<size_t>(t)]);
        out.embed_mse += static_cast<double>(e_mse.item());
        step = add(step, e_mse);
      }
      total = add(total, step);
    }
    out.total = scale(total, T(1) / static_cast<T>(L));
    out.reward_mse /= L;
    out.cont_bce /= L;
    out.kl /= L;
    out.embed_mse /= L;
    return out;
  }

 private:
  RssmConfig cfg_;
  bool expected_stoch_ = false;
  Dense<T> input_proj_;
  GRUCell<T> gru_;
  MLP<T> prior_mlp_, posterior_mlp_;
  MLP<T> reward_head_, cont_head_, embed_head_;
};

}  // namespace gwm::model
