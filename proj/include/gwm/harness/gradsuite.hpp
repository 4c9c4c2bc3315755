// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gwm/core/gradcheck.hpp"
#include "gwm/core/layers.hpp"
#include "gwm/model/agent.hpp"
#include "gwm/model/fusion.hpp"
#include "gwm/model/gmae.hpp"
#include "gwm/model/rssm.hpp"

namespace gwm::harness {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0;
};

namespace detail {

// Sweep every parameter of a store against a scalar forward function. Each
// element is checked at two step sizes; truncation-limited elements pass at
// the small step, roundoff-limited ones at the large step.
inline void sweep_store(std::vector<GradCheckResult>& out, const std::string& tag,
                        ParameterStore<double>& store,
                        const std::function<Tensor<double>()>& forward) {
  for (auto& [key, p] : store.all()) {
    double err = grad_check2([&](const Tensor<double>&) { return forward(); }, p, 1e-4, 1e-3);
    out.push_back({tag + ":" + key, err});
  }
}

}  // namespace detail

// 64-bit gradient checks for every layer type plus miniature instances of
// every trainable module. Runs in about a minute.
inline std::vector<GradCheckResult> run_grad_suite() {
  std::vector<GradCheckResult> out;
  Rng rng(12345);

  // --- individual layer types ---
  {
    Tensor<double> x = randn<double>({3, 8}, rng);
    Tensor<double> w = randn<double>({3, 8}, rng);
    out.push_back({"op:softmax", grad_check([&](const Tensor<double>& t) { return sum(mul(softmax(t), w)); }, x)});
    out.push_back({"op:gelu", grad_check([&](const Tensor<double>& t) { return sum(mul(gelu(t), w)); }, x)});
    out.push_back({"op:elu", grad_check([&](const Tensor<double>& t) { return sum(mul(elu(t), w)); }, x)});
    Tensor<double> g = randn<double>({8}, rng), b = randn<double>({8}, rng);
    out.push_back({"op:layernorm",
                   grad_check([&](const Tensor<double>& t) { return sum(mul(layernorm(t, g, b, 1e-6), w)); }, x)});
    Tensor<double> lq = randn<double>({3, 8}, rng);
    out.push_back({"op:kl_categorical",
                   grad_check([&](const Tensor<double>& t) { return mean(kl_categorical(t, lq)); }, x)});
    out.push_back({"op:bce", grad_check(
                                 [&](const Tensor<double>& t) {
                                   return bce_with_logits(t, Tensor<double>::full({3, 8}, 0.7));
                                 },
                                 x)});
  }
  {
    ParameterStore<double> store;
    Rng init = rng.split("blk");
    TransformerBlock<double> blk(store, "blk", 8, 2, 2, 1e-6, 0.0, init);
    Tensor<double> x = randn<double>({1, 4, 8}, rng);
    Tensor<double> w = randn<double>({1, 4, 8}, rng);
    Rng fwd(0);
    detail::sweep_store(out, "attention_block", store, [&] {
      Rng r = fwd;
      return sum(mul(blk.forward(x, r, false), w));
    });
  }
  {
    ParameterStore<double> store;
    Rng init = rng.split("conv");
    Tensor<double> cw = store.param("w", {4, 4, 2, 3}, Init::he, init);
    Tensor<double> cb = store.param("b", {3}, Init::zeros, init);
    Tensor<double> x = randn<double>({1, 8, 8, 2}, rng, 0.5);
    ConvSpec spec{4, 4, 2, 1};
    Tensor<double> w = randn<double>({1, 4, 4, 3}, rng);
    detail::sweep_store(out, "conv2d", store, [&] { return sum(mul(conv2d(x, cw, cb, spec), w)); });
  }
  {
    ParameterStore<double> store;
    Rng init = rng.split("gru");
    GRUCell<double> cell(store, "gru", 5, 6, init);
    Tensor<double> x = randn<double>({2, 5}, rng);
    Tensor<double> h = randn<double>({2, 6}, rng);
    Tensor<double> w = randn<double>({2, 6}, rng);
    detail::sweep_store(out, "gru", store, [&] { return sum(mul(cell.forward(x, h), w)); });
  }

  // --- gmae mini: D=16, 2 heads, 2+1 layers, 4x4 conv map ---
  {
    model::GmaeConfig cfg;
    cfg.image_h = 64;
    cfg.image_w = 64;
    cfg.model_dim = 16;
    cfg.conv_channels = {4, 8, 12, 16};
    cfg.encoder_layers = 2;
    cfg.decoder_layers = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.dropout = 0.0;
    ParameterStore<double> store;
    Rng init = rng.split("gmae");
    model::Gmae<double> mae(store, "gmae", cfg, init);
    Tensor<double> img = randn<double>({1, 64, 64, 3}, rng, 0.3);
    Tensor<double> lang = randn<double>({1, 21, 16}, rng, 0.5);
    Tensor<double> depth_t = randn<double>({1, 64, 64}, rng, 0.2);
    Tensor<double> reward_t = randn<double>({1, 1}, rng, 0.5);
    Rng mask_rng(7);
    auto visible = mae.mask_tokens(1, 0.5f, mask_rng);
    detail::sweep_store(out, "gmae_mini", store, [&] {
      Rng r(0);
      Tensor<double> tokens = mae.early_conv(img);
      Tensor<double> z = mae.encode(tokens, visible, lang, r, false);
      Tensor<double> st = mae.slice_language(z, visible);
      auto dec = mae.decode(st, r, false);
      return mae.mae_loss(dec.depth, depth_t, dec.reward, reward_t);
    });
  }

  // --- fusion mini ---
  {
    model::FusionConfig cfg;
    cfg.model_dim = 16;
    cfg.state_tokens = 5;
    cfg.task_layers = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.dropout = 0.0;
    ParameterStore<double> store;
    Rng init = rng.split("fusion");
    model::Fusion<double> fusion(store, "fusion", cfg, init);
    Tensor<double> state = randn<double>({2, 5, 16}, rng, 0.5);
    Tensor<double> task = randn<double>({2, 6}, rng, 0.5);
    Tensor<double> wp = randn<double>({2, 16}, rng);
    // the reconstruction target is a stop-gradient copy of the input; freeze
    // it at the linearization point so finite differences stay consistent
    Tensor<double> frozen_target;
    {
      Rng r(0);
      frozen_target = fusion.fuse(state, task, r, false).input_tokens;
    }
    detail::sweep_store(out, "fusion_mini", store, [&] {
      Rng r(0);
      auto fused = fusion.fuse(state, task, r, false, true, &frozen_target);
      return add(fused.recon_loss, mean(mul(fused.pooled, wp)));
    });
  }

  // --- rssm mini: deter 16, 4x4 latents, sequence length 3 ---
  {
    model::RssmConfig cfg;
    cfg.deter = 16;
    cfg.stoch_dims = 4;
    cfg.stoch_classes = 4;
    cfg.hidden = 16;
    cfg.embed_dim = 8;
    cfg.head_layers = 2;
    cfg.head_units = 12;
    ParameterStore<double> store;
    Rng init = rng.split("rssm");
    model::Rssm<double> rssm(store, "rssm", cfg, init);
    rssm.set_expected_stoch(true);  // smooth surrogate; same backward as ST
    std::vector<Tensor<double>> actions, embeds, rewards, conts;
    Rng data(3);
    for (int t = 0; t < 3; ++t) {
      actions.push_back(randn<double>({2, 2}, data, 0.5));
      embeds.push_back(randn<double>({2, 8}, data, 1.0));
      rewards.push_back(randn<double>({2, 1}, data, 1.0));
      conts.push_back(Tensor<double>::full({2, 1}, 0.9));
    }
    detail::sweep_store(out, "rssm_mini", store, [&] {
      Rng r(0);
      model::LatentState<double> s = rssm.initial(2);
      std::vector<model::LatentState<double>> posts, priors;
      for (int t = 0; t < 3; ++t) {
        auto o = rssm.observe(s, actions[static_cast<size_t>(t)], embeds[static_cast<size_t>(t)], r);
        s = o.posterior;
        posts.push_back(o.posterior);
        priors.push_back(o.prior);
      }
      return rssm.wm_loss(posts, priors, rewards, conts, 1.0f, &embeds).total;
    });
  }

  // --- actor/critic mini over a short imagined rollout ---
  {
    model::RssmConfig rcfg;
    rcfg.deter = 12;
    rcfg.stoch_dims = 3;
    rcfg.stoch_classes = 4;
    rcfg.hidden = 12;
    rcfg.embed_dim = 6;
    rcfg.head_layers = 1;
    rcfg.head_units = 8;
    ParameterStore<double> wm_store, actor_store, critic_store, slow_store;
    Rng init = rng.split("ac");
    model::Rssm<double> rssm(wm_store, "rssm", rcfg, init);
    rssm.set_expected_stoch(true);
    model::AgentConfig acfg;
    acfg.feature_dim = rcfg.feature_dim();
    acfg.layers = 1;
    acfg.units = 8;
    acfg.entropy_coef = 1e-3f;
    model::Agent<double> agent(actor_store, critic_store, slow_store, acfg, init);
    // fixed start, fixed noise stream per evaluation
    Rng sr(5);
    model::LatentState<double> start = rssm.initial(3);
    start.deter = randn<double>({3, 12}, sr, 0.5);
    start.stoch = randn<double>({3, 12}, sr, 0.3);
    start.logits = randn<double>({3, 12}, sr, 0.3);
    // discount weights are stop-gradient; freeze them at the base point
    std::vector<Tensor<double>> frozen_weights;
    {
      Rng r(11);
      auto traj = agent.imagine_rollout(rssm, start, 3, r);
      frozen_weights = agent.rollout_weights(traj);
      for (auto& w : frozen_weights) w = w.detach();
    }
    detail::sweep_store(out, "actor_mini", actor_store, [&] {
      Rng r(11);
      auto traj = agent.imagine_rollout(rssm, start, 3, r);
      return agent.compute_losses(traj, &frozen_weights).actor_loss;
    });
    detail::sweep_store(out, "critic_mini", critic_store, [&] {
      Rng r(11);
      auto traj = agent.imagine_rollout(rssm, start, 3, r);
      return agent.compute_losses(traj, &frozen_weights).critic_loss;
    });
  }

  return out;
}

inline double grad_suite_worst(const std::vector<GradCheckResult>& results) {
  double worst = 0;
  for (auto& r : results) worst = std::max(worst, r.max_rel_err);
  return worst;
}

}  // namespace gwm::harness
