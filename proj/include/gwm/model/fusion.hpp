// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gwm/core/layers.hpp"
#include "gwm/core/ops.hpp"

namespace gwm::model {

// Multimodal average-pooling transformer autoencoder: concatenates the MAE
// state tokens with one task token, encodes, mean-pools into the world-model
// embedding, and reconstructs the input tokens from the broadcast pooled
// vector (MSE against stop-gradient targets).
struct FusionConfig {
  int model_dim = 256;
  int state_tokens = 81;  // CLS + conv grid
  int task_dim = 6;
  int task_layers = 4;    // dense layers of width model_dim, ELU
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  float ln_eps = 1e-6f;
  double dropout = 0.1;

  int total_tokens() const { return state_tokens + 1; }
};

template <typename T>
class Fusion {
 public:
  Fusion(ParameterStore<T>& store, const std::string& prefix, const FusionConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    int D = cfg_.model_dim;
    int d = cfg_.task_dim;
    for (int i = 0; i < cfg_.task_layers; ++i) {
      task_mlp_.emplace_back(store, prefix + "/task" + std::to_string(i), d, D, rng);
      d = D;
    }
    for (int i = 0; i < cfg_.enc_layers; ++i)
      enc_blocks_.emplace_back(store, prefix + "/enc" + std::to_string(i), D, cfg_.heads,
                               cfg_.mlp_ratio, static_cast<T>(cfg_.ln_eps), cfg_.dropout, rng);
    enc_norm_ = LayerNorm<T>(store, prefix + "/enc_norm", D, static_cast<T>(cfg_.ln_eps), rng);
    for (int i = 0; i < cfg_.dec_layers; ++i)
      dec_blocks_.emplace_back(store, prefix + "/dec" + std::to_string(i), D, cfg_.heads,
                               cfg_.mlp_ratio, static_cast<T>(cfg_.ln_eps), cfg_.dropout, rng);
    dec_pos_ = store.param(prefix + "/dec_pos", {cfg_.total_tokens(), D}, Init::normal_002, rng);
  }

  const FusionConfig& config() const { return cfg_; }

  // task vector (B, task_dim) -> task token (B, 1, D)
  Tensor<T> task_token(const Tensor<T>& task) const {
    Tensor<T> h = task;
    for (auto& l : task_mlp_) h = elu(l.forward(h));
    return reshape(h, {task.dim(0), 1, cfg_.model_dim});
  }

  struct FuseOutput {
    Tensor<T> pooled;        // (B, D)
    Tensor<T> recon_loss;    // scalar
    Tensor<T> input_tokens;  // detached (B, S+1, D) encoder input
  };

  // recon_target, when given, replaces the stop-gradient copy of the input
  // as the reconstruction target. Gradient checks use it to hold the target
  // fixed at the linearization point; training never passes it.
  FuseOutput fuse(const Tensor<T>& state_tokens, const Tensor<T>& task, Rng& rng, bool training,
                  bool with_reconstruction = true, const Tensor<T>* recon_target = nullptr) const {
    check(state_tokens.ndim() == 3 && state_tokens.dim(1) == cfg_.state_tokens &&
              state_tokens.dim(2) == cfg_.model_dim,
          "fuse: state tokens must be (B," + std::to_string(cfg_.state_tokens) + ",D)");
    Tensor<T> input = concat_tokens<T>({state_tokens, task_token(task)});
    Tensor<T> x = input;
    for (auto& blk : enc_blocks_) x = blk.forward(x, rng, training);
    x = enc_norm_.forward(x);
    FuseOutput out;
    out.pooled = mean_tokens(x);
    out.input_tokens = input.detach();
    if (with_reconstruction) {
      Tensor<T> d = add_pos(tile_pooled(out.pooled, cfg_.total_tokens()), dec_pos_);
      for (auto& blk : dec_blocks_) d = blk.forward(d, rng, training);
      out.recon_loss = mse(d, recon_target ? *recon_target : stopgrad(input));
    }
    return out;
  }

  // Embedding-only path (no decoder) for the world model and the actor.
  Tensor<T> pooled_embed(const Tensor<T>& state_tokens, const Tensor<T>& task, Rng& rng,
                         bool training) const {
    return fuse(state_tokens, task, rng, training, /*with_reconstruction=*/false).pooled;
  }

 private:
  FusionConfig cfg_;
  std::vector<Dense<T>> task_mlp_;
  std::vector<TransformerBlock<T>> enc_blocks_, dec_blocks_;
  LayerNorm<T> enc_norm_;
  Tensor<T> dec_pos_;
};

}  // namespace gwm::model
