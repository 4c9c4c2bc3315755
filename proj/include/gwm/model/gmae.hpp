// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "gwm/core/layers.hpp"
#include "gwm/core/ops.hpp"
#include "gwm/core/params.hpp"

namespace gwm::model {

// Grounded masked autoencoder: early-conv tokenization, conv-token masking,
// language-token concatenation, transformer encode, language slicing, and
// decoding to a full-resolution depth map plus a scalar reward off the CLS
// token.
struct GmaeConfig {
  int image_h = 128, image_w = 160;
  int model_dim = 256;
  std::vector<int> conv_channels = {32, 64, 128, 256};  // last must equal model_dim
  int encoder_layers = 4;
  int decoder_layers = 3;
  int heads = 4;
  int mlp_ratio = 4;
  float ln_eps = 1e-6f;
  double dropout = 0.1;
  float mask_ratio = 0.75f;
  int lang_tokens = 21;

  int downsample() const { return 1 << static_cast<int>(conv_channels.size()); }
  int conv_rows() const { return image_h / downsample(); }
  int conv_cols() const { return image_w / downsample(); }
  int n_conv_tokens() const { return conv_rows() * conv_cols(); }
  int n_visible(float m) const {
    return static_cast<int>(std::lround((1.0 - m) * n_conv_tokens()));
  }
  int patch_px() const { return downsample(); }

  void validate() const {
    check(image_h % downsample() == 0 && image_w % downsample() == 0,
          "gmae: resolution not divisible by the conv downsample factor");
    check(!conv_channels.empty() && conv_channels.back() == model_dim,
          "gmae: conv channels must end at model_dim (patchify has patch size 1)");
    check(model_dim % heads == 0, "gmae: model_dim not divisible by heads");
    check(model_dim % 4 == 0, "gmae: model_dim must be divisible by 4 for 2-D encodings");
  }
};

template <typename T>
class Gmae {
 public:
  Gmae(ParameterStore<T>& store, const std::string& prefix, const GmaeConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    cfg_.validate();
    int in_c = 3;
    for (size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      int oc = cfg_.conv_channels[i];
      conv_w_.push_back(store.param(prefix + "/conv" + std::to_string(i) + "/w", {4, 4, in_c, oc},
                                    Init::he, rng));
      conv_b_.push_back(store.param(prefix + "/conv" + std::to_string(i) + "/b", {oc}, Init::zeros, rng));
      in_c = oc;
    }
    int D = cfg_.model_dim;
    cls_token_ = store.param(prefix + "/cls", {D}, Init::normal_002, rng);
    mask_token_ = store.param(prefix + "/mask_token", {D}, Init::normal_002, rng);
    lang_pos_ = store.param(prefix + "/lang_pos", {cfg_.lang_tokens, D}, Init::normal_002, rng);
    visual_pos_ = sincos_pos_2d<T>(cfg_.conv_rows(), cfg_.conv_cols(), D);
    for (int i = 0; i < cfg_.encoder_layers; ++i)
      enc_blocks_.emplace_back(store, prefix + "/enc" + std::to_string(i), D, cfg_.heads,
                               cfg_.mlp_ratio, static_cast<T>(cfg_.ln_eps), cfg_.dropout, rng);
    enc_norm_ = LayerNorm<T>(store, prefix + "/enc_norm", D, static_cast<T>(cfg_.ln_eps), rng);
    for (int i = 0; i < cfg_.decoder_layers; ++i)
      dec_blocks_.emplace_back(store, prefix + "/dec" + std::to_string(i), D, cfg_.heads,
                               cfg_.mlp_ratio, static_cast<T>(cfg_.ln_eps), cfg_.dropout, rng);
    dec_norm_ = LayerNorm<T>(store, prefix + "/dec_norm", D, static_cast<T>(cfg_.ln_eps), rng);
    int P = cfg_.patch_px();
    depth_head_ = Dense<T>(store, prefix + "/depth_head", D, P * P, rng, Init::normal_002);
    reward_head_ = Dense<T>(store, prefix + "/reward_head", D, 1, rng, Init::normal_002);
  }

  const GmaeConfig& config() const { return cfg_; }
  const Tensor<T>& visual_positions() const { return visual_pos_; }

  // (B,H,W,3) in [0,1] -> conv tokens (B, Nc, D); patchify is a reshape
  // because the conv map already has width model_dim and patch size 1.
  Tensor<T> early_conv(const Tensor<T>& image) const {
    check(image.ndim() == 4 && image.dim(3) == 3, "early_conv: need (B,H,W,3)");
    check(image.dim(1) == cfg_.image_h && image.dim(2) == cfg_.image_w,
          "early_conv: resolution mismatch");
    ConvSpec spec{4, 4, 2, 1};
    Tensor<T> h = image;
    for (size_t i = 0; i < conv_w_.size(); ++i) h = elu(conv2d(h, conv_w_[i], conv_b_[i], spec));
    return reshape(h, {image.dim(0), cfg_.n_conv_tokens(), cfg_.model_dim});
  }

  // Uniform without-replacement keep set of round((1-m)*Nc) tokens per frame;
  // returned indices are in raster order. m = 0 yields the identity map.
  std::vector<std::vector<int>> mask_tokens(int batch, float mask_ratio, Rng& rng) const {
    check(mask_ratio >= 0.0f && mask_ratio < 1.0f, "mask_tokens: ratio must be in [0,1)");
    int n = cfg_.n_conv_tokens();
    int keep = cfg_.n_visible(mask_ratio);
    check(keep >= 1, "mask_tokens: nothing visible at this ratio");
    std::vector<std::vector<int>> out(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      std::vector<int> perm(static_cast<size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      for (int i = 0; i < keep; ++i) {
        int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(n - i)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
      }
      perm.resize(static_cast<size_t>(keep));
      std::sort(perm.begin(), perm.end());
      out[static_cast<size_t>(b)] = std::move(perm);
    }
    return out;
  }

  // concat [CLS; visible conv tokens + 2-D positions; language tokens +
  // learned positions] and run the encoder stack. Language tokens are never
  // masked.
  Tensor<T> encode(const Tensor<T>& conv_tokens, const std::vector<std::vector<int>>& visible,
                   const Tensor<T>& lang, Rng& rng, bool training) const {
    int B = conv_tokens.dim(0);
    check(lang.ndim() == 3 && lang.dim(0) == B && lang.dim(1) == cfg_.lang_tokens &&
              lang.dim(2) == cfg_.model_dim,
          "encode: language tokens must be (B,21,D)");
    Tensor<T> vis = gather_tokens(add_pos(conv_tokens, visual_pos_), visible);
    Tensor<T> cls = tile_token(cls_token_, B, 1);
    Tensor<T> lng = add_pos(lang, lang_pos_);
    Tensor<T> x = concat_tokens<T>({cls, vis, lng});
    for (auto& blk : enc_blocks_) x = blk.forward(x, rng, training);
    return enc_norm_.forward(x);
  }

  // Drop the language rows, scatter visible rows back to raster positions,
  // fill hidden positions with the learned mask token, re-add positions,
  // keep CLS in front: (B, 1+Nc, D).
  Tensor<T> slice_language(const Tensor<T>& z, const std::vector<std::vector<int>>& visible) const {
    int B = z.dim(0);
    int m = static_cast<int>(visible.empty() ? 0 : visible[0].size());
    check(z.dim(1) == 1 + m + cfg_.lang_tokens, "slice_language: unexpected sequence length");
    Tensor<T> cls = slice_tokens(z, 0, 1);
    Tensor<T> vis = slice_tokens(z, 1, 1 + m);
    Tensor<T> base = tile_token(mask_token_, B, cfg_.n_conv_tokens());
    Tensor<T> grid = add_pos(scatter_tokens(vis, visible, base), visual_pos_);
    return concat_tokens<T>({cls, grid});
  }

  struct DecodeOutput {
    Tensor<T> depth;   // (B, H, W), same unit as the normalized target
    Tensor<T> reward;  // (B, 1)
  };

  DecodeOutput decode(const Tensor<T>& state_tokens, Rng& rng, bool training) const {
    check(state_tokens.dim(1) == 1 + cfg_.n_conv_tokens(), "decode: expected (B, 1+Nc, D)");
    Tensor<T> x = state_tokens;
    for (auto& blk : dec_blocks_) x = blk.forward(x, rng, training);
    x = dec_norm_.forward(x);
    Tensor<T> cls = reshape(slice_tokens(x, 0, 1), {x.dim(0), cfg_.model_dim});
    Tensor<T> grid = slice_tokens(x, 1, 1 + cfg_.n_conv_tokens());
    Tensor<T> patches = depth_head_.forward(grid);  // (B, Nc, P*P)
    DecodeOutput out;
    out.depth = assemble_patches(patches, cfg_.conv_rows(), cfg_.conv_cols(), cfg_.patch_px());
    out.reward = reward_head_.forward(cls);
    return out;
  }

  // Mean over ALL pixels of the squared depth error plus the squared reward
  // error; no visible/masked weighting.
  Tensor<T> mae_loss(const Tensor<T>& depth_hat, const Tensor<T>& depth_target,
                     const Tensor<T>& reward_hat, const Tensor<T>& reward_target) const {
    return add(mse(depth_hat, depth_target), mse(reward_hat, reward_target));
  }

  // Full masked forward pass: images (B,H,W,3), language (B,21,D).
  struct ForwardOutput {
    Tensor<T> state_tokens;  // (B, 1+Nc, D)
    Tensor<T> depth;
    Tensor<T> reward;
    std::vector<std::vector<int>> visible;
  };

  ForwardOutput forward(const Tensor<T>& images, const Tensor<T>& lang, float mask_ratio, Rng& rng,
                        bool training) const {
    ForwardOutput out;
    Tensor<T> tokens = early_conv(images);
    out.visible = mask_tokens(images.dim(0), mask_ratio, rng);
    Tensor<T> z = encode(tokens, out.visible, lang, rng, training);
    out.state_tokens = slice_language(z, out.visible);
    DecodeOutput dec = decode(out.state_tokens, rng, training);
    out.depth = dec.depth;
    out.reward = dec.reward;
    return out;
  }

 private:
  GmaeConfig cfg_;
  std::vector<Tensor<T>> conv_w_, conv_b_;
  Tensor<T> cls_token_, mask_token_, lang_pos_, visual_pos_;
  std::vector<TransformerBlock<T>> enc_blocks_, dec_blocks_;
  LayerNorm<T> enc_norm_, dec_norm_;
  Dense<T> depth_head_, reward_head_;
};

}  // namespace gwm::model
