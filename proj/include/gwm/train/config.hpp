// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"

namespace gwm::train {

// Full run configuration. Defaults are the published paper-scale values;
// preset "desk" rescales the model for a single-core machine while keeping
// the architecture identical. Every field lands in config.resolved so a run
// is reproducible from its output directory alone.
struct Config {
  // environment
  int env_height = 128, env_width = 160;
  double env_fov = 1.2566371;  // 72 deg
  double env_d_max = 10.0;
  double env_r_max = 0.5, env_f_max = 0.25;
  double env_success_radius = 0.36, env_success_bonus = 10.0, env_collision_penalty = -0.1;
  int env_max_steps = 500;
  double env_robot_radius = 0.15;
  double env_min_goal_dist = 2.0, env_max_goal_dist = 7.0;

  // grounded masked autoencoder
  int model_dim = 256;
  std::vector<int> conv_channels = {32, 64, 128, 256};
  int encoder_layers = 4, decoder_layers = 3;
  int heads = 4, mlp_ratio = 4;
  double ln_eps = 1e-6, dropout = 0.1, mask_ratio = 0.75;
  bool ema_encoder = false;
  double ema_decay = 0.999;

  // fusion autoencoder
  int fusion_enc_layers = 2, fusion_dec_layers = 2, fusion_task_layers = 4;

  // language embedder
  int lang_vocab = 4096, lang_embed_dim = 64;
  uint64_t lang_seed = 1013904223ULL;

  // grounding / augmentation
  int ground_max_objects = 3, ground_margin_max = 10;
  double ground_coverage_stop = 0.75;
  double ground_dist_very_close = 1.0, ground_dist_close = 2.5;
  double aug_pad = 10, aug_hue = 0.1, aug_brightness = 0.4, aug_contrast = 0.4, aug_saturation = 0.2;
  double aug_blur_min = 0.1, aug_blur_max = 2.0, aug_grayscale_prob = 0.2;
  std::string templates_path;  // empty = built-in table

  // world model
  int rssm_deter = 1024, rssm_stoch_dims = 32, rssm_stoch_classes = 32, rssm_hidden = 1024;
  int rssm_head_layers = 4, rssm_head_units = 400;
  double rssm_beta = 1.0;
  double rssm_free_nats = 0.0;
  bool rssm_embed_pred = true;
  bool rssm_kl_balance = false;
  double rssm_kl_balance_alpha = 0.8;

  // actor-critic
  int agent_layers = 4, agent_units = 400;
  double agent_gamma = 0.99, agent_lambda = 0.95, agent_entropy_coef = 1e-4;
  int slow_critic_interval = 100;
  double agent_min_std = 0.1, agent_max_std = 1.0, agent_init_std = 0.5;
  int horizon = 15;

  // training schedule
  int64_t total_env_steps = 100000;
  int64_t prefill_steps = 5000;
  int env_steps_per_update = 5;
  int batch_episodes = 16, seq_len = 50;
  int64_t replay_capacity = 300000;
  int mae_frames_per_update = 64;  // subset of the B*L batch used for the MAE step
  int imagine_starts = 128;        // subset of posterior states used as rollout starts
  double mae_lr = 1e-4, wm_lr = 3e-4, actor_lr = 1e-4, critic_lr = 1e-4;
  double adam_eps = 1e-5, grad_clip = 100.0;
  int64_t eval_every = 5000, checkpoint_every = 10000;
  int eval_episodes_periodic = 4;
  double explore_eps = 0.0;  // prob. of a scripted bounce-walk action during collection
  int eval_episodes_per_family = 100;
  int log_every_updates = 20;
  int max_consecutive_skips = 100;

  std::string ablation = "none";  // none | obj-mask-empty-lang | no-mask-empty-lang

  // -------------------------------------------------------------------------

  void apply_preset(const std::string& name) {
    if (name == "paper") return;  // defaults
    check(name == "desk", "unknown preset: " + name);
    env_height = 64;
    env_width = 80;
    model_dim = 128;
    conv_channels = {16, 32, 64, 128};
    encoder_layers = 2;
    decoder_layers = 2;
    mlp_ratio = 2;
    fusion_enc_layers = 1;
    fusion_dec_layers = 1;
    rssm_deter = 256;
    rssm_stoch_dims = 16;
    rssm_stoch_classes = 16;
    rssm_hidden = 256;
    rssm_head_layers = 3;
    rssm_head_units = 200;
    agent_layers = 3;
    agent_units = 200;
    batch_episodes = 8;
    seq_len = 25;
    mae_frames_per_update = 32;
    imagine_starts = 48;
    total_env_steps = 50000;
    agent_entropy_coef = 1e-3;
    rssm_kl_balance = true;
    rssm_free_nats = 2.0;
    explore_eps = 0.1;
    eval_episodes_periodic = 2;
    checkpoint_every = 25000;
  }

  struct Binding {
    std::string key;
    std::variant<int*, int64_t*, double*, bool*, uint64_t*, std::string*, std::vector<int>*> ref;
  };

  std::vector<Binding> bindings() {
    return {
        {"env.height", &env_height},
        {"env.width", &env_width},
        {"env.fov", &env_fov},
        {"env.d_max", &env_d_max},
        {"env.r_max", &env_r_max},
        {"env.f_max", &env_f_max},
        {"env.success_radius", &env_success_radius},
        {"env.success_bonus", &env_success_bonus},
        {"env.collision_penalty", &env_collision_penalty},
        {"env.max_steps", &env_max_steps},
        {"env.robot_radius", &env_robot_radius},
        {"env.min_goal_dist", &env_min_goal_dist},
        {"env.max_goal_dist", &env_max_goal_dist},
        {"model.dim", &model_dim},
        {"model.conv_channels", &conv_channels},
        {"model.encoder_layers", &encoder_layers},
        {"model.decoder_layers", &decoder_layers},
        {"model.heads", &heads},
        {"model.mlp_ratio", &mlp_ratio},
        {"model.ln_eps", &ln_eps},
        {"model.dropout", &dropout},
        {"model.mask_ratio", &mask_ratio},
        {"model.ema_encoder", &ema_encoder},
        {"model.ema_decay", &ema_decay},
        {"fusion.enc_layers", &fusion_enc_layers},
        {"fusion.dec_layers", &fusion_dec_layers},
        {"fusion.task_layers", &fusion_task_layers},
        {"lang.vocab", &lang_vocab},
        {"lang.embed_dim", &lang_embed_dim},
        {"lang.seed", &lang_seed},
        {"ground.max_objects", &ground_max_objects},
        {"ground.margin_max", &ground_margin_max},
        {"ground.coverage_stop", &ground_coverage_stop},
        {"ground.dist_very_close", &ground_dist_very_close},
        {"ground.dist_close", &ground_dist_close},
        {"ground.templates_path", &templates_path},
        {"aug.pad", &aug_pad},
        {"aug.hue", &aug_hue},
        {"aug.brightness", &aug_brightness},
        {"aug.contrast", &aug_contrast},
        {"aug.saturation", &aug_saturation},
        {"aug.blur_min", &aug_blur_min},
        {"aug.blur_max", &aug_blur_max},
        {"aug.grayscale_prob", &aug_grayscale_prob},
        {"rssm.deter", &rssm_deter},
        {"rssm.stoch_dims", &rssm_stoch_dims},
        {"rssm.stoch_classes", &rssm_stoch_classes},
        {"rssm.hidden", &rssm_hidden},
        {"rssm.head_layers", &rssm_head_layers},
        {"rssm.head_units", &rssm_head_units},
        {"rssm.beta", &rssm_beta},
        {"rssm.free_nats", &rssm_free_nats},
        {"rssm.embed_pred", &rssm_embed_pred},
        {"rssm.kl_balance", &rssm_kl_balance},
        {"rssm.kl_balance_alpha", &rssm_kl_balance_alpha},
        {"agent.layers", &agent_layers},
        {"agent.units", &agent_units},
        {"agent.gamma", &agent_gamma},
        {"agent.lambda", &agent_lambda},
        {"agent.entropy_coef", &agent_entropy_coef},
        {"agent.slow_critic_interval", &slow_critic_interval},
        {"agent.min_std", &agent_min_std},
        {"agent.max_std", &agent_max_std},
        {"agent.init_std", &agent_init_std},
        {"agent.horizon", &horizon},
        {"train.total_env_steps", &total_env_steps},
        {"train.prefill_steps", &prefill_steps},
        {"train.env_steps_per_update", &env_steps_per_update},
        {"train.batch_episodes", &batch_episodes},
        {"train.seq_len", &seq_len},
        {"train.replay_capacity", &replay_capacity},
        {"train.mae_frames_per_update", &mae_frames_per_update},
        {"train.imagine_starts", &imagine_starts},
        {"train.mae_lr", &mae_lr},
        {"train.wm_lr", &wm_lr},
        {"train.actor_lr", &actor_lr},
        {"train.critic_lr", &critic_lr},
        {"train.adam_eps", &adam_eps},
        {"train.grad_clip", &grad_clip},
        {"train.eval_every", &eval_every},
        {"train.checkpoint_every", &checkpoint_every},
        {"train.eval_episodes_periodic", &eval_episodes_periodic},
        {"train.explore_eps", &explore_eps},
        {"train.log_every_updates", &log_every_updates},
        {"train.max_consecutive_skips", &max_consecutive_skips},
        {"eval.episodes_per_family", &eval_episodes_per_family},
        {"ablation", &ablation},
    };
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& b : bindings()) {
      if (b.key != key) continue;
      std::visit(
          [&](auto* ptr) {
            using P = std::remove_pointer_t<decltype(ptr)>;
            if constexpr (std::is_same_v<P, int>) {
              *ptr = std::stoi(value);
            } else if constexpr (std::is_same_v<P, int64_t>) {
              *ptr = std::stoll(value);
            } else if constexpr (std::is_same_v<P, double>) {
              *ptr = std::stod(value);
            } else if constexpr (std::is_same_v<P, uint64_t>) {
              *ptr = std::stoull(value);
            } else if constexpr (std::is_same_v<P, bool>) {
              *ptr = value == "true" || value == "1";
            } else if constexpr (std::is_same_v<P, std::string>) {
              *ptr = value;
            } else {  // vector<int>, comma separated
              ptr->clear();
              std::stringstream ss(value);
              std::string item;
              while (std::getline(ss, item, ',')) ptr->push_back(std::stoi(item));
            }
          },
          b.ref);
      return;
    }
    throw std::runtime_error("unknown config key: " + key);
  }

  std::string get(const std::string& key) {
    for (auto& b : bindings()) {
      if (b.key != key) continue;
      return std::visit(
          [&](auto* ptr) -> std::string {
            using P = std::remove_pointer_t<decltype(ptr)>;
            if constexpr (std::is_same_v<P, bool>) {
              return *ptr ? "true" : "false";
            } else if constexpr (std::is_same_v<P, std::string>) {
              return *ptr;
            } else if constexpr (std::is_same_v<P, std::vector<int>>) {
              std::string s;
              for (size_t i = 0; i < ptr->size(); ++i) s += (i ? "," : "") + std::to_string((*ptr)[i]);
              return s;
            } else if constexpr (std::is_same_v<P, double>) {
              std::ostringstream os;
              os.precision(17);
              os << *ptr;
              return os.str();
            } else {
              return std::to_string(*ptr);
            }
          },
          b.ref);
    }
    throw std::runtime_error("unknown config key: " + key);
  }

  // "key = value" lines; '#' comments.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      size_t eq = line.find('=');
      if (eq == std::string::npos) {
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        check(blank, "config parse error at line " + std::to_string(lineno));
        continue;
      }
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  std::string resolved_text() {
    std::string out = "# resolved configuration\n";
    for (auto& b : bindings()) out += b.key + " = " + get(b.key) + "\n";
    return out;
  }

  // Architecture fingerprint: everything a checkpoint's shapes depend on.
  uint64_t fingerprint() {
    static const char* arch_keys[] = {
        "env.height",       "env.width",         "model.dim",         "model.conv_channels",
        "model.encoder_layers", "model.decoder_layers", "model.heads",  "model.mlp_ratio",
        "fusion.enc_layers", "fusion.dec_layers", "fusion.task_layers", "lang.vocab",
        "lang.embed_dim",   "lang.seed",         "rssm.deter",        "rssm.stoch_dims",
        "rssm.stoch_classes", "rssm.hidden",     "rssm.head_layers",  "rssm.head_units",
        "agent.layers",     "agent.units",
    };
    std::string blob;
    for (const char* k : arch_keys) blob += std::string(k) + "=" + get(k) + ";";
    return Rng::hash64(blob);
  }

  void validate() {
    check(env_height % 16 == 0 && env_width % 16 == 0, "resolution must be divisible by 16");
    check(mae_lr > 0 && wm_lr > 0 && actor_lr > 0 && critic_lr > 0, "learning rates must be positive");
    check(mask_ratio >= 0 && mask_ratio < 1, "mask ratio must be in [0,1)");
    check(ablation == "none" || ablation == "obj-mask-empty-lang" || ablation == "no-mask-empty-lang",
          "unknown ablation: " + ablation);
    check(batch_episodes >= 1 && seq_len >= 1, "batch shape must be positive");
    check(env_steps_per_update >= 1, "env_steps_per_update must be >= 1");
  }
};

}  // namespace gwm::train
