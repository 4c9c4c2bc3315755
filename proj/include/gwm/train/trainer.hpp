// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "gwm/core/checkpoint.hpp"
#include "gwm/env/env.hpp"
#include "gwm/ground/grounding.hpp"
#include "gwm/lang/embed.hpp"
#include "gwm/model/agent.hpp"
#include "gwm/model/fusion.hpp"
#include "gwm/model/gmae.hpp"
#include "gwm/model/rssm.hpp"
#include "gwm/train/config.hpp"
#include "gwm/train/replay.hpp"
#include "gwm/util/png.hpp"

namespace gwm::train {

// All learnable components plus the frozen embedder, built from one Config.
struct Models {
  model::GmaeConfig gmae_cfg;
  model::FusionConfig fusion_cfg;
  model::RssmConfig rssm_cfg;
  model::AgentConfig agent_cfg;
  ParameterStore<float> mae_store, wm_store, actor_store, critic_store, slow_store;
  std::unique_ptr<model::Gmae<float>> gmae;
  std::unique_ptr<model::Fusion<float>> fusion;
  std::unique_ptr<model::Rssm<float>> rssm;
  std::unique_ptr<model::Agent<float>> agent;
  std::unique_ptr<lang::LangEmbedder<float>> embedder;

  static Models build(Config& cfg, uint64_t seed) {
    Models m;
    m.gmae_cfg.image_h = cfg.env_height;
    m.gmae_cfg.image_w = cfg.env_width;
    m.gmae_cfg.model_dim = cfg.model_dim;
    m.gmae_cfg.conv_channels = cfg.conv_channels;
    m.gmae_cfg.encoder_layers = cfg.encoder_layers;
    m.gmae_cfg.decoder_layers = cfg.decoder_layers;
    m.gmae_cfg.heads = cfg.heads;
    m.gmae_cfg.mlp_ratio = cfg.mlp_ratio;
    m.gmae_cfg.ln_eps = static_cast<float>(cfg.ln_eps);
    m.gmae_cfg.dropout = cfg.dropout;
    m.gmae_cfg.mask_ratio = static_cast<float>(cfg.mask_ratio);
    m.gmae_cfg.validate();

    m.fusion_cfg.model_dim = cfg.model_dim;
    m.fusion_cfg.state_tokens = 1 + m.gmae_cfg.n_conv_tokens();
    m.fusion_cfg.task_layers = cfg.fusion_task_layers;
    m.fusion_cfg.enc_layers = cfg.fusion_enc_layers;
    m.fusion_cfg.dec_layers = cfg.fusion_dec_layers;
    m.fusion_cfg.heads = cfg.heads;
    m.fusion_cfg.mlp_ratio = cfg.mlp_ratio;
    m.fusion_cfg.ln_eps = static_cast<float>(cfg.ln_eps);
    m.fusion_cfg.dropout = cfg.dropout;

    m.rssm_cfg.deter = cfg.rssm_deter;
    m.rssm_cfg.stoch_dims = cfg.rssm_stoch_dims;
    m.rssm_cfg.stoch_classes = cfg.rssm_stoch_classes;
    m.rssm_cfg.hidden = cfg.rssm_hidden;
    m.rssm_cfg.embed_dim = cfg.model_dim;
    m.rssm_cfg.head_layers = cfg.rssm_head_layers;
    m.rssm_cfg.head_units = cfg.rssm_head_units;
    m.rssm_cfg.beta = static_cast<float>(cfg.rssm_beta);
    m.rssm_cfg.free_nats = static_cast<float>(cfg.rssm_free_nats);
    m.rssm_cfg.embed_pred = cfg.rssm_embed_pred;
    m.rssm_cfg.kl_balance = cfg.rssm_kl_balance;
    m.rssm_cfg.kl_balance_alpha = static_cast<float>(cfg.rssm_kl_balance_alpha);

    m.agent_cfg.feature_dim = m.rssm_cfg.feature_dim();
    m.agent_cfg.layers = cfg.agent_layers;
    m.agent_cfg.units = cfg.agent_units;
    m.agent_cfg.gamma = static_cast<float>(cfg.agent_gamma);
    m.agent_cfg.lam = static_cast<float>(cfg.agent_lambda);
    m.agent_cfg.entropy_coef = static_cast<float>(cfg.agent_entropy_coef);
    m.agent_cfg.slow_critic_interval = cfg.slow_critic_interval;
    m.agent_cfg.min_std = static_cast<float>(cfg.agent_min_std);
    m.agent_cfg.max_std = static_cast<float>(cfg.agent_max_std);
    m.agent_cfg.init_std = static_cast<float>(cfg.agent_init_std);
    m.agent_cfg.r_max = static_cast<float>(cfg.env_r_max);
    m.agent_cfg.f_max = static_cast<float>(cfg.env_f_max);

    Rng init(seed);
    Rng gmae_rng = init.split("gmae");
    Rng fusion_rng = init.split("fusion");
    Rng rssm_rng = init.split("rssm");
    Rng agent_rng = init.split("agent");
    m.gmae = std::make_unique<model::Gmae<float>>(m.mae_store, "gmae", m.gmae_cfg, gmae_rng);
    m.fusion = std::make_unique<model::Fusion<float>>(m.mae_store, "fusion", m.fusion_cfg, fusion_rng);
    m.rssm = std::make_unique<model::Rssm<float>>(m.wm_store, "rssm", m.rssm_cfg, rssm_rng);
    m.agent = std::make_unique<model::Agent<float>>(m.actor_store, m.critic_store, m.slow_store,
                                                    m.agent_cfg, agent_rng);
    m.embedder = std::make_unique<lang::LangEmbedder<float>>(cfg.lang_vocab, cfg.lang_embed_dim,
                                                             cfg.model_dim, cfg.lang_seed);
    return m;
  }
};

struct EvalFamilyResult {
  int layout_id = 0;
  double sr = 0, spl = 0;
  int episodes = 0;
};

struct EvalSummary {
  std::vector<EvalFamilyResult> families;
  double sr_avg = 0, spl_avg = 0;
  int total_episodes = 0;
};

// Training loop: interleaved collection (5 env steps per gradient step) and
// three optimizer groups (MAE+fusion, world model, actor-critic), periodic
// evaluation with empty-language tokens, metrics.jsonl, checkpoints.
class Trainer {
 public:
  Trainer(Config cfg, uint64_t seed, const std::string& out_dir)
      : cfg_(cfg),
        seed_(seed),
        out_dir_(out_dir),
        models_(Models::build(cfg_, seed)),
        buffer_(cfg_.replay_capacity),
        root_rng_(seed) {
    cfg_.validate();
    rng_env_ = root_rng_.split("env");
    rng_policy_ = root_rng_.split("policy");
    rng_batch_ = root_rng_.split("batch");
    rng_ground_ = root_rng_.split("ground");
    rng_mask_ = root_rng_.split("mask");
    rng_wm_ = root_rng_.split("wm");
    rng_ac_ = root_rng_.split("ac");

    env_cfg_ = make_env_config(cfg_);
    env_ = std::make_unique<env::NavEnv>(env_cfg_);

    if (!out_dir_.empty()) {
      std::filesystem::create_directories(out_dir_);
      std::filesystem::create_directories(out_dir_ + "/checkpoints");
      std::ofstream cf(out_dir_ + "/config.resolved");
      cf << cfg_.resolved_text();
      metrics_.open(out_dir_ + "/metrics.jsonl", std::ios::app);
    }
    grounding_cfg_ = make_grounding_config(cfg_);
    aug_params_ = make_aug_params(cfg_);
    if (cfg_.ema_encoder) {
      Rng dummy(0);
      for (auto& [k, p] : models_.mae_store.all())
        if (k.rfind("gmae/", 0) == 0) {
          ema_store_.param(k, p.shape(), Init::zeros, dummy);
          ema_store_.get(k).data() = p.data();
        }
    }
    start_time_ = std::chrono::steady_clock::now();
  }

  static env::EnvConfig make_env_config(const Config& cfg) {
    env::EnvConfig e;
    e.render.height = cfg.env_height;
    e.render.width = cfg.env_width;
    e.render.fov_h = static_cast<float>(cfg.env_fov);
    e.render.d_max = static_cast<float>(cfg.env_d_max);
    e.r_max = static_cast<float>(cfg.env_r_max);
    e.f_max = static_cast<float>(cfg.env_f_max);
    e.success_radius = static_cast<float>(cfg.env_success_radius);
    e.success_bonus = static_cast<float>(cfg.env_success_bonus);
    e.collision_penalty = static_cast<float>(cfg.env_collision_penalty);
    e.max_steps = cfg.env_max_steps;
    e.robot_radius = static_cast<float>(cfg.env_robot_radius);
    e.min_goal_dist = static_cast<float>(cfg.env_min_goal_dist);
    e.max_goal_dist = static_cast<float>(cfg.env_max_goal_dist);
    return e;
  }

  static ground::GroundingConfig make_grounding_config(const Config& cfg) {
    ground::GroundingConfig g;
    g.max_objects = cfg.ground_max_objects;
    g.margin_max = cfg.ground_margin_max;
    g.coverage_stop = static_cast<float>(cfg.ground_coverage_stop);
    g.distance_buckets.very_close = static_cast<float>(cfg.ground_dist_very_close);
    g.distance_buckets.close = static_cast<float>(cfg.ground_dist_close);
    if (!cfg.templates_path.empty()) g.templates = ground::load_templates(cfg.templates_path);
    return g;
  }

  static ground::AugmentParams make_aug_params(const Config& cfg) {
    ground::AugmentParams p;
    p.pad = static_cast<int>(cfg.aug_pad);
    p.hue_delta = static_cast<float>(cfg.aug_hue);
    p.brightness_delta = static_cast<float>(cfg.aug_brightness);
    p.contrast_delta = static_cast<float>(cfg.aug_contrast);
    p.saturation_delta = static_cast<float>(cfg.aug_saturation);
    p.blur_sigma_min = static_cast<float>(cfg.aug_blur_min);
    p.blur_sigma_max = static_cast<float>(cfg.aug_blur_max);
    p.grayscale_prob = static_cast<float>(cfg.aug_grayscale_prob);
    return p;
  }

  Config& config() { return cfg_; }
  Models& models() { return models_; }
  ReplayBuffer& buffer() { return buffer_; }
  int64_t env_steps() const { return env_steps_; }
  int64_t updates() const { return updates_; }
  const std::vector<double>& mae_loss_history() const { return mae_loss_history_; }
  const std::map<std::string, double>& phase_ms() const { return phase_ms_; }
  bool any_nonfinite_event() const { return nonfinite_events_ > 0; }

  // --------------------------------------------------------------------
  // training
  // --------------------------------------------------------------------

  void train() {
    train_until_env_steps(cfg_.total_env_steps);
    if (!out_dir_.empty()) save_checkpoint(out_dir_ + "/checkpoints/final.ckpt");
  }

  // Runs collection + updates until the env-step target; callable repeatedly.
  void train_until_env_steps(int64_t target) {
    if (env_steps_ == 0) start_new_episode();
    while (env_steps_ < target) {
      collect_step();
      if (env_steps_ == cfg_.prefill_steps) finish_prefill();
      if (env_steps_ > cfg_.prefill_steps && env_steps_ % cfg_.env_steps_per_update == 0) train_step();
      if (cfg_.eval_every > 0 && env_steps_ > cfg_.prefill_steps && env_steps_ % cfg_.eval_every == 0) {
        EvalSummary s = evaluate(cfg_.eval_episodes_periodic);
        log_eval(s);
      }
      if (cfg_.checkpoint_every > 0 && env_steps_ % cfg_.checkpoint_every == 0 && !out_dir_.empty())
        save_checkpoint(out_dir_ + "/checkpoints/step_" + std::to_string(env_steps_) + ".ckpt");
    }
  }

  // --------------------------------------------------------------------
  // evaluation protocol: held-out layout families and textures, empty
  // language tokens for every frame, no conv-token masking, policy mode.
  // --------------------------------------------------------------------

  enum class EvalPolicy { model, random };

  EvalSummary evaluate(int episodes_per_family, EvalPolicy policy = EvalPolicy::model,
                       const std::string& episodes_jsonl = "", const std::string& video_dir = "") {
    Rng eval_rng(seed_ ^ Rng::hash64("eval") ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(++eval_calls_)));
    std::ofstream ejson;
    if (!episodes_jsonl.empty()) ejson.open(episodes_jsonl, std::ios::app);
    EvalSummary summary;
    std::vector<env::EpisodeResult> all_results;
    env::NavEnv eval_env(env_cfg_);
    for (int fam = 0; fam < env::kTestLayoutFamilies; ++fam) {
      int family = env::kTrainLayoutFamilies + fam;
      std::vector<env::EpisodeResult> fam_results;
      for (int k = 0; k < episodes_per_family; ++k) {
        uint64_t scene_seed = eval_rng.next_u64();
        uint64_t episode_seed = eval_rng.next_u64();
        env::Observation obs = eval_env.reset(scene_seed, episode_seed, env::Split::test, family);
        model::LatentState<float> state = models_.rssm->initial(1);
        std::array<float, 2> prev_action{0.0f, 0.0f};
        bool done = false, success = false;
        int frame_idx = 0;
        while (!done) {
          env::Action act;
          if (policy == EvalPolicy::model) {
            NoGradGuard ng;
            Tensor<float> embed = embed_observation(obs);
            Tensor<float> action_t = Tensor<float>::from_vector({1, 2}, {prev_action[0], prev_action[1]});
            state = models_.rssm->observe(state, action_t, embed, eval_rng).posterior;
            act = models_.agent->act(*models_.rssm, state, model::Agent<float>::ActMode::eval, eval_rng);
          } else {
            act.rotation = static_cast<float>(eval_rng.next_uniform(-cfg_.env_r_max, cfg_.env_r_max));
            act.forward = static_cast<float>(eval_rng.next_uniform(0.0, cfg_.env_f_max));
          }
          if (!video_dir.empty() && k == 0) dump_frame(video_dir, family, frame_idx, obs);
          env::StepResult r = eval_env.step(act);
          model::Agent<float>::normalize_action(act, static_cast<float>(cfg_.env_r_max),
                                                static_cast<float>(cfg_.env_f_max), prev_action.data());
          obs = std::move(r.obs);
          done = r.done;
          success = r.success;
          ++frame_idx;
        }
        env::EpisodeResult res = eval_env.result(success);
        fam_results.push_back(res);
        all_results.push_back(res);
        if (ejson.is_open()) {
          nlohmann::json j{{"scene_seed", scene_seed}, {"layout_id", eval_env.scene().layout_id},
                           {"success", res.success},  {"l", res.shortest_path},
                           {"p", res.path_length},    {"steps", res.steps}};
          ejson << j.dump() << "\n";
        }
      }
      auto [sr, spl] = env::compute_spl(fam_results);
      summary.families.push_back({family, sr, spl, episodes_per_family});
    }
    double sr_sum = 0, spl_sum = 0;
    for (auto& f : summary.families) {
      sr_sum += f.sr;
      spl_sum += f.spl;
    }
    summary.sr_avg = sr_sum / summary.families.size();
    summary.spl_avg = spl_sum / summary.families.size();
    summary.total_episodes = static_cast<int>(all_results.size());
    if (ejson.is_open()) {
      nlohmann::json j{{"kind", "summary"}, {"sr_avg", summary.sr_avg}, {"spl_avg", summary.spl_avg}};
      for (auto& f : summary.families) {
        j["family_" + std::to_string(f.layout_id)] = {{"sr", f.sr}, {"spl", f.spl}};
      }
      ejson << j.dump() << "\n";
    }
    return summary;
  }

  // --------------------------------------------------------------------
  // checkpointing
  // --------------------------------------------------------------------

  void save_checkpoint(const std::string& path) {
    Checkpoint ck;
    ck.fingerprint = cfg_.fingerprint();
    ck.meta["env_steps"] = static_cast<double>(env_steps_);
    ck.meta["updates"] = static_cast<double>(updates_);
    ck.meta["mask_fill_r"] = grounding_cfg_.fill[0];
    ck.meta["mask_fill_g"] = grounding_cfg_.fill[1];
    ck.meta["mask_fill_b"] = grounding_cfg_.fill[2];
    ck.meta["lang_fingerprint"] = static_cast<double>(models_.embedder->fingerprint() >> 16);
    ck.groups["mae"] = models_.mae_store;
    ck.groups["wm"] = models_.wm_store;
    ck.groups["actor"] = models_.actor_store;
    ck.groups["critic"] = models_.critic_store;
    ck.groups["slow"] = models_.slow_store;
    if (cfg_.ema_encoder) ck.groups["ema"] = ema_store_;
    ck.save(path);
  }

  void load_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    check(ck.fingerprint == cfg_.fingerprint(), "incompatible checkpoint");
    ck.restore_group("mae", models_.mae_store);
    ck.restore_group("wm", models_.wm_store);
    ck.restore_group("actor", models_.actor_store);
    ck.restore_group("critic", models_.critic_store);
    ck.restore_group("slow", models_.slow_store);
    env_steps_ = static_cast<int64_t>(ck.meta.at("env_steps"));
    updates_ = static_cast<int64_t>(ck.meta.at("updates"));
    grounding_cfg_.fill[0] = static_cast<float>(ck.meta.at("mask_fill_r"));
    grounding_cfg_.fill[1] = static_cast<float>(ck.meta.at("mask_fill_g"));
    grounding_cfg_.fill[2] = static_cast<float>(ck.meta.at("mask_fill_b"));
  }

  // Fused observation embedding on the acting/eval path: clean frame, no
  // conv-token masking, constant empty-language tokens, dropout off.
  Tensor<float> embed_observation(const env::Observation& obs) {
    NoGradGuard ng;
    Tensor<float> img = obs_to_tensor(obs);
    Tensor<float> lang = empty_lang_batch(1);
    Tensor<float> tokens = models_.gmae->early_conv(img);
    Rng dummy(0);
    auto visible = models_.gmae->mask_tokens(1, 0.0f, dummy);
    Tensor<float> z = models_.gmae->encode(tokens, visible, lang, dummy, false);
    Tensor<float> st = models_.gmae->slice_language(z, visible);
    Tensor<float> task = Tensor<float>::from_vector({1, 6}, std::vector<float>(obs.task.begin(), obs.task.end()));
    return models_.fusion->pooled_embed(st, task, dummy, false);
  }

 private:
  // ------------------------------ collection ------------------------------

  void start_new_episode() {
    uint64_t scene_seed = rng_env_.next_u64();
    uint64_t episode_seed = rng_env_.next_u64();
    env::Observation obs = env_->reset(scene_seed, episode_seed, env::Split::train);
    current_obs_ = std::move(obs);
    current_ep_ = EpisodeRecord{};
    current_ep_.h = cfg_.env_height;
    current_ep_.w = cfg_.env_width;
    push_step(current_obs_, {0.0f, 0.0f}, 0.0f, 1.0f);
    agent_state_ = models_.rssm->initial(1);
    prev_action_ = {0.0f, 0.0f};
    episode_return_ = 0;
  }

  void push_step(const env::Observation& obs, std::array<float, 2> prev_action, float reward, float cont) {
    EpisodeStep step;
    step.rgb = obs.rgb;
    step.depth_q.resize(obs.depth.size());
    for (size_t i = 0; i < obs.depth.size(); ++i)
      step.depth_q[i] = quantize_depth(obs.depth[i], static_cast<float>(cfg_.env_d_max));
    step.task = obs.task;
    step.annotations = obs.annotations;
    step.prev_action = prev_action;
    step.reward = reward;
    step.cont = cont;
    current_ep_.steps.push_back(std::move(step));
  }

  void collect_step() {
    bool prefill = env_steps_ < cfg_.prefill_steps;
    env::Action act;
    if (prefill) {
      // bounce walk: mostly forward, committed turns after collisions, so the
      // seed data holds clean motion segments instead of wall jams
      if (prefill_turn_steps_ > 0) {
        --prefill_turn_steps_;
        act.rotation = prefill_turn_dir_ * static_cast<float>(rng_policy_.next_uniform(0.3, cfg_.env_r_max));
        act.forward = static_cast<float>(rng_policy_.next_uniform(0.0, 0.3 * cfg_.env_f_max));
      } else if (rng_policy_.next_bool(0.15)) {
        act.rotation = static_cast<float>(rng_policy_.next_uniform(-cfg_.env_r_max, cfg_.env_r_max));
        act.forward = static_cast<float>(rng_policy_.next_uniform(0.0, cfg_.env_f_max));
      } else {
        act.rotation = static_cast<float>(rng_policy_.next_uniform(-0.15, 0.15));
        act.forward = static_cast<float>(rng_policy_.next_uniform(0.5 * cfg_.env_f_max, cfg_.env_f_max));
      }
    } else {
      NoGradGuard ng;
      Tensor<float> embed = embed_observation(current_obs_);
      Tensor<float> action_t = Tensor<float>::from_vector({1, 2}, {prev_action_[0], prev_action_[1]});
      agent_state_ = models_.rssm->observe(agent_state_, action_t, embed, rng_policy_).posterior;
      act = models_.agent->act(*models_.rssm, agent_state_, model::Agent<float>::ActMode::explore,
                               rng_policy_);
      // epsilon-mixture with the bounce walk keeps motion statistics in the
      // buffer even when the policy mean has collapsed
      if (cfg_.explore_eps > 0 && rng_policy_.next_bool(cfg_.explore_eps)) {
        if (prefill_turn_steps_ > 0) {
          --prefill_turn_steps_;
          act.rotation = prefill_turn_dir_ * static_cast<float>(rng_policy_.next_uniform(0.3, cfg_.env_r_max));
          act.forward = static_cast<float>(rng_policy_.next_uniform(0.0, 0.3 * cfg_.env_f_max));
        } else {
          act.rotation = static_cast<float>(rng_policy_.next_uniform(-0.15, 0.15));
          act.forward = static_cast<float>(rng_policy_.next_uniform(0.5 * cfg_.env_f_max, cfg_.env_f_max));
        }
      }
    }
    env::StepResult r = env_->step(act);
    if ((prefill || cfg_.explore_eps > 0) && r.collision && prefill_turn_steps_ == 0) {
      prefill_turn_steps_ = rng_policy_.next_int(3, 8);
      prefill_turn_dir_ = rng_policy_.next_bool(0.5) ? 1.0f : -1.0f;
    }
    ++env_steps_;
    episode_return_ += r.reward;
    model::Agent<float>::normalize_action(act, static_cast<float>(cfg_.env_r_max),
                                          static_cast<float>(cfg_.env_f_max), prev_action_.data());
    push_step(r.obs, prev_action_, r.reward, r.success ? 0.0f : 1.0f);
    if (prefill) accumulate_fill_color(r.obs);
    current_obs_ = std::move(r.obs);
    if (r.done || env_steps_ == cfg_.prefill_steps) {
      log_episode(r.success);
      buffer_.add(std::move(current_ep_));
      start_new_episode();
    }
  }

  void accumulate_fill_color(const env::Observation& obs) {
    for (size_t i = 0; i < obs.rgb.size(); i += 3) {
      fill_acc_[0] += obs.rgb[i] / 255.0;
      fill_acc_[1] += obs.rgb[i + 1] / 255.0;
      fill_acc_[2] += obs.rgb[i + 2] / 255.0;
    }
    fill_count_ += obs.rgb.size() / 3;
  }

  void finish_prefill() {
    if (fill_count_ > 0) {
      for (int c = 0; c < 3; ++c)
        grounding_cfg_.fill[static_cast<size_t>(c)] = static_cast<float>(fill_acc_[static_cast<size_t>(c)] / fill_count_);
    }
    nlohmann::json j{{"step", env_steps_},
                     {"kind", "prefill_done"},
                     {"episodes", buffer_.episode_count()},
                     {"mask_fill", {grounding_cfg_.fill[0], grounding_cfg_.fill[1], grounding_cfg_.fill[2]}}};
    write_metrics(j);
  }

  // ------------------------------ helpers ------------------------------

  Tensor<float> obs_to_tensor(const env::Observation& obs) const {
    Tensor<float> t = Tensor<float>::zeros({1, obs.h, obs.w, 3});
    for (size_t i = 0; i < obs.rgb.size(); ++i) t.data()[i] = obs.rgb[i] / 255.0f;
    return t;
  }

  Tensor<float> empty_lang_batch(int batch) const {
    const Tensor<float>& e = models_.embedder->empty_embedding();
    Tensor<float> out = Tensor<float>::zeros({batch, lang::kTotalTokens, cfg_.model_dim});
    for (int b = 0; b < batch; ++b)
      std::copy(e.data().begin(), e.data().end(),
                out.data().begin() + static_cast<int64_t>(b) * e.numel());
    return out;
  }

  // ------------------------------ training step ------------------------------

  void train_step() {
    using Clock = std::chrono::steady_clock;
    auto t0 = Clock::now();
    ReplayBuffer::Batch batch = buffer_.sample(cfg_.batch_episodes, cfg_.seq_len, rng_batch_);
    double mae_loss = 0, fusion_loss = 0;
    bool ok_mae = mae_update(batch, mae_loss, fusion_loss);
    auto t1 = Clock::now();
    double wm_loss = 0, wm_kl = 0, wm_rew = 0, wm_cont = 0;
    std::vector<model::LatentState<float>> starts;
    bool ok_wm = wm_update(batch, wm_loss, wm_kl, wm_rew, wm_cont, starts);
    auto t2 = Clock::now();
    double actor_loss = 0, critic_loss = 0, entropy = 0, mean_return = 0;
    bool ok_ac = !starts.empty() && ac_update(starts, actor_loss, critic_loss, entropy, mean_return);
    auto t3 = Clock::now();
    phase_ms_["mae"] += std::chrono::duration<double, std::milli>(t1 - t0).count();
    phase_ms_["wm"] += std::chrono::duration<double, std::milli>(t2 - t1).count();
    phase_ms_["ac"] += std::chrono::duration<double, std::milli>(t3 - t2).count();

    if (ok_mae && ok_wm && ok_ac) {
      consecutive_skips_ = 0;
    } else {
      ++nonfinite_events_;
      ++consecutive_skips_;
      nlohmann::json j{{"step", env_steps_}, {"kind", "skip"},
                       {"mae_ok", ok_mae},   {"wm_ok", ok_wm},
                       {"ac_ok", ok_ac}};
      write_metrics(j);
      check(consecutive_skips_ <= cfg_.max_consecutive_skips,
            "aborting: too many consecutive non-finite updates");
    }
    ++updates_;
    mae_loss_history_.push_back(mae_loss);
    if (updates_ % cfg_.log_every_updates == 0) {
      nlohmann::json j{{"step", env_steps_},   {"kind", "train"},
                       {"update", updates_},   {"mae", mae_loss},
                       {"fusion", fusion_loss}, {"wm", wm_loss},
                       {"kl", wm_kl},          {"wm_reward", wm_rew},
                       {"wm_cont", wm_cont},   {"wm_embed", wm_embed_},
                       {"actor", actor_loss},
                       {"critic", critic_loss}, {"entropy", entropy},
                       {"imag_return", mean_return}, {"pi_absmean", policy_abs_mean_},
                       {"pi_std", policy_std_}};
      write_metrics(j);
    }
    // gradients that leaked into other groups through shared graph paths are
    // discarded here, never applied
    models_.mae_store.zero_grads();
    models_.wm_store.zero_grads();
    models_.actor_store.zero_grads();
    models_.critic_store.zero_grads();
    models_.slow_store.zero_grads();
  }

  bool mae_update(const ReplayBuffer::Batch& batch, double& mae_loss_out, double& fusion_loss_out) {
    int total = batch.B * batch.L;
    int F = std::min(cfg_.mae_frames_per_update, total);
    std::vector<int> frame_idx(static_cast<size_t>(total));
    std::iota(frame_idx.begin(), frame_idx.end(), 0);
    for (int i = 0; i < F; ++i) {
      int j = i + static_cast<int>(rng_ground_.next_below(static_cast<uint64_t>(total - i)));
      std::swap(frame_idx[static_cast<size_t>(i)], frame_idx[static_cast<size_t>(j)]);
    }

    int H = cfg_.env_height, W = cfg_.env_width, D = cfg_.model_dim;
    Tensor<float> images = Tensor<float>::zeros({F, H, W, 3});
    Tensor<float> lang = Tensor<float>::zeros({F, lang::kTotalTokens, D});
    Tensor<float> depth_target = Tensor<float>::zeros({F, H, W});
    Tensor<float> reward_target = Tensor<float>::zeros({F, 1});
    Tensor<float> task = Tensor<float>::zeros({F, 6});
    const Tensor<float>& empty_lang = models_.embedder->empty_embedding();

    for (int f = 0; f < F; ++f) {
      const EpisodeStep& step = *batch.steps[static_cast<size_t>(frame_idx[static_cast<size_t>(f)])];
      ground::ImageF img;
      img.h = H;
      img.w = W;
      img.rgb.resize(step.rgb.size());
      for (size_t i = 0; i < step.rgb.size(); ++i) img.rgb[i] = step.rgb[i] / 255.0f;
      std::vector<float> depth01(step.depth_q.size());
      for (size_t i = 0; i < depth01.size(); ++i) depth01[i] = dequantize_depth01(step.depth_q[i]);
      std::vector<env::Annotation> anns = step.annotations;
      img = ground::augment_full(img, aug_params_, rng_ground_, &depth01, &anns);

      const Tensor<float>* lang_rows = &empty_lang;
      Tensor<float> true_lang;
      if (cfg_.ablation != "no-mask-empty-lang") {
        ground::MaskedSample masked = ground::select_and_mask(img, anns, grounding_cfg_, rng_ground_);
        img = std::move(masked.masked_rgb);
        if (cfg_.ablation == "none" && !masked.descriptions.empty()) {
          true_lang = models_.embedder->embed(ground::joined_description(masked));
          lang_rows = &true_lang;
        }
      }
      std::copy(img.rgb.begin(), img.rgb.end(),
                images.data().begin() + static_cast<int64_t>(f) * H * W * 3);
      std::copy(lang_rows->data().begin(), lang_rows->data().end(),
                lang.data().begin() + static_cast<int64_t>(f) * lang::kTotalTokens * D);
      std::copy(depth01.begin(), depth01.end(),
                depth_target.data().begin() + static_cast<int64_t>(f) * H * W);
      reward_target.data()[static_cast<size_t>(f)] = step.reward;
      for (int i = 0; i < 6; ++i) task.data()[static_cast<size_t>(f) * 6 + i] = step.task[static_cast<size_t>(i)];
    }

    auto out = models_.gmae->forward(images, lang, static_cast<float>(cfg_.mask_ratio), rng_mask_, true);
    Tensor<float> mae_l = models_.gmae->mae_loss(out.depth, depth_target, out.reward, reward_target);
    auto fused = models_.fusion->fuse(out.state_tokens, task, rng_mask_, true);
    Tensor<float> total_l = add(mae_l, fused.recon_loss);
    mae_loss_out = mae_l.item();
    fusion_loss_out = fused.recon_loss.item();
    if (!std::isfinite(total_l.item())) return false;
    total_l.backward();
    AdamOpts opts{cfg_.mae_lr, 0.9, 0.999, cfg_.adam_eps, cfg_.grad_clip};
    bool ok = adam_step_from_grads(models_.mae_store, opts) == AdamStatus::ok;
    if (ok && cfg_.ema_encoder) {
      float d = static_cast<float>(cfg_.ema_decay);
      for (auto& [k, ema] : ema_store_.all()) {
        const auto& live = models_.mae_store.get(k).data();
        auto& buf = ema.data();
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = d * buf[i] + (1.0f - d) * live[i];
      }
    }
    return ok;
  }

  bool wm_update(const ReplayBuffer::Batch& batch, double& loss_out, double& kl_out, double& rew_out,
                 double& cont_out, std::vector<model::LatentState<float>>& starts_out) {
    int B = batch.B, L = batch.L, D = cfg_.model_dim;
    // clean-frame embeds for the whole window, no gradient into the MAE group
    auto e0 = std::chrono::steady_clock::now();
    Tensor<float> embeds;
    {
      NoGradGuard ng;
      int H = cfg_.env_height, W = cfg_.env_width;
      Tensor<float> images = Tensor<float>::zeros({B * L, H, W, 3});
      for (int i = 0; i < B * L; ++i) {
        const EpisodeStep& step = *batch.steps[static_cast<size_t>(i)];
        float* dst = images.data().data() + static_cast<int64_t>(i) * H * W * 3;
        for (size_t p = 0; p < step.rgb.size(); ++p) dst[p] = step.rgb[p] / 255.0f;
      }
      Tensor<float> lang = empty_lang_batch(B * L);
      Tensor<float> tokens = models_.gmae->early_conv(images);
      Rng dummy(0);
      auto visible = models_.gmae->mask_tokens(B * L, 0.0f, dummy);
      Tensor<float> z = models_.gmae->encode(tokens, visible, lang, dummy, false);
      Tensor<float> st = models_.gmae->slice_language(z, visible);
      Tensor<float> task = Tensor<float>::zeros({B * L, 6});
      for (int i = 0; i < B * L; ++i)
        for (int c = 0; c < 6; ++c)
          task.data()[static_cast<size_t>(i) * 6 + c] = batch.steps[static_cast<size_t>(i)]->task[static_cast<size_t>(c)];
      embeds = models_.fusion->pooled_embed(st, task, dummy, false);  // (B*L, D)
    }
    phase_ms_["wm_embed"] += std::chrono::duration<double, std::milli>(
        std::chrono::steady_clock::now() - e0).count();

    model::LatentState<float> state = models_.rssm->initial(B);
    std::vector<model::LatentState<float>> posts, priors;
    std::vector<Tensor<float>> rewards, conts, embed_targets;
    posts.reserve(static_cast<size_t>(L));
    for (int t = 0; t < L; ++t) {
      Tensor<float> action = Tensor<float>::zeros({B, 2});
      Tensor<float> embed_t = Tensor<float>::zeros({B, D});
      Tensor<float> reward_t = Tensor<float>::zeros({B, 1});
      Tensor<float> cont_t = Tensor<float>::zeros({B, 1});
      for (int b = 0; b < B; ++b) {
        const EpisodeStep& step = batch.at(b, t);
        action.data()[static_cast<size_t>(b) * 2] = step.prev_action[0];
        action.data()[static_cast<size_t>(b) * 2 + 1] = step.prev_action[1];
        std::copy_n(embeds.data().data() + (static_cast<int64_t>(b) * L + t) * D, D,
                    embed_t.data().data() + static_cast<int64_t>(b) * D);
        reward_t.data()[static_cast<size_t>(b)] = step.reward;
        cont_t.data()[static_cast<size_t>(b)] = batch.cont_at(b, t);
      }
      auto out = models_.rssm->observe(state, action, embed_t, rng_wm_);
      state = out.posterior;
      posts.push_back(out.posterior);
      priors.push_back(out.prior);
      rewards.push_back(reward_t);
      conts.push_back(cont_t);
      embed_targets.push_back(embed_t);
    }
    auto wm = models_.rssm->wm_loss(posts, priors, rewards, conts, static_cast<float>(cfg_.rssm_beta),
                                    &embed_targets);
    loss_out = wm.total.item();
    wm_embed_ = wm.embed_mse;
    kl_out = wm.kl;
    rew_out = wm.reward_mse;
    cont_out = wm.cont_bce;

    // detached posterior states become imagination start candidates
    int total = B * L;
    int N = std::min(cfg_.imagine_starts, total);
    std::vector<int> idx(static_cast<size_t>(total));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < N; ++i) {
      int j = i + static_cast<int>(rng_ac_.next_below(static_cast<uint64_t>(total - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    model::LatentState<float> starts;
    starts.deter = Tensor<float>::zeros({N, cfg_.rssm_deter});
    starts.stoch = Tensor<float>::zeros({N, models_.rssm_cfg.stoch_flat()});
    starts.logits = Tensor<float>::zeros({N, models_.rssm_cfg.stoch_flat()});
    for (int i = 0; i < N; ++i) {
      int b = idx[static_cast<size_t>(i)] / L, t = idx[static_cast<size_t>(i)] % L;
      const auto& post = posts[static_cast<size_t>(t)];
      std::copy_n(post.deter.data().data() + static_cast<int64_t>(b) * cfg_.rssm_deter, cfg_.rssm_deter,
                  starts.deter.data().data() + static_cast<int64_t>(i) * cfg_.rssm_deter);
      int sf = models_.rssm_cfg.stoch_flat();
      std::copy_n(post.stoch.data().data() + static_cast<int64_t>(b) * sf, sf,
                  starts.stoch.data().data() + static_cast<int64_t>(i) * sf);
      std::copy_n(post.logits.data().data() + static_cast<int64_t>(b) * sf, sf,
                  starts.logits.data().data() + static_cast<int64_t>(i) * sf);
    }
    starts_out.push_back(starts);

    if (!std::isfinite(loss_out)) return false;
    wm.total.backward();
    AdamOpts opts{cfg_.wm_lr, 0.9, 0.999, cfg_.adam_eps, cfg_.grad_clip};
    return adam_step_from_grads(models_.wm_store, opts) == AdamStatus::ok;
  }

  bool ac_update(const std::vector<model::LatentState<float>>& starts, double& actor_out,
                 double& critic_out, double& entropy_out, double& return_out) {
    auto traj = models_.agent->imagine_rollout(*models_.rssm, starts[0], cfg_.horizon, rng_ac_);
    {
      NoGradGuard ng;
      auto pol = models_.agent->policy(traj.features[0]);
      double am = 0, as = 0;
      for (float v : pol.mean.data()) am += std::abs(v);
      for (float v : pol.std.data()) as += v;
      policy_abs_mean_ = am / pol.mean.numel();
      policy_std_ = as / pol.std.numel();
    }
    auto losses = models_.agent->compute_losses(traj);
    actor_out = losses.actor_loss.item();
    critic_out = losses.critic_loss.item();
    entropy_out = losses.mean_entropy;
    return_out = losses.mean_return;
    if (!std::isfinite(actor_out) || !std::isfinite(critic_out)) return false;

    losses.actor_loss.backward();
    AdamOpts aopts{cfg_.actor_lr, 0.9, 0.999, cfg_.adam_eps, cfg_.grad_clip};
    bool ok = adam_step_from_grads(models_.actor_store, aopts) == AdamStatus::ok;
    // grads that reached the world model and slow critic through the
    // imagination graph are never applied
    models_.wm_store.zero_grads();
    models_.slow_store.zero_grads();

    losses.critic_loss.backward();
    AdamOpts copts{cfg_.critic_lr, 0.9, 0.999, cfg_.adam_eps, cfg_.grad_clip};
    ok = (adam_step_from_grads(models_.critic_store, copts) == AdamStatus::ok) && ok;
    models_.agent->after_critic_step(models_.critic_store, models_.slow_store);
    return ok;
  }

  // ------------------------------ logging ------------------------------

  void log_episode(bool success) {
    nlohmann::json j{{"step", env_steps_},
                     {"kind", "episode"},
                     {"return", episode_return_},
                     {"length", current_ep_.length() - 1},
                     {"success", success}};
    write_metrics(j);
  }

  void log_eval(const EvalSummary& s) {
    nlohmann::json j{{"step", env_steps_}, {"kind", "eval"}, {"sr_avg", s.sr_avg}, {"spl_avg", s.spl_avg}};
    for (auto& f : s.families)
      j["family_" + std::to_string(f.layout_id)] = {{"sr", f.sr}, {"spl", f.spl}};
    write_metrics(j);
  }

  void write_metrics(nlohmann::json& j) {
    j["wall"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time_).count();
    if (metrics_.is_open()) {
      metrics_ << j.dump() << "\n";
      metrics_.flush();
    }
  }

  void dump_frame(const std::string& dir, int family, int frame, const env::Observation& obs) {
    std::filesystem::create_directories(dir);
    char name[128];
    std::snprintf(name, sizeof(name), "%s/fam%d_%05d.png", dir.c_str(), family, frame);
    util::write_png(name, obs.rgb.data(), obs.w, obs.h, 3);
  }

  Config cfg_;
  uint64_t seed_;
  std::string out_dir_;
  Models models_;
  ParameterStore<float> ema_store_;
  ReplayBuffer buffer_;
  Rng root_rng_, rng_env_, rng_policy_, rng_batch_, rng_ground_, rng_mask_, rng_wm_, rng_ac_;
  env::EnvConfig env_cfg_;
  std::unique_ptr<env::NavEnv> env_;
  ground::GroundingConfig grounding_cfg_;
  ground::AugmentParams aug_params_;

  env::Observation current_obs_;
  EpisodeRecord current_ep_;
  model::LatentState<float> agent_state_;
  std::array<float, 2> prev_action_{0.0f, 0.0f};
  double episode_return_ = 0;

  double policy_abs_mean_ = 0, policy_std_ = 0, wm_embed_ = 0;
  int prefill_turn_steps_ = 0;
  float prefill_turn_dir_ = 1.0f;
  std::array<double, 3> fill_acc_{0, 0, 0};
  int64_t fill_count_ = 0;

  int64_t env_steps_ = 0;
  int64_t updates_ = 0;
  int64_t eval_calls_ = 0;
  int nonfinite_events_ = 0;
  int consecutive_skips_ = 0;
  std::vector<double> mae_loss_history_;
  std::map<std::string, double> phase_ms_;
  std::ofstream metrics_;
  std::chrono::steady_clock::time_point start_time_;
};

}  // namespace gwm::train
