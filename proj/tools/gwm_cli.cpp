// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train / eval / gradcheck / render-dataset / ablate.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "gwm/core/runtime.hpp"
#include "gwm/harness/ablate.hpp"
#include "gwm/harness/gradsuite.hpp"
#include "gwm/train/trainer.hpp"
#include "gwm/util/png.hpp"

namespace {

using gwm::train::Config;
using gwm::train::Trainer;

struct CommonOpts {
  std::string preset = "desk";
  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--preset", opts.preset, "configuration preset: paper or desk")
      ->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--config", opts.config_path, "config file; overrides preset values");
  cmd->add_option("--set", opts.overrides, "extra key=value overrides (repeatable)");
  cmd->add_option("--seed", opts.seed, "run seed");
}

Config build_config(const CommonOpts& opts) {
  Config cfg;
  cfg.apply_preset(opts.preset);
  if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    size_t eq = kv.find('=');
    gwm::check(eq != std::string::npos, "--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

Config config_from_run_dir(const std::string& run_dir) {
  Config cfg;
  cfg.load_file(run_dir + "/config.resolved");
  cfg.validate();
  return cfg;
}

int cmd_train(const CommonOpts& common, const std::string& out_dir, const std::string& ablation) {
  Config cfg = build_config(common);
  if (!ablation.empty()) cfg.ablation = ablation;
  cfg.validate();
  Trainer trainer(cfg, common.seed, out_dir);
  std::cout << "training: " << cfg.total_env_steps << " env steps, ablation=" << cfg.ablation
            << ", out=" << out_dir << "\n";
  trainer.train();
  auto s = trainer.evaluate(cfg.eval_episodes_per_family, Trainer::EvalPolicy::model,
                            out_dir + "/eval_episodes.jsonl");
  std::cout << "final eval: SR " << s.sr_avg << " SPL " << s.spl_avg << " over "
            << s.total_episodes << " episodes\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, std::string checkpoint, int episodes, uint64_t seed,
             const std::string& out_path, const std::string& video_dir, bool random_policy) {
  Config cfg = config_from_run_dir(run_dir);
  if (checkpoint.empty()) checkpoint = run_dir + "/checkpoints/final.ckpt";
  Trainer trainer(cfg, seed, "");
  if (!random_policy) trainer.load_checkpoint(checkpoint);
  auto s = trainer.evaluate(episodes,
                            random_policy ? Trainer::EvalPolicy::random : Trainer::EvalPolicy::model,
                            out_path, video_dir);
  std::cout << "families:";
  for (auto& f : s.families) std::cout << "  layout " << f.layout_id << ": SR " << f.sr << " SPL " << f.spl;
  std::cout << "\nenv avg: SR " << s.sr_avg << " SPL " << s.spl_avg << " (" << s.total_episodes
            << " episodes)\n";
  return 0;
}

int cmd_gradcheck() {
  auto results = gwm::harness::run_grad_suite();
  double worst = 0;
  std::string worst_name;
  int failures = 0;
  std::string last_group;
  double group_worst = 0;
  auto flush_group = [&](const std::string& next) {
    if (!last_group.empty() && last_group != next) {
      std::cout << "  " << last_group << ": max rel err " << group_worst << "\n";
      group_worst = 0;
    }
    last_group = next;
  };
  for (auto& r : results) {
    std::string group = r.name.substr(0, r.name.find(':'));
    flush_group(group);
    group_worst = std::max(group_worst, r.max_rel_err);
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
    if (r.max_rel_err >= 1e-4) {
      ++failures;
      std::cout << "  FAIL " << r.name << ": " << r.max_rel_err << "\n";
    }
  }
  flush_group("");
  std::cout << results.size() << " checks, worst " << worst << " at " << worst_name << "\n";
  std::cout << (failures == 0 ? "gradcheck OK" : "gradcheck FAILED") << "\n";
  return failures == 0 ? 0 : 2;
}

int cmd_render_dataset(const CommonOpts& common, const std::string& out_dir, int samples,
                       const std::string& run_dir, std::string checkpoint) {
  Config cfg = run_dir.empty() ? build_config(common) : config_from_run_dir(run_dir);
  std::filesystem::create_directories(out_dir);
  Trainer trainer(cfg, common.seed, "");
  if (!run_dir.empty() || !checkpoint.empty()) {
    if (checkpoint.empty()) checkpoint = run_dir + "/checkpoints/final.ckpt";
    trainer.load_checkpoint(checkpoint);
  }
  auto& models = trainer.models();
  gwm::env::NavEnv env(Trainer::make_env_config(cfg));
  gwm::Rng rng(common.seed ^ 0x1234567ULL);

  // pass 1: frames and the dataset mean color for the mask fill
  std::vector<gwm::env::Observation> frames;
  std::array<double, 3> fill{0, 0, 0};
  int64_t count = 0;
  uint64_t scene_seed = rng.next_u64();
  gwm::env::Observation obs = env.reset(scene_seed, rng.next_u64(), gwm::env::Split::train);
  int since = 0;
  while (static_cast<int>(frames.size()) < samples) {
    gwm::env::Action a;
    a.rotation = static_cast<float>(rng.next_uniform(-cfg.env_r_max, cfg.env_r_max));
    a.forward = static_cast<float>(rng.next_uniform(0, cfg.env_f_max));
    auto r = env.step(a);
    for (size_t i = 0; i < r.obs.rgb.size(); i += 3) {
      fill[0] += r.obs.rgb[i] / 255.0;
      fill[1] += r.obs.rgb[i + 1] / 255.0;
      fill[2] += r.obs.rgb[i + 2] / 255.0;
      ++count;
    }
    if (++since >= 5 && !r.obs.annotations.empty()) {
      frames.push_back(r.obs);
      since = 0;
    }
    if (r.done) obs = env.reset(rng.next_u64(), rng.next_u64(), gwm::env::Split::train);
  }
  (void)obs;

  gwm::ground::GroundingConfig gcfg = Trainer::make_grounding_config(cfg);
  for (int c = 0; c < 3; ++c)
    gcfg.fill[static_cast<size_t>(c)] = count ? static_cast<float>(fill[static_cast<size_t>(c)] / count) : 0.5f;
  gwm::ground::AugmentParams aug = Trainer::make_aug_params(cfg);

  std::ofstream meta(out_dir + "/samples.jsonl");
  for (int i = 0; i < samples; ++i) {
    const auto& frame = frames[static_cast<size_t>(i)];
    gwm::ground::ImageF img = gwm::ground::to_image_f(frame);
    std::vector<float> depth01(frame.depth.size());
    for (size_t p = 0; p < depth01.size(); ++p)
      depth01[p] = frame.depth[p] / static_cast<float>(cfg.env_d_max);
    std::vector<gwm::env::Annotation> anns = frame.annotations;
    img = gwm::ground::augment_full(img, aug, rng, &depth01, &anns);
    gwm::ground::MaskedSample masked = gwm::ground::select_and_mask(img, anns, gcfg, rng);

    char name[64];
    std::snprintf(name, sizeof(name), "%04d", i);
    std::vector<uint8_t> bytes(masked.masked_rgb.rgb.size());
    for (size_t p = 0; p < bytes.size(); ++p)
      bytes[p] = static_cast<uint8_t>(std::clamp(masked.masked_rgb.rgb[p], 0.0f, 1.0f) * 255.0f);
    gwm::util::write_png(out_dir + "/" + name + "_masked.png", bytes.data(), frame.w, frame.h, 3);
    gwm::util::write_png(out_dir + "/" + name + "_rgb.png", frame.rgb.data(), frame.w, frame.h, 3);
    gwm::util::write_png_gray(out_dir + "/" + name + "_depth.png", depth01.data(), frame.w, frame.h);

    nlohmann::json j{{"sample", i},
                     {"descriptions", masked.descriptions},
                     {"masked_objects", masked.regions.size()},
                     {"annotations", frame.annotations.size()}};

    if (!run_dir.empty() || !checkpoint.empty()) {
      gwm::NoGradGuard ng;
      gwm::Tensor<float> images = gwm::Tensor<float>::zeros({1, frame.h, frame.w, 3});
      std::copy(masked.masked_rgb.rgb.begin(), masked.masked_rgb.rgb.end(), images.data().begin());
      gwm::Tensor<float> lang = gwm::Tensor<float>::zeros({1, 21, cfg.model_dim});
      gwm::Tensor<float> rows = masked.descriptions.empty()
                                    ? models.embedder->empty_embedding()
                                    : models.embedder->embed(gwm::ground::joined_description(masked));
      std::copy(rows.data().begin(), rows.data().end(), lang.data().begin());
      auto outp = models.gmae->forward(images, lang, static_cast<float>(cfg.mask_ratio), rng, false);
      gwm::util::write_png_gray(out_dir + "/" + name + "_pred.png", outp.depth.data().data(), frame.w,
                                frame.h);
      j["pred"] = name + std::string("_pred.png");
    }
    meta << j.dump() << "\n";
  }
  std::cout << "wrote " << samples << " grounded samples to " << out_dir << "\n";
  return 0;
}

int cmd_ablate(const CommonOpts& common, const std::string& out_dir, std::vector<uint64_t> seeds,
               int64_t env_steps, int episodes) {
  Config cfg = build_config(common);
  if (env_steps > 0) cfg.total_env_steps = env_steps;
  if (seeds.empty()) seeds = {1, 2, 3};
  auto report = gwm::harness::run_ablation(cfg, seeds, episodes, out_dir, std::cout);
  gwm::harness::print_ablation_table(report, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  gwm::tune_allocator();
  CLI::App app{"grounded world model: language-grounded representation learning, a recurrent "
               "world model, and an actor-critic trained in imagination, on a built-in "
               "procedural navigation environment"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  std::string train_out = "runs/default";
  std::string train_ablation;
  auto* train_cmd = app.add_subcommand("train", "train a full agent");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--ablation", train_ablation, "none | obj-mask-empty-lang | no-mask-empty-lang")
      ->check(CLI::IsMember({"none", "obj-mask-empty-lang", "no-mask-empty-lang"}));

  std::string eval_run, eval_ckpt, eval_out, eval_video;
  int eval_episodes = 100;
  uint64_t eval_seed = 7;
  bool eval_random = false;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  eval_cmd->add_option("--run", eval_run, "run directory holding config.resolved")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path (default <run>/checkpoints/final.ckpt)");
  eval_cmd->add_option("--episodes", eval_episodes, "episodes per held-out layout family");
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--out", eval_out, "per-episode JSONL output path");
  eval_cmd->add_option("--dump-video", eval_video, "dump PNG frames of one episode per family");
  eval_cmd->add_flag("--random-policy", eval_random, "evaluate the random-policy baseline instead");

  auto* grad_cmd = app.add_subcommand("gradcheck", "run the 64-bit gradient-check suite");

  CommonOpts rd_opts;
  std::string rd_out = "dataset_dump", rd_run, rd_ckpt;
  int rd_samples = 16;
  auto* rd_cmd = app.add_subcommand("render-dataset",
                                    "dump grounded samples: masked image, descriptions, depth target");
  add_common(rd_cmd, rd_opts);
  rd_cmd->add_option("--out", rd_out, "output directory");
  rd_cmd->add_option("--samples", rd_samples, "number of samples");
  rd_cmd->add_option("--run", rd_run, "run directory; adds depth predictions to the dump");
  rd_cmd->add_option("--checkpoint", rd_ckpt, "explicit checkpoint path");

  CommonOpts ab_opts;
  std::string ab_out = "ablation";
  std::vector<uint64_t> ab_seeds;
  int64_t ab_steps = -1;
  int ab_episodes = 25;
  auto* ab_cmd = app.add_subcommand("ablate", "train the full model and both ablation rows");
  add_common(ab_cmd, ab_opts);
  ab_cmd->add_option("--out", ab_out, "working directory (finished runs are reused)");
  ab_cmd->add_option("--seeds", ab_seeds, "run seeds (default 1 2 3)");
  ab_cmd->add_option("--env-steps", ab_steps, "override total env steps per run");
  ab_cmd->add_option("--episodes", ab_episodes, "eval episodes per held-out family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_opts, train_out, train_ablation);
    if (eval_cmd->parsed())
      return cmd_eval(eval_run, eval_ckpt, eval_episodes, eval_seed, eval_out, eval_video, eval_random);
    if (grad_cmd->parsed()) return cmd_gradcheck();
    if (rd_cmd->parsed()) return cmd_render_dataset(rd_opts, rd_out, rd_samples, rd_run, rd_ckpt);
    if (ab_cmd->parsed()) return cmd_ablate(ab_opts, ab_out, ab_seeds, ab_steps, ab_episodes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
