// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gwm/train/trainer.hpp"

namespace gwm::harness {

// One trained-and-evaluated run of a variant.
struct AblationRun {
  std::string variant;  // "none" | "obj-mask-empty-lang" | "no-mask-empty-lang"
  uint64_t seed = 0;
  double sr_avg = 0, spl_avg = 0;
  std::vector<double> family_sr, family_spl;  // per held-out layout family
};

struct AblationReport {
  std::vector<AblationRun> runs;
  double random_sr = -1, random_spl = -1;  // random-policy baseline

  double mean_sr(const std::string& variant) const {
    double acc = 0;
    int n = 0;
    for (auto& r : runs)
      if (r.variant == variant) {
        acc += r.sr_avg;
        ++n;
      }
    return n ? acc / n : 0;
  }
  double mean_spl(const std::string& variant) const {
    double acc = 0;
    int n = 0;
    for (auto& r : runs)
      if (r.variant == variant) {
        acc += r.spl_avg;
        ++n;
      }
    return n ? acc / n : 0;
  }
};

namespace detail {

inline std::string run_dir(const std::string& work_dir, const std::string& variant, uint64_t seed) {
  return work_dir + "/" + variant + "_s" + std::to_string(seed);
}

inline bool load_cached_run(const std::string& dir, AblationRun& out) {
  std::ifstream is(dir + "/result.json");
  if (!is.good()) return false;
  nlohmann::json j;
  is >> j;
  out.variant = j.at("variant").get<std::string>();
  out.seed = j.at("seed").get<uint64_t>();
  out.sr_avg = j.at("sr_avg").get<double>();
  out.spl_avg = j.at("spl_avg").get<double>();
  out.family_sr = j.at("family_sr").get<std::vector<double>>();
  out.family_spl = j.at("family_spl").get<std::vector<double>>();
  return true;
}

inline void save_run(const std::string& dir, const AblationRun& r) {
  nlohmann::json j{{"variant", r.variant}, {"seed", r.seed},         {"sr_avg", r.sr_avg},
                   {"spl_avg", r.spl_avg}, {"family_sr", r.family_sr}, {"family_spl", r.family_spl}};
  std::ofstream os(dir + "/result.json");
  os << j.dump(2) << "\n";
}

}  // namespace detail

// Trains and evaluates every (variant, seed) pair on held-out layouts and
// textures. Finished runs are cached by their result.json, so interrupted
// sweeps resume where they stopped.
inline AblationReport run_ablation(const train::Config& base, const std::vector<uint64_t>& seeds,
                                   int eval_episodes_per_family, const std::string& work_dir,
                                   std::ostream& log) {
  const std::vector<std::string> variants = {"none", "obj-mask-empty-lang", "no-mask-empty-lang"};
  std::filesystem::create_directories(work_dir);
  AblationReport report;

  // random-policy baseline (cached alongside the runs)
  {
    std::string rpath = work_dir + "/random_baseline.json";
    std::ifstream is(rpath);
    if (is.good()) {
      nlohmann::json j;
      is >> j;
      report.random_sr = j.at("sr").get<double>();
      report.random_spl = j.at("spl").get<double>();
    } else {
      train::Config cfg = base;
      train::Trainer t(cfg, 424243, "");
      int episodes = std::max(eval_episodes_per_family, 334);  // ~1000-episode oracle
      auto s = t.evaluate(episodes, train::Trainer::EvalPolicy::random);
      report.random_sr = s.sr_avg;
      report.random_spl = s.spl_avg;
      nlohmann::json j{{"sr", s.sr_avg}, {"spl", s.spl_avg}, {"episodes_per_family", episodes}};
      std::ofstream os(rpath);
      os << j.dump(2) << "\n";
      log << "random baseline: SR " << s.sr_avg << " SPL " << s.spl_avg << "\n";
    }
  }

  for (const std::string& variant : variants) {
    for (uint64_t seed : seeds) {
      std::string dir = detail::run_dir(work_dir, variant, seed);
      AblationRun run;
      if (detail::load_cached_run(dir, run)) {
        log << "cached: " << variant << " seed " << seed << " SR " << run.sr_avg << "\n";
        report.runs.push_back(run);
        continue;
      }
      log << "training: " << variant << " seed " << seed << " (" << base.total_env_steps
          << " env steps)\n";
      log.flush();
      train::Config cfg = base;
      cfg.ablation = variant;
      train::Trainer trainer(cfg, seed, dir);
      trainer.train();
      auto s = trainer.evaluate(eval_episodes_per_family, train::Trainer::EvalPolicy::model,
                                dir + "/eval_episodes.jsonl");
      run.variant = variant;
      run.seed = seed;
      run.sr_avg = s.sr_avg;
      run.spl_avg = s.spl_avg;
      for (auto& f : s.families) {
        run.family_sr.push_back(f.sr);
        run.family_spl.push_back(f.spl);
      }
      detail::save_run(dir, run);
      report.runs.push_back(run);
      log << "done: " << variant << " seed " << seed << " SR " << run.sr_avg << " SPL " << run.spl_avg
          << "\n";
      log.flush();
    }
  }
  return report;
}

// Table mirroring the held-out per-family structure.
inline void print_ablation_table(const AblationReport& report, std::ostream& os) {
  auto row = [&](const std::string& label, const std::string& variant) {
    std::vector<double> sr(3, 0), spl(3, 0);
    int n = 0;
    for (auto& r : report.runs)
      if (r.variant == variant) {
        for (size_t f = 0; f < r.family_sr.size() && f < 3; ++f) {
          sr[f] += r.family_sr[f];
          spl[f] += r.family_spl[f];
        }
        ++n;
      }
    if (n == 0) return;
    char line[256];
    std::snprintf(line, sizeof(line),
                  "%-28s  %5.1f/%4.2f  %5.1f/%4.2f  %5.1f/%4.2f  |  %5.1f/%4.2f", label.c_str(),
                  100 * sr[0] / n, spl[0] / n, 100 * sr[1] / n, spl[1] / n, 100 * sr[2] / n,
                  spl[2] / n, 100 * report.mean_sr(variant), report.mean_spl(variant));
    os << line << "\n";
  };
  os << "rows: SR%/SPL per held-out layout family, then env avg ("
     << (report.runs.size() ? report.runs.size() / 3 : 0) << " seeds)\n";
  os << std::string(96, '-') << "\n";
  row("full (mask + language)", "none");
  row("obj mask + empty lang", "obj-mask-empty-lang");
  row("no obj mask + empty lang", "no-mask-empty-lang");
  if (report.random_sr >= 0) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-28s  %*s|  %5.1f/%4.2f", "random policy", 38, "",
                  100 * report.random_sr, report.random_spl);
    os << line << "\n";
  }
}

}  // namespace gwm::harness
