// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gwm/core/rng.hpp"
#include "gwm/env/render.hpp"
#include "gwm/env/scene.hpp"

namespace gwm::env {

struct Action {
  float rotation = 0;  // radians
  float forward = 0;   // meters
};

struct EnvConfig {
  RenderConfig render;
  float r_max = 0.5f;            // |rotation| bound
  float f_max = 0.25f;           // forward bound
  float success_radius = 0.36f;  // meters to goal
  float success_bonus = 10.0f;
  float collision_penalty = -0.1f;
  int max_steps = 500;
  float robot_radius = 0.15f;
  float min_goal_dist = 2.0f;  // geodesic episode difficulty band, meters
  float max_goal_dist = 7.0f;
};

struct StepResult {
  Observation obs;
  float reward = 0;
  bool done = false;
  bool success = false;
  bool collision = false;
  bool action_clamped = false;
};

struct EpisodeResult {
  bool success = false;
  float shortest_path = 0;  // l, meters
  float path_length = 0;    // p, meters
  int steps = 0;
};

// SR and SPL over a set of finished episodes.
//   SPL = (1/N) sum_i S_i * l_i / max(p_i, l_i)
inline std::pair<double, double> compute_spl(const std::vector<EpisodeResult>& results) {
  if (results.empty()) throw std::runtime_error("no episodes");
  double sr = 0, spl = 0;
  for (const auto& r : results) {
    if (!r.success) continue;
    sr += 1.0;
    spl += static_cast<double>(r.shortest_path) / std::max(r.path_length, r.shortest_path);
  }
  return {sr / results.size(), spl / results.size()};
}

// PointGoal navigation over a generated scene. Kinematic motion with
// collision clamping; reward = geodesic progress + success bonus + collision
// penalty. Deterministic given (scene seed, episode seed).
class NavEnv {
 public:
  explicit NavEnv(EnvConfig cfg = {}) : cfg_(cfg) {}

  const EnvConfig& config() const { return cfg_; }
  const Scene& scene() const { return scene_; }
  const Pose& pose() const { return pose_; }
  float goal_x() const { return goal_x_; }
  float goal_y() const { return goal_y_; }
  int steps() const { return steps_; }
  bool episode_active() const { return active_; }
  float shortest_path() const { return shortest_path_; }
  float path_length() const { return path_length_; }
  const std::vector<float>& distance_field() const { return dist_field_; }
  RenderScratch& scratch() { return scratch_; }

  // Starts a fresh episode on a newly generated scene.
  Observation reset(uint64_t scene_seed, uint64_t episode_seed, Split split, int family = -1) {
    scene_ = generate_scene(scene_seed, split, family);
    return reset_episode(episode_seed);
  }

  // Starts a fresh episode on the current scene.
  Observation reset_episode(uint64_t episode_seed) {
    Rng rng(episode_seed ^ 0x51a9c4f3b71e0d2bULL);
    for (int attempt = 0; attempt < 200; ++attempt) {
      float sx = rng.next_uniform(0.5f, scene_.world_w() - 0.5f);
      float sy = rng.next_uniform(0.5f, scene_.world_h() - 0.5f);
      float gx = rng.next_uniform(0.5f, scene_.world_w() - 0.5f);
      float gy = rng.next_uniform(0.5f, scene_.world_h() - 0.5f);
      if (!position_free(sx, sy) || !position_free(gx, gy)) continue;
      std::vector<float> field = geodesic_field(scene_, gx, gy, cfg_.robot_radius);
      float d = field_at(field, sx, sy);
      if (!std::isfinite(d) || d < cfg_.min_goal_dist || d > cfg_.max_goal_dist) continue;
      goal_x_ = gx;
      goal_y_ = gy;
      dist_field_ = std::move(field);
      pose_.x = sx;
      pose_.y = sy;
      pose_.heading = static_cast<float>(rng.next_uniform(-M_PI, M_PI));
      shortest_path_ = d;
      path_length_ = 0;
      steps_ = 0;
      active_ = true;
      last_lin_vel_ = 0;
      last_ang_vel_ = 0;
      prev_geo_ = d;
      Observation obs;
      render_obs(obs);
      return obs;
    }
    throw std::runtime_error("episode placement failed");
  }

  StepResult step(const Action& action) {
    check_active();
    StepResult out;
    Action a = action;
    if (a.rotation < -cfg_.r_max || a.rotation > cfg_.r_max || a.forward < 0 ||
        a.forward > cfg_.f_max) {
      a.rotation = std::clamp(a.rotation, -cfg_.r_max, cfg_.r_max);
      a.forward = std::clamp(a.forward, 0.0f, cfg_.f_max);
      out.action_clamped = true;
    }
    pose_.heading = wrap_angle(pose_.heading + a.rotation);

    // forward motion in sub-steps with collision clamping
    float moved = 0;
    const float sub = 0.05f;
    float dx = std::cos(pose_.heading), dy = std::sin(pose_.heading);
    bool collided = false;
    float remaining = a.forward;
    while (remaining > 1e-6f) {
      float d = std::min(sub, remaining);
      float nx = pose_.x + dx * d, ny = pose_.y + dy * d;
      if (!position_free(nx, ny)) {
        collided = true;
        break;
      }
      pose_.x = nx;
      pose_.y = ny;
      moved += d;
      remaining -= d;
    }
    path_length_ += moved;
    last_lin_vel_ = moved;
    last_ang_vel_ = a.rotation;
    ++steps_;

    float geo = field_at(dist_field_, pose_.x, pose_.y);
    float progress = std::isfinite(geo) && std::isfinite(prev_geo_) ? prev_geo_ - geo : 0.0f;
    prev_geo_ = geo;

    float gdx = goal_x_ - pose_.x, gdy = goal_y_ - pose_.y;
    bool success = std::sqrt(gdx * gdx + gdy * gdy) <= cfg_.success_radius;
    out.reward = progress + (success ? cfg_.success_bonus : 0.0f) +
                 (collided ? cfg_.collision_penalty : 0.0f);
    out.success = success;
    out.collision = collided;
    out.done = success || steps_ >= cfg_.max_steps;
    if (out.done) active_ = false;
    render_obs(out.obs);
    return out;
  }

  EpisodeResult result(bool success) const {
    EpisodeResult r;
    r.success = success;
    r.shortest_path = shortest_path_;
    r.path_length = path_length_;
    r.steps = steps_;
    return r;
  }

  // True if a robot disc fits at (x, y).
  bool position_free(float x, float y) const {
    if (x < cfg_.robot_radius || y < cfg_.robot_radius || x > scene_.world_w() - cfg_.robot_radius ||
        y > scene_.world_h() - cfg_.robot_radius)
      return false;
    if (!detail::region_free(scene_, x, y, cfg_.robot_radius)) return false;
    for (const auto& o : scene_.objects) {
      float dx = o.x - x, dy = o.y - y;
      if (std::sqrt(dx * dx + dy * dy) < o.radius + cfg_.robot_radius) return false;
    }
    return true;
  }

  void render_obs(Observation& obs) {
    render(scene_, pose_, cfg_.render, obs, &scratch_);
    float cos_h = std::cos(pose_.heading), sin_h = std::sin(pose_.heading);
    float gdx = goal_x_ - pose_.x, gdy = goal_y_ - pose_.y;
    obs.task[0] = (gdx * cos_h + gdy * sin_h) / 10.0f;   // goal in robot frame
    obs.task[1] = (-gdx * sin_h + gdy * cos_h) / 10.0f;
    obs.task[2] = pose_.x / 10.0f;
    obs.task[3] = pose_.y / 10.0f;
    obs.task[4] = last_lin_vel_ / cfg_.f_max;
    obs.task[5] = last_ang_vel_ / cfg_.r_max;
  }

 private:
  static float wrap_angle(float a) {
    while (a > static_cast<float>(M_PI)) a -= 2 * static_cast<float>(M_PI);
    while (a < -static_cast<float>(M_PI)) a += 2 * static_cast<float>(M_PI);
    return a;
  }

  // Bilinear interpolation over cell centers so the progress reward is
  // smooth in the pose; blocked (infinite) corner cells fall back to the
  // finite minimum of the patch, and a fully blocked patch falls back to the
  // nearest cell.
  float field_at(const std::vector<float>& field, float x, float y) const {
    int W = scene_.grid_w, H = scene_.grid_h;
    float fx = x / scene_.cell - 0.5f, fy = y / scene_.cell - 0.5f;
    int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    float tx = fx - x0, ty = fy - y0;
    float corner[4];
    float finite_min = std::numeric_limits<float>::infinity();
    for (int i = 0; i < 4; ++i) {
      int cx = std::clamp(x0 + (i & 1), 0, W - 1);
      int cy = std::clamp(y0 + (i >> 1), 0, H - 1);
      corner[i] = field[static_cast<size_t>(cy) * W + cx];
      if (std::isfinite(corner[i])) finite_min = std::min(finite_min, corner[i]);
    }
    if (!std::isfinite(finite_min)) {
      int gx = std::clamp(static_cast<int>(x / scene_.cell), 0, W - 1);
      int gy = std::clamp(static_cast<int>(y / scene_.cell), 0, H - 1);
      return field[static_cast<size_t>(gy) * W + gx];
    }
    for (float& c : corner)
      if (!std::isfinite(c)) c = finite_min + scene_.cell;  // blocked corners repel mildly
    float top = corner[0] + (corner[1] - corner[0]) * tx;
    float bot = corner[2] + (corner[3] - corner[2]) * tx;
    return top + (bot - top) * ty;
  }

  void check_active() const {
    if (!active_) throw std::runtime_error("step: episode not active");
  }

  EnvConfig cfg_;
  Scene scene_;
  Pose pose_;
  RenderScratch scratch_;
  std::vector<float> dist_field_;
  float goal_x_ = 0, goal_y_ = 0;
  float shortest_path_ = 0, path_length_ = 0, prev_geo_ = 0;
  float last_lin_vel_ = 0, last_ang_vel_ = 0;
  int steps_ = 0;
  bool active_ = false;
};

}  // namespace gwm::env
