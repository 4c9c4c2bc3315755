// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gwm/env/scene.hpp"
#include "gwm/env/texture.hpp"

namespace gwm::env {

struct Annotation {
  int class_id = 0;
  int object_index = -1;  // index into Scene::objects
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel bbox
  float center_col = 0;   // mean of the bbox horizontal extent
  float mean_depth = 0;   // meters
};

struct Observation {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;   // h*w*3
  std::vector<float> depth;   // h*w, meters in [0, d_max]
  std::array<float, 6> task{};  // goal dx,dy (robot frame), robot x,y, lin vel, ang vel
  std::vector<Annotation> annotations;
};

struct Pose {
  float x = 0, y = 0, heading = 0;  // radians, 0 = +x
};

struct RenderConfig {
  int height = 64, width = 80;
  float fov_h = 1.2566371f;  // 72 degrees
  float d_max = 10.0f;
  float camera_z = 1.0f;
  float wall_z = 2.0f;
  bool want_object_ids = false;  // fill per-pixel object index buffer (tests)
};

struct RenderScratch {
  std::vector<float> wall_perp;  // per column, perpendicular wall distance
  std::vector<int> object_ids;   // per pixel, -1 = background
};

namespace detail {

struct WallHit {
  float t_euclid = 0;   // ray length to the hit point
  float perp = 0;       // distance along the camera forward axis
  float u = 0;          // texture coordinate along the wall
  int side = 0;         // 0 = x-face, 1 = y-face
};

// Grid DDA; heading-relative unit direction (dx,dy).
inline WallHit cast_ray(const Scene& s, float px, float py, float dx, float dy, float fwd_x,
                        float fwd_y, float max_t) {
  int gx = static_cast<int>(std::floor(px / s.cell));
  int gy = static_cast<int>(std::floor(py / s.cell));
  float inv_dx = dx != 0 ? 1.0f / dx : 1e30f;
  float inv_dy = dy != 0 ? 1.0f / dy : 1e30f;
  int step_x = dx > 0 ? 1 : -1, step_y = dy > 0 ? 1 : -1;
  float next_vx = (dx > 0 ? (gx + 1) * s.cell : gx * s.cell);
  float next_vy = (dy > 0 ? (gy + 1) * s.cell : gy * s.cell);
  float t_max_x = std::abs((next_vx - px) * inv_dx);
  float t_max_y = std::abs((next_vy - py) * inv_dy);
  float t_delta_x = std::abs(s.cell * inv_dx);
  float t_delta_y = std::abs(s.cell * inv_dy);
  float t = 0;
  int side = 0;
  for (int iter = 0; iter < 4 * (s.grid_w + s.grid_h); ++iter) {
    if (t_max_x < t_max_y) {
      t = t_max_x;
      t_max_x += t_delta_x;
      gx += step_x;
      side = 0;
    } else {
      t = t_max_y;
      t_max_y += t_delta_y;
      gy += step_y;
      side = 1;
    }
    if (t > max_t) break;
    if (s.wall_cell(gx, gy)) {
      WallHit hit;
      hit.t_euclid = t;
      float hx = px + dx * t, hy = py + dy * t;
      hit.perp = (hx - px) * fwd_x + (hy - py) * fwd_y;
      hit.u = side == 0 ? hy / s.cell : hx / s.cell;
      hit.u -= std::floor(hit.u);
      hit.side = side;
      return hit;
    }
  }
  WallHit hit;
  hit.t_euclid = max_t;
  hit.perp = max_t;
  hit.u = 0;
  hit.side = 0;
  return hit;
}

}  // namespace detail

// Raycast render of the scene from a pose. Depth is the exact ray length to
// the first surface (billboard pixels store the distance to the object
// center), clipped to d_max. Annotations cover every object with at least
// one visible pixel.
inline void render(const Scene& scene, const Pose& pose, const RenderConfig& cfg, Observation& obs,
                   RenderScratch* scratch = nullptr) {
  const int W = cfg.width, H = cfg.height;
  obs.h = H;
  obs.w = W;
  obs.rgb.assign(static_cast<size_t>(H) * W * 3, 0);
  obs.depth.assign(static_cast<size_t>(H) * W, cfg.d_max);
  obs.annotations.clear();

  RenderScratch local;
  RenderScratch& sc = scratch ? *scratch : local;
  sc.wall_perp.assign(static_cast<size_t>(W), cfg.d_max);
  sc.object_ids.assign(static_cast<size_t>(H) * W, -1);

  const float fwd_x = std::cos(pose.heading), fwd_y = std::sin(pose.heading);
  const float plane_x = -fwd_y, plane_y = fwd_x;  // camera plane (left = -1)
  const float tan_half = std::tan(cfg.fov_h * 0.5f);
  const float f_h = (W * 0.5f) / tan_half;           // horizontal focal, px
  const float f_v = f_h;                             // square pixels
  const float horizon = H * 0.5f;

  const int wall_tex = scene.texture_of(Material::wall);
  const int floor_tex = scene.texture_of(Material::floor);

  for (int c = 0; c < W; ++c) {
    float u = (2.0f * (c + 0.5f) / W - 1.0f) * tan_half;
    float dx = fwd_x + u * plane_x, dy = fwd_y + u * plane_y;
    float dlen = std::sqrt(dx * dx + dy * dy);
    dx /= dlen;
    dy /= dlen;
    float euclid_per_perp = dlen;  // ray length per unit forward distance

    detail::WallHit hit = detail::cast_ray(scene, pose.x, pose.y, dx, dy,
                                           fwd_x, fwd_y, cfg.d_max * 2.0f);
    float perp = std::max(0.05f, hit.perp);
    sc.wall_perp[static_cast<size_t>(c)] = perp;

    // wall slab rows
    float y_top = horizon - f_v * (cfg.wall_z - cfg.camera_z) / perp;
    float y_bot = horizon + f_v * cfg.camera_z / perp;
    int iy_top = std::max(0, static_cast<int>(std::ceil(y_top - 0.5f)));
    int iy_bot = std::min(H - 1, static_cast<int>(std::floor(y_bot - 0.5f)));

    for (int r = 0; r < H; ++r) {
      uint8_t* px = obs.rgb.data() + (static_cast<size_t>(r) * W + c) * 3;
      float* dp = obs.depth.data() + static_cast<size_t>(r) * W + c;
      if (r >= iy_top && r <= iy_bot) {
        // wall
        float z = cfg.camera_z + (horizon - (r + 0.5f)) * perp / f_v;
        texture_rgb(Material::wall, wall_tex, hit.u, z / cfg.wall_z, px);
        if (hit.side == 1) {
          px[0] = static_cast<uint8_t>(px[0] * 0.82f);
          px[1] = static_cast<uint8_t>(px[1] * 0.82f);
          px[2] = static_cast<uint8_t>(px[2] * 0.82f);
        }
        float dz = z - cfg.camera_z;
        float e = std::sqrt(perp * euclid_per_perp * perp * euclid_per_perp + dz * dz);
        *dp = std::min(cfg.d_max, e);
      } else if (r > iy_bot) {
        // floor
        float p_row = f_v * cfg.camera_z / ((r + 0.5f) - horizon);
        float fx = pose.x + dx * p_row * euclid_per_perp;
        float fy = pose.y + dy * p_row * euclid_per_perp;
        texture_rgb(Material::floor, floor_tex, fx / 0.9f, fy / 0.9f, px);
        float e = std::sqrt(p_row * euclid_per_perp * p_row * euclid_per_perp +
                            cfg.camera_z * cfg.camera_z);
        *dp = std::min(cfg.d_max, e);
      } else {
        // ceiling: flat, slightly graded toward the horizon
        float p_row = f_v * (cfg.wall_z - cfg.camera_z) / (horizon - (r + 0.5f));
        float shade = std::clamp(0.55f - 0.025f * p_row, 0.30f, 0.60f);
        px[0] = px[1] = px[2] = static_cast<uint8_t>(210 * shade);
        float dz = cfg.wall_z - cfg.camera_z;
        float e = std::sqrt(p_row * euclid_per_perp * p_row * euclid_per_perp + dz * dz);
        *dp = std::min(cfg.d_max, e);
      }
    }
  }

  // billboard sprites, painter's order far to near
  std::vector<int> order(scene.objects.size());
  for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  std::vector<float> obj_perp(scene.objects.size());
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    obj_perp[i] = (o.x - pose.x) * fwd_x + (o.y - pose.y) * fwd_y;
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) { return obj_perp[static_cast<size_t>(a)] > obj_perp[static_cast<size_t>(b)]; });

  std::vector<float> obj_depth(scene.objects.size(), 0.0f);

  for (int oi : order) {
    const auto& o = scene.objects[static_cast<size_t>(oi)];
    float rel_x = o.x - pose.x, rel_y = o.y - pose.y;
    float perp = rel_x * fwd_x + rel_y * fwd_y;
    if (perp < 0.15f) continue;
    float lat = rel_x * plane_x + rel_y * plane_y;
    float e_center = std::sqrt(rel_x * rel_x + rel_y * rel_y);
    if (e_center > cfg.d_max) continue;
    float col_center = (lat / perp) * f_h + W * 0.5f;
    float half_w_px = o.radius * f_h / perp;
    float hgt = class_height(o.class_id);
    float y_base = horizon + f_v * cfg.camera_z / perp;
    float y_top = horizon - f_v * (hgt - cfg.camera_z) / perp;
    int cx0 = std::max(0, static_cast<int>(std::ceil(col_center - half_w_px - 0.5f)));
    int cx1 = std::min(W - 1, static_cast<int>(std::floor(col_center + half_w_px - 0.5f)));
    int ry0 = std::max(0, static_cast<int>(std::ceil(y_top - 0.5f)));
    int ry1 = std::min(H - 1, static_cast<int>(std::floor(y_base - 0.5f)));
    if (cx1 < cx0 || ry1 < ry0) continue;
    obj_depth[static_cast<size_t>(oi)] = std::min(cfg.d_max, e_center);
    for (int c = cx0; c <= cx1; ++c) {
      if (perp >= sc.wall_perp[static_cast<size_t>(c)]) continue;  // behind a wall
      float su = ((c + 0.5f) - (col_center - half_w_px)) / (2 * half_w_px);
      if (su < 0 || su > 1) continue;
      for (int r = ry0; r <= ry1; ++r) {
        float sv = (y_base - (r + 0.5f)) / (y_base - y_top);
        if (sv < 0 || sv > 1) continue;
        if (!sprite_opaque(o.class_id, su, sv)) continue;
        uint8_t* px = obs.rgb.data() + (static_cast<size_t>(r) * W + c) * 3;
        sprite_rgb(o.class_id, o.texture_id, su, sv, px);
        obs.depth[static_cast<size_t>(r) * W + c] = std::min(cfg.d_max, e_center);
        sc.object_ids[static_cast<size_t>(r) * W + c] = oi;
      }
    }
  }

  // distance shading (applied uniformly after geometry so depths stay exact)
  for (size_t i = 0; i < obs.depth.size(); ++i) {
    float dim = 1.0f / (1.0f + 0.055f * obs.depth[i]);
    uint8_t* px = obs.rgb.data() + i * 3;
    px[0] = static_cast<uint8_t>(px[0] * dim);
    px[1] = static_cast<uint8_t>(px[1] * dim);
    px[2] = static_cast<uint8_t>(px[2] * dim);
  }

  // bboxes from final pixel ownership (overdraw between sprites resolved)
  struct Track {
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1, count = 0;
  };
  std::vector<Track> tracks(scene.objects.size());
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int oi = sc.object_ids[static_cast<size_t>(r) * W + c];
      if (oi < 0) continue;
      Track& tr = tracks[static_cast<size_t>(oi)];
      tr.x0 = std::min(tr.x0, c);
      tr.x1 = std::max(tr.x1, c);
      tr.y0 = std::min(tr.y0, r);
      tr.y1 = std::max(tr.y1, r);
      ++tr.count;
    }
  for (size_t oi = 0; oi < tracks.size(); ++oi) {
    const Track& tr = tracks[oi];
    if (tr.count == 0) continue;
    Annotation a;
    a.class_id = scene.objects[oi].class_id;
    a.object_index = static_cast<int>(oi);
    a.x0 = tr.x0;
    a.y0 = tr.y0;
    a.x1 = tr.x1;
    a.y1 = tr.y1;
    a.center_col = 0.5f * (tr.x0 + tr.x1);
    a.mean_depth = obj_depth[oi];
    obs.annotations.push_back(a);
  }
}

}  // namespace gwm::env
