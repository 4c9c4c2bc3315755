// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <stdexcept>
#include <vector>

#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"
#include "gwm/env/texture.hpp"

namespace gwm::env {

enum class Split { train, test };

constexpr int kTrainLayoutFamilies = 5;  // family ids 0..4
constexpr int kTestLayoutFamilies = 3;   // family ids 5..7

struct ObjectInstance {
  int class_id = 0;
  float x = 0, y = 0;    // world meters
  float radius = 0.2f;   // footprint
  int texture_id = 0;
};

struct Scene {
  int layout_id = 0;  // layout family
  uint64_t seed = 0;
  Split split = Split::train;
  int grid_w = 0, grid_h = 0;
  float cell = 0.25f;  // meters per cell
  std::vector<uint8_t> occupancy;  // 1 = wall
  std::vector<ObjectInstance> objects;
  std::map<int, int> texture_by_material;  // Material -> texture id

  float world_w() const { return grid_w * cell; }
  float world_h() const { return grid_h * cell; }

  bool wall_cell(int gx, int gy) const {
    if (gx < 0 || gy < 0 || gx >= grid_w || gy >= grid_h) return true;
    return occupancy[static_cast<size_t>(gy) * grid_w + gx] != 0;
  }
  bool wall_at(float x, float y) const {
    return wall_cell(static_cast<int>(std::floor(x / cell)), static_cast<int>(std::floor(y / cell)));
  }
  int texture_of(Material m) const { return texture_by_material.at(static_cast<int>(m)); }
};

namespace detail {

inline void fill_rect(Scene& s, int x0, int y0, int x1, int y1, uint8_t v) {
  for (int y = std::max(0, y0); y <= std::min(s.grid_h - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(s.grid_w - 1, x1); ++x)
      s.occupancy[static_cast<size_t>(y) * s.grid_w + x] = v;
}

// Vertical wall at column gx spanning [y0,y1] with a door gap.
inline void vwall(Scene& s, int gx, int y0, int y1, int door_y, int door_len) {
  for (int y = y0; y <= y1; ++y) {
    if (y >= door_y && y < door_y + door_len) continue;
    s.occupancy[static_cast<size_t>(y) * s.grid_w + gx] = 1;
  }
}

inline void hwall(Scene& s, int gy, int x0, int x1, int door_x, int door_len) {
  for (int x = x0; x <= x1; ++x) {
    if (x >= door_x && x < door_x + door_len) continue;
    s.occupancy[static_cast<size_t>(gy) * s.grid_w + x] = 1;
  }
}

inline void build_layout(Scene& s, int family, Rng& rng) {
  fill_rect(s, 0, 0, s.grid_w - 1, s.grid_h - 1, 0);
  // outer walls
  fill_rect(s, 0, 0, s.grid_w - 1, 0, 1);
  fill_rect(s, 0, s.grid_h - 1, s.grid_w - 1, s.grid_h - 1, 1);
  fill_rect(s, 0, 0, 0, s.grid_h - 1, 1);
  fill_rect(s, s.grid_w - 1, 0, s.grid_w - 1, s.grid_h - 1, 1);

  int W = s.grid_w, H = s.grid_h;
  const int door = 4;  // 1 m door gaps
  switch (family) {
    case 0: {  // studio with pillars
      int pillars = rng.next_int(1, 3);
      for (int i = 0; i < pillars; ++i) {
        int px = rng.next_int(5, W - 7), py = rng.next_int(5, H - 7);
        fill_rect(s, px, py, px + 1, py + 1, 1);
      }
      break;
    }
    case 1: {  // two rooms, vertical split
      int gx = rng.next_int(W * 2 / 5, W * 3 / 5);
      vwall(s, gx, 1, H - 2, rng.next_int(2, H - 2 - door), door);
      break;
    }
    case 2: {  // two rooms joined by a horizontal corridor band
      int gy1 = rng.next_int(H / 3 - 2, H / 3 + 2);
      int gy2 = rng.next_int(2 * H / 3 - 2, 2 * H / 3 + 2);
      hwall(s, gy1, 1, W - 2, rng.next_int(2, W / 2 - door), door);
      hwall(s, gy2, 1, W - 2, rng.next_int(W / 2, W - 2 - door), door);
      break;
    }
    case 3: {  // L-shaped apartment: one solid corner block
      int bw = rng.next_int(W * 2 / 5, W / 2), bh = rng.next_int(H * 2 / 5, H / 2);
      int corner = rng.next_int(0, 3);
      int x0 = (corner % 2 == 0) ? 1 : W - 1 - bw;
      int y0 = (corner / 2 == 0) ? 1 : H - 1 - bh;
      fill_rect(s, x0, y0, x0 + bw - 1, y0 + bh - 1, 1);
      break;
    }
    case 4: {  // railroad: three rooms with offset doors
      int gx1 = W / 3 + rng.next_int(-2, 2);
      int gx2 = 2 * W / 3 + rng.next_int(-2, 2);
      vwall(s, gx1, 1, H - 2, rng.next_int(2, H / 2 - door), door);
      vwall(s, gx2, 1, H - 2, rng.next_int(H / 2, H - 2 - door), door);
      break;
    }
    case 5: {  // four quadrants, doors in both halves of both partitions
      int gx = W / 2 + rng.next_int(-2, 2), gy = H / 2 + rng.next_int(-2, 2);
      int dy1 = rng.next_int(2, gy - door - 1), dy2 = rng.next_int(gy + 1, H - 2 - door);
      vwall(s, gx, 1, H - 2, dy1, door);
      for (int y = dy2; y < dy2 + door; ++y) s.occupancy[static_cast<size_t>(y) * W + gx] = 0;
      int dx1 = rng.next_int(2, gx - door - 1), dx2 = rng.next_int(gx + 1, W - 2 - door);
      hwall(s, gy, 1, W - 2, dx1, door);
      for (int x = dx2; x < dx2 + door; ++x) s.occupancy[static_cast<size_t>(gy) * W + x] = 0;
      s.occupancy[static_cast<size_t>(gy) * W + gx] = 1;
      break;
    }
    case 6: {  // ring corridor around a central island
      int iw = rng.next_int(W / 4, W / 3), ih = rng.next_int(H / 4, H / 3);
      int x0 = (W - iw) / 2, y0 = (H - ih) / 2;
      fill_rect(s, x0, y0, x0 + iw - 1, y0 + ih - 1, 1);
      break;
    }
    default: {  // offset T partition
      int gy = H / 2 + rng.next_int(-2, 2);
      int span = W * 3 / 5;
      hwall(s, gy, 1, span, rng.next_int(2, span - door), door);
      int gx = span / 2 + rng.next_int(-2, 2);
      vwall(s, gx, gy + 1, H - 2, rng.next_int(gy + 2, H - 2 - door), door);
      break;
    }
  }
}

inline bool region_free(const Scene& s, float x, float y, float margin) {
  int r = static_cast<int>(std::ceil(margin / s.cell));
  int gx = static_cast<int>(std::floor(x / s.cell)), gy = static_cast<int>(std::floor(y / s.cell));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      float cx = (gx + dx + 0.5f) * s.cell, cy = (gy + dy + 0.5f) * s.cell;
      float ddx = cx - x, ddy = cy - y;
      if (std::sqrt(ddx * ddx + ddy * ddy) <= margin + s.cell * 0.71f && s.wall_cell(gx + dx, gy + dy))
        return false;
    }
  return true;
}

}  // namespace detail

// Largest connected free component as a fraction of all free cells.
inline double connectivity_fraction(const Scene& s) {
  int W = s.grid_w, H = s.grid_h;
  std::vector<int> comp(static_cast<size_t>(W) * H, -1);
  int free_total = 0, best = 0, comp_id = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (!s.wall_cell(x, y)) ++free_total;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (s.wall_cell(x, y) || comp[static_cast<size_t>(y) * W + x] >= 0) continue;
      int size = 0;
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      comp[static_cast<size_t>(y) * W + x] = comp_id;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop();
        ++size;
        const int dx4[] = {1, -1, 0, 0}, dy4[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = cx + dx4[k], ny = cy + dy4[k];
          if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
          if (s.wall_cell(nx, ny) || comp[static_cast<size_t>(ny) * W + nx] >= 0) continue;
          comp[static_cast<size_t>(ny) * W + nx] = comp_id;
          q.push({nx, ny});
        }
      }
      best = std::max(best, size);
      ++comp_id;
    }
  return free_total == 0 ? 0.0 : static_cast<double>(best) / free_total;
}

// Deterministic scene from (seed, split). Train and test draw from disjoint
// layout-family pools and disjoint per-material texture pools. Degenerate
// layouts regenerate from a derived sub-seed a bounded number of times.
// `family` pins the layout family (must belong to the split's pool);
// -1 draws it from the seed.
inline Scene generate_scene(uint64_t seed, Split split, int family_override = -1) {
  if (family_override >= 0) {
    bool in_pool = split == Split::train
                       ? family_override < kTrainLayoutFamilies
                       : family_override >= kTrainLayoutFamilies &&
                             family_override < kTrainLayoutFamilies + kTestLayoutFamilies;
    check(in_pool, "generate_scene: family not in the split's pool");
  }
  for (int attempt = 0; attempt < 16; ++attempt) {
    uint64_t s64 = seed + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(attempt);
    Rng rng(s64);
    Rng layout_rng = rng.split("layout");
    Rng tex_rng = rng.split("textures");
    Rng obj_rng = rng.split("objects");

    Scene s;
    s.seed = seed;
    s.split = split;
    s.cell = 0.25f;
    s.grid_w = layout_rng.next_int(28, 38);
    s.grid_h = layout_rng.next_int(24, 34);
    s.occupancy.assign(static_cast<size_t>(s.grid_w) * s.grid_h, 0);
    int family = split == Split::train
                     ? static_cast<int>(layout_rng.next_below(kTrainLayoutFamilies))
                     : kTrainLayoutFamilies + static_cast<int>(layout_rng.next_below(kTestLayoutFamilies));
    if (family_override >= 0) family = family_override;
    s.layout_id = family;
    detail::build_layout(s, family, layout_rng);
    if (connectivity_fraction(s) < 0.85) continue;

    for (int m = 0; m < kNumMaterials; ++m) {
      int id = split == Split::train
                   ? static_cast<int>(tex_rng.next_below(kTrainTexturesPerMaterial))
                   : kTrainTexturesPerMaterial +
                         static_cast<int>(tex_rng.next_below(kTexturesPerMaterial - kTrainTexturesPerMaterial));
      s.texture_by_material[m] = id;
    }

    int n_objects = obj_rng.next_int(4, 7);
    int placed = 0;
    for (int tries = 0; tries < 300 && placed < n_objects; ++tries) {
      int class_id = static_cast<int>(obj_rng.next_below(kNumClasses));
      float radius = class_radius(class_id);
      float x = obj_rng.next_uniform(radius + 0.5f, s.world_w() - radius - 0.5f);
      float y = obj_rng.next_uniform(radius + 0.5f, s.world_h() - radius - 0.5f);
      if (!detail::region_free(s, x, y, radius + 0.35f)) continue;
      bool clash = false;
      for (auto& o : s.objects) {
        float dx = o.x - x, dy = o.y - y;
        if (std::sqrt(dx * dx + dy * dy) < o.radius + radius + 0.55f) clash = true;
      }
      if (clash) continue;
      ObjectInstance obj;
      obj.class_id = class_id;
      obj.x = x;
      obj.y = y;
      obj.radius = radius;
      obj.texture_id = s.texture_of(class_material(class_id));
      s.objects.push_back(obj);
      ++placed;
    }
    if (placed < 3) continue;
    return s;
  }
  throw std::runtime_error("scene generation failed");
}

// Geodesic distance field (meters) to a goal cell over free space, with
// object footprints treated as obstacles. 8-connected Dijkstra; diagonal
// steps cost cell*sqrt(2). Unreachable cells hold +inf.
inline std::vector<float> geodesic_field(const Scene& s, float goal_x, float goal_y,
                                         float robot_radius) {
  int W = s.grid_w, H = s.grid_h;
  std::vector<uint8_t> blocked(static_cast<size_t>(W) * H, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (s.wall_cell(x, y)) blocked[static_cast<size_t>(y) * W + x] = 1;
  for (auto& o : s.objects) {
    float rr = o.radius + robot_radius;
    int x0 = static_cast<int>((o.x - rr) / s.cell), x1 = static_cast<int>((o.x + rr) / s.cell);
    int y0 = static_cast<int>((o.y - rr) / s.cell), y1 = static_cast<int>((o.y + rr) / s.cell);
    for (int y = std::max(0, y0); y <= std::min(H - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(W - 1, x1); ++x) {
        float cx = (x + 0.5f) * s.cell, cy = (y + 0.5f) * s.cell;
        float dx = cx - o.x, dy = cy - o.y;
        if (std::sqrt(dx * dx + dy * dy) <= rr) blocked[static_cast<size_t>(y) * W + x] = 1;
      }
  }
  std::vector<float> dist(static_cast<size_t>(W) * H, std::numeric_limits<float>::infinity());
  int gx = static_cast<int>(goal_x / s.cell), gy = static_cast<int>(goal_y / s.cell);
  if (gx < 0 || gy < 0 || gx >= W || gy >= H || blocked[static_cast<size_t>(gy) * W + gx]) return dist;
  using QE = std::pair<float, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<>> q;
  dist[static_cast<size_t>(gy) * W + gx] = 0.0f;
  q.push({0.0f, gy * W + gx});
  const float straight = s.cell, diag = s.cell * 1.4142135f;
  while (!q.empty()) {
    auto [d, idx] = q.top();
    q.pop();
    if (d > dist[static_cast<size_t>(idx)]) continue;
    int cx = idx % W, cy = idx / W;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        int nx = cx + dx, ny = cy + dy;
        if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
        if (blocked[static_cast<size_t>(ny) * W + nx]) continue;
        // forbid diagonal corner cutting
        if (dx != 0 && dy != 0 &&
            (blocked[static_cast<size_t>(cy) * W + nx] || blocked[static_cast<size_t>(ny) * W + cx]))
          continue;
        float nd = d + ((dx != 0 && dy != 0) ? diag : straight);
        if (nd < dist[static_cast<size_t>(ny) * W + nx]) {
          dist[static_cast<size_t>(ny) * W + nx] = nd;
          q.push({nd, ny * W + nx});
        }
      }
  }
  return dist;
}

}  // namespace gwm::env
