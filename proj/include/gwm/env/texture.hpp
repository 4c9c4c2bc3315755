// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace gwm::env {

// Object vocabulary. Class names feed the language templates verbatim.
constexpr int kNumClasses = 8;

inline const char* class_name(int class_id) {
  static const char* names[kNumClasses] = {"chair", "table", "sofa",  "bed",
                                           "lamp",  "plant", "shelf", "door"};
  return names[class_id];
}

inline int class_id_from_name(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == class_name(i)) return i;
  return -1;
}

// Material categories. Each category owns its own texture-id space; the
// train/test split holds out the top slice of every category.
enum class Material : int { wall = 0, floor = 1, wood = 2, fabric = 3, metal = 4, foliage = 5 };
constexpr int kNumMaterials = 6;
constexpr int kTexturesPerMaterial = 24;
constexpr int kTrainTexturesPerMaterial = 19;  // ids [0,19) train, [19,24) held out

inline const char* material_name(int m) {
  static const char* names[kNumMaterials] = {"wall", "floor", "wood", "fabric", "metal", "foliage"};
  return names[m];
}

inline Material class_material(int class_id) {
  static const Material table[kNumClasses] = {Material::wood,  Material::wood,    Material::fabric,
                                              Material::fabric, Material::metal,  Material::foliage,
                                              Material::wood,  Material::wood};
  return table[class_id];
}

// Physical footprint radius and sprite height per class, meters.
inline float class_radius(int class_id) {
  static const float r[kNumClasses] = {0.22f, 0.35f, 0.45f, 0.50f, 0.12f, 0.16f, 0.30f, 0.35f};
  return r[class_id];
}
inline float class_height(int class_id) {
  static const float h[kNumClasses] = {0.95f, 0.75f, 0.80f, 0.65f, 1.55f, 1.05f, 1.65f, 1.90f};
  return h[class_id];
}

namespace detail {
inline uint32_t hash_u32(uint32_t x) {
  x ^= x >> 16;
  x *= 0x7feb352dU;
  x ^= x >> 15;
  x *= 0x846ca68bU;
  x ^= x >> 16;
  return x;
}
inline uint32_t tex_hash(int material, int id, uint32_t salt) {
  return hash_u32(static_cast<uint32_t>(material) * 977u + static_cast<uint32_t>(id) * 7919u + salt * 104729u + 11u);
}
inline void hsv_to_rgb(float h, float s, float v, uint8_t* out) {
  h = h - std::floor(h);
  float r, g, b;
  int i = static_cast<int>(h * 6.0f);
  float f = h * 6.0f - i;
  float p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (i % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  out[0] = static_cast<uint8_t>(std::clamp(r, 0.0f, 1.0f) * 255.0f);
  out[1] = static_cast<uint8_t>(std::clamp(g, 0.0f, 1.0f) * 255.0f);
  out[2] = static_cast<uint8_t>(std::clamp(b, 0.0f, 1.0f) * 255.0f);
}
}  // namespace detail

// Procedural texel lookup on a 32x32 grid; (u,v) in [0,1). Patterns and
// palettes are pure functions of (material, texture_id), so scenes never
// store bitmaps.
inline void texture_rgb(Material material, int texture_id, float u, float v, uint8_t* out) {
  using detail::tex_hash;
  int m = static_cast<int>(material);
  uint32_t h0 = tex_hash(m, texture_id, 0);
  uint32_t h1 = tex_hash(m, texture_id, 1);
  uint32_t h2 = tex_hash(m, texture_id, 2);
  float hue = (h0 & 0xffff) / 65536.0f;
  float sat, val;
  switch (material) {
    case Material::wall: sat = 0.10f + 0.18f * ((h1 & 255) / 255.0f); val = 0.72f + 0.22f * ((h1 >> 8 & 255) / 255.0f); break;
    case Material::floor: sat = 0.25f + 0.30f * ((h1 & 255) / 255.0f); val = 0.38f + 0.30f * ((h1 >> 8 & 255) / 255.0f); break;
    case Material::wood: sat = 0.45f + 0.25f * ((h1 & 255) / 255.0f); val = 0.40f + 0.35f * ((h1 >> 8 & 255) / 255.0f); break;
    case Material::fabric: sat = 0.35f + 0.40f * ((h1 & 255) / 255.0f); val = 0.45f + 0.35f * ((h1 >> 8 & 255) / 255.0f); break;
    case Material::metal: sat = 0.05f + 0.20f * ((h1 & 255) / 255.0f); val = 0.55f + 0.35f * ((h1 >> 8 & 255) / 255.0f); break;
    default: sat = 0.50f + 0.30f * ((h1 & 255) / 255.0f); val = 0.30f + 0.30f * ((h1 >> 8 & 255) / 255.0f); break;
  }
  int ix = static_cast<int>(u * 32.0f) & 31;
  int iy = static_cast<int>(v * 32.0f) & 31;
  int pattern = static_cast<int>(h2 % 5);
  int scale = 2 + static_cast<int>((h2 >> 3) % 3) * 2;  // 2,4,6 texel stripes
  bool alt;
  switch (pattern) {
    case 0: alt = (ix / scale) % 2 == 0; break;                       // vertical stripes
    case 1: alt = (iy / scale) % 2 == 0; break;                       // horizontal stripes
    case 2: alt = ((ix / scale) + (iy / scale)) % 2 == 0; break;      // checker
    case 3: alt = detail::hash_u32(h0 ^ static_cast<uint32_t>(ix * 37 + iy * 101)) % 5 == 0; break;  // speckle
    default: {
      int cx = ix - 16, cy = iy - 16;
      alt = (static_cast<int>(std::sqrt(static_cast<float>(cx * cx + cy * cy))) / 3) % 2 == 0;
      break;  // rings
    }
  }
  float dhue = ((h2 >> 8 & 255) / 255.0f - 0.5f) * 0.12f;
  float dval = ((h2 >> 16 & 255) / 255.0f) * 0.22f + 0.08f;
  if (alt)
    detail::hsv_to_rgb(hue + dhue, sat, std::max(0.05f, val - dval), out);
  else
    detail::hsv_to_rgb(hue, sat, val, out);
}

// Class silhouettes for billboard sprites; (u,v) in [0,1], v=0 at the base.
// Shapes are crude but distinct per class.
inline bool sprite_opaque(int class_id, float u, float v) {
  float cu = std::abs(u - 0.5f);
  switch (class_id) {
    case 0:  // chair: two legs, seat band, back rest
      if (v < 0.42f) return (u > 0.14f && u < 0.30f) || (u > 0.70f && u < 0.86f);
      if (v < 0.55f) return u > 0.10f && u < 0.90f;
      return u > 0.58f && u < 0.90f;
    case 1:  // table: slab on two legs
      if (v > 0.78f) return u > 0.02f && u < 0.98f;
      return (u > 0.08f && u < 0.22f) || (u > 0.78f && u < 0.92f);
    case 2:  // sofa: body with armrests and back
      if (v < 0.55f) return u > 0.02f && u < 0.98f;
      if (v < 0.85f) return u < 0.14f || u > 0.86f || (u > 0.18f && u < 0.82f && v < 0.75f);
      return false;
    case 3:  // bed: low slab plus headboard
      if (v < 0.45f) return u > 0.02f && u < 0.98f;
      return u < 0.12f;
    case 4:  // lamp: pole, base, shade
      if (v < 0.08f) return cu < 0.30f;
      if (v < 0.62f) return cu < 0.055f;
      return cu < 0.36f * (1.0f - 0.6f * (v - 0.62f) / 0.38f);
    case 5:  // plant: pot and foliage blob
      if (v < 0.30f) return cu < 0.16f + 0.10f * (v / 0.30f);
      {
        float fy = (v - 0.62f) / 0.40f;
        return cu * cu + fy * fy < 0.115f;
      }
    case 6:  // shelf: tall frame with slats
      if (cu > 0.46f) return false;
      if (v < 0.04f || v > 0.96f) return true;
      return std::fmod(v, 0.24f) < 0.055f || cu > 0.40f;
    default:  // door: full panel with inset and knob
      if (cu > 0.44f) return false;
      return true;
  }
}

// Pigment of a sprite texel (texture modulated by a simple panel pattern).
inline void sprite_rgb(int class_id, int texture_id, float u, float v, uint8_t* out) {
  texture_rgb(class_material(class_id), texture_id, u, v * 2.0f, out);
  if (class_id == 7) {  // door: darken the inset panel
    float cu = std::abs(u - 0.5f);
    if (cu < 0.30f && v > 0.12f && v < 0.92f) {
      out[0] = static_cast<uint8_t>(out[0] * 0.75f);
      out[1] = static_cast<uint8_t>(out[1] * 0.75f);
      out[2] = static_cast<uint8_t>(out[2] * 0.75f);
    }
  }
}

}  // namespace gwm::env
