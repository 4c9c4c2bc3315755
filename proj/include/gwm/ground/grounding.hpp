// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"
#include "gwm/env/render.hpp"

namespace gwm::ground {

// Float RGB image in [0,1], interleaved h*w*3.
struct ImageF {
  int h = 0, w = 0;
  std::vector<float> rgb;
};

inline ImageF to_image_f(const env::Observation& obs) {
  ImageF img;
  img.h = obs.h;
  img.w = obs.w;
  img.rgb.resize(obs.rgb.size());
  for (size_t i = 0; i < obs.rgb.size(); ++i) img.rgb[i] = obs.rgb[i] / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// language templates
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> t = {
      "There is {object} in the {direction} {distance}.",
      "A {object} is situated in the {distance} of the {direction}.",
      "The {object} is approximately {distance}, {direction} from here.",
      "The {object} is approximately {distance}, to the {direction}.",
      "In the {direction}, {object} is {distance} to me.",
      "In the image, I can see {object}, and it is {distance} {direction}.",
      "If you look {distance} in the {direction}, you will see {object}.",
  };
  return t;
}

// One template per line; blank lines and '#' comments skipped.
inline std::vector<std::string> load_templates(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open template file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  check(out.size() == 7, "template file must hold exactly 7 templates");
  return out;
}

inline std::string substitute(std::string tpl, const std::string& slot, const std::string& value) {
  std::string key = "{" + slot + "}";
  size_t pos;
  while ((pos = tpl.find(key)) != std::string::npos) tpl.replace(pos, key.size(), value);
  return tpl;
}

// Exact slot substitution into template template_id (1-based).
inline std::string render_description(const std::string& object_class, const std::string& direction,
                                      const std::string& distance, int template_id,
                                      const std::vector<std::string>& templates = default_templates()) {
  check(template_id >= 1 && template_id <= static_cast<int>(templates.size()),
        "unknown template_id " + std::to_string(template_id));
  std::string s = templates[static_cast<size_t>(template_id - 1)];
  s = substitute(s, "object", object_class);
  s = substitute(s, "direction", direction);
  s = substitute(s, "distance", distance);
  return s;
}

// Horizontal-position word from the object's center column. Rule 1 buckets
// the image into quarters (left / front / right); rule 2 into fifths
// (outer left / left / front / right / outer right).
inline std::string direction_label(float c, int width, int rule) {
  check(c >= 0 && c < width, "direction_label: column out of range");
  if (rule == 1) {
    float block = width / 4.0f;
    if (c <= block) return "left";
    if (c <= 3 * block) return "front";
    return "right";
  }
  check(rule == 2, "direction_label: rule must be 1 or 2");
  float block = width / 5.0f;
  if (c <= block) return "outer left";
  if (c <= 2 * block) return "left";
  if (c <= 3 * block) return "front";
  if (c <= 4 * block) return "right";
  return "outer right";
}

struct DistanceBuckets {
  float very_close = 1.0f;  // meters
  float close = 2.5f;
};

inline std::string distance_label(float mean_depth, const DistanceBuckets& buckets = {}) {
  check(mean_depth > 0, "invalid depth");
  if (mean_depth < buckets.very_close) return "very close";
  if (mean_depth < buckets.close) return "close";
  return "far";
}

// ---------------------------------------------------------------------------
// object-instance masking
// ---------------------------------------------------------------------------

struct MaskedSample {
  ImageF masked_rgb;
  std::vector<uint8_t> mask_map;          // h*w, 1 = masked
  std::vector<std::string> descriptions;  // one per masked object, masking order
  struct MaskedRegion {
    int ann_index = -1;
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // final box after margins and clipping
  };
  std::vector<MaskedRegion> regions;  // same order as descriptions
};

struct GroundingConfig {
  int max_objects = 3;
  float coverage_stop = 0.75f;
  int margin_max = 10;                     // per-side margin, pixels
  std::array<float, 3> fill = {0.5f, 0.5f, 0.5f};  // dataset mean color
  DistanceBuckets distance_buckets;
  std::vector<std::string> templates = default_templates();
};

// Masks up to three uniformly chosen object instances (bbox plus independent
// per-side margins in [0, margin_max]), stopping early once coverage reaches
// coverage_stop, and renders one template description per masked object.
inline MaskedSample select_and_mask(const ImageF& rgb, const std::vector<env::Annotation>& annotations,
                                    const GroundingConfig& cfg, Rng& rng) {
  MaskedSample out;
  out.masked_rgb = rgb;
  out.mask_map.assign(static_cast<size_t>(rgb.h) * rgb.w, 0);
  if (annotations.empty()) return out;

  std::vector<int> order(annotations.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with the explicit stream: uniform selection w/o replacement
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);

  int64_t covered = 0;
  const int64_t total = static_cast<int64_t>(rgb.h) * rgb.w;
  for (int pick : order) {
    if (static_cast<int>(out.descriptions.size()) >= cfg.max_objects) break;
    if (static_cast<double>(covered) >= cfg.coverage_stop * static_cast<double>(total)) break;
    const env::Annotation& a = annotations[static_cast<size_t>(pick)];
    int ml = rng.next_int(0, cfg.margin_max), mr = rng.next_int(0, cfg.margin_max);
    int mt = rng.next_int(0, cfg.margin_max), mb = rng.next_int(0, cfg.margin_max);
    int x0 = std::max(0, a.x0 - ml), x1 = std::min(rgb.w - 1, a.x1 + mr);
    int y0 = std::max(0, a.y0 - mt), y1 = std::min(rgb.h - 1, a.y1 + mb);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        size_t idx = static_cast<size_t>(y) * rgb.w + x;
        if (!out.mask_map[idx]) {
          out.mask_map[idx] = 1;
          ++covered;
        }
        float* px = out.masked_rgb.rgb.data() + idx * 3;
        px[0] = cfg.fill[0];
        px[1] = cfg.fill[1];
        px[2] = cfg.fill[2];
      }
    int rule = rng.next_int(1, 2);
    std::string direction = direction_label(a.center_col, rgb.w, rule);
    std::string distance = distance_label(a.mean_depth, cfg.distance_buckets);
    int template_id = rng.next_int(1, static_cast<int>(cfg.templates.size()));
    out.descriptions.push_back(
        render_description(env::class_name(a.class_id), direction, distance, template_id, cfg.templates));
    out.regions.push_back({pick, x0, y0, x1, y1});
  }
  return out;
}

// Descriptions joined with single spaces, in masking order.
inline std::string joined_description(const MaskedSample& sample) {
  std::string text;
  for (size_t i = 0; i < sample.descriptions.size(); ++i) {
    if (i) text += ' ';
    text += sample.descriptions[i];
  }
  return text;
}

// ---------------------------------------------------------------------------
// data augmentation
// ---------------------------------------------------------------------------

struct AugmentParams {
  int pad = 10;
  float hue_delta = 0.1f;
  float brightness_delta = 0.4f;
  float contrast_delta = 0.4f;
  float saturation_delta = 0.2f;
  float blur_sigma_min = 0.1f;
  float blur_sigma_max = 2.0f;
  float grayscale_prob = 0.2f;
};

namespace detail {

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = (g - b) / d / 6.0f;
  } else if (mx == g) {
    h = (2.0f + (b - r) / d) / 6.0f;
  } else {
    h = (4.0f + (r - g) / d) / 6.0f;
  }
  if (h < 0) h += 1.0f;
}

inline void hsv_to_rgb_f(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
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
}

// Sampled pad-and-crop offsets; (dx, dy) in [-pad, pad].
struct CropShift {
  int dx = 0, dy = 0;
};

template <typename Pixel>
void shift_replicate(std::vector<Pixel>& data, int h, int w, int channels, CropShift s) {
  if (s.dx == 0 && s.dy == 0) return;
  std::vector<Pixel> out(data.size());
  for (int y = 0; y < h; ++y) {
    int sy = std::clamp(y + s.dy, 0, h - 1);
    for (int x = 0; x < w; ++x) {
      int sx = std::clamp(x + s.dx, 0, w - 1);
      for (int c = 0; c < channels; ++c)
        out[(static_cast<size_t>(y) * w + x) * channels + c] =
            data[(static_cast<size_t>(sy) * w + sx) * channels + c];
    }
  }
  data = std::move(out);
}

inline void gaussian_blur(ImageF& img, float sigma) {
  if (sigma <= 0.0f) return;
  int radius = std::max(1, static_cast<int>(std::ceil(2.5f * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  float sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    float v = std::exp(-0.5f * i * i / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : kernel) v /= sum;
  // separable passes over whole interleaved rows; taps clamp at the borders
  int row_f = img.w * 3;
  std::vector<float> tmp(img.rgb.size(), 0.0f);
  for (int y = 0; y < img.h; ++y) {
    float* dst = tmp.data() + static_cast<size_t>(y) * row_f;
    const float* src = img.rgb.data() + static_cast<size_t>(y) * row_f;
    for (int k = -radius; k <= radius; ++k) {
      float kv = kernel[static_cast<size_t>(k + radius)];
      int shift = 3 * k;
      int x0 = std::max(0, -shift), x1 = std::min(row_f, row_f - shift);
      for (int i = x0; i < x1; ++i) dst[i] += kv * src[i + shift];
      // clamped borders
      for (int i = 0; i < x0; ++i) dst[i] += kv * src[i % 3];
      for (int i = x1; i < row_f; ++i) dst[i] += kv * src[row_f - 3 + i % 3];
    }
  }
  std::fill(img.rgb.begin(), img.rgb.end(), 0.0f);
  for (int y = 0; y < img.h; ++y) {
    float* dst = img.rgb.data() + static_cast<size_t>(y) * row_f;
    for (int k = -radius; k <= radius; ++k) {
      int sy = std::clamp(y + k, 0, img.h - 1);
      float kv = kernel[static_cast<size_t>(k + radius)];
      const float* src = tmp.data() + static_cast<size_t>(sy) * row_f;
      for (int i = 0; i < row_f; ++i) dst[i] += kv * src[i];
    }
  }
}

}  // namespace detail

// Photometric + spatial augmentation of an RGB image. Spatial jitter is a
// replicate pad followed by a random crop back to the original size; color
// jitter applies brightness/contrast/hue/saturation in a random order.
// Optional depth/annotations receive the same spatial shift so targets stay
// aligned with the input.
inline ImageF augment_full(const ImageF& input, const AugmentParams& p, Rng& rng,
                           std::vector<float>* depth = nullptr,
                           std::vector<env::Annotation>* annotations = nullptr) {
  ImageF img = input;

  // spatial jitter
  detail::CropShift shift;
  if (p.pad > 0) {
    shift.dx = rng.next_int(-p.pad, p.pad);
    shift.dy = rng.next_int(-p.pad, p.pad);
  }
  detail::shift_replicate(img.rgb, img.h, img.w, 3, shift);
  if (depth) detail::shift_replicate(*depth, img.h, img.w, 1, shift);
  if (annotations) {
    std::vector<env::Annotation> kept;
    for (env::Annotation a : *annotations) {
      a.x0 -= shift.dx;
      a.x1 -= shift.dx;
      a.y0 -= shift.dy;
      a.y1 -= shift.dy;
      if (a.x1 < 0 || a.x0 > img.w - 1 || a.y1 < 0 || a.y0 > img.h - 1) continue;
      a.x0 = std::clamp(a.x0, 0, img.w - 1);
      a.x1 = std::clamp(a.x1, 0, img.w - 1);
      a.y0 = std::clamp(a.y0, 0, img.h - 1);
      a.y1 = std::clamp(a.y1, 0, img.h - 1);
      a.center_col = 0.5f * (a.x0 + a.x1);
      kept.push_back(a);
    }
    *annotations = std::move(kept);
  }

  // color jitter in random order
  std::array<int, 4> order = {0, 1, 2, 3};
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.next_below(i))]);
  for (int which : order) {
    switch (which) {
      case 0: {  // brightness
        if (p.brightness_delta <= 0) break;
        float f = static_cast<float>(rng.next_uniform(1.0 - p.brightness_delta, 1.0 + p.brightness_delta));
        for (auto& v : img.rgb) v = detail::clamp01(v * f);
        break;
      }
      case 1: {  // contrast about the mean luma
        if (p.contrast_delta <= 0) break;
        float f = static_cast<float>(rng.next_uniform(1.0 - p.contrast_delta, 1.0 + p.contrast_delta));
        double mean = 0;
        for (size_t i = 0; i < img.rgb.size(); i += 3)
          mean += 0.299 * img.rgb[i] + 0.587 * img.rgb[i + 1] + 0.114 * img.rgb[i + 2];
        mean /= static_cast<double>(img.rgb.size() / 3);
        for (auto& v : img.rgb) v = detail::clamp01(static_cast<float>(mean + (v - mean) * f));
        break;
      }
      case 2: {  // hue rotation
        if (p.hue_delta <= 0) break;
        float dh = static_cast<float>(rng.next_uniform(-p.hue_delta, p.hue_delta));
        if (dh != 0.0f)
          for (size_t i = 0; i < img.rgb.size(); i += 3) {
            float h, s, v;
            detail::rgb_to_hsv(img.rgb[i], img.rgb[i + 1], img.rgb[i + 2], h, s, v);
            detail::hsv_to_rgb_f(h + dh, s, v, img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]);
          }
        break;
      }
      default: {  // saturation
        if (p.saturation_delta <= 0) break;
        float f = static_cast<float>(rng.next_uniform(1.0 - p.saturation_delta, 1.0 + p.saturation_delta));
        for (size_t i = 0; i < img.rgb.size(); i += 3) {
          float gray = 0.299f * img.rgb[i] + 0.587f * img.rgb[i + 1] + 0.114f * img.rgb[i + 2];
          for (int c = 0; c < 3; ++c)
            img.rgb[i + static_cast<size_t>(c)] =
                detail::clamp01(gray + (img.rgb[i + static_cast<size_t>(c)] - gray) * f);
        }
        break;
      }
    }
  }

  // gaussian blur
  if (p.blur_sigma_max > 0.0f) {
    float sigma = static_cast<float>(rng.next_uniform(p.blur_sigma_min, p.blur_sigma_max));
    detail::gaussian_blur(img, sigma);
  }

  // grayscale
  if (p.grayscale_prob > 0 && rng.next_bool(p.grayscale_prob)) {
    for (size_t i = 0; i < img.rgb.size(); i += 3) {
      float gray = 0.299f * img.rgb[i] + 0.587f * img.rgb[i + 1] + 0.114f * img.rgb[i + 2];
      img.rgb[i] = img.rgb[i + 1] = img.rgb[i + 2] = gray;
    }
  }
  return img;
}

inline ImageF augment(const ImageF& input, const AugmentParams& p, Rng& rng) {
  return augment_full(input, p, rng);
}

}  // namespace gwm::ground
