// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <vector>

#include "gwm/core/rng.hpp"
#include "gwm/core/tensor.hpp"
#include "gwm/env/render.hpp"

namespace gwm::train {

// One stored environment step. RGB stays as bytes and depth is quantized to
// 16 bits of d_max to keep a 3e5-step buffer within memory.
struct EpisodeStep {
  std::vector<uint8_t> rgb;       // h*w*3
  std::vector<uint16_t> depth_q;  // round(depth / d_max * 65535)
  std::array<float, 6> task{};
  std::vector<env::Annotation> annotations;
  std::array<float, 2> prev_action{};  // normalized action that led into this obs
  float reward = 0;                    // received on arrival at this obs
  float cont = 1;                      // 0 when this obs terminates the episode
};

struct EpisodeRecord {
  int h = 0, w = 0;
  std::vector<EpisodeStep> steps;
  int length() const { return static_cast<int>(steps.size()); }
};

inline uint16_t quantize_depth(float meters, float d_max) {
  float v = meters / d_max;
  v = v < 0 ? 0 : (v > 1 ? 1 : v);
  return static_cast<uint16_t>(v * 65535.0f + 0.5f);
}
inline float dequantize_depth01(uint16_t q) { return static_cast<float>(q) / 65535.0f; }

// FIFO episodic buffer. Capacity counts steps; whole episodes are evicted
// oldest-first once the total exceeds capacity.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int64_t capacity_steps) : capacity_(capacity_steps) {}

  // Oldest episodes leave first until the step total fits. An episode longer
  // than the whole capacity is evicted immediately, so the bound is strict.
  void add(EpisodeRecord episode) {
    check(episode.length() >= 1, "replay add: empty episode");
    stored_steps_ += episode.length();
    episodes_.push_back(std::move(episode));
    while (stored_steps_ > capacity_ && !episodes_.empty()) {
      stored_steps_ -= episodes_.front().length();
      episodes_.pop_front();
    }
    check(stored_steps_ <= capacity_, "replay: capacity accounting broken");
  }

  int64_t stored_steps() const { return stored_steps_; }
  size_t episode_count() const { return episodes_.size(); }
  int64_t capacity() const { return capacity_; }

  struct Batch {
    int B = 0, L = 0;
    // row-major (B, L); padded positions repeat the terminal step with
    // continuation forced to zero
    std::vector<const EpisodeStep*> steps;
    std::vector<uint8_t> padded;
    const EpisodeStep& at(int b, int t) const { return *steps[static_cast<size_t>(b) * L + t]; }
    float cont_at(int b, int t) const {
      return padded[static_cast<size_t>(b) * L + t] ? 0.0f : at(b, t).cont;
    }
  };

  // B uniformly chosen episodes; within each, a uniformly chosen window of
  // length L (uniform over valid starts when the episode is long enough).
  // Pointers stay valid until the next add().
  Batch sample(int B, int L, Rng& rng) const {
    check(!episodes_.empty(), "replay underflow");
    Batch batch;
    batch.B = B;
    batch.L = L;
    batch.steps.resize(static_cast<size_t>(B) * L);
    batch.padded.assign(static_cast<size_t>(B) * L, 0);
    for (int b = 0; b < B; ++b) {
      const EpisodeRecord& ep = episodes_[rng.next_below(episodes_.size())];
      int len = ep.length();
      int start = len >= L ? static_cast<int>(rng.next_below(static_cast<uint64_t>(len - L + 1))) : 0;
      for (int t = 0; t < L; ++t) {
        int idx = start + t;
        if (idx < len) {
          batch.steps[static_cast<size_t>(b) * L + t] = &ep.steps[static_cast<size_t>(idx)];
        } else {
          batch.steps[static_cast<size_t>(b) * L + t] = &ep.steps.back();
          batch.padded[static_cast<size_t>(b) * L + t] = 1;
        }
      }
    }
    return batch;
  }

 private:
  int64_t capacity_;
  int64_t stored_steps_ = 0;
  std::deque<EpisodeRecord> episodes_;
};

}  // namespace gwm::train
