// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gwm {

// Splittable counter-free PRNG built on SplitMix64. Every consumer of
// randomness takes an explicit Rng (or a split of one); there is no global
// random state anywhere in the library, so runs are reproducible from the
// root seed alone.
class Rng {
 public:
  Rng() : state_(0x9e3779b97f4a7c15ULL) {}
  explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // Unbiased integer in [0, n), n >= 1.
  uint64_t next_below(uint64_t n) {
    if (n <= 1) return 0;
    uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int next_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Uniform in [0, 1) with 53 bits of randomness.
  double next_double() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool next_bool(double p_true) { return next_double() < p_true; }

  // Standard normal via Box-Muller (no cached spare: keeps splits independent
  // of call parity).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 1e-300) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent stream. Tag and child state are mixed so sibling
  // splits never collide.
  Rng split(uint64_t tag) {
    Rng child;
    child.state_ = mix(next_u64() ^ mix(tag + 0x632be59bd9b4e019ULL));
    return child;
  }

  Rng split(std::string_view tag) { return split(hash64(tag)); }

  static uint64_t hash64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t state_;
};

}  // namespace gwm
