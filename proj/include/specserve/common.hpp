// Copyright 2026 The specserve Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not
// use this file except in compliance with the License. You may obtain a copy
// of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

namespace specserve {

using TokenId = std::uint32_t;

inline constexpr std::size_t kDefaultEmbedDim = 64;
inline constexpr std::size_t kDefaultQueryWindow = 32;
inline constexpr std::size_t kDefaultChunkLen = 256;

// Timing source for a serving run. In simulated mode every latency-bearing
// operation advances a virtual clock by its modeled cost; in wall_clock mode
// latencies are measured with a monotonic clock.
enum class LatencyMode { wall_clock, simulated };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Hash of the last min(|tokens|, window) token ids. The sole channel through
// which the synthetic model and embedder see context, so anything outside the
// window provably cannot influence them.
inline std::uint64_t suffix_hash(std::span<const TokenId> tokens, std::size_t window) {
  std::size_t start = tokens.size() > window ? tokens.size() - window : 0;
  std::uint64_t h = 0x5bf0f5e4c1e9d3a7ULL;
  for (std::size_t i = start; i < tokens.size(); ++i) {
    h = hash_mix(h, static_cast<std::uint64_t>(tokens[i]) + 1);
  }
  return h;
}

// Small deterministic generator (splitmix64 stream). Not crypto; just a
// reproducible source of uniforms and gaussians.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // Uniform in (0, 1]; never returns 0 so log() is safe.
  double next_unit() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

  double next_in(double lo, double hi) { return lo + (hi - lo) * (next_unit() - 0x1.0p-53); }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Inner product with a fixed accumulation recipe:
//   - four groups of eight lanes; iteration j adds element block
//     [32j + 8g, 32j + 8g + 8) into group g, lanewise;
//   - a remainder loop of eight-wide blocks continues group 0's chains;
//   - groups combine lanewise as (g0 + g1) + (g2 + g3), the eight lanes
//     reduce pairwise, and a scalar tail is added last.
// Every score in the system (index-side and cache-side) goes through this one
// function, so equal inputs give bit-equal scores regardless of call site.
// The four independent chains keep a full-corpus scan pipeline-bound on
// memory rather than on one add chain's latency.
inline float dot(std::span<const float> a, std::span<const float> b) {
  std::size_t n = a.size();
  std::size_t i = 0;
#if defined(__GNUC__) || defined(__clang__)
  typedef float vf8 __attribute__((vector_size(32)));
  const vf8 zero = {0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f};
  vf8 g0 = zero, g1 = zero, g2 = zero, g3 = zero;
  auto load = [](const float* p) {
    vf8 v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
  };
  for (; i + 32 <= n; i += 32) {
    g0 += load(a.data() + i) * load(b.data() + i);
    g1 += load(a.data() + i + 8) * load(b.data() + i + 8);
    g2 += load(a.data() + i + 16) * load(b.data() + i + 16);
    g3 += load(a.data() + i + 24) * load(b.data() + i + 24);
  }
  for (; i + 8 <= n; i += 8) {
    g0 += load(a.data() + i) * load(b.data() + i);
  }
  vf8 lanes = (g0 + g1) + (g2 + g3);
#if defined(__clang__)
  vf8 swap1 = __builtin_shufflevector(lanes, lanes, 1, 0, 3, 2, 5, 4, 7, 6);
  vf8 sum1 = lanes + swap1;
  vf8 swap2 = __builtin_shufflevector(sum1, sum1, 2, 3, 0, 1, 6, 7, 4, 5);
  vf8 sum2 = sum1 + swap2;
#else
  typedef int vi8 __attribute__((vector_size(32)));
  vf8 swap1 = __builtin_shuffle(lanes, vi8{1, 0, 3, 2, 5, 4, 7, 6});
  vf8 sum1 = lanes + swap1;
  vf8 swap2 = __builtin_shuffle(sum1, vi8{2, 3, 0, 1, 6, 7, 4, 5});
  vf8 sum2 = sum1 + swap2;
#endif
  float tail = 0.f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (sum2[0] + sum2[4]) + tail;
#else
  float groups[4][8] = {};
  for (; i + 32 <= n; i += 32) {
    for (int g = 0; g < 4; ++g) {
      for (int l = 0; l < 8; ++l) {
        groups[g][l] += a[i + 8 * g + l] * b[i + 8 * g + l];
      }
    }
  }
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) groups[0][l] += a[i + l] * b[i + l];
  }
  float lanes[8];
  for (int l = 0; l < 8; ++l) {
    lanes[l] = (groups[0][l] + groups[1][l]) + (groups[2][l] + groups[3][l]);
  }
  float sum1_0 = lanes[0] + lanes[1];
  float sum1_2 = lanes[2] + lanes[3];
  float sum1_4 = lanes[4] + lanes[5];
  float sum1_6 = lanes[6] + lanes[7];
  float tail = 0.f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((sum1_0 + sum1_2) + (sum1_4 + sum1_6)) + tail;
#endif
}

}  // namespace specserve
