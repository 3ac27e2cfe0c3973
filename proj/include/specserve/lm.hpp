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

#include <optional>
#include <span>
#include <vector>

#include "specserve/common.hpp"

namespace specserve {

inline constexpr std::uint32_t kPromptCap = 512;
inline constexpr std::uint32_t kDefaultGenCap = 128;

struct LmConfig {
  std::uint64_t seed = 1;
  std::uint32_t vocab_size = 4096;          // >= 2; highest id is EOS
  double decode_latency_per_token = 0.0;    // seconds; simulated cost of one token
  std::uint32_t suffix_window = 32;
  std::uint32_t context_cap = kPromptCap + kDefaultGenCap;
};

struct DecodeResult {
  std::vector<TokenId> tokens;  // includes EOS when hit_eos
  bool hit_eos = false;
  double latency = 0.0;
};

// Deterministic stand-in for an autoregressive language model. Each next
// token is a PRF of (seed, suffix-window hash, conditioning document id), so
// decoding is a pure function of its inputs and decoding k then continuing is
// identical to decoding k' > k in one call (the greedy-prefix property that
// makes rollback-and-regenerate exact). Stateless and reentrant.
class SyntheticLm {
 public:
  SyntheticLm(LmConfig cfg, LatencyMode latency_mode);

  // Greedily emits up to k tokens conditioned on the latest retrieved chunk
  // (or no document). Stops early on EOS. Throws when the context exceeds the
  // configured cap or k < 1.
  DecodeResult decode(std::span<const TokenId> context, std::optional<std::uint32_t> doc_id,
                      std::size_t k) const;

  // Softmax over PRF logits keyed by the context suffix; sums to 1 +- 1e-9.
  std::vector<double> next_token_distribution(std::span<const TokenId> context) const;

  TokenId eos_id() const { return cfg_.vocab_size - 1; }
  const LmConfig& config() const { return cfg_; }
  LatencyMode latency_mode() const { return latency_mode_; }

 private:
  TokenId next_token(std::uint64_t suffix, std::uint64_t doc_key) const;

  LmConfig cfg_;
  LatencyMode latency_mode_;
};

}  // namespace specserve
