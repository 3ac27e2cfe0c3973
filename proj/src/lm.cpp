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

#include "specserve/lm.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace specserve {

namespace {
constexpr std::uint64_t kDecodeTag = 0x7c3a1f58u;
constexpr std::uint64_t kLogitsTag = 0x2fd4b961u;
constexpr std::uint64_t kNoDocKey = 0;
}  // namespace

SyntheticLm::SyntheticLm(LmConfig cfg, LatencyMode latency_mode)
    : cfg_(cfg), latency_mode_(latency_mode) {
  if (cfg_.vocab_size < 2) throw std::invalid_argument("lm: vocab_size must be >= 2");
  if (cfg_.decode_latency_per_token < 0) throw std::invalid_argument("lm: negative latency");
}

TokenId SyntheticLm::next_token(std::uint64_t suffix, std::uint64_t doc_key) const {
  std::uint64_t h = hash_mix(hash_mix(cfg_.seed ^ kDecodeTag, suffix), doc_key);
  return static_cast<TokenId>(splitmix64(h) % cfg_.vocab_size);
}

DecodeResult SyntheticLm::decode(std::span<const TokenId> context,
                                 std::optional<std::uint32_t> doc_id, std::size_t k) const {
  if (k < 1) throw std::invalid_argument("decode: k must be >= 1");
  if (context.size() + k > cfg_.context_cap) {
    throw std::invalid_argument("decode: context over cap");
  }
  std::uint64_t doc_key = doc_id ? static_cast<std::uint64_t>(*doc_id) + 1 : kNoDocKey;

  auto t0 = std::chrono::steady_clock::now();
  DecodeResult out;
  std::vector<TokenId> working(context.begin(), context.end());
  for (std::size_t i = 0; i < k; ++i) {
    TokenId t = next_token(suffix_hash(working, cfg_.suffix_window), doc_key);
    out.tokens.push_back(t);
    working.push_back(t);
    if (t == eos_id()) {
      out.hit_eos = true;
      break;
    }
  }

  if (latency_mode_ == LatencyMode::simulated) {
    out.latency = cfg_.decode_latency_per_token * static_cast<double>(out.tokens.size());
  } else {
    if (cfg_.decode_latency_per_token > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(
          cfg_.decode_latency_per_token * static_cast<double>(out.tokens.size())));
    }
    out.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

std::vector<double> SyntheticLm::next_token_distribution(std::span<const TokenId> context) const {
  if (context.empty()) throw std::invalid_argument("next_token_distribution: empty context");
  std::uint64_t suffix = suffix_hash(context, cfg_.suffix_window);
  std::uint64_t base = hash_mix(cfg_.seed ^ kLogitsTag, suffix);
  std::vector<double> logits(cfg_.vocab_size);
  double max_logit = -1e300;
  for (std::uint32_t v = 0; v < cfg_.vocab_size; ++v) {
    SplitMix rng(hash_mix(base, v));
    logits[v] = 2.0 * rng.next_gaussian();
    if (logits[v] > max_logit) max_logit = logits[v];
  }
  double total = 0.0;
  for (std::uint32_t v = 0; v < cfg_.vocab_size; ++v) {
    logits[v] = std::exp(logits[v] - max_logit);
    total += logits[v];
  }
  for (std::uint32_t v = 0; v < cfg_.vocab_size; ++v) logits[v] /= total;
  return logits;
}

}  // namespace specserve
