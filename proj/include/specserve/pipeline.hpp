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
#include <vector>

#include "specserve/cache.hpp"
#include "specserve/lm.hpp"
#include "specserve/retriever.hpp"
#include "specserve/scheduler.hpp"
#include "specserve/trace.hpp"

namespace specserve {

struct StridePolicy {
  enum class Kind { fixed, os3 };
  Kind kind = Kind::fixed;
  std::uint32_t fixed_stride = 3;
};

struct GenerationRequest {
  std::vector<TokenId> prompt;      // non-empty, at most kPromptCap tokens
  std::uint32_t gen_cap = kDefaultGenCap;
  std::uint32_t gen_stride_k = 4;   // tokens decoded per retrieval step
  StridePolicy stride_policy{};
  std::size_t prefetch_size = 1;    // 1 = top-1 cache update
  bool async_verify = false;
  // Drop the cache retrieval of an episode's final step and decode it with
  // the verified document instead. Ignored in async mode, where the final
  // step is what overlaps the verification.
  bool skip_last_speculation = false;
  // Update the cache with every verification result, including the steps
  // after the first mismatch (they were paid for). When false only results
  // up to and including the corrected step are inserted.
  bool cache_update_all_results = true;
};

// Shared immutable serving state. One ServingContext can serve any number of
// concurrent requests; all per-request mutable state lives in the runner.
struct ServingContext {
  const RetrievalIndex* index = nullptr;
  const SyntheticLm* lm = nullptr;
  const Embedder* embedder = nullptr;
  std::size_t query_window = kDefaultQueryWindow;
  LatencyMode latency_mode = LatencyMode::simulated;
  SchedulerConfig scheduler{};
  std::size_t cache_max_size = kDefaultCacheSize;
};

struct SpecStep {
  Query query;
  std::optional<std::uint32_t> speculated;  // chunk id retrieved from the cache
  std::size_t checkpoint = 0;               // |X| before this step's decode
  // The warm-up retrieval answers the very first step's query, so that step
  // carries its ground truth and is excluded from the verification batch.
  bool pre_verified = false;
  std::optional<std::uint32_t> known_truth;
  // skip_last_speculation: query joins the batch, decode waits for the
  // verified document.
  bool deferred = false;
};

struct SpeculationEpisode {
  std::vector<SpecStep> steps;
};

struct VerifyOutcome {
  std::vector<std::optional<std::uint32_t>> ground_truth;       // per step
  std::optional<std::size_t> first_mismatch;                    // 0-based step index
  std::vector<std::optional<RetrievalResult>> results;          // per step; nullopt if not queried
  std::size_t batch_size = 0;                                   // queries actually sent
  double latency = 0.0;
};

// One batched retrieval covering the episode's unverified queries; the first
// speculated document differing from its ground truth (by chunk id) gives the
// mismatch index. Deferred steps contribute their query but cannot mismatch.
VerifyOutcome verify_episode(const SpeculationEpisode& episode, const RetrievalIndex& index,
                             std::size_t retrieve_k);

// Sequential iterative serving: one knowledge-base retrieval per k generated
// tokens. The reference behavior everything else must reproduce exactly.
GenerationTrace run_baseline(const ServingContext& ctx, const GenerationRequest& request);

// Speculative serving with batched verification and rollback (asynchronous
// verification when request.async_verify is set). Produces output tokens
// byte-identical to run_baseline for the same request.
GenerationTrace run_speculative(const ServingContext& ctx, const GenerationRequest& request);

void validate_request(const ServingContext& ctx, const GenerationRequest& request);

}  // namespace specserve
