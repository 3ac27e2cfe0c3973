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

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "specserve/common.hpp"

namespace specserve {

enum class EventType { speculate, verify, rollback, kb_retrieval, cache_retrieval, decode };

const char* to_string(EventType type);

struct TraceEvent {
  EventType type;
  double t_start = 0.0;
  double t_end = 0.0;
  // Per-type payload:
  //   verify:         arg0 = batch size, arg1 = 1-based first mismatch or -1
  //   rollback:       arg0 = token position rolled back to
  //   kb_retrieval:   arg0 = batch size, arg1 = k
  //   speculate:      arg0 = step index within the episode
  //   decode:         arg0 = tokens emitted
  //   cache_retrieval: arg0 = retrieved chunk id or -1
  std::int64_t arg0 = -1;
  std::int64_t arg1 = -1;
};

// Full event/latency log of one request.
struct GenerationTrace {
  std::vector<TokenId> output_tokens;
  std::vector<TraceEvent> events;

  std::uint64_t kb_calls = 0;    // knowledge-base round trips (batched calls)
  std::uint64_t kb_queries = 0;  // total queries carried by those calls
  std::uint64_t cache_retrievals = 0;
  std::uint64_t verifications = 0;
  std::uint64_t rollbacks = 0;
  std::uint64_t tokens_regenerated = 0;

  std::uint64_t episodes = 0;
  std::uint64_t spec_steps = 0;            // speculative steps taken
  std::uint64_t spec_steps_matched = 0;    // sum of per-episode matched counts
  std::uint64_t episodes_with_mismatch = 0;
  std::map<std::uint32_t, std::uint64_t> stride_histogram;

  double total_latency = 0.0;
  double gen_latency = 0.0;        // G: model decoding
  double retrieval_latency = 0.0;  // R: everything retrieval-side

  // Uncapped run-level MLE of the speculation accuracy.
  double observed_gamma() const;
  std::uint32_t modal_stride() const;

  // JSON lines: one {type, t_start, t_end, payload} per event, then a summary
  // record with counters and output token ids.
  void write_jsonl(std::ostream& out) const;
};

}  // namespace specserve
