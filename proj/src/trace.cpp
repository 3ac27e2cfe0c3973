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

#include "specserve/trace.hpp"

#include <ostream>

#include "json.hpp"

namespace specserve {

const char* to_string(EventType type) {
  switch (type) {
    case EventType::speculate: return "speculate";
    case EventType::verify: return "verify";
    case EventType::rollback: return "rollback";
    case EventType::kb_retrieval: return "kb_retrieval";
    case EventType::cache_retrieval: return "cache_retrieval";
    case EventType::decode: return "decode";
  }
  return "unknown";
}

double GenerationTrace::observed_gamma() const {
  double matched = static_cast<double>(spec_steps_matched);
  double mismatches = static_cast<double>(episodes_with_mismatch);
  if (matched + mismatches == 0.0) return 0.0;
  return matched / (matched + mismatches);
}

std::uint32_t GenerationTrace::modal_stride() const {
  std::uint32_t best = 1;
  std::uint64_t best_count = 0;
  for (const auto& [stride, count] : stride_histogram) {
    if (count > best_count) {
      best_count = count;
      best = stride;
    }
  }
  return best;
}

void GenerationTrace::write_jsonl(std::ostream& out) const {
  for (const TraceEvent& e : events) {
    nlohmann::ordered_json payload = nlohmann::ordered_json::object();
    switch (e.type) {
      case EventType::verify:
        payload["batch_size"] = e.arg0;
        if (e.arg1 >= 0) payload["mismatch_index"] = e.arg1;
        break;
      case EventType::rollback:
        payload["position"] = e.arg0;
        break;
      case EventType::kb_retrieval:
        payload["batch_size"] = e.arg0;
        payload["k"] = e.arg1;
        break;
      case EventType::speculate:
        payload["step"] = e.arg0;
        break;
      case EventType::decode:
        payload["tokens"] = e.arg0;
        break;
      case EventType::cache_retrieval:
        if (e.arg0 >= 0) payload["chunk_id"] = e.arg0;
        break;
    }
    nlohmann::ordered_json line;
    line["type"] = to_string(e.type);
    line["t_start"] = e.t_start;
    line["t_end"] = e.t_end;
    line["payload"] = payload;
    out << line.dump() << "\n";
  }
  nlohmann::ordered_json summary;
  summary["type"] = "summary";
  summary["kb_calls"] = kb_calls;
  summary["kb_queries"] = kb_queries;
  summary["cache_retrievals"] = cache_retrievals;
  summary["verifications"] = verifications;
  summary["rollbacks"] = rollbacks;
  summary["tokens_regenerated"] = tokens_regenerated;
  summary["episodes"] = episodes;
  summary["total_latency"] = total_latency;
  summary["gen_latency"] = gen_latency;
  summary["retrieval_latency"] = retrieval_latency;
  summary["output_tokens"] = output_tokens;
  out << summary.dump() << "\n";
}

}  // namespace specserve
