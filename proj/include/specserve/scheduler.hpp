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
#include <deque>
#include <optional>
#include <utility>

#include "specserve/retriever.hpp"

namespace specserve {

enum class VerifyMode { sync, async };

struct SchedulerConfig {
  std::size_t window = 5;        // w: profiling records kept
  double gamma_max = 0.6;        // truncation of the speculation-accuracy estimate
  double cold_gamma = 0.5;       // estimate while the window is empty
  std::uint32_t s_max = 16;      // stride search bound
  VerifyMode mode = VerifyMode::sync;
  std::uint32_t initial_stride = 1;
};

struct MatchRecord {
  std::uint32_t stride = 0;   // s(t): speculative steps verified in that episode
  std::uint32_t matched = 0;  // M(s(t)): steps before the first mismatch, or s(t)
};

// Optimal speculation stride scheduler: estimates the speculation accuracy
// gamma over a sliding window, fits a linear batched-verification latency
// model b(s) = b0 + b1*s online, and picks the stride maximizing the expected
// number of documents verified per unit time. One instance per request.
class StrideScheduler {
 public:
  explicit StrideScheduler(SchedulerConfig cfg);

  // Windowed maximum-likelihood estimate
  //   gamma = sum(M) / (sum(M) + sum(1{M < s})),
  // truncated at gamma_max; cold_gamma while the window is empty.
  double estimate_gamma() const;

  // Expected number of verified documents per episode at stride s,
  // (1 - gamma^s) / (1 - gamma); equals s in the gamma -> 1 limit.
  static double expected_matched(double gamma, std::uint32_t s);

  // Documents verified per unit time at stride s.
  //   sync:  E[matched] / (s*a + b(s))
  //   async: E[matched] / (gamma^s*((s-1)*a + max(a, b(s)))
  //                        + (1 - gamma^s)*(s*a + b(s)))
  static double objective_value(VerifyMode mode, double gamma, double a, const LatencyModel& b,
                                std::uint32_t s);
  double objective(std::uint32_t s) const;

  // Argmax of the objective over s in [1, s_max], ties to the smallest s.
  static std::uint32_t optimal_stride_value(VerifyMode mode, double gamma, double a,
                                            const LatencyModel& b, std::uint32_t s_max);

  // Stateful version; keeps the current stride until at least one speculation
  // latency and one verification latency have been observed.
  std::uint32_t optimal_stride();

  // Records one verification episode: the (stride, matched) outcome, the mean
  // per-step speculation latency and the batched verification latency. The
  // verification batch equals the stride unless the caller says otherwise
  // (deferring the last step puts one extra query in the batch).
  void update_profile(std::uint32_t stride, std::uint32_t matched, double step_latency,
                      double verification_latency,
                      std::optional<std::size_t> batch_size = std::nullopt);

  // Out-of-episode observations (warm-up retrieval, pre-verified steps).
  void observe_retrieval_latency(std::size_t batch_size, double seconds);
  void observe_step_latency(double seconds);

  double a_estimate() const;
  const LatencyModel& b_model() const { return b_model_; }
  std::uint32_t current_stride() const { return current_s_; }
  bool profile_ready() const { return !step_latencies_.empty() && !batch_latencies_.empty(); }
  const std::deque<MatchRecord>& window() const { return window_; }
  const SchedulerConfig& config() const { return cfg_; }

 private:
  void refit_b_model();

  SchedulerConfig cfg_;
  std::deque<MatchRecord> window_;
  std::deque<double> step_latencies_;
  std::deque<std::pair<std::size_t, double>> batch_latencies_;
  LatencyModel b_model_{};
  std::uint32_t current_s_;
};

}  // namespace specserve
