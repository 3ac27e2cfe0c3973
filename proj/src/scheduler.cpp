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

#include "specserve/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace specserve {

StrideScheduler::StrideScheduler(SchedulerConfig cfg) : cfg_(cfg), current_s_(cfg.initial_stride) {
  if (cfg_.window < 1 || cfg_.s_max < 1 || cfg_.initial_stride < 1 ||
      cfg_.initial_stride > cfg_.s_max) {
    throw std::invalid_argument("scheduler: bad config");
  }
}

double StrideScheduler::estimate_gamma() const {
  if (window_.empty()) return cfg_.cold_gamma;
  double matched_sum = 0.0;
  double mismatch_count = 0.0;
  for (const MatchRecord& r : window_) {
    matched_sum += static_cast<double>(r.matched);
    if (r.matched < r.stride) mismatch_count += 1.0;
  }
  // Both sums can only be zero together when the window is empty, so the
  // division is safe here; the truncation also caps over-optimistic windows.
  double gamma = matched_sum / (matched_sum + mismatch_count);
  return std::min(gamma, cfg_.gamma_max);
}

double StrideScheduler::expected_matched(double gamma, std::uint32_t s) {
  if (gamma < 0.0) throw std::invalid_argument("expected_matched: gamma must be >= 0");
  if (s < 1) throw std::invalid_argument("expected_matched: s must be >= 1");
  if (gamma >= 1.0 || 1.0 - gamma < 1e-12) return static_cast<double>(s);
  return (1.0 - std::pow(gamma, static_cast<double>(s))) / (1.0 - gamma);
}

double StrideScheduler::objective_value(VerifyMode mode, double gamma, double a,
                                        const LatencyModel& b, std::uint32_t s) {
  double em = expected_matched(gamma, s);
  double sd = static_cast<double>(s);
  double bs = b.predict(s);
  double latency;
  if (mode == VerifyMode::sync) {
    latency = sd * a + bs;
  } else {
    double gs = std::pow(gamma, sd);
    latency = gs * ((sd - 1.0) * a + std::max(a, bs)) + (1.0 - gs) * (sd * a + bs);
  }
  return em / latency;
}

double StrideScheduler::objective(std::uint32_t s) const {
  return objective_value(cfg_.mode, estimate_gamma(), a_estimate(), b_model_, s);
}

std::uint32_t StrideScheduler::optimal_stride_value(VerifyMode mode, double gamma, double a,
                                                    const LatencyModel& b, std::uint32_t s_max) {
  std::uint32_t best_s = 1;
  double best = objective_value(mode, gamma, a, b, 1);
  for (std::uint32_t s = 2; s <= s_max; ++s) {
    double v = objective_value(mode, gamma, a, b, s);
    if (v > best) {
      best = v;
      best_s = s;
    }
  }
  return best_s;
}

std::uint32_t StrideScheduler::optimal_stride() {
  if (profile_ready()) {
    current_s_ =
        optimal_stride_value(cfg_.mode, estimate_gamma(), a_estimate(), b_model_, cfg_.s_max);
  }
  return current_s_;
}

double StrideScheduler::a_estimate() const {
  if (step_latencies_.empty()) return 0.0;
  double total = 0.0;
  for (double v : step_latencies_) total += v;
  return total / static_cast<double>(step_latencies_.size());
}

void StrideScheduler::observe_step_latency(double seconds) {
  step_latencies_.push_back(seconds);
  while (step_latencies_.size() > cfg_.window) step_latencies_.pop_front();
}

void StrideScheduler::observe_retrieval_latency(std::size_t batch_size, double seconds) {
  batch_latencies_.emplace_back(batch_size, seconds);
  while (batch_latencies_.size() > cfg_.window) batch_latencies_.pop_front();
  refit_b_model();
}

void StrideScheduler::update_profile(std::uint32_t stride, std::uint32_t matched,
                                     double step_latency, double verification_latency,
                                     std::optional<std::size_t> batch_size) {
  if (matched > stride) throw std::invalid_argument("update_profile: matched > stride");
  window_.push_back({stride, matched});
  while (window_.size() > cfg_.window) window_.pop_front();
  observe_step_latency(step_latency);
  observe_retrieval_latency(batch_size.value_or(stride), verification_latency);
}

void StrideScheduler::refit_b_model() {
  std::size_t n = batch_latencies_.size();
  double mean_lat = 0.0;
  for (const auto& [size, lat] : batch_latencies_) mean_lat += lat;
  mean_lat /= static_cast<double>(n);

  bool distinct = false;
  for (const auto& [size, lat] : batch_latencies_) {
    if (size != batch_latencies_.front().first) {
      distinct = true;
      break;
    }
  }
  // Least squares needs two distinct batch sizes; until then the model is the
  // constant b(s) = mean, which is also the exact-dense/sparse regime.
  if (!distinct) {
    b_model_ = {mean_lat, 0.0};
    return;
  }
  double mean_x = 0.0;
  for (const auto& [size, lat] : batch_latencies_) mean_x += static_cast<double>(size);
  mean_x /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [size, lat] : batch_latencies_) {
    double dx = static_cast<double>(size) - mean_x;
    sxx += dx * dx;
    sxy += dx * (lat - mean_lat);
  }
  double b1 = sxy / sxx;
  double b0 = mean_lat - b1 * mean_x;
  if (b1 < 0.0) {
    b_model_ = {std::max(mean_lat, 0.0), 0.0};
    return;
  }
  if (b0 < 0.0) {
    // Fit through the origin instead of reporting a negative intercept.
    double sx2 = 0.0, sxy0 = 0.0;
    for (const auto& [size, lat] : batch_latencies_) {
      double x = static_cast<double>(size);
      sx2 += x * x;
      sxy0 += x * lat;
    }
    b_model_ = {0.0, std::max(sxy0 / sx2, 0.0)};
    return;
  }
  b_model_ = {b0, b1};
}

}  // namespace specserve
