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

#include <cmath>

#include "doctest.h"
#include "specserve/scheduler.hpp"

using namespace specserve;

namespace {

// Monte-Carlo oracle for the per-episode verified-document count: documents
// match independently with probability gamma; the count is the first mismatch
// position (the corrected document included), or s when everything matches.
double simulate_expected_matched(double gamma, std::uint32_t s, std::size_t trials,
                                 std::uint64_t seed, double* stderr_out) {
  SplitMix rng(seed);
  double sum = 0, sum_sq = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::uint32_t verified = 0;
    for (std::uint32_t i = 1; i <= s; ++i) {
      verified = i;
      if (rng.next_unit() > gamma) break;  // mismatch at step i
    }
    sum += verified;
    sum_sq += double(verified) * double(verified);
  }
  double mean = sum / double(trials);
  double var = sum_sq / double(trials) - mean * mean;
  *stderr_out = std::sqrt(std::max(var, 0.0) / double(trials));
  return mean;
}

// Test-side reimplementation of the objective, written directly from the
// closed forms rather than via the library helpers.
double oracle_objective(VerifyMode mode, double g, double a, double b0, double b1,
                        std::uint32_t s) {
  double bs = b0 + b1 * double(s);
  double em = g >= 1.0 ? double(s) : (1.0 - std::pow(g, double(s))) / (1.0 - g);
  if (mode == VerifyMode::sync) return em / (double(s) * a + bs);
  double gs = std::pow(g, double(s));
  double denom = gs * ((double(s) - 1.0) * a + std::max(a, bs)) +
                 (1.0 - gs) * (double(s) * a + bs);
  return em / denom;
}

std::uint32_t oracle_argmax(VerifyMode mode, double g, double a, double b0, double b1,
                            std::uint32_t s_max) {
  std::uint32_t best_s = 1;
  double best = oracle_objective(mode, g, a, b0, b1, 1);
  for (std::uint32_t s = 2; s <= s_max; ++s) {
    double v = oracle_objective(mode, g, a, b0, b1, s);
    if (v > best) {
      best = v;
      best_s = s;
    }
  }
  return best_s;
}

}  // namespace

TEST_CASE("gamma estimate: truncation, hand value, cold start") {
  SchedulerConfig cfg;
  StrideScheduler s(cfg);
  CHECK(s.estimate_gamma() == doctest::Approx(0.5));  // cold start

  s.update_profile(3, 3, 0.1, 0.5);  // raw MLE 1.0 -> capped
  CHECK(s.estimate_gamma() == doctest::Approx(0.6));

  StrideScheduler t(cfg);
  t.update_profile(4, 1, 0.1, 0.5);
  t.update_profile(4, 1, 0.1, 0.5);
  CHECK(t.estimate_gamma() == doctest::Approx(2.0 / 4.0));
}

TEST_CASE("gamma window is a ring of size w") {
  SchedulerConfig cfg;
  cfg.window = 5;
  StrideScheduler s(cfg);
  for (int i = 0; i < 6; ++i) s.update_profile(2, std::uint32_t(i % 3), 0.1, 0.5);
  CHECK(s.window().size() == 5);
  CHECK(s.window().front().matched == 1);  // the i=0 record fell off
}

TEST_CASE("expected matched: closed-form edge values") {
  CHECK(StrideScheduler::expected_matched(0.0, 1) == doctest::Approx(1.0));
  CHECK(StrideScheduler::expected_matched(0.0, 8) == doctest::Approx(1.0));
  CHECK(StrideScheduler::expected_matched(0.7, 1) == doctest::Approx(1.0));
  CHECK(StrideScheduler::expected_matched(0.5, 3) == doctest::Approx(1.75));
  CHECK(StrideScheduler::expected_matched(1.0, 5) == doctest::Approx(5.0));  // limit case
  CHECK_THROWS_AS(StrideScheduler::expected_matched(-0.1, 3), std::invalid_argument);
}

TEST_CASE("expected matched agrees with the Monte-Carlo oracle within 3 sigma") {
  std::uint64_t seed = 0x5eedULL;
  for (double gamma : {0.0, 0.3, 0.6, 0.9}) {
    for (std::uint32_t s : {1u, 3u, 8u}) {
      double se = 0;
      double mc = simulate_expected_matched(gamma, s, 100000, seed++, &se);
      double closed = StrideScheduler::expected_matched(gamma, s);
      CHECK(std::abs(mc - closed) <= 3.0 * se + 1e-12);
    }
  }
}

TEST_CASE("expected matched is nondecreasing in gamma and s") {
  for (double g = 0.0; g < 0.95; g += 0.05) {
    for (std::uint32_t s = 1; s < 16; ++s) {
      CHECK(StrideScheduler::expected_matched(g, s + 1) >=
            StrideScheduler::expected_matched(g, s));
      CHECK(StrideScheduler::expected_matched(g + 0.05, s) >=
            StrideScheduler::expected_matched(g, s));
    }
  }
}

TEST_CASE("objective: gamma 0 reduces to 1/(s a + b) and prefers s = 1") {
  LatencyModel b{1.0, 0.0};
  for (std::uint32_t s = 1; s <= 8; ++s) {
    CHECK(StrideScheduler::objective_value(VerifyMode::sync, 0.0, 0.1, b, s) ==
          doctest::Approx(1.0 / (0.1 * s + 1.0)));
  }
  CHECK(StrideScheduler::optimal_stride_value(VerifyMode::sync, 0.0, 0.1, b, 16) == 1);
}

TEST_CASE("objective matches an independent evaluation of the closed form") {
  LatencyModel b{1.0, 0.0};
  for (std::uint32_t s = 1; s <= 8; ++s) {
    CHECK(StrideScheduler::objective_value(VerifyMode::sync, 0.6, 0.1, b, s) ==
          doctest::Approx(oracle_objective(VerifyMode::sync, 0.6, 0.1, 1.0, 0.0, s))
              .epsilon(1e-12));
    CHECK(StrideScheduler::objective_value(VerifyMode::async, 0.6, 0.1, b, s) ==
          doctest::Approx(oracle_objective(VerifyMode::async, 0.6, 0.1, 1.0, 0.0, s))
              .epsilon(1e-12));
  }
}

TEST_CASE("async objective dominates sync at s=1 when b <= a") {
  SplitMix rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    double a = rng.next_in(1e-3, 1.0);
    double b0 = rng.next_in(0.0, a);
    LatencyModel b{b0, 0.0};
    double g = rng.next_in(0.0, 0.95);
    CHECK(StrideScheduler::objective_value(VerifyMode::async, g, a, b, 1) >=
          StrideScheduler::objective_value(VerifyMode::sync, g, a, b, 1) - 1e-15);
  }
}

TEST_CASE("optimal stride equals the brute-force oracle on a random grid") {
  SplitMix rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    double a = std::exp(rng.next_in(std::log(1e-3), std::log(1.0)));
    double b0 = std::exp(rng.next_in(std::log(1e-3), std::log(2.0)));
    double b1 = rng.next_unit() < 0.5 ? 0.0 : std::exp(rng.next_in(std::log(1e-4), std::log(0.5)));
    double g = rng.next_in(0.0, 0.95);
    LatencyModel b{b0, b1};
    for (VerifyMode mode : {VerifyMode::sync, VerifyMode::async}) {
      CHECK(StrideScheduler::optimal_stride_value(mode, g, a, b, 16) ==
            oracle_argmax(mode, g, a, b0, b1, 16));
    }
  }
}

TEST_CASE("async mode with cheap verification settles at stride 1") {
  SplitMix rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    double a = std::exp(rng.next_in(std::log(1e-3), std::log(1.0)));
    double b0 = rng.next_in(0.0, a / 2.0);
    double b1 = rng.next_in(0.0, (a - b0) / 16.0);  // b(s) <= a for all s <= 16
    double g = rng.next_in(0.1, 0.6);
    CHECK(StrideScheduler::optimal_stride_value(VerifyMode::async, g, a, {b0, b1}, 16) == 1);
  }
}

TEST_CASE("optimal stride is invariant under uniform latency scaling") {
  SplitMix rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    double a = rng.next_in(1e-3, 1.0);
    double b0 = rng.next_in(1e-3, 2.0);
    double b1 = rng.next_in(0.0, 0.3);
    double g = rng.next_in(0.0, 0.95);
    double c = std::exp(rng.next_in(std::log(0.01), std::log(100.0)));
    for (VerifyMode mode : {VerifyMode::sync, VerifyMode::async}) {
      CHECK(StrideScheduler::optimal_stride_value(mode, g, a, {b0, b1}, 16) ==
            StrideScheduler::optimal_stride_value(mode, g, c * a, {c * b0, c * b1}, 16));
    }
  }
}

TEST_CASE("sync objective is unimodal on the tested grid with constant b") {
  for (double g : {0.1, 0.3, 0.5, 0.6}) {
    for (double ratio : {0.01, 0.1, 1.0, 10.0}) {
      double a = 0.1, b0 = a * ratio;
      bool falling = false;
      double prev = StrideScheduler::objective_value(VerifyMode::sync, g, a, {b0, 0.0}, 1);
      for (std::uint32_t s = 2; s <= 16; ++s) {
        double v = StrideScheduler::objective_value(VerifyMode::sync, g, a, {b0, 0.0}, s);
        if (falling) CHECK(v <= prev + 1e-15);
        if (v < prev) falling = true;
        prev = v;
      }
    }
  }
}

TEST_CASE("latency model refit: hand-checked least squares") {
  SchedulerConfig cfg;
  StrideScheduler s(cfg);
  s.observe_retrieval_latency(1, 1.0);
  s.observe_retrieval_latency(3, 1.0);
  CHECK(s.b_model().b0 == doctest::Approx(1.0));
  CHECK(s.b_model().b1 == doctest::Approx(0.0));

  StrideScheduler t(cfg);
  t.observe_retrieval_latency(1, 1.0);
  t.observe_retrieval_latency(3, 2.0);
  CHECK(t.b_model().b0 == doctest::Approx(0.5));
  CHECK(t.b_model().b1 == doctest::Approx(0.5));

  // single size: constant model at the mean
  StrideScheduler u(cfg);
  u.observe_retrieval_latency(3, 2.0);
  u.observe_retrieval_latency(3, 4.0);
  CHECK(u.b_model().b0 == doctest::Approx(3.0));
  CHECK(u.b_model().b1 == doctest::Approx(0.0));
}

TEST_CASE("a estimate is the mean step latency over the window") {
  SchedulerConfig cfg;
  cfg.window = 3;
  StrideScheduler s(cfg);
  s.observe_step_latency(1.0);
  s.observe_step_latency(2.0);
  s.observe_step_latency(3.0);
  CHECK(s.a_estimate() == doctest::Approx(2.0));
  s.observe_step_latency(5.0);  // drops the 1.0
  CHECK(s.a_estimate() == doctest::Approx(10.0 / 3.0));
}

TEST_CASE("stateful optimal_stride holds the initial stride until profiled") {
  SchedulerConfig cfg;
  cfg.initial_stride = 1;
  StrideScheduler s(cfg);
  CHECK(s.optimal_stride() == 1);  // no latency data yet
  s.update_profile(1, 1, 0.04, 0.5);
  // now profiled: gamma capped at 0.6, a=0.04, b const 0.5
  std::uint32_t chosen = s.optimal_stride();
  CHECK(chosen == oracle_argmax(VerifyMode::sync, 0.6, 0.04, 0.5, 0.0, 16));
  CHECK(chosen > 1);
  CHECK(s.current_stride() == chosen);
}

TEST_CASE("update_profile rejects matched > stride") {
  StrideScheduler s{SchedulerConfig{}};
  CHECK_THROWS_AS(s.update_profile(2, 3, 0.1, 0.5), std::invalid_argument);
}
