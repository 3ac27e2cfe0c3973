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
#include <stdexcept>

#include "doctest.h"
#include "specserve/lm.hpp"

using namespace specserve;

namespace {

LmConfig small_cfg(std::uint64_t seed = 1, std::uint32_t vocab = 4096) {
  LmConfig cfg;
  cfg.seed = seed;
  cfg.vocab_size = vocab;
  return cfg;
}

std::vector<TokenId> ctx_of(std::initializer_list<TokenId> ids) { return {ids}; }

}  // namespace

TEST_CASE("decode is a pure function of its inputs") {
  SyntheticLm lm(small_cfg(), LatencyMode::simulated);
  auto ctx = ctx_of({1, 2, 3, 4, 5});
  DecodeResult a = lm.decode(ctx, 7, 8);
  DecodeResult b = lm.decode(ctx, 7, 8);
  CHECK(a.tokens == b.tokens);
  CHECK(a.hit_eos == b.hit_eos);
}

TEST_CASE("conditioning document changes the continuation with high probability") {
  auto ctx = ctx_of({10, 20, 30});
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SyntheticLm lm(small_cfg(seed), LatencyMode::simulated);
    if (lm.decode(ctx, 1, 4).tokens != lm.decode(ctx, 2, 4).tokens) differing++;
  }
  CHECK(differing >= 95);
}

TEST_CASE("greedy chain: a shorter decode is a prefix of a longer one") {
  SyntheticLm lm(small_cfg(3), LatencyMode::simulated);
  auto ctx = ctx_of({5, 6, 7});
  DecodeResult four = lm.decode(ctx, 11, 4);
  DecodeResult eight = lm.decode(ctx, 11, 8);
  REQUIRE(four.tokens.size() <= eight.tokens.size());
  for (std::size_t i = 0; i < four.tokens.size(); ++i) {
    CHECK(four.tokens[i] == eight.tokens[i]);
  }
  // and decoding 4 then continuing equals decoding 8 in one call
  std::vector<TokenId> extended = ctx;
  extended.insert(extended.end(), four.tokens.begin(), four.tokens.end());
  if (!four.hit_eos) {
    DecodeResult rest = lm.decode(extended, 11, 4);
    std::vector<TokenId> glued = four.tokens;
    glued.insert(glued.end(), rest.tokens.begin(), rest.tokens.end());
    CHECK(glued == eight.tokens);
  }
}

TEST_CASE("decode depends on context only through the suffix window") {
  LmConfig cfg = small_cfg(9);
  cfg.suffix_window = 8;
  SyntheticLm lm(cfg, LatencyMode::simulated);
  std::vector<TokenId> a;
  for (TokenId t = 0; t < 20; ++t) a.push_back(t);
  std::vector<TokenId> b = {400, 401};
  b.insert(b.end(), a.begin() + 12, a.end());  // same last 8 tokens
  CHECK(lm.decode(a, 3, 4).tokens == lm.decode(b, 3, 4).tokens);

  std::vector<TokenId> c = a;
  c[19] = 999;  // inside the window
  CHECK(lm.decode(a, 3, 4).tokens != lm.decode(c, 3, 4).tokens);
}

TEST_CASE("decode stops at EOS and reports it") {
  LmConfig cfg = small_cfg(1, 2);  // vocab {0, eos=1}: eos every other token
  SyntheticLm lm(cfg, LatencyMode::simulated);
  bool saw_short = false;
  for (std::uint64_t seed = 0; seed < 32 && !saw_short; ++seed) {
    SyntheticLm probe(small_cfg(seed, 2), LatencyMode::simulated);
    DecodeResult r = probe.decode(ctx_of({0, 0, 0}), std::nullopt, 16);
    if (r.hit_eos) {
      saw_short = true;
      CHECK(r.tokens.size() <= 16);
      CHECK(r.tokens.back() == probe.eos_id());
      for (std::size_t i = 0; i + 1 < r.tokens.size(); ++i) {
        CHECK(r.tokens[i] != probe.eos_id());
      }
    }
  }
  CHECK(saw_short);
}

TEST_CASE("decode enforces the context cap and argument checks") {
  LmConfig cfg = small_cfg();
  cfg.context_cap = 16;
  SyntheticLm lm(cfg, LatencyMode::simulated);
  std::vector<TokenId> big(15, 1);
  CHECK_THROWS_AS(lm.decode(big, 1, 4), std::invalid_argument);  // 15 + 4 > 16
  CHECK_THROWS_AS(lm.decode(big, 1, 0), std::invalid_argument);
  CHECK_NOTHROW(lm.decode(big, 1, 1));
}

TEST_CASE("simulated decode latency is per emitted token") {
  LmConfig cfg = small_cfg();
  cfg.decode_latency_per_token = 0.25;
  SyntheticLm lm(cfg, LatencyMode::simulated);
  DecodeResult r = lm.decode(ctx_of({1, 2}), 5, 4);
  CHECK(r.latency == doctest::Approx(0.25 * double(r.tokens.size())));
}

TEST_CASE("next token distribution is a proper distribution") {
  SyntheticLm lm(small_cfg(4, 512), LatencyMode::simulated);
  SplitMix rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<TokenId> ctx;
    for (int i = 0; i < 12; ++i) ctx.push_back(TokenId(rng.next_below(512)));
    std::vector<double> p = lm.next_token_distribution(ctx);
    REQUIRE(p.size() == 512);
    double sum = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("distribution depends only on the suffix and is stable across runs") {
  LmConfig cfg = small_cfg(6, 256);
  cfg.suffix_window = 4;
  SyntheticLm lm(cfg, LatencyMode::simulated);
  auto a = ctx_of({9, 8, 7, 6, 5, 4});
  auto b = ctx_of({100, 7, 6, 5, 4});  // same last 4 tokens
  CHECK(lm.next_token_distribution(a) == lm.next_token_distribution(b));

  // argmax stability across fresh instances with the same seed
  SyntheticLm again(cfg, LatencyMode::simulated);
  auto p1 = lm.next_token_distribution(a);
  auto p2 = again.next_token_distribution(a);
  CHECK(p1 == p2);
}
