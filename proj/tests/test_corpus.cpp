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
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "specserve/corpus.hpp"
#include "specserve/harness.hpp"

using namespace specserve;

namespace {

std::string words(std::size_t n, const std::string& prefix = "w") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out.push_back(' ');
    out += prefix + std::to_string(i % 97);
  }
  return out;
}

double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("ingest: single short doc stays one chunk") {
  Corpus c = ingest_corpus({words(10)}, 256);
  REQUIRE(c.chunks.size() == 1);
  CHECK(c.chunks[0].length() == 10);
  CHECK(c.chunks[0].chunk_id == 0);
}

TEST_CASE("ingest: 300 tokens split into 256 + 44") {
  Corpus c = ingest_corpus({words(300)}, 256);
  REQUIRE(c.chunks.size() == 2);
  CHECK(c.chunks[0].length() == 256);
  CHECK(c.chunks[1].length() == 44);
  CHECK(c.chunks[1].chunk_id == 1);
}

TEST_CASE("ingest: chunk lengths sum to an independent token count") {
  std::vector<std::string> docs = {words(123), words(300, "x"), words(77, "y")};
  // independent count: whitespace-separated fields
  std::size_t expected = 0;
  for (const auto& d : docs) {
    std::istringstream ss(d);
    std::string tok;
    while (ss >> tok) expected++;
  }
  Corpus c = ingest_corpus(docs, 64);
  std::size_t total = 0;
  for (const Chunk& ch : c.chunks) total += ch.length();
  CHECK(total == expected);
  CHECK(c.stream.size() == expected);
  // chunks preserve document order
  for (std::size_t i = 1; i < c.chunks.size(); ++i) {
    CHECK(c.chunks[i].parent_doc >= c.chunks[i - 1].parent_doc);
  }
}

TEST_CASE("ingest: empty input raises") {
  CHECK_THROWS_AS(ingest_corpus({}, 256), std::invalid_argument);
  CHECK_THROWS_AS(ingest_corpus({"", "   "}, 256), std::invalid_argument);
  CHECK_THROWS_AS(ingest_corpus({words(5)}, 0), std::invalid_argument);
}

TEST_CASE("tokenizer lowercases and ids are stable") {
  Vocab v;
  auto a = tokenize("The Cat  sat\non the MAT", v);
  auto b = tokenize("the cat sat on the mat", v);
  CHECK(a == b);
  CHECK(v.lookup("cat").has_value());
  CHECK_FALSE(v.lookup("Cat").has_value());
}

TEST_CASE("vocab json round trip") {
  Vocab v;
  tokenize("alpha beta gamma alpha", v);
  Vocab back = Vocab::from_json(v.to_json());
  CHECK(back.id_to_term == v.id_to_term);
  CHECK(back.lookup("beta") == v.lookup("beta"));
}

TEST_CASE("ingest is deterministic across runs") {
  std::vector<std::string> docs = generate_synthetic_corpus({5, 500, 300}, 42);
  Corpus a = ingest_corpus(docs, 100);
  Corpus b = ingest_corpus(docs, 100);
  REQUIRE(a.chunks.size() == b.chunks.size());
  for (std::size_t i = 0; i < a.chunks.size(); ++i) {
    CHECK(a.chunks[i].tokens == b.chunks[i].tokens);
    CHECK(a.chunks[i].term_counts == b.chunks[i].term_counts);
  }
}

TEST_CASE("compute_stats: single chunk and shared term") {
  Corpus one = ingest_corpus({"a a b"}, 256);
  CHECK(one.stats.num_chunks == 1);
  CHECK(one.stats.doc_freq_of(*one.vocab.lookup("a")) == 1);
  CHECK(one.stats.doc_freq_of(*one.vocab.lookup("b")) == 1);

  Corpus two = ingest_corpus({"a b", "a c"}, 256);
  CHECK(two.stats.doc_freq_of(*two.vocab.lookup("a")) == 2);
  CHECK(two.stats.doc_freq_of(*two.vocab.lookup("b")) == 1);
}

TEST_CASE("compute_stats matches a brute-force recount on a random corpus") {
  Corpus c = ingest_corpus(generate_synthetic_corpus({10, 400, 150}, 7), 80);
  REQUIRE(c.chunks.size() >= 50);
  std::map<TokenId, std::uint32_t> df;
  std::uint64_t total_len = 0;
  for (const Chunk& ch : c.chunks) {
    total_len += ch.tokens.size();
    std::set<TokenId> seen(ch.tokens.begin(), ch.tokens.end());
    for (TokenId t : seen) df[t]++;
  }
  CHECK(c.stats.num_chunks == c.chunks.size());
  CHECK(c.stats.avg_chunk_len ==
        doctest::Approx(double(total_len) / double(c.chunks.size())).epsilon(1e-12));
  CHECK(c.stats.doc_freq.size() == df.size());
  for (const auto& [t, n] : df) {
    CHECK(c.stats.doc_freq_of(t) == n);
    CHECK(n <= c.stats.num_chunks);
  }
}

TEST_CASE("embedder: single token equals its own unit vector") {
  Embedder e(11, 64, 100);
  std::vector<TokenId> ctx = {42};
  Embedding emb = e.embed_context(ctx, 32);
  std::span<const float> tv = e.token_vector(42);
  REQUIRE(emb.v.size() == 64);
  for (std::size_t d = 0; d < 64; ++d) CHECK(emb.v[d] == doctest::Approx(tv[d]).epsilon(1e-6));
  CHECK(norm(emb.v) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("embedder: depends only on the suffix window") {
  Embedder e(11, 64, 1000);
  std::vector<TokenId> a, b;
  for (std::uint32_t i = 0; i < 40; ++i) a.push_back(i);
  b = {999, 998, 997};
  b.insert(b.end(), a.begin() + 8, a.end());  // same last 32 tokens
  Embedding ea = e.embed_context(a, 32);
  Embedding eb = e.embed_context(b, 32);
  CHECK(ea.v == eb.v);

  // perturbing inside the window changes the embedding
  std::vector<TokenId> c = a;
  c[39] = 555;
  CHECK(e.embed_context(c, 32).v != ea.v);
}

TEST_CASE("embedder: two-token mean matches independent recomputation") {
  Embedder e(3, 64, 10);
  std::vector<TokenId> ctx = {4, 7};
  Embedding got = e.embed_context(ctx, 32);
  std::span<const float> va = e.token_vector(4);
  std::span<const float> vb = e.token_vector(7);
  std::vector<double> mean(64);
  double ns = 0;
  for (std::size_t d = 0; d < 64; ++d) {
    mean[d] = (double(va[d]) + double(vb[d])) / 2.0;
    ns += mean[d] * mean[d];
  }
  for (std::size_t d = 0; d < 64; ++d) {
    CHECK(got.v[d] == doctest::Approx(mean[d] / std::sqrt(ns)).epsilon(1e-6));
  }
}

TEST_CASE("embedder: empty context raises, unit norm holds on random contexts") {
  Embedder e(5, 64, 500);
  CHECK_THROWS_AS(e.embed_context({}, 32), std::invalid_argument);
  SplitMix rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenId> ctx;
    std::size_t len = 1 + rng.next_below(60);
    for (std::size_t i = 0; i < len; ++i) ctx.push_back(TokenId(rng.next_below(500)));
    Embedding emb = e.embed_context(ctx, 32);
    CHECK(norm(emb.v) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(e.embed_context(ctx, 32).v == emb.v);  // determinism
  }
}
