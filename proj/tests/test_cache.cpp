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

#include <set>

#include "doctest.h"
#include "specserve/cache.hpp"
#include "specserve/harness.hpp"

using namespace specserve;

namespace {

struct Fixture {
  Corpus corpus;
  Embedder embedder;
  Fixture(std::uint64_t seed = 5)
      : corpus(ingest_corpus(generate_synthetic_corpus({6, 800, 400}, seed), 48)),
        embedder(seed, 64, corpus.vocab.size() + 1) {}

  Query query_at(std::size_t pos) const {
    return encode_query(embedder,
                        std::span<const TokenId>(corpus.stream.data() + pos, 32), 32);
  }
};

}  // namespace

TEST_CASE("empty cache returns nothing, singleton returns its entry") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  LocalCache cache = index->make_local_cache(64);
  Query q = f.query_at(0);
  CHECK_FALSE(cache.retrieve(q).has_value());

  cache.insert(3, index->cached_key(3));
  auto hit = cache.retrieve(q);
  REQUIRE(hit.has_value());
  CHECK(hit->chunk_id == 3);
  CHECK(cache.retrieve(f.query_at(100))->chunk_id == 3);  // any query, same entry
}

TEST_CASE("cache retrieval equals a brute-force argmax of score_local") {
  Fixture f;
  for (IndexKind kind : {IndexKind::exact_dense, IndexKind::approx_dense, IndexKind::sparse}) {
    auto index = build_index(f.corpus, kind, {}, f.embedder);
    LocalCache cache = index->make_local_cache(64);
    SplitMix rng(71);
    std::vector<std::uint32_t> ids;
    for (int i = 0; i < 10; ++i) {
      auto id = std::uint32_t(rng.next_below(f.corpus.num_chunks()));
      cache.insert(id, index->cached_key(id));
      if (!cache.contains(id)) continue;
      ids.push_back(id);
    }
    for (int trial = 0; trial < 30; ++trial) {
      Query q = f.query_at(rng.next_below(f.corpus.stream.size() - 33));
      std::optional<ScoredDoc> best;
      for (std::uint32_t id : ids) {
        ScoredDoc cand{id, score_local(kind, q, index->cached_key(id), index->stats_snapshot(),
                                       index->params().bm25_k1, index->params().bm25_b)};
        if (!best || scored_before(cand, *best)) best = cand;
      }
      auto got = cache.retrieve(q);
      REQUIRE(got.has_value());
      CHECK(got->chunk_id == best->chunk_id);
      CHECK(got->score == best->score);
      // top-k agrees with full sort of the same scores
      auto topk = cache.retrieve_topk(q, 4);
      CHECK(topk.front().chunk_id == best->chunk_id);
      for (std::size_t h = 1; h < topk.size(); ++h) {
        CHECK(scored_before(topk[h - 1], topk[h]));
      }
    }
  }
}

TEST_CASE("update_topk: prefetch size 1 inserts only the top hit") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  LocalCache cache = index->make_local_cache(64);
  Query q = f.query_at(10);
  auto batch = index->retrieve_batch({&q, 1}, 10);
  cache.update_topk(batch.results[0], 1, *index);
  CHECK(cache.size() == 1);
  CHECK(cache.contains(batch.results[0].hits[0].chunk_id));
}

TEST_CASE("update_topk: prefetch larger than the hit list truncates") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  LocalCache cache = index->make_local_cache(64);
  Query q = f.query_at(10);
  auto batch = index->retrieve_batch({&q, 1}, 5);
  REQUIRE(batch.results[0].hits.size() == 5);
  cache.update_topk(batch.results[0], 20, *index);
  CHECK(cache.size() == 5);
}

TEST_CASE("eviction is FIFO by insertion counter") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  LocalCache cache = index->make_local_cache(20);
  for (std::uint32_t id = 0; id < 25; ++id) {
    cache.insert(id, index->cached_key(id));
  }
  CHECK(cache.size() == 20);
  for (std::uint32_t id = 0; id < 5; ++id) CHECK_FALSE(cache.contains(id));
  for (std::uint32_t id = 5; id < 25; ++id) CHECK(cache.contains(id));

  // re-inserting refreshes the counter: 5 survives the next eviction wave
  cache.insert(5, index->cached_key(5));
  for (std::uint32_t id = 25; id < 44; ++id) cache.insert(id, index->cached_key(id));
  CHECK(cache.size() == 20);
  CHECK(cache.contains(5));
  CHECK_FALSE(cache.contains(6));
}

TEST_CASE("consecutive update inserts the n following entries") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  std::size_t n_chunks = f.corpus.num_chunks();
  REQUIRE(n_chunks >= 20);

  LocalCache cache = index->make_local_cache(64);
  cache.update_consecutive(5, 10, n_chunks, *index);
  CHECK(cache.size() == 10);
  for (std::uint32_t id = 6; id <= 15; ++id) CHECK(cache.contains(id));
  CHECK_FALSE(cache.contains(5));
  CHECK_FALSE(cache.contains(16));

  // at the end of the datastore nothing is inserted
  LocalCache tail = index->make_local_cache(64);
  tail.update_consecutive(std::uint32_t(n_chunks - 1), 10, n_chunks, *index);
  CHECK(tail.size() == 0);

  // overlapping updates behave like a set union
  LocalCache uni = index->make_local_cache(64);
  uni.update_consecutive(5, 10, n_chunks, *index);
  uni.update_consecutive(8, 10, n_chunks, *index);
  std::set<std::uint32_t> expected;
  for (std::uint32_t id = 6; id <= 15; ++id) expected.insert(id);
  for (std::uint32_t id = 9; id <= 18; ++id) expected.insert(id);
  CHECK(uni.size() == expected.size());
  for (std::uint32_t id : expected) CHECK(uni.contains(id));
}

TEST_CASE("ranking preservation: a cached knowledge-base top-1 is returned") {
  Fixture f(9);
  for (IndexKind kind : {IndexKind::exact_dense, IndexKind::approx_dense, IndexKind::sparse}) {
    auto index = build_index(f.corpus, kind, {}, f.embedder);
    SplitMix rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      Query q = f.query_at(rng.next_below(f.corpus.stream.size() - 33));
      auto batch = index->retrieve_batch({&q, 1}, 1);
      if (batch.results[0].hits.empty()) continue;
      std::uint32_t top1 = batch.results[0].hits[0].chunk_id;

      LocalCache cache = index->make_local_cache(64);
      // random cache contents drawn from the index's own results for nearby
      // queries, plus the top-1 itself
      for (int extra = 0; extra < 8; ++extra) {
        Query other = f.query_at(rng.next_below(f.corpus.stream.size() - 33));
        auto hits = index->retrieve_batch({&other, 1}, 3);
        cache.update_topk(hits.results[0], 3, *index);
      }
      cache.insert(top1, index->cached_key(top1));
      auto got = cache.retrieve(q);
      REQUIRE(got.has_value());
      CHECK(got->chunk_id == top1);
    }
  }
}

TEST_CASE("retrieval never mutates the cache and size bound always holds") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::sparse, {}, f.embedder);
  LocalCache cache = index->make_local_cache(8);
  SplitMix rng(3);
  for (int i = 0; i < 40; ++i) {
    auto id = std::uint32_t(rng.next_below(f.corpus.num_chunks()));
    cache.insert(id, index->cached_key(id));
    CHECK(cache.size() <= 8);
    std::size_t before = cache.size();
    (void)cache.retrieve(f.query_at(rng.next_below(f.corpus.stream.size() - 33)));
    CHECK(cache.size() == before);
  }
}

TEST_CASE("cache validates arguments") {
  Fixture f;
  auto index = build_index(f.corpus, IndexKind::exact_dense, {}, f.embedder);
  CHECK_THROWS_AS(index->make_local_cache(0), std::invalid_argument);
  LocalCache cache = index->make_local_cache(4);
  Query q = f.query_at(0);
  auto batch = index->retrieve_batch({&q, 1}, 2);
  CHECK_THROWS_AS(cache.update_topk(batch.results[0], 0, *index), std::invalid_argument);
  CHECK_THROWS_AS(cache.update_consecutive(99999, 5, f.corpus.num_chunks(), *index),
                  std::invalid_argument);
}
