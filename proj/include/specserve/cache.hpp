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
#include <unordered_map>
#include <vector>

#include "specserve/retriever.hpp"

namespace specserve {

inline constexpr std::size_t kDefaultCacheSize = 512;

// Per-request retrieval cache. Entries are scored with score_local against a
// stats snapshot frozen at request start, i.e. with exactly the metric the
// knowledge base uses, which is what guarantees that a cached knowledge-base
// top-1 is returned by cache retrieval (ranking preservation). Eviction is
// FIFO by insertion counter; re-inserting refreshes the counter.
//
// Single-owner: mutated only by its request's pipeline, never shared.
class LocalCache {
 public:
  LocalCache(IndexKind kind, CorpusStats stats_snapshot, std::size_t max_size = kDefaultCacheSize,
             double bm25_k1 = 1.2, double bm25_b = 0.75);

  // Argmax of score_local over cached entries, ties by ascending chunk id;
  // nullopt when the cache is empty. Never mutates the cache.
  std::optional<ScoredDoc> retrieve(const Query& query) const;

  // Top-k over cached entries under the same order (KNN-LM speculation path).
  std::vector<ScoredDoc> retrieve_topk(const Query& query, std::size_t k) const;

  // Inserts the keys of the first min(prefetch_size, |hits|) hits.
  void update_topk(const RetrievalResult& result, std::size_t prefetch_size,
                   const RetrievalIndex& key_source);

  // Inserts entries entry_id+1 .. min(entry_id+n, datastore_size-1).
  void update_consecutive(std::uint32_t entry_id, std::size_t n, std::size_t datastore_size,
                          const RetrievalIndex& key_source);

  void insert(std::uint32_t chunk_id, CachedKey key);

  bool contains(std::uint32_t chunk_id) const { return entries_.count(chunk_id) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t max_size() const { return max_size_; }
  IndexKind kind() const { return kind_; }
  const CorpusStats& stats_snapshot() const { return stats_; }

 private:
  void evict_to_bound();

  struct Entry {
    CachedKey key;
    std::uint64_t insert_seq = 0;
  };

  IndexKind kind_;
  CorpusStats stats_;
  std::size_t max_size_;
  double bm25_k1_, bm25_b_;
  std::uint64_t next_seq_ = 0;
  std::unordered_map<std::uint32_t, Entry> entries_;
};

}  // namespace specserve
