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

#include "specserve/cache.hpp"

#include <algorithm>
#include <stdexcept>

namespace specserve {

LocalCache::LocalCache(IndexKind kind, CorpusStats stats_snapshot, std::size_t max_size,
                       double bm25_k1, double bm25_b)
    : kind_(kind), stats_(std::move(stats_snapshot)), max_size_(max_size), bm25_k1_(bm25_k1),
      bm25_b_(bm25_b) {
  if (max_size_ < 1) throw std::invalid_argument("cache: max_size must be >= 1");
}

LocalCache RetrievalIndex::make_local_cache(std::size_t max_size) const {
  return LocalCache(kind(), stats_snapshot(), max_size, params().bm25_k1, params().bm25_b);
}

std::optional<ScoredDoc> LocalCache::retrieve(const Query& query) const {
  std::optional<ScoredDoc> best;
  for (const auto& [chunk_id, entry] : entries_) {
    ScoredDoc cand{chunk_id, score_local(kind_, query, entry.key, stats_, bm25_k1_, bm25_b_)};
    if (!best || scored_before(cand, *best)) best = cand;
  }
  return best;
}

std::vector<ScoredDoc> LocalCache::retrieve_topk(const Query& query, std::size_t k) const {
  std::vector<ScoredDoc> scored;
  scored.reserve(entries_.size());
  for (const auto& [chunk_id, entry] : entries_) {
    scored.push_back({chunk_id, score_local(kind_, query, entry.key, stats_, bm25_k1_, bm25_b_)});
  }
  std::sort(scored.begin(), scored.end(), scored_before);
  if (scored.size() > k) scored.resize(k);
  return scored;
}

void LocalCache::insert(std::uint32_t chunk_id, CachedKey key) {
  Entry& entry = entries_[chunk_id];
  entry.key = std::move(key);
  entry.insert_seq = next_seq_++;
  evict_to_bound();
}

void LocalCache::update_topk(const RetrievalResult& result, std::size_t prefetch_size,
                             const RetrievalIndex& key_source) {
  if (prefetch_size < 1) throw std::invalid_argument("cache: prefetch_size must be >= 1");
  std::size_t n = std::min(prefetch_size, result.hits.size());
  for (std::size_t i = 0; i < n; ++i) {
    insert(result.hits[i].chunk_id, key_source.cached_key(result.hits[i].chunk_id));
  }
}

void LocalCache::update_consecutive(std::uint32_t entry_id, std::size_t n,
                                    std::size_t datastore_size, const RetrievalIndex& key_source) {
  if (n < 1) throw std::invalid_argument("cache: n must be >= 1");
  if (entry_id >= datastore_size) throw std::invalid_argument("cache: entry_id out of range");
  for (std::size_t i = entry_id + 1; i < std::min<std::size_t>(entry_id + n + 1, datastore_size);
       ++i) {
    auto id = static_cast<std::uint32_t>(i);
    insert(id, key_source.cached_key(id));
  }
}

void LocalCache::evict_to_bound() {
  while (entries_.size() > max_size_) {
    auto oldest = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->second.insert_seq < oldest->second.insert_seq) oldest = it;
    }
    entries_.erase(oldest);
  }
}

}  // namespace specserve
