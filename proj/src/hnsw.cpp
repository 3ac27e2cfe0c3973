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

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

#include "specserve/retriever.hpp"

namespace specserve {

namespace {

struct BestOnTop {
  bool operator()(const ScoredDoc& a, const ScoredDoc& b) const { return scored_before(b, a); }
};
struct WorstOnTop {
  bool operator()(const ScoredDoc& a, const ScoredDoc& b) const { return scored_before(a, b); }
};

}  // namespace

HnswIndex::HnswIndex(std::vector<float> matrix, const IndexParams& params)
    : params_(params), count_(params.dim == 0 ? 0 : matrix.size() / params.dim),
      data_(std::move(matrix)) {
  if (params_.dim == 0 || count_ == 0 || data_.size() != count_ * params_.dim) {
    throw std::invalid_argument("approx_dense: bad matrix shape");
  }
  build();
}

HnswIndex::HnswIndex(std::vector<float> matrix, const IndexParams& params, GraphData graph)
    : params_(params), count_(params.dim == 0 ? 0 : matrix.size() / params.dim),
      data_(std::move(matrix)), graph_(std::move(graph)) {
  if (params_.dim == 0 || count_ == 0 || data_.size() != count_ * params_.dim ||
      graph_.links.size() != count_) {
    throw std::invalid_argument("approx_dense: bad persisted graph");
  }
}

std::unique_ptr<HnswIndex> HnswIndex::from_parts(std::vector<float> matrix,
                                                 const IndexParams& params, GraphData graph) {
  return std::unique_ptr<HnswIndex>(new HnswIndex(std::move(matrix), params, std::move(graph)));
}

std::span<const float> HnswIndex::embedding_of(std::uint32_t chunk_id) const {
  if (chunk_id >= count_) throw std::out_of_range("approx_dense: chunk id out of range");
  return {data_.data() + static_cast<std::size_t>(chunk_id) * params_.dim, params_.dim};
}

CachedKey HnswIndex::cached_key(std::uint32_t chunk_id) const {
  std::span<const float> e = embedding_of(chunk_id);
  CachedKey key;
  key.embedding.assign(e.begin(), e.end());
  return key;
}

std::uint32_t HnswIndex::greedy_descend(std::span<const float> q, std::uint32_t entry,
                                        int level) const {
  ScoredDoc cur{entry, static_cast<double>(dot(q, embedding_of(entry)))};
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::uint32_t nb : graph_.links[cur.chunk_id][static_cast<std::size_t>(level)]) {
      ScoredDoc cand{nb, static_cast<double>(dot(q, embedding_of(nb)))};
      if (scored_before(cand, cur)) {
        cur = cand;
        improved = true;
      }
    }
  }
  return cur.chunk_id;
}

std::vector<ScoredDoc> HnswIndex::search_layer(std::span<const float> q, std::uint32_t entry,
                                               std::size_t beam, int level) const {
  std::vector<std::uint8_t> visited(count_, 0);
  std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, BestOnTop> candidates;
  std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, WorstOnTop> results;
  ScoredDoc start{entry, static_cast<double>(dot(q, embedding_of(entry)))};
  visited[entry] = 1;
  candidates.push(start);
  results.push(start);
  while (!candidates.empty()) {
    ScoredDoc c = candidates.top();
    if (results.size() >= beam && scored_before(results.top(), c)) break;
    candidates.pop();
    for (std::uint32_t nb : graph_.links[c.chunk_id][static_cast<std::size_t>(level)]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      ScoredDoc cand{nb, static_cast<double>(dot(q, embedding_of(nb)))};
      if (results.size() < beam || scored_before(cand, results.top())) {
        candidates.push(cand);
        results.push(cand);
        if (results.size() > beam) results.pop();
      }
    }
  }
  std::vector<ScoredDoc> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::sort(out.begin(), out.end(), scored_before);
  return out;
}

// Neighbor selection heuristic: walk candidates best-first and keep one only
// if it is closer to the query than to every neighbor already kept. Keeps the
// graph navigable instead of clustering all edges on near-duplicates.
std::vector<std::uint32_t> HnswIndex::select_neighbors(std::vector<ScoredDoc> candidates,
                                                       std::size_t max_count) const {
  std::sort(candidates.begin(), candidates.end(), scored_before);
  std::vector<std::uint32_t> selected;
  for (const ScoredDoc& c : candidates) {
    if (selected.size() >= max_count) break;
    std::span<const float> cv = embedding_of(c.chunk_id);
    bool keep = true;
    for (std::uint32_t s : selected) {
      if (static_cast<double>(dot(cv, embedding_of(s))) > c.score) {
        keep = false;
        break;
      }
    }
    if (keep) selected.push_back(c.chunk_id);
  }
  return selected;
}

void HnswIndex::build() {
  const std::size_t m = params_.graph_degree;
  const double level_mult = 1.0 / std::log(static_cast<double>(m));
  graph_.links.assign(count_, {});

  auto level_of = [&](std::uint32_t node) {
    SplitMix rng(hash_mix(params_.seed, static_cast<std::uint64_t>(node) + 0x6b5fca3fULL));
    int level = static_cast<int>(std::floor(-std::log(rng.next_unit()) * level_mult));
    return level;
  };
  auto max_degree = [&](int level) { return level == 0 ? 2 * m : m; };

  for (std::uint32_t node = 0; node < count_; ++node) {
    int level = level_of(node);
    graph_.links[node].assign(static_cast<std::size_t>(level) + 1, {});
    std::span<const float> q = embedding_of(node);

    if (node == 0) {
      graph_.entry_point = 0;
      graph_.max_level = level;
      continue;
    }

    std::uint32_t cur = graph_.entry_point;
    for (int l = graph_.max_level; l > level; --l) {
      cur = greedy_descend(q, cur, l);
    }
    for (int l = std::min(level, graph_.max_level); l >= 0; --l) {
      std::vector<ScoredDoc> candidates = search_layer(q, cur, params_.build_beam, l);
      std::vector<std::uint32_t> neighbors = select_neighbors(candidates, m);
      for (std::uint32_t nb : neighbors) {
        graph_.links[node][static_cast<std::size_t>(l)].push_back(nb);
        auto& back = graph_.links[nb][static_cast<std::size_t>(l)];
        back.push_back(node);
        if (back.size() > max_degree(l)) {
          std::span<const float> nbv = embedding_of(nb);
          std::vector<ScoredDoc> pool;
          pool.reserve(back.size());
          for (std::uint32_t other : back) {
            pool.push_back({other, static_cast<double>(dot(nbv, embedding_of(other)))});
          }
          back = select_neighbors(std::move(pool), max_degree(l));
        }
      }
      if (!candidates.empty()) cur = candidates.front().chunk_id;
    }
    if (level > graph_.max_level) {
      graph_.max_level = level;
      graph_.entry_point = node;
    }
  }
}

std::vector<RetrievalResult> HnswIndex::search_batch(std::span<const Query> queries,
                                                     std::size_t k) const {
  std::vector<RetrievalResult> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::span<const float> q{queries[i].embedding.data(), queries[i].embedding.size()};
    std::uint32_t cur = graph_.entry_point;
    for (int l = graph_.max_level; l >= 1; --l) {
      cur = greedy_descend(q, cur, l);
    }
    // The beam is fixed at params_.search_beam regardless of k, so results for
    // different k are prefixes of each other; in particular the top-1 a
    // verification sees is exactly the top-1 a single retrieval would return.
    std::vector<ScoredDoc> found = search_layer(q, cur, params_.search_beam, 0);
    if (found.size() > k) found.resize(k);
    out[i].hits = std::move(found);
    out[i].query_echo = queries[i];
  }
  return out;
}

}  // namespace specserve
