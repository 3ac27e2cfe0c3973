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
#include <stdexcept>
#include <thread>

#include "specserve/retriever.hpp"

namespace specserve {

namespace {

// Bounded best-k collector over the (score desc, id asc) total order. The
// scan path is one predictable comparison per candidate: anything scoring
// strictly below the current worst can never be kept.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void offer(std::uint32_t id, double score) {
    if (heap_.size() == k_ && score < threshold_) return;
    ScoredDoc cand{id, score};
    if (heap_.size() < k_) {
      heap_.push_back(cand);
      std::push_heap(heap_.begin(), heap_.end(), worst_on_top_);
    } else if (scored_before(cand, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), worst_on_top_);
      heap_.back() = cand;
      std::push_heap(heap_.begin(), heap_.end(), worst_on_top_);
    }
    threshold_ = heap_.size() == k_ ? heap_.front().score : -1e300;
  }

  std::vector<ScoredDoc> take_sorted() {
    std::sort(heap_.begin(), heap_.end(), scored_before);
    return std::move(heap_);
  }

 private:
  // max-heap whose top is the worst kept element
  static bool worst_on_top(const ScoredDoc& a, const ScoredDoc& b) { return scored_before(a, b); }
  bool (*worst_on_top_)(const ScoredDoc&, const ScoredDoc&) = &worst_on_top;
  std::size_t k_;
  double threshold_ = -1e300;
  std::vector<ScoredDoc> heap_;
};

}  // namespace

ExactDenseIndex::ExactDenseIndex(std::vector<float> matrix, const IndexParams& params)
    : params_(params), count_(params.dim == 0 ? 0 : matrix.size() / params.dim),
      data_(std::move(matrix)) {
  if (params_.dim == 0 || count_ == 0 || data_.size() != count_ * params_.dim) {
    throw std::invalid_argument("exact_dense: bad matrix shape");
  }
}

std::span<const float> ExactDenseIndex::embedding_of(std::uint32_t chunk_id) const {
  if (chunk_id >= count_) throw std::out_of_range("exact_dense: chunk id out of range");
  return {data_.data() + static_cast<std::size_t>(chunk_id) * params_.dim, params_.dim};
}

CachedKey ExactDenseIndex::cached_key(std::uint32_t chunk_id) const {
  std::span<const float> e = embedding_of(chunk_id);
  CachedKey key;
  key.embedding.assign(e.begin(), e.end());
  return key;
}

std::vector<RetrievalResult> ExactDenseIndex::search_batch(std::span<const Query> queries,
                                                           std::size_t k) const {
  std::size_t nq = queries.size();
  std::vector<RetrievalResult> out(nq);
  // Chunk-major scan: one pass over the matrix serves a whole query slice,
  // and slices run on parallel workers. Each query's top-k is computed
  // independently, so results are identical however the batch is split;
  // the parallelism is what amortizes per-query latency at larger batches.
  auto scan_range = [&](std::size_t q_begin, std::size_t q_end) {
    std::vector<TopK> tops(q_end - q_begin, TopK(std::min(k, count_)));
    for (std::uint32_t c = 0; c < count_; ++c) {
      std::span<const float> row{data_.data() + static_cast<std::size_t>(c) * params_.dim,
                                 params_.dim};
      for (std::size_t q = q_begin; q < q_end; ++q) {
        tops[q - q_begin].offer(c, static_cast<double>(dot(queries[q].embedding, row)));
      }
    }
    for (std::size_t q = q_begin; q < q_end; ++q) {
      out[q].hits = tops[q - q_begin].take_sorted();
      out[q].query_echo = queries[q];
    }
  };

  std::size_t workers = std::min<std::size_t>(nq, std::thread::hardware_concurrency());
  if (workers <= 1) {
    scan_range(0, nq);
    return out;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::size_t per_worker = (nq + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t q_begin = w * per_worker;
    std::size_t q_end = std::min(nq, q_begin + per_worker);
    if (q_begin >= q_end) break;
    threads.emplace_back(scan_range, q_begin, q_end);
  }
  for (auto& t : threads) t.join();
  return out;
}

}  // namespace specserve
