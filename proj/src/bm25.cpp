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

#include "specserve/retriever.hpp"

namespace specserve {

Bm25Index::Bm25Index(std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> doc_terms,
                     std::vector<std::uint32_t> doc_lengths, CorpusStats stats,
                     const IndexParams& params)
    : params_(params), stats_(std::move(stats)), doc_terms_(std::move(doc_terms)),
      doc_lengths_(std::move(doc_lengths)) {
  if (doc_terms_.empty() || doc_terms_.size() != doc_lengths_.size()) {
    throw std::invalid_argument("sparse: bad document set");
  }
  for (std::uint32_t doc = 0; doc < doc_terms_.size(); ++doc) {
    for (const auto& [term, tf] : doc_terms_[doc]) {
      postings_[term].emplace_back(doc, tf);
    }
  }
}

CachedKey Bm25Index::cached_key(std::uint32_t chunk_id) const {
  if (chunk_id >= doc_terms_.size()) throw std::out_of_range("sparse: chunk id out of range");
  CachedKey key;
  key.terms = doc_terms_[chunk_id];
  key.length = doc_lengths_[chunk_id];
  return key;
}

std::vector<RetrievalResult> Bm25Index::search_batch(std::span<const Query> queries,
                                                     std::size_t k) const {
  std::vector<RetrievalResult> out(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const Query& query = queries[qi];
    std::vector<double> scores(doc_lengths_.size(), 0.0);
    std::vector<std::uint8_t> touched_flag(doc_lengths_.size(), 0);
    std::vector<std::uint32_t> touched;
    // Query terms are sorted ascending; per-document contributions therefore
    // accumulate in the same order score_local uses, keeping scores bit-equal.
    for (const auto& [term, qtf] : query.terms) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      double idf = bm25_idf(stats_.num_chunks, stats_.doc_freq_of(term));
      for (const auto& [doc, tf] : it->second) {
        if (!touched_flag[doc]) {
          touched_flag[doc] = 1;
          touched.push_back(doc);
        }
        scores[doc] += static_cast<double>(qtf) *
                       bm25_term_score(idf, tf, doc_lengths_[doc], stats_.avg_chunk_len,
                                       params_.bm25_k1, params_.bm25_b);
      }
    }
    std::vector<ScoredDoc> hits;
    hits.reserve(touched.size());
    for (std::uint32_t doc : touched) hits.push_back({doc, scores[doc]});
    std::sort(hits.begin(), hits.end(), scored_before);
    if (hits.size() > k) hits.resize(k);
    out[qi].hits = std::move(hits);
    out[qi].query_echo = query;
  }
  return out;
}

}  // namespace specserve
