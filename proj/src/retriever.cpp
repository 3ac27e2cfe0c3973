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

#include "specserve/retriever.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

namespace specserve {

std::string to_string(IndexKind kind) {
  switch (kind) {
    case IndexKind::exact_dense: return "exact_dense";
    case IndexKind::approx_dense: return "approx_dense";
    case IndexKind::sparse: return "sparse";
  }
  return "unknown";
}

IndexKind index_kind_from_string(const std::string& name) {
  if (name == "exact_dense") return IndexKind::exact_dense;
  if (name == "approx_dense") return IndexKind::approx_dense;
  if (name == "sparse") return IndexKind::sparse;
  throw std::invalid_argument("unknown index kind: " + name);
}

const CorpusStats& RetrievalIndex::stats_snapshot() const {
  static const CorpusStats empty;
  return empty;
}

TimedBatch RetrievalIndex::retrieve_batch(std::span<const Query> queries, std::size_t k) const {
  if (queries.empty()) throw std::invalid_argument("retrieve_batch: empty query batch");
  if (k < 1) throw std::invalid_argument("retrieve_batch: k must be >= 1");
  auto t0 = std::chrono::steady_clock::now();
  TimedBatch out;
  out.results = search_batch(queries, k);
  auto t1 = std::chrono::steady_clock::now();
  if (virtual_latency()) {
    out.latency_seconds = virtual_latency()->predict(queries.size());
  } else {
    out.latency_seconds = std::chrono::duration<double>(t1 - t0).count();
  }
  return out;
}

double bm25_idf(std::uint64_t num_chunks, std::uint32_t doc_freq) {
  double n = static_cast<double>(num_chunks);
  double df = static_cast<double>(doc_freq);
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double bm25_term_score(double idf, std::uint32_t tf, std::uint32_t doc_len, double avg_len,
                       double k1, double b) {
  double tfd = static_cast<double>(tf);
  double norm = 1.0 - b + b * (static_cast<double>(doc_len) / avg_len);
  return idf * (tfd * (k1 + 1.0)) / (tfd + k1 * norm);
}

double score_local(IndexKind kind, const Query& query, const CachedKey& key,
                   const CorpusStats& stats, double bm25_k1, double bm25_b) {
  if (kind == IndexKind::exact_dense || kind == IndexKind::approx_dense) {
    if (key.embedding.empty() || key.embedding.size() != query.embedding.size()) {
      throw std::invalid_argument("score_local: dense key/kind mismatch");
    }
    return static_cast<double>(dot(query.embedding, key.embedding));
  }
  if (key.length == 0) throw std::invalid_argument("score_local: sparse key/kind mismatch");
  double score = 0.0;
  for (const auto& [term, qtf] : query.terms) {
    auto it = std::lower_bound(key.terms.begin(), key.terms.end(), term,
                               [](const auto& entry, TokenId t) { return entry.first < t; });
    if (it == key.terms.end() || it->first != term) continue;
    double idf = bm25_idf(stats.num_chunks, stats.doc_freq_of(term));
    score += static_cast<double>(qtf) *
             bm25_term_score(idf, it->second, key.length, stats.avg_chunk_len, bm25_k1, bm25_b);
  }
  return score;
}

Query encode_query(const Embedder& embedder, std::span<const TokenId> context,
                   std::size_t window) {
  if (context.empty()) throw std::invalid_argument("encode_query: empty context");
  Query q;
  q.embedding = embedder.embed_context(context, window).v;
  std::size_t start = context.size() > window ? context.size() - window : 0;
  std::map<TokenId, std::uint32_t> counts;
  for (std::size_t i = start; i < context.size(); ++i) counts[context[i]]++;
  q.terms.assign(counts.begin(), counts.end());
  return q;
}

std::vector<float> embed_corpus_chunks(const Corpus& corpus, const Embedder& embedder) {
  std::vector<float> matrix;
  matrix.reserve(corpus.chunks.size() * embedder.dim());
  for (const Chunk& chunk : corpus.chunks) {
    Embedding e = embedder.embed_context(chunk.tokens, chunk.tokens.size());
    matrix.insert(matrix.end(), e.v.begin(), e.v.end());
  }
  return matrix;
}

std::unique_ptr<RetrievalIndex> build_index(const Corpus& corpus, IndexKind kind,
                                            const IndexParams& params, const Embedder& embedder) {
  if (corpus.chunks.empty()) throw std::invalid_argument("build_index: empty corpus");
  IndexParams p = params;
  p.dim = embedder.dim();
  switch (kind) {
    case IndexKind::exact_dense:
      return std::make_unique<ExactDenseIndex>(embed_corpus_chunks(corpus, embedder), p);
    case IndexKind::approx_dense:
      return std::make_unique<HnswIndex>(embed_corpus_chunks(corpus, embedder), p);
    case IndexKind::sparse: {
      std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> doc_terms;
      std::vector<std::uint32_t> doc_lengths;
      doc_terms.reserve(corpus.chunks.size());
      doc_lengths.reserve(corpus.chunks.size());
      for (const Chunk& chunk : corpus.chunks) {
        doc_terms.push_back(chunk.term_counts);
        doc_lengths.push_back(chunk.length());
      }
      return std::make_unique<Bm25Index>(std::move(doc_terms), std::move(doc_lengths),
                                         corpus.stats, p);
    }
  }
  throw std::invalid_argument("build_index: unknown index kind");
}

}  // namespace specserve
