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

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specserve/common.hpp"
#include "specserve/corpus.hpp"

namespace specserve {

class LocalCache;

enum class IndexKind { exact_dense, approx_dense, sparse };

std::string to_string(IndexKind kind);
IndexKind index_kind_from_string(const std::string& name);

struct ScoredDoc {
  std::uint32_t chunk_id = 0;
  double score = 0.0;
};

// Total order on hits: score descending, ties broken by ascending chunk id.
// Every result list in the system is sorted with this, which makes top-k
// output unique even under score ties.
inline bool scored_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.chunk_id < b.chunk_id;
}

// Context-dependent query. Both representations are filled by encode_query so
// a query can be replayed against any index kind.
struct Query {
  std::vector<float> embedding;
  std::vector<std::pair<TokenId, std::uint32_t>> terms;  // sorted by token id
};

struct RetrievalResult {
  std::vector<ScoredDoc> hits;  // sorted, no duplicate ids, |hits| <= k
  Query query_echo;
};

// Linear batched-retrieval latency model: b(s) = b0 + b1 * s.
struct LatencyModel {
  double b0 = 0.0;
  double b1 = 0.0;
  double predict(std::size_t batch) const { return b0 + b1 * static_cast<double>(batch); }
};

// The per-chunk state a local cache needs to recompute the exact score the
// knowledge base would assign: the embedding for dense kinds, term counts and
// length for the sparse kind.
struct CachedKey {
  std::vector<float> embedding;
  std::vector<std::pair<TokenId, std::uint32_t>> terms;
  std::uint32_t length = 0;
};

struct TimedBatch {
  std::vector<RetrievalResult> results;
  double latency_seconds = 0.0;
};

struct IndexParams {
  std::size_t dim = kDefaultEmbedDim;
  std::uint64_t seed = 1;
  // approx_dense (layered proximity graph)
  std::size_t graph_degree = 16;       // M
  std::size_t build_beam = 200;        // ef at construction
  std::size_t search_beam = 64;        // ef at query time; never inflated by k
  // sparse (BM25)
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
};

// Immutable top-k search structure. Thread-safe for concurrent retrieval once
// built; set_virtual_latency must be called before the index is shared.
class RetrievalIndex {
 public:
  virtual ~RetrievalIndex() = default;

  virtual IndexKind kind() const = 0;
  virtual std::size_t size() const = 0;
  virtual const IndexParams& params() const = 0;

  // One batched call; per-call latency is recorded in the returned struct.
  // With an injected virtual latency model the reported latency is
  // b0 + b1 * |queries| instead of measured wall time.
  TimedBatch retrieve_batch(std::span<const Query> queries, std::size_t k) const;

  virtual CachedKey cached_key(std::uint32_t chunk_id) const = 0;

  // Builds a request-local cache whose scoring metric matches this index.
  LocalCache make_local_cache(std::size_t max_size) const;

  void set_virtual_latency(std::optional<LatencyModel> model) { virtual_latency_ = std::move(model); }
  const std::optional<LatencyModel>& virtual_latency() const { return virtual_latency_; }

  virtual void save(std::ostream& out) const = 0;

  // Stats snapshot used for locally recomputable scoring; empty for dense kinds.
  virtual const CorpusStats& stats_snapshot() const;

 protected:
  virtual std::vector<RetrievalResult> search_batch(std::span<const Query> queries,
                                                    std::size_t k) const = 0;

 private:
  std::optional<LatencyModel> virtual_latency_;
};

// Full-scan inner-product top-k over row-major float vectors.
class ExactDenseIndex final : public RetrievalIndex {
 public:
  ExactDenseIndex(std::vector<float> matrix, const IndexParams& params);

  IndexKind kind() const override { return IndexKind::exact_dense; }
  std::size_t size() const override { return count_; }
  const IndexParams& params() const override { return params_; }
  CachedKey cached_key(std::uint32_t chunk_id) const override;
  void save(std::ostream& out) const override;

  std::span<const float> embedding_of(std::uint32_t chunk_id) const;

 protected:
  std::vector<RetrievalResult> search_batch(std::span<const Query> queries,
                                            std::size_t k) const override;

 private:
  IndexParams params_;
  std::size_t count_;
  std::vector<float> data_;
};

// Deterministic layered proximity-graph index (HNSW-style). Level draws,
// insertion order and all tie-breaks are seeded/ordered, so search results
// are a pure function of (vectors, params, seed).
class HnswIndex final : public RetrievalIndex {
 public:
  HnswIndex(std::vector<float> matrix, const IndexParams& params);

  IndexKind kind() const override { return IndexKind::approx_dense; }
  std::size_t size() const override { return count_; }
  const IndexParams& params() const override { return params_; }
  CachedKey cached_key(std::uint32_t chunk_id) const override;
  void save(std::ostream& out) const override;

  std::span<const float> embedding_of(std::uint32_t chunk_id) const;

  struct GraphData {
    std::vector<std::vector<std::vector<std::uint32_t>>> links;  // [node][level]
    std::uint32_t entry_point = 0;
    int max_level = 0;
  };
  static std::unique_ptr<HnswIndex> from_parts(std::vector<float> matrix,
                                               const IndexParams& params, GraphData graph);
  const GraphData& graph() const { return graph_; }

 protected:
  std::vector<RetrievalResult> search_batch(std::span<const Query> queries,
                                            std::size_t k) const override;

 private:
  HnswIndex(std::vector<float> matrix, const IndexParams& params, GraphData graph);
  void build();
  std::vector<ScoredDoc> search_layer(std::span<const float> q, std::uint32_t entry,
                                      std::size_t beam, int level) const;
  std::uint32_t greedy_descend(std::span<const float> q, std::uint32_t entry, int level) const;
  std::vector<std::uint32_t> select_neighbors(std::vector<ScoredDoc> candidates,
                                              std::size_t max_count) const;

  IndexParams params_;
  std::size_t count_;
  std::vector<float> data_;
  GraphData graph_;
};

// BM25 inverted index. Only chunks sharing at least one query term are
// candidates; a query disjoint from the whole corpus yields an empty result.
class Bm25Index final : public RetrievalIndex {
 public:
  Bm25Index(std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> doc_terms,
            std::vector<std::uint32_t> doc_lengths, CorpusStats stats, const IndexParams& params);

  IndexKind kind() const override { return IndexKind::sparse; }
  std::size_t size() const override { return doc_lengths_.size(); }
  const IndexParams& params() const override { return params_; }
  CachedKey cached_key(std::uint32_t chunk_id) const override;
  void save(std::ostream& out) const override;
  const CorpusStats& stats_snapshot() const override { return stats_; }

 protected:
  std::vector<RetrievalResult> search_batch(std::span<const Query> queries,
                                            std::size_t k) const override;

 private:
  IndexParams params_;
  CorpusStats stats_;
  std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> doc_terms_;
  std::vector<std::uint32_t> doc_lengths_;
  std::unordered_map<TokenId, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;
};

// Builds an index over the corpus chunks. Dense kinds embed each chunk with
// the supplied embedder (whole-chunk mean when the chunk is shorter than the
// embedder window). Throws on empty corpus or unknown kind.
std::unique_ptr<RetrievalIndex> build_index(const Corpus& corpus, IndexKind kind,
                                            const IndexParams& params, const Embedder& embedder);

// Versioned binary index persistence.
void save_index(const RetrievalIndex& index, const std::string& path);
std::unique_ptr<RetrievalIndex> load_index(std::istream& in);
std::unique_ptr<RetrievalIndex> load_index(const std::string& path);

// The score the knowledge-base index would assign `key` for `query`,
// recomputed locally: inner product for dense kinds, BM25 against the frozen
// stats snapshot for the sparse kind.
double score_local(IndexKind kind, const Query& query, const CachedKey& key,
                   const CorpusStats& stats, double bm25_k1 = 1.2, double bm25_b = 0.75);

// BM25 over sorted (term, count) vectors; the one scoring routine shared by
// the inverted index and score_local.
double bm25_term_score(double idf, std::uint32_t tf, std::uint32_t doc_len, double avg_len,
                       double k1, double b);
double bm25_idf(std::uint64_t num_chunks, std::uint32_t doc_freq);

// Encodes the retrieval query for the current context: suffix-window mean
// embedding plus suffix term counts.
Query encode_query(const Embedder& embedder, std::span<const TokenId> context,
                   std::size_t window);

// Embeds every chunk of the corpus (chunk tokens, whole-chunk window).
std::vector<float> embed_corpus_chunks(const Corpus& corpus, const Embedder& embedder);

}  // namespace specserve
