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
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "specserve/common.hpp"

namespace specserve {

// Persistent term -> id mapping. Ids are assigned in first-encounter order so
// that re-tokenizing the same text always yields the same ids.
struct Vocab {
  std::unordered_map<std::string, TokenId> term_to_id;
  std::vector<std::string> id_to_term;

  TokenId intern(std::string_view term);
  std::optional<TokenId> lookup(std::string_view term) const;
  std::size_t size() const { return id_to_term.size(); }

  std::string to_json() const;
  static Vocab from_json(const std::string& text);
};

// Lowercase + whitespace tokenizer.
std::vector<TokenId> tokenize(std::string_view text, Vocab& vocab);

struct Chunk {
  std::uint32_t chunk_id = 0;
  std::uint32_t parent_doc = 0;
  std::vector<TokenId> tokens;
  // Term counts sorted by token id; the sparse cached key.
  std::vector<std::pair<TokenId, std::uint32_t>> term_counts;

  std::uint32_t length() const { return static_cast<std::uint32_t>(tokens.size()); }
};

struct CorpusStats {
  std::uint64_t num_chunks = 0;
  double avg_chunk_len = 0.0;
  std::unordered_map<TokenId, std::uint32_t> doc_freq;

  std::uint32_t doc_freq_of(TokenId t) const {
    auto it = doc_freq.find(t);
    return it == doc_freq.end() ? 0 : it->second;
  }
};

// Immutable after ingestion; safe to share across threads.
struct Corpus {
  Vocab vocab;
  std::vector<Chunk> chunks;
  CorpusStats stats;
  std::vector<TokenId> stream;  // all chunk tokens in corpus order

  std::size_t num_chunks() const { return chunks.size(); }
};

// Splits each document into chunks of at most chunk_len tokens, preserving
// document order, and computes corpus statistics. Throws std::invalid_argument
// on an empty corpus or chunk_len < 1.
Corpus ingest_corpus(const std::vector<std::string>& raw_texts,
                     std::size_t chunk_len = kDefaultChunkLen);

CorpusStats compute_stats(const std::vector<Chunk>& chunks);

// Reads documents from a UTF-8 text file (one document per line) or from a
// directory of .txt files (one document per file, sorted by filename).
std::vector<std::string> read_corpus_input(const std::string& path);

struct Embedding {
  std::vector<float> v;  // unit L2 norm
};

// Deterministic context embedder: per-token unit vectors drawn from a seeded
// PRF, mean-pooled over the last `window` tokens and re-normalized. The whole
// table is materialized at construction so the embedder is immutable (and
// therefore freely shareable) afterwards.
class Embedder {
 public:
  Embedder(std::uint64_t seed, std::size_t dim, std::size_t max_token_id);

  // Throws std::invalid_argument on an empty token span.
  Embedding embed_context(std::span<const TokenId> tokens, std::size_t window) const;

  std::span<const float> token_vector(TokenId id) const;
  std::size_t dim() const { return dim_; }
  std::size_t max_token_id() const { return max_token_id_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  std::size_t max_token_id_;
  std::vector<float> table_;  // max_token_id x dim
};

}  // namespace specserve
