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

#include "specserve/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace specserve {

TokenId Vocab::intern(std::string_view term) {
  auto it = term_to_id.find(std::string(term));
  if (it != term_to_id.end()) return it->second;
  TokenId id = static_cast<TokenId>(id_to_term.size());
  id_to_term.emplace_back(term);
  term_to_id.emplace(std::string(term), id);
  return id;
}

std::optional<TokenId> Vocab::lookup(std::string_view term) const {
  auto it = term_to_id.find(std::string(term));
  if (it == term_to_id.end()) return std::nullopt;
  return it->second;
}

std::string Vocab::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t id = 0; id < id_to_term.size(); ++id) {
    j[id_to_term[id]] = id;
  }
  return j.dump();
}

Vocab Vocab::from_json(const std::string& text) {
  Vocab v;
  auto j = nlohmann::json::parse(text);
  std::vector<std::pair<std::string, TokenId>> pairs;
  for (auto it = j.begin(); it != j.end(); ++it) {
    pairs.emplace_back(it.key(), it.value().get<TokenId>());
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  for (auto& [term, id] : pairs) {
    if (id != v.id_to_term.size()) {
      throw std::runtime_error("vocab json has non-contiguous ids");
    }
    v.term_to_id.emplace(term, id);
    v.id_to_term.push_back(term);
  }
  return v;
}

std::vector<TokenId> tokenize(std::string_view text, Vocab& vocab) {
  std::vector<TokenId> out;
  std::string term;
  auto flush = [&] {
    if (!term.empty()) {
      out.push_back(vocab.intern(term));
      term.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      term.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

static std::vector<std::pair<TokenId, std::uint32_t>> count_terms(
    std::span<const TokenId> tokens) {
  std::map<TokenId, std::uint32_t> counts;
  for (TokenId t : tokens) counts[t]++;
  return {counts.begin(), counts.end()};
}

CorpusStats compute_stats(const std::vector<Chunk>& chunks) {
  CorpusStats stats;
  stats.num_chunks = chunks.size();
  std::uint64_t total_len = 0;
  for (const Chunk& c : chunks) {
    total_len += c.length();
    for (const auto& [term, count] : c.term_counts) {
      (void)count;
      stats.doc_freq[term]++;
    }
  }
  stats.avg_chunk_len = chunks.empty() ? 0.0 : static_cast<double>(total_len) / chunks.size();
  return stats;
}

Corpus ingest_corpus(const std::vector<std::string>& raw_texts, std::size_t chunk_len) {
  if (chunk_len < 1) throw std::invalid_argument("chunk_len must be >= 1");
  Corpus corpus;
  for (std::size_t doc = 0; doc < raw_texts.size(); ++doc) {
    std::vector<TokenId> tokens = tokenize(raw_texts[doc], corpus.vocab);
    for (std::size_t off = 0; off < tokens.size(); off += chunk_len) {
      Chunk chunk;
      chunk.chunk_id = static_cast<std::uint32_t>(corpus.chunks.size());
      chunk.parent_doc = static_cast<std::uint32_t>(doc);
      std::size_t end = std::min(off + chunk_len, tokens.size());
      chunk.tokens.assign(tokens.begin() + off, tokens.begin() + end);
      chunk.term_counts = count_terms(chunk.tokens);
      corpus.stream.insert(corpus.stream.end(), chunk.tokens.begin(), chunk.tokens.end());
      corpus.chunks.push_back(std::move(chunk));
    }
  }
  if (corpus.chunks.empty()) {
    throw std::invalid_argument("empty corpus: no tokens in input");
  }
  corpus.stats = compute_stats(corpus.chunks);
  return corpus;
}

std::vector<std::string> read_corpus_input(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<std::string> docs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      std::stringstream ss;
      ss << in.rdbuf();
      docs.push_back(ss.str());
    }
  } else {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus input: " + path);
    std::string line;
    while (std::getline(in, line)) {
      docs.push_back(line);
    }
  }
  return docs;
}

Embedder::Embedder(std::uint64_t seed, std::size_t dim, std::size_t max_token_id)
    : seed_(seed), dim_(dim), max_token_id_(max_token_id), table_(dim * max_token_id) {
  if (dim < 1 || max_token_id < 1) {
    throw std::invalid_argument("embedder needs dim >= 1 and max_token_id >= 1");
  }
  std::vector<double> tmp(dim);
  for (std::size_t id = 0; id < max_token_id; ++id) {
    SplitMix rng(hash_mix(seed, static_cast<std::uint64_t>(id) + 0x51ed2701ULL));
    double norm_sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      tmp[d] = rng.next_gaussian();
      norm_sq += tmp[d] * tmp[d];
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t d = 0; d < dim; ++d) {
      table_[id * dim + d] = static_cast<float>(tmp[d] * inv);
    }
  }
}

std::span<const float> Embedder::token_vector(TokenId id) const {
  if (id >= max_token_id_) {
    throw std::invalid_argument("token id outside embedder table");
  }
  return {table_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

Embedding Embedder::embed_context(std::span<const TokenId> tokens, std::size_t window) const {
  if (tokens.empty()) throw std::invalid_argument("embed_context: empty token sequence");
  std::size_t start = tokens.size() > window ? tokens.size() - window : 0;
  std::size_t n = tokens.size() - start;
  std::vector<double> acc(dim_, 0.0);
  for (std::size_t i = start; i < tokens.size(); ++i) {
    std::span<const float> v = token_vector(tokens[i]);
    for (std::size_t d = 0; d < dim_; ++d) acc[d] += v[d];
  }
  double norm_sq = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    acc[d] /= static_cast<double>(n);
    norm_sq += acc[d] * acc[d];
  }
  Embedding out;
  out.v.resize(dim_);
  if (norm_sq == 0.0) {
    // Degenerate cancellation; fall back to the first token's direction.
    std::span<const float> v = token_vector(tokens[start]);
    out.v.assign(v.begin(), v.end());
    return out;
  }
  double inv = 1.0 / std::sqrt(norm_sq);
  for (std::size_t d = 0; d < dim_; ++d) {
    out.v[d] = static_cast<float>(acc[d] * inv);
  }
  return out;
}

}  // namespace specserve
