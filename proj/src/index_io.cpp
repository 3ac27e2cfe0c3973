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

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "specserve/retriever.hpp"

namespace specserve {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'I', 'D', 'X', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("index file truncated");
  return value;
}

template <typename T>
void write_array(std::ostream& out, const std::vector<T>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_array(std::istream& in) {
  auto n = read_pod<std::uint64_t>(in);
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw std::runtime_error("index file truncated");
  return v;
}

void write_header(std::ostream& out, IndexKind kind, const IndexParams& p, std::uint64_t count) {
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  write_pod<std::uint64_t>(out, p.seed);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.graph_degree));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.build_beam));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.search_beam));
  write_pod<double>(out, p.bm25_k1);
  write_pod<double>(out, p.bm25_b);
  write_pod<std::uint64_t>(out, count);
}

}  // namespace

void ExactDenseIndex::save(std::ostream& out) const {
  write_header(out, kind(), params_, count_);
  write_array(out, data_);
}

void HnswIndex::save(std::ostream& out) const {
  write_header(out, kind(), params_, count_);
  write_array(out, data_);
  write_pod<std::uint32_t>(out, graph_.entry_point);
  write_pod<std::int32_t>(out, graph_.max_level);
  for (const auto& node_links : graph_.links) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(node_links.size()));
    for (const auto& level_links : node_links) {
      write_array(out, level_links);
    }
  }
}

void Bm25Index::save(std::ostream& out) const {
  write_header(out, kind(), params_, doc_lengths_.size());
  write_array(out, doc_lengths_);
  for (const auto& terms : doc_terms_) {
    write_pod<std::uint64_t>(out, terms.size());
    for (const auto& [term, tf] : terms) {
      write_pod<TokenId>(out, term);
      write_pod<std::uint32_t>(out, tf);
    }
  }
  write_pod<double>(out, stats_.avg_chunk_len);
}

std::unique_ptr<RetrievalIndex> load_index(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a specserve index file");
  }
  auto kind = static_cast<IndexKind>(read_pod<std::uint32_t>(in));
  IndexParams p;
  p.seed = read_pod<std::uint64_t>(in);
  p.dim = read_pod<std::uint32_t>(in);
  p.graph_degree = read_pod<std::uint32_t>(in);
  p.build_beam = read_pod<std::uint32_t>(in);
  p.search_beam = read_pod<std::uint32_t>(in);
  p.bm25_k1 = read_pod<double>(in);
  p.bm25_b = read_pod<double>(in);
  auto count = read_pod<std::uint64_t>(in);

  switch (kind) {
    case IndexKind::exact_dense: {
      auto data = read_array<float>(in);
      return std::make_unique<ExactDenseIndex>(std::move(data), p);
    }
    case IndexKind::approx_dense: {
      auto data = read_array<float>(in);
      HnswIndex::GraphData graph;
      graph.entry_point = read_pod<std::uint32_t>(in);
      graph.max_level = read_pod<std::int32_t>(in);
      graph.links.resize(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        auto levels = read_pod<std::uint32_t>(in);
        graph.links[i].resize(levels);
        for (std::uint32_t l = 0; l < levels; ++l) {
          graph.links[i][l] = read_array<std::uint32_t>(in);
        }
      }
      return HnswIndex::from_parts(std::move(data), p, std::move(graph));
    }
    case IndexKind::sparse: {
      auto lengths = read_array<std::uint32_t>(in);
      std::vector<std::vector<std::pair<TokenId, std::uint32_t>>> docs(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        auto nterms = read_pod<std::uint64_t>(in);
        docs[i].reserve(nterms);
        for (std::uint64_t t = 0; t < nterms; ++t) {
          TokenId term = read_pod<TokenId>(in);
          auto tf = read_pod<std::uint32_t>(in);
          docs[i].emplace_back(term, tf);
        }
      }
      CorpusStats stats;
      stats.avg_chunk_len = read_pod<double>(in);
      stats.num_chunks = count;
      for (const auto& terms : docs) {
        for (const auto& [term, tf] : terms) {
          (void)tf;
          stats.doc_freq[term]++;
        }
      }
      return std::make_unique<Bm25Index>(std::move(docs), std::move(lengths), std::move(stats), p);
    }
  }
  throw std::runtime_error("index file has unknown kind");
}

std::unique_ptr<RetrievalIndex> load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open index file: " + path);
  return load_index(in);
}

void save_index(const RetrievalIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index file: " + path);
  index.save(out);
}

}  // namespace specserve
