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

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "specserve/pipeline.hpp"

namespace specserve {

struct KnnConfig {
  std::size_t num_neighbors = 8;  // k, capped to the datastore size
  double lambda = 0.25;           // weight of the kNN distribution
  double temperature = 1.0;
  std::size_t n_consecutive = 10;  // spatial-locality prefetch depth
};

// One entry per training-stream position: key = embedding of the leftward
// context, value = the token at that position. Entry order equals stream
// order, which is what consecutive prefetch relies on.
struct KnnDatastore {
  std::size_t dim = 0;
  std::vector<float> keys;  // size() x dim, unit rows
  std::vector<TokenId> values;

  std::size_t size() const { return values.size(); }
  std::span<const float> key_of(std::size_t entry) const {
    return {keys.data() + entry * dim, dim};
  }
};

// Builds entries for positions 1..|stream|-1. Throws if the stream is shorter
// than 2 tokens.
KnnDatastore build_datastore(std::span<const TokenId> stream, const Embedder& embedder,
                             std::size_t window);

// Distance-weighted next-token distribution: p_knn(v) is proportional to the
// sum of exp(-distance / temperature) over neighbors whose value token is v,
// interpolated as lambda * p_knn + (1 - lambda) * p_lm. Neighbor scores are
// inner products; distance = 2 - 2 * score for unit keys. Throws on an empty
// neighbor list.
std::vector<double> knn_next_token_distribution(std::span<const ScoredDoc> neighbors,
                                                const KnnDatastore& datastore,
                                                const std::vector<double>& p_lm,
                                                const KnnConfig& cfg);

// Argmax with ties broken toward the smallest token id.
TokenId argmax_token(const std::vector<double>& distribution);

enum class KnnMode { baseline, speculative };

// Per-token KNN-LM serving over ctx.index (a dense index built on the
// datastore keys). Baseline retrieves from the knowledge base for every
// token; speculative mode retrieves neighbors from the local cache and
// verifies every stride tokens with the relaxed rule: a step passes iff the
// speculated token equals the token the ground-truth neighbors produce.
// Output tokens are identical between the two modes.
GenerationTrace run_knnlm(const ServingContext& ctx, const GenerationRequest& request,
                          const KnnDatastore& datastore, KnnMode mode, const KnnConfig& cfg);

// Datastore persistence: the dense index file format plus a value-token
// array section.
void save_datastore(const RetrievalIndex& key_index, std::span<const TokenId> values,
                    const std::string& path);
std::pair<std::unique_ptr<RetrievalIndex>, std::vector<TokenId>> load_datastore(
    const std::string& path);

}  // namespace specserve
