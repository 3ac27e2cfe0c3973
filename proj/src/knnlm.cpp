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

#include "specserve/knnlm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace specserve {

KnnDatastore build_datastore(std::span<const TokenId> stream, const Embedder& embedder,
                             std::size_t window) {
  if (stream.size() < 2) throw std::invalid_argument("datastore: stream shorter than 2 tokens");
  KnnDatastore ds;
  ds.dim = embedder.dim();
  ds.keys.reserve((stream.size() - 1) * ds.dim);
  ds.values.reserve(stream.size() - 1);
  for (std::size_t i = 1; i < stream.size(); ++i) {
    Embedding key = embedder.embed_context(stream.subspan(0, i), window);
    ds.keys.insert(ds.keys.end(), key.v.begin(), key.v.end());
    ds.values.push_back(stream[i]);
  }
  return ds;
}

std::vector<double> knn_next_token_distribution(std::span<const ScoredDoc> neighbors,
                                                const KnnDatastore& datastore,
                                                const std::vector<double>& p_lm,
                                                const KnnConfig& cfg) {
  if (neighbors.empty()) throw std::invalid_argument("knn distribution: empty neighbor list");
  std::unordered_map<TokenId, double> mass;
  double total = 0.0;
  for (const ScoredDoc& n : neighbors) {
    double distance = 2.0 - 2.0 * n.score;
    double w = std::exp(-distance / cfg.temperature);
    mass[datastore.values[n.chunk_id]] += w;
    total += w;
  }
  std::vector<double> out(p_lm.size());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = (1.0 - cfg.lambda) * p_lm[v];
  for (const auto& [value, w] : mass) {
    out[value] += cfg.lambda * (w / total);
  }
  return out;
}

TokenId argmax_token(const std::vector<double>& distribution) {
  std::size_t best = 0;
  for (std::size_t v = 1; v < distribution.size(); ++v) {
    if (distribution[v] > distribution[best]) best = v;
  }
  return static_cast<TokenId>(best);
}

namespace {

class KnnClock {
 public:
  explicit KnnClock(LatencyMode mode) : mode_(mode), start_(std::chrono::steady_clock::now()) {}
  double now() const {
    if (mode_ == LatencyMode::simulated) return virtual_time_;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void advance(double dt) {
    if (mode_ == LatencyMode::simulated) virtual_time_ += dt;
  }

 private:
  LatencyMode mode_;
  std::chrono::steady_clock::time_point start_;
  double virtual_time_ = 0.0;
};

struct KnnStep {
  Query query;
  TokenId token = 0;
  std::size_t checkpoint = 0;
};

class KnnRunner {
 public:
  KnnRunner(const ServingContext& ctx, const GenerationRequest& req, const KnnDatastore& ds,
            const KnnConfig& cfg)
      : ctx_(ctx), req_(req), ds_(ds), cfg_(cfg), clock_(ctx.latency_mode),
        cache_(ctx.index->make_local_cache(ctx.cache_max_size)),
        sched_(make_sched_config(ctx)), x_(req.prompt), prompt_len_(req.prompt.size()) {
    k_ = std::min(cfg_.num_neighbors, ds_.size());
  }

  GenerationTrace run_baseline_mode() {
    while (!done()) {
      Query q = encode_query(*ctx_.embedder, x_, ctx_.query_window);
      double t0 = clock_.now();
      TimedBatch batch = ctx_.index->retrieve_batch({&q, 1}, k_);
      clock_.advance(batch.latency_seconds);
      trace_.retrieval_latency += batch.latency_seconds;
      trace_.events.push_back({EventType::kb_retrieval, t0, clock_.now(), 1,
                               static_cast<std::int64_t>(k_)});
      trace_.kb_calls++;
      trace_.kb_queries++;
      emit_committed(batch.results[0].hits);
    }
    return finish();
  }

  GenerationTrace run_speculative_mode() {
    while (!done()) {
      std::uint32_t s_target = stride_target();
      std::vector<KnnStep> episode;
      double spec_latency_sum = 0.0;

      if (cache_.size() == 0) {
        // Cold cache: serve this step straight from the knowledge base. The
        // retrieval doubles as a verification of stride 1 and seeds the cache.
        Query q = encode_query(*ctx_.embedder, x_, ctx_.query_window);
        double t0 = clock_.now();
        TimedBatch batch = ctx_.index->retrieve_batch({&q, 1}, k_);
        clock_.advance(batch.latency_seconds);
        trace_.retrieval_latency += batch.latency_seconds;
        trace_.events.push_back({EventType::kb_retrieval, t0, clock_.now(), 1,
                                 static_cast<std::int64_t>(k_)});
        trace_.kb_calls++;
        trace_.kb_queries++;
        double step_latency = emit_committed(batch.results[0].hits);
        update_cache(batch.results[0]);
        sched_.update_profile(1, 1, step_latency, batch.latency_seconds);
        trace_.episodes++;
        trace_.stride_histogram[1]++;
        trace_.spec_steps_matched++;
        continue;
      }

      for (std::uint32_t i = 0; i < s_target && !done(); ++i) {
        double lat = 0.0;
        episode.push_back(speculate_step(i, &lat));
        spec_latency_sum += lat;
      }
      if (episode.empty()) break;

      std::vector<Query> queries;
      queries.reserve(episode.size());
      for (const KnnStep& s : episode) queries.push_back(s.query);
      double t0 = clock_.now();
      TimedBatch batch = ctx_.index->retrieve_batch(queries, k_);
      clock_.advance(batch.latency_seconds);
      trace_.retrieval_latency += batch.latency_seconds;

      // Relaxed verification: a step passes iff the token the ground-truth
      // neighbors produce equals the speculated token, not iff the neighbor
      // sets agree.
      std::optional<std::size_t> first_mismatch;
      std::vector<TokenId> ground(episode.size());
      for (std::size_t i = 0; i < episode.size(); ++i) {
        std::span<const TokenId> prefix{x_.data(), episode[i].checkpoint};
        std::vector<double> p_lm = ctx_.lm->next_token_distribution(prefix);
        ground[i] = argmax_token(
            knn_next_token_distribution(batch.results[i].hits, ds_, p_lm, cfg_));
        if (ground[i] != episode[i].token) {
          first_mismatch = i;
          break;
        }
      }

      std::int64_t m1 = first_mismatch ? static_cast<std::int64_t>(*first_mismatch) + 1 : -1;
      trace_.events.push_back({EventType::verify, t0, clock_.now(),
                               static_cast<std::int64_t>(queries.size()), m1});
      trace_.verifications++;
      trace_.kb_calls++;
      trace_.kb_queries += queries.size();

      std::uint32_t matched;
      if (first_mismatch) {
        matched = static_cast<std::uint32_t>(*first_mismatch);
        std::size_t checkpoint = episode[*first_mismatch].checkpoint;
        trace_.tokens_regenerated += x_.size() - checkpoint;
        x_.resize(checkpoint);
        eos_ = false;
        double t = clock_.now();
        trace_.events.push_back(
            {EventType::rollback, t, t, static_cast<std::int64_t>(checkpoint), -1});
        trace_.rollbacks++;
        commit_token(ground[*first_mismatch]);
        trace_.episodes_with_mismatch++;
      } else {
        matched = static_cast<std::uint32_t>(episode.size());
      }
      std::size_t upto = episode.size();
      if (first_mismatch && !req_.cache_update_all_results) upto = *first_mismatch + 1;
      for (std::size_t i = 0; i < upto; ++i) {
        update_cache(batch.results[i]);
      }
      sched_.update_profile(static_cast<std::uint32_t>(episode.size()), matched,
                            spec_latency_sum / static_cast<double>(episode.size()),
                            batch.latency_seconds);
      trace_.spec_steps_matched += matched;
      trace_.episodes++;
      trace_.stride_histogram[static_cast<std::uint32_t>(episode.size())]++;
    }
    return finish();
  }

 private:
  static SchedulerConfig make_sched_config(const ServingContext& ctx) {
    SchedulerConfig cfg = ctx.scheduler;
    cfg.mode = VerifyMode::sync;
    return cfg;
  }

  std::size_t gen_len() const { return x_.size() - prompt_len_; }
  bool done() const { return eos_ || gen_len() >= req_.gen_cap; }

  std::uint32_t stride_target() {
    if (req_.stride_policy.kind == StridePolicy::Kind::fixed) {
      return req_.stride_policy.fixed_stride;
    }
    return sched_.optimal_stride();
  }

  // Computes the interpolated distribution from the given neighbors, commits
  // its argmax token, and returns the step latency (decode-side cost).
  double emit_committed(std::span<const ScoredDoc> neighbors) {
    auto wall0 = std::chrono::steady_clock::now();
    double t0 = clock_.now();
    std::vector<double> p_lm = ctx_.lm->next_token_distribution(x_);
    TokenId token = argmax_token(knn_next_token_distribution(neighbors, ds_, p_lm, cfg_));
    double lat = step_cost(wall0);
    clock_.advance(lat);
    trace_.gen_latency += lat;
    trace_.events.push_back({EventType::decode, t0, clock_.now(), 1, -1});
    x_.push_back(token);
    if (token == ctx_.lm->eos_id()) eos_ = true;
    return lat;
  }

  void commit_token(TokenId token) {
    double t0 = clock_.now();
    double lat = ctx_.latency_mode == LatencyMode::simulated
                     ? ctx_.lm->config().decode_latency_per_token
                     : 0.0;
    clock_.advance(lat);
    trace_.gen_latency += lat;
    trace_.events.push_back({EventType::decode, t0, clock_.now(), 1, -1});
    x_.push_back(token);
    if (token == ctx_.lm->eos_id()) eos_ = true;
  }

  double step_cost(std::chrono::steady_clock::time_point wall0) const {
    if (ctx_.latency_mode == LatencyMode::simulated) {
      return ctx_.lm->config().decode_latency_per_token;
    }
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  }

  KnnStep speculate_step(std::size_t index, double* latency_out) {
    KnnStep step;
    step.query = encode_query(*ctx_.embedder, x_, ctx_.query_window);
    auto wall0 = std::chrono::steady_clock::now();
    double t0 = clock_.now();
    std::vector<ScoredDoc> neighbors = cache_.retrieve_topk(step.query, k_);
    trace_.events.push_back({EventType::cache_retrieval, t0, clock_.now(),
                             static_cast<std::int64_t>(neighbors.front().chunk_id), -1});
    trace_.cache_retrievals++;
    std::vector<double> p_lm = ctx_.lm->next_token_distribution(x_);
    step.token = argmax_token(knn_next_token_distribution(neighbors, ds_, p_lm, cfg_));
    step.checkpoint = x_.size();
    double lat = step_cost(wall0);
    *latency_out = lat;
    t0 = clock_.now();
    clock_.advance(lat);
    trace_.gen_latency += lat;
    trace_.events.push_back(
        {EventType::speculate, t0, clock_.now(), static_cast<std::int64_t>(index), -1});
    trace_.spec_steps++;
    x_.push_back(step.token);
    if (step.token == ctx_.lm->eos_id()) eos_ = true;
    return step;
  }

  void update_cache(const RetrievalResult& result) {
    if (result.hits.empty()) return;
    cache_.update_topk(result, 1, *ctx_.index);
    if (cfg_.n_consecutive >= 1) {
      cache_.update_consecutive(result.hits.front().chunk_id, cfg_.n_consecutive, ds_.size(),
                                *ctx_.index);
    }
  }

  GenerationTrace finish() {
    trace_.output_tokens.assign(x_.begin() + static_cast<std::ptrdiff_t>(prompt_len_), x_.end());
    trace_.total_latency = clock_.now();
    if (ctx_.latency_mode == LatencyMode::wall_clock) {
      trace_.retrieval_latency = trace_.total_latency - trace_.gen_latency;
    }
    return std::move(trace_);
  }

  const ServingContext& ctx_;
  const GenerationRequest& req_;
  const KnnDatastore& ds_;
  const KnnConfig& cfg_;
  KnnClock clock_;
  LocalCache cache_;
  StrideScheduler sched_;
  GenerationTrace trace_;
  std::vector<TokenId> x_;
  std::size_t prompt_len_;
  std::size_t k_ = 1;
  bool eos_ = false;
};

}  // namespace

GenerationTrace run_knnlm(const ServingContext& ctx, const GenerationRequest& request,
                          const KnnDatastore& datastore, KnnMode mode, const KnnConfig& cfg) {
  validate_request(ctx, request);
  if (datastore.size() == 0) throw std::invalid_argument("run_knnlm: empty datastore");
  if (ctx.index->size() != datastore.size()) {
    throw std::invalid_argument("run_knnlm: index does not match the datastore");
  }
  if (cfg.lambda < 0.0 || cfg.lambda > 1.0 || cfg.temperature <= 0.0 || cfg.num_neighbors < 1) {
    throw std::invalid_argument("run_knnlm: bad knn config");
  }
  KnnRunner runner(ctx, request, datastore, cfg);
  return mode == KnnMode::baseline ? runner.run_baseline_mode() : runner.run_speculative_mode();
}

namespace {
constexpr char kValuesMagic[4] = {'V', 'A', 'L', 'S'};
}

void save_datastore(const RetrievalIndex& key_index, std::span<const TokenId> values,
                    const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write datastore file: " + path);
  key_index.save(out);
  out.write(kValuesMagic, sizeof(kValuesMagic));
  std::uint64_t n = values.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(TokenId)));
}

std::pair<std::unique_ptr<RetrievalIndex>, std::vector<TokenId>> load_datastore(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open datastore file: " + path);
  auto index = load_index(in);
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kValuesMagic, sizeof(kValuesMagic)) != 0) {
    throw std::runtime_error("datastore file missing value section");
  }
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  std::vector<TokenId> values(n);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(n * sizeof(TokenId)));
  if (!in) throw std::runtime_error("datastore file truncated");
  return {std::move(index), std::move(values)};
}

}  // namespace specserve
