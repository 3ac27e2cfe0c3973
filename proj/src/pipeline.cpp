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

#include "specserve/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <stdexcept>

namespace specserve {

namespace {

class RequestClock {
 public:
  explicit RequestClock(LatencyMode mode)
      : mode_(mode), start_(std::chrono::steady_clock::now()) {}

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

double wall_seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void validate_request(const ServingContext& ctx, const GenerationRequest& request) {
  if (!ctx.index || !ctx.lm || !ctx.embedder) {
    throw std::invalid_argument("serving context is incomplete");
  }
  if (request.prompt.empty()) throw std::invalid_argument("request: empty prompt");
  if (request.prompt.size() > kPromptCap) throw std::invalid_argument("request: prompt over cap");
  if (request.gen_cap < 1) throw std::invalid_argument("request: gen_cap must be >= 1");
  if (request.gen_stride_k < 1) throw std::invalid_argument("request: gen_stride_k must be >= 1");
  if (request.stride_policy.kind == StridePolicy::Kind::fixed &&
      request.stride_policy.fixed_stride < 1) {
    throw std::invalid_argument("request: fixed stride must be >= 1");
  }
  if (request.prefetch_size < 1) throw std::invalid_argument("request: prefetch_size must be >= 1");
  if (request.prompt.size() + request.gen_cap > ctx.lm->config().context_cap) {
    throw std::invalid_argument("request: prompt + gen_cap over the model context cap");
  }
  for (TokenId t : request.prompt) {
    if (t >= ctx.lm->config().vocab_size) {
      throw std::invalid_argument("request: prompt token outside the model vocabulary");
    }
  }
}

VerifyOutcome verify_episode(const SpeculationEpisode& episode, const RetrievalIndex& index,
                             std::size_t retrieve_k) {
  if (episode.steps.empty()) throw std::invalid_argument("verify_episode: empty episode");
  VerifyOutcome out;
  out.ground_truth.resize(episode.steps.size());
  out.results.resize(episode.steps.size());

  std::vector<Query> queries;
  std::vector<std::size_t> query_step;
  for (std::size_t i = 0; i < episode.steps.size(); ++i) {
    if (episode.steps[i].pre_verified) {
      out.ground_truth[i] = episode.steps[i].known_truth;
    } else {
      queries.push_back(episode.steps[i].query);
      query_step.push_back(i);
    }
  }
  out.batch_size = queries.size();
  if (!queries.empty()) {
    TimedBatch batch = index.retrieve_batch(queries, retrieve_k);
    out.latency = batch.latency_seconds;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      std::size_t step = query_step[qi];
      if (!batch.results[qi].hits.empty()) {
        out.ground_truth[step] = batch.results[qi].hits.front().chunk_id;
      }
      out.results[step] = std::move(batch.results[qi]);
    }
  }
  for (std::size_t i = 0; i < episode.steps.size(); ++i) {
    if (episode.steps[i].deferred || episode.steps[i].pre_verified) continue;
    if (episode.steps[i].speculated != out.ground_truth[i]) {
      out.first_mismatch = i;
      break;
    }
  }
  return out;
}

GenerationTrace run_baseline(const ServingContext& ctx, const GenerationRequest& request) {
  validate_request(ctx, request);
  RequestClock clock(ctx.latency_mode);
  GenerationTrace trace;
  std::vector<TokenId> x = request.prompt;
  const std::size_t prompt_len = x.size();
  bool eos = false;

  while (!eos && x.size() - prompt_len < request.gen_cap) {
    Query q = encode_query(*ctx.embedder, x, ctx.query_window);
    double t0 = clock.now();
    TimedBatch batch = ctx.index->retrieve_batch({&q, 1}, 1);
    clock.advance(batch.latency_seconds);
    trace.retrieval_latency += batch.latency_seconds;
    trace.events.push_back({EventType::kb_retrieval, t0, clock.now(), 1, 1});
    trace.kb_calls++;
    trace.kb_queries++;

    std::optional<std::uint32_t> doc;
    if (!batch.results[0].hits.empty()) doc = batch.results[0].hits.front().chunk_id;

    std::size_t k = std::min<std::size_t>(request.gen_stride_k,
                                          request.gen_cap - (x.size() - prompt_len));
    t0 = clock.now();
    DecodeResult dec = ctx.lm->decode(x, doc, k);
    clock.advance(dec.latency);
    trace.gen_latency += dec.latency;
    trace.events.push_back({EventType::decode, t0, clock.now(),
                            static_cast<std::int64_t>(dec.tokens.size()), -1});
    x.insert(x.end(), dec.tokens.begin(), dec.tokens.end());
    eos = dec.hit_eos;
  }

  trace.output_tokens.assign(x.begin() + static_cast<std::ptrdiff_t>(prompt_len), x.end());
  trace.total_latency = clock.now();
  if (ctx.latency_mode == LatencyMode::wall_clock) {
    trace.retrieval_latency = trace.total_latency - trace.gen_latency;
  }
  return trace;
}

namespace {

// Per-request speculative serving loop. Owns all mutable request state: the
// growing context, the local cache, the stride scheduler and the trace.
class SpecRunner {
 public:
  SpecRunner(const ServingContext& ctx, const GenerationRequest& request)
      : ctx_(ctx), req_(request), clock_(ctx.latency_mode),
        cache_(ctx.index->make_local_cache(ctx.cache_max_size)), sched_(make_sched_config(ctx, request)),
        x_(request.prompt), prompt_len_(request.prompt.size()) {}

  GenerationTrace run() {
    warmup();
    if (req_.async_verify) {
      run_async();
    } else {
      run_sync();
    }
    trace_.output_tokens.assign(x_.begin() + static_cast<std::ptrdiff_t>(prompt_len_), x_.end());
    trace_.total_latency = clock_.now();
    if (ctx_.latency_mode == LatencyMode::wall_clock) {
      trace_.retrieval_latency = trace_.total_latency - trace_.gen_latency;
    }
    return std::move(trace_);
  }

 private:
  static SchedulerConfig make_sched_config(const ServingContext& ctx,
                                           const GenerationRequest& request) {
    SchedulerConfig cfg = ctx.scheduler;
    cfg.mode = request.async_verify ? VerifyMode::async : VerifyMode::sync;
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

  void warmup() {
    Query q = encode_query(*ctx_.embedder, x_, ctx_.query_window);
    double t0 = clock_.now();
    TimedBatch batch = ctx_.index->retrieve_batch({&q, 1}, req_.prefetch_size);
    clock_.advance(batch.latency_seconds);
    trace_.retrieval_latency += batch.latency_seconds;
    trace_.events.push_back({EventType::kb_retrieval, t0, clock_.now(), 1,
                             static_cast<std::int64_t>(req_.prefetch_size)});
    trace_.kb_calls++;
    trace_.kb_queries++;
    cache_.update_topk(batch.results[0], req_.prefetch_size, *ctx_.index);
    sched_.observe_retrieval_latency(1, batch.latency_seconds);
    if (!batch.results[0].hits.empty()) {
      warm_truth_ = batch.results[0].hits.front().chunk_id;
    }
    warm_pending_ = true;
  }

  struct StepOutcome {
    SpecStep step;
    double latency = 0.0;          // cache retrieval + decode (the "a" of one step)
    double decode_latency = 0.0;
    std::size_t tokens = 0;
    std::int64_t cache_arg = -1;
  };

  // Runs one speculative step: encode, cache-retrieve, decode k tokens,
  // append. With defer_clock the virtual clock and trace are left untouched
  // so the caller can account for the step at the verification join (async
  // overlap); wall mode always records immediately since real time elapsed.
  StepOutcome compute_step(std::size_t step_index, bool defer_clock) {
    StepOutcome out;
    bool record_now = !defer_clock || ctx_.latency_mode == LatencyMode::wall_clock;

    out.step.query = encode_query(*ctx_.embedder, x_, ctx_.query_window);
    auto wall0 = std::chrono::steady_clock::now();
    std::optional<ScoredDoc> hit = cache_.retrieve(out.step.query);
    double cache_lat =
        ctx_.latency_mode == LatencyMode::wall_clock ? wall_seconds_since(wall0) : 0.0;
    if (hit) out.step.speculated = hit->chunk_id;
    out.cache_arg = hit ? static_cast<std::int64_t>(hit->chunk_id) : -1;
    if (record_now) {
      double t0 = clock_.now();
      clock_.advance(cache_lat);
      trace_.events.push_back({EventType::cache_retrieval, t0, clock_.now(), out.cache_arg, -1});
      trace_.cache_retrievals++;
    }

    if (warm_pending_) {
      warm_pending_ = false;
      // The warm-up retrieval used this very query (nothing was appended in
      // between), so its top hit is this step's ground truth; ranking
      // preservation makes the cache return exactly that hit.
      if (x_.size() == prompt_len_ && out.step.speculated == warm_truth_) {
        out.step.pre_verified = true;
        out.step.known_truth = warm_truth_;
      }
    }

    out.step.checkpoint = x_.size();
    std::size_t k = std::min<std::size_t>(req_.gen_stride_k, req_.gen_cap - gen_len());
    DecodeResult dec = ctx_.lm->decode(x_, out.step.speculated, k);
    out.decode_latency = dec.latency;
    out.latency = cache_lat + dec.latency;
    out.tokens = dec.tokens.size();
    if (record_now) {
      double t0 = clock_.now();
      clock_.advance(dec.latency);
      trace_.gen_latency += dec.latency;
      trace_.events.push_back(
          {EventType::speculate, t0, clock_.now(), static_cast<std::int64_t>(step_index), -1});
      trace_.spec_steps++;
    }
    x_.insert(x_.end(), dec.tokens.begin(), dec.tokens.end());
    if (dec.hit_eos) eos_ = true;
    return out;
  }

  // skip_last_speculation: the episode's final step contributes its query to
  // the batch and decodes with the verified document afterwards.
  SpecStep make_deferred_step() {
    SpecStep step;
    step.query = encode_query(*ctx_.embedder, x_, ctx_.query_window);
    step.checkpoint = x_.size();
    step.deferred = true;
    if (warm_pending_) {
      warm_pending_ = false;
      if (x_.size() == prompt_len_) {
        step.pre_verified = true;
        step.known_truth = warm_truth_;
      }
    }
    return step;
  }

  void record_verify_event(double t_start, const VerifyOutcome& outcome) {
    std::int64_t m = outcome.first_mismatch
                         ? static_cast<std::int64_t>(*outcome.first_mismatch) + 1
                         : -1;
    trace_.events.push_back({EventType::verify, t_start, clock_.now(),
                             static_cast<std::int64_t>(outcome.batch_size), m});
    trace_.verifications++;
    trace_.kb_calls++;
    trace_.kb_queries += outcome.batch_size;
  }

  void rollback_to(std::size_t checkpoint) {
    trace_.tokens_regenerated += x_.size() - checkpoint;
    x_.resize(checkpoint);
    eos_ = false;
    for (std::size_t i = prompt_len_; i < x_.size(); ++i) {
      if (x_[i] == ctx_.lm->eos_id()) {
        eos_ = true;
        break;
      }
    }
    double t = clock_.now();
    trace_.events.push_back(
        {EventType::rollback, t, t, static_cast<std::int64_t>(checkpoint), -1});
    trace_.rollbacks++;
  }

  void decode_committed(std::optional<std::uint32_t> doc) {
    std::size_t k = std::min<std::size_t>(req_.gen_stride_k, req_.gen_cap - gen_len());
    double t0 = clock_.now();
    DecodeResult dec = ctx_.lm->decode(x_, doc, k);
    clock_.advance(dec.latency);
    trace_.gen_latency += dec.latency;
    trace_.events.push_back({EventType::decode, t0, clock_.now(),
                             static_cast<std::int64_t>(dec.tokens.size()), -1});
    x_.insert(x_.end(), dec.tokens.begin(), dec.tokens.end());
    eos_ = dec.hit_eos;
  }

  void update_cache_from(const SpeculationEpisode& episode, const VerifyOutcome& outcome) {
    std::size_t upto = episode.steps.size();
    if (!req_.cache_update_all_results && outcome.first_mismatch) {
      upto = *outcome.first_mismatch + 1;
    }
    for (std::size_t i = 0; i < upto; ++i) {
      if (outcome.results[i]) {
        cache_.update_topk(*outcome.results[i], req_.prefetch_size, *ctx_.index);
      }
    }
  }

  void update_scheduler_from(const SpeculationEpisode& episode, const VerifyOutcome& outcome,
                             double spec_latency_sum) {
    std::uint32_t spec_stride = 0;
    std::uint32_t matched = 0;
    for (std::size_t i = 0; i < episode.steps.size(); ++i) {
      const SpecStep& step = episode.steps[i];
      if (step.pre_verified || step.deferred) continue;
      spec_stride++;
      if (!outcome.first_mismatch || i < *outcome.first_mismatch) matched++;
    }
    if (spec_stride > 0) {
      sched_.update_profile(spec_stride, matched,
                            spec_latency_sum / static_cast<double>(spec_stride),
                            outcome.latency, outcome.batch_size);
      trace_.spec_steps_matched += matched;
      if (outcome.first_mismatch) trace_.episodes_with_mismatch++;
    } else if (outcome.batch_size > 0) {
      sched_.observe_retrieval_latency(outcome.batch_size, outcome.latency);
    }
    trace_.episodes++;
    trace_.stride_histogram[static_cast<std::uint32_t>(episode.steps.size())]++;
  }

  void handle_outcome(const SpeculationEpisode& episode, const VerifyOutcome& outcome) {
    if (outcome.first_mismatch) {
      std::size_t m = *outcome.first_mismatch;
      rollback_to(episode.steps[m].checkpoint);
      decode_committed(outcome.ground_truth[m]);
    } else if (!episode.steps.empty() && episode.steps.back().deferred && !done()) {
      decode_committed(outcome.ground_truth.back());
    }
    update_cache_from(episode, outcome);
  }

  void run_sync() {
    while (!done()) {
      std::uint32_t s_target = stride_target();
      SpeculationEpisode episode;
      double spec_latency_sum = 0.0;
      for (std::uint32_t i = 0; i < s_target && !done(); ++i) {
        bool last = (i + 1 == s_target);
        if (req_.skip_last_speculation && last) {
          episode.steps.push_back(make_deferred_step());
          break;
        }
        StepOutcome step = compute_step(i, /*defer_clock=*/false);
        if (step.step.pre_verified) {
          sched_.observe_step_latency(step.latency);
        } else {
          spec_latency_sum += step.latency;
        }
        episode.steps.push_back(std::move(step.step));
      }
      if (episode.steps.empty()) break;

      double t0 = clock_.now();
      VerifyOutcome outcome = verify_episode(episode, *ctx_.index, req_.prefetch_size);
      if (outcome.batch_size > 0) {
        clock_.advance(outcome.latency);
        trace_.retrieval_latency += outcome.latency;
        record_verify_event(t0, outcome);
      }
      handle_outcome(episode, outcome);
      update_scheduler_from(episode, outcome, spec_latency_sum);
    }
  }

  void run_async() {
    std::optional<SpecStep> carried;
    double carried_latency = 0.0;
    while (!done() || carried) {
      std::uint32_t s_target = stride_target();
      SpeculationEpisode episode;
      double spec_latency_sum = 0.0;
      if (carried) {
        episode.steps.push_back(std::move(*carried));
        if (!episode.steps.back().pre_verified) spec_latency_sum += carried_latency;
        carried.reset();
      }
      while (episode.steps.size() < s_target && !done()) {
        StepOutcome step = compute_step(episode.steps.size(), /*defer_clock=*/false);
        if (step.step.pre_verified) {
          sched_.observe_step_latency(step.latency);
        } else {
          spec_latency_sum += step.latency;
        }
        episode.steps.push_back(std::move(step.step));
      }
      if (episode.steps.empty()) break;

      bool needs_batch = false;
      for (const SpecStep& s : episode.steps) {
        if (!s.pre_verified) needs_batch = true;
      }
      if (!needs_batch) {
        VerifyOutcome outcome = verify_episode(episode, *ctx_.index, req_.prefetch_size);
        handle_outcome(episode, outcome);
        update_scheduler_from(episode, outcome, spec_latency_sum);
        continue;
      }

      // Launch the verification, overlap exactly one speculation step of the
      // next episode, then join before committing anything that depends on it.
      double t_issue = clock_.now();
      std::future<VerifyOutcome> pending;
      VerifyOutcome outcome;
      if (ctx_.latency_mode == LatencyMode::wall_clock) {
        pending = std::async(std::launch::async, [&episode, this] {
          return verify_episode(episode, *ctx_.index, req_.prefetch_size);
        });
      }

      std::optional<StepOutcome> overlapped;
      if (!done()) {
        overlapped = compute_step(0, /*defer_clock=*/true);
      }

      if (ctx_.latency_mode == LatencyMode::wall_clock) {
        outcome = pending.get();
      } else {
        outcome = verify_episode(episode, *ctx_.index, req_.prefetch_size);
      }

      if (ctx_.latency_mode == LatencyMode::simulated) {
        // Join rule: a successful overlap costs max(a, b); a failed one is
        // cancelled when the verification returns, costing b alone.
        if (overlapped && !outcome.first_mismatch) {
          double a = overlapped->latency;
          double joined = std::max(a, outcome.latency);
          trace_.events.push_back({EventType::cache_retrieval, t_issue, t_issue,
                                   overlapped->cache_arg, -1});
          trace_.cache_retrievals++;
          trace_.events.push_back({EventType::speculate, t_issue, t_issue + a, 0, -1});
          trace_.spec_steps++;
          trace_.gen_latency += overlapped->decode_latency;
          trace_.retrieval_latency += joined - overlapped->decode_latency;
          clock_.advance(joined);
        } else {
          trace_.retrieval_latency += outcome.latency;
          clock_.advance(outcome.latency);
        }
      }
      record_verify_event(t_issue, outcome);

      if (outcome.first_mismatch) {
        // The rollback truncation also discards the overlapped step's tokens.
        overlapped.reset();
        handle_outcome(episode, outcome);
      } else {
        update_cache_from(episode, outcome);
        if (overlapped) {
          carried = std::move(overlapped->step);
          carried_latency = overlapped->latency;
        }
      }
      update_scheduler_from(episode, outcome, spec_latency_sum);
    }
  }

  const ServingContext& ctx_;
  const GenerationRequest& req_;
  RequestClock clock_;
  GenerationTrace trace_;
  LocalCache cache_;
  StrideScheduler sched_;
  std::vector<TokenId> x_;
  std::size_t prompt_len_;
  bool eos_ = false;
  bool warm_pending_ = false;
  std::optional<std::uint32_t> warm_truth_;
};

}  // namespace

GenerationTrace run_speculative(const ServingContext& ctx, const GenerationRequest& request) {
  validate_request(ctx, request);
  GenerationRequest effective = request;
  if (effective.async_verify) effective.skip_last_speculation = false;
  SpecRunner runner(ctx, effective);
  return runner.run();
}

}  // namespace specserve
