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

#include "specserve/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace specserve {

namespace {
constexpr std::uint64_t kCorpusTag = 0x6f727075u;
constexpr std::uint64_t kWorkloadTag = 0x6c6f6164u;
}  // namespace

namespace {

// Zipf sampler over ranks 0..n-1 (weight 1/(rank+1)), via inverse CDF.
class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cumulative_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += 1.0 / static_cast<double>(r + 1);
      cumulative_[r] = total;
    }
    for (double& c : cumulative_) c /= total;
  }
  std::size_t draw(SplitMix& rng) const {
    double u = rng.next_unit();
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<std::size_t>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace

// Documents mix a per-document topic pool with a global Zipf background,
// giving the corpus the term-frequency skew and topical clustering the
// retrieval structures see in real text.
std::vector<std::string> generate_synthetic_corpus(const SyntheticCorpusParams& params,
                                                   std::uint64_t seed) {
  if (params.num_docs < 1 || params.doc_len < 1 || params.vocab < 2) {
    throw std::invalid_argument("synthetic corpus: bad params");
  }
  SplitMix rng(hash_mix(seed, kCorpusTag));
  std::size_t topic_size = std::max<std::size_t>(params.vocab / 20, 8);
  ZipfSampler global(params.vocab);
  ZipfSampler topical(topic_size);
  std::vector<std::string> docs;
  docs.reserve(params.num_docs);
  for (std::size_t d = 0; d < params.num_docs; ++d) {
    std::vector<std::size_t> topic(topic_size);
    for (std::size_t i = 0; i < topic_size; ++i) topic[i] = rng.next_below(params.vocab);
    std::string doc;
    doc.reserve(params.doc_len * 6);
    for (std::size_t i = 0; i < params.doc_len; ++i) {
      std::size_t term = rng.next_unit() < 0.6 ? topic[topical.draw(rng)] : global.draw(rng);
      if (i) doc.push_back(' ');
      doc.push_back('w');
      doc += std::to_string(term);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<std::vector<TokenId>> generate_workload_from_stream(std::span<const TokenId> stream,
                                                                const WorkloadParams& params) {
  if (params.n_requests < 1) throw std::invalid_argument("workload: n_requests must be >= 1");
  if (stream.empty()) throw std::invalid_argument("workload: empty token stream");
  if (params.prompt_len_min < 1 || params.prompt_len_max < params.prompt_len_min) {
    throw std::invalid_argument("workload: bad prompt length range");
  }
  if (params.locality < 0.0 || params.locality > 1.0) {
    throw std::invalid_argument("workload: locality must be in [0, 1]");
  }
  SplitMix rng(hash_mix(params.seed, kWorkloadTag));
  std::vector<std::vector<TokenId>> prompts;
  prompts.reserve(params.n_requests);
  double drift = 1.0 - params.locality;
  for (std::size_t r = 0; r < params.n_requests; ++r) {
    std::size_t len = params.prompt_len_min +
                      rng.next_below(params.prompt_len_max - params.prompt_len_min + 1);
    std::size_t pos = rng.next_below(stream.size());
    std::vector<TokenId> prompt;
    prompt.reserve(len);
    while (prompt.size() < len) {
      std::size_t seg = std::min(params.segment_len, len - prompt.size());
      for (std::size_t j = 0; j < seg; ++j) {
        prompt.push_back(stream[(pos + j) % stream.size()]);
      }
      pos = (pos + seg) % stream.size();
      if (rng.next_unit() <= drift) {
        pos = rng.next_below(stream.size());
      }
    }
    prompts.push_back(std::move(prompt));
  }
  return prompts;
}

std::vector<std::vector<TokenId>> generate_workload(const Corpus& corpus,
                                                    const WorkloadParams& params) {
  return generate_workload_from_stream(corpus.stream, params);
}

LatencyModel fit_linear_latency(const std::vector<std::pair<std::size_t, double>>& points) {
  if (points.size() < 2) throw std::invalid_argument("latency fit: need at least two points");
  bool distinct = false;
  for (const auto& [x, y] : points) {
    if (x != points.front().first) distinct = true;
  }
  if (!distinct) throw std::invalid_argument("latency fit: need two distinct batch sizes");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += static_cast<double>(x);
    my += y;
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    double dx = static_cast<double>(x) - mx;
    sxx += dx * dx;
    sxy += dx * (y - my);
  }
  double b1 = sxy / sxx;
  double b0 = my - b1 * mx;
  return {std::max(b0, 0.0), std::max(b1, 0.0)};
}

LatencyModel fit_latency_model(const RetrievalIndex& index, std::span<const Query> query_pool,
                               const std::vector<std::size_t>& batch_sizes, std::size_t trials,
                               std::vector<BatchLatencySample>* samples_out) {
  if (query_pool.empty()) throw std::invalid_argument("latency fit: empty query pool");
  if (trials < 1) throw std::invalid_argument("latency fit: trials must be >= 1");
  std::vector<std::size_t> sizes = batch_sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.size() < 2) throw std::invalid_argument("latency fit: need two distinct batch sizes");

  std::vector<std::vector<double>> measured(sizes.size());
  // Interleave trials across sizes so slow drift in machine load spreads
  // evenly instead of biasing one size.
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t si = 0; si < sizes.size(); ++si) {
      std::vector<Query> batch(sizes[si]);
      for (std::size_t i = 0; i < sizes[si]; ++i) {
        batch[i] = query_pool[cursor++ % query_pool.size()];
      }
      TimedBatch result = index.retrieve_batch(batch, 10);
      measured[si].push_back(result.latency_seconds);
    }
  }
  std::vector<std::pair<std::size_t, double>> medians;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    std::sort(measured[si].begin(), measured[si].end());
    double median = measured[si][measured[si].size() / 2];
    medians.emplace_back(sizes[si], median);
    if (samples_out) {
      samples_out->push_back({sizes[si], median, median / static_cast<double>(sizes[si])});
    }
  }
  return fit_linear_latency(medians);
}

EquivalenceError::EquivalenceError(const std::string& variant_in, std::size_t request_index_in,
                                   std::size_t position_in, std::int64_t expected_in,
                                   std::int64_t got_in)
    : std::runtime_error("output divergence in variant '" + variant_in + "', request " +
                         std::to_string(request_index_in) + ", token " +
                         std::to_string(position_in) + ": baseline=" +
                         std::to_string(expected_in) + " speculative=" + std::to_string(got_in)),
      variant(variant_in), request_index(request_index_in), position(position_in),
      expected(expected_in), got(got_in) {}

void assert_equivalent_outputs(const std::string& variant, std::size_t request_index,
                               const std::vector<TokenId>& baseline,
                               const std::vector<TokenId>& got) {
  std::size_t n = std::min(baseline.size(), got.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (baseline[i] != got[i]) {
      throw EquivalenceError(variant, request_index, i, baseline[i], got[i]);
    }
  }
  if (baseline.size() != got.size()) {
    std::int64_t expected = n < baseline.size() ? static_cast<std::int64_t>(baseline[n]) : -1;
    std::int64_t actual = n < got.size() ? static_cast<std::int64_t>(got[n]) : -1;
    throw EquivalenceError(variant, request_index, n, expected, actual);
  }
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  std::size_t count = std::min(workers, n);
  threads.reserve(count);
  for (std::size_t w = 0; w < count; ++w) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct Aggregate {
  std::vector<double> latencies;
  double gen_sum = 0.0;
  double ret_sum = 0.0;
  std::uint64_t matched = 0;
  std::uint64_t mismatch_episodes = 0;
  std::uint64_t kb_calls = 0;
  std::map<std::uint32_t, std::uint64_t> stride_hist;

  void add(const GenerationTrace& t) {
    latencies.push_back(t.total_latency);
    gen_sum += t.gen_latency;
    ret_sum += t.retrieval_latency;
    matched += t.spec_steps_matched;
    mismatch_episodes += t.episodes_with_mismatch;
    kb_calls += t.kb_calls;
    for (const auto& [s, c] : t.stride_histogram) stride_hist[s] += c;
  }

  double mean() const {
    double sum = 0.0;
    for (double v : latencies) sum += v;
    return latencies.empty() ? 0.0 : sum / static_cast<double>(latencies.size());
  }

  double stddev() const {
    if (latencies.size() < 2) return 0.0;
    double m = mean();
    double acc = 0.0;
    for (double v : latencies) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(latencies.size()));
  }

  double observed_gamma() const {
    double denom = static_cast<double>(matched) + static_cast<double>(mismatch_episodes);
    return denom == 0.0 ? 0.0 : static_cast<double>(matched) / denom;
  }

  std::uint32_t modal_stride() const {
    std::uint32_t best = 1;
    std::uint64_t best_count = 0;
    for (const auto& [s, c] : stride_hist) {
      if (c > best_count) {
        best_count = c;
        best = s;
      }
    }
    return best;
  }
};

std::vector<VariantSpec> assemble_variants(const BenchConfig& config) {
  std::vector<VariantSpec> out = config.variants;
  if (config.ablation_matrix) {
    StridePolicy fixed{StridePolicy::Kind::fixed, config.ablation_fixed_stride};
    StridePolicy os3{StridePolicy::Kind::os3, 1};
    std::size_t p = config.ablation_prefetch;
    out.push_back({"spec", fixed, 1, false});
    out.push_back({"spec+P", fixed, p, false});
    out.push_back({"spec+S", os3, 1, false});
    out.push_back({"spec+A", fixed, 1, true});
    out.push_back({"spec+PS", os3, p, false});
    out.push_back({"spec+SA", os3, 1, true});
    out.push_back({"spec+PA", fixed, p, true});
    out.push_back({"spec+PSA", os3, p, true});
  }
  for (std::uint32_t s : config.fixed_stride_sweep) {
    out.push_back({"fixed_s" + std::to_string(s), {StridePolicy::Kind::fixed, s}, 1, false});
  }
  return out;
}

void maybe_write_trace(const BenchConfig& config, const std::string& trace_dir,
                       const std::string& variant, std::size_t request_index,
                       const GenerationTrace& trace) {
  if (!config.emit_traces || trace_dir.empty()) return;
  namespace fs = std::filesystem;
  fs::path dir = fs::path(trace_dir) / "traces";
  fs::create_directories(dir);
  std::ofstream out(dir / (variant + "_req" + std::to_string(request_index) + ".jsonl"));
  trace.write_jsonl(out);
}

}  // namespace

double predict_speedup(VerifyMode mode, double gamma_obs, std::uint32_t stride, double a_step,
                       const LatencyModel& b, std::uint64_t baseline_docs,
                       std::size_t n_requests) {
  if (baseline_docs == 0 || stride < 1) return 0.0;
  double em = StrideScheduler::expected_matched(gamma_obs, stride);
  double s = static_cast<double>(stride);
  double gs = std::pow(gamma_obs, s);
  double bs = b.predict(stride);
  double episode_time;
  if (mode == VerifyMode::sync) {
    // Episode latency s*a + b(s), plus the correction decode a mismatch costs.
    episode_time = s * a_step + bs + (1.0 - gs) * a_step;
  } else {
    episode_time = gs * ((s - 1.0) * a_step + std::max(a_step, bs)) + (1.0 - gs) * (s * a_step + bs);
  }
  double docs = static_cast<double>(baseline_docs);
  double requests = static_cast<double>(n_requests);
  double warm_docs = std::min(requests, docs);  // one pre-verified step per request
  double t_base = docs * (a_step + b.predict(1));
  double t_spec = requests * b.predict(1) + warm_docs * a_step +
                  (docs - warm_docs) / em * episode_time;
  return t_base / t_spec;
}

BenchReport run_benchmark(const BenchConfig& config, const std::string& trace_dir) {
  Corpus corpus = config.corpus_path.empty()
                      ? ingest_corpus(generate_synthetic_corpus(config.synthetic, config.seed),
                                      config.chunk_len)
                      : ingest_corpus(read_corpus_input(config.corpus_path), config.chunk_len);

  LmConfig lm_cfg = config.lm;
  lm_cfg.vocab_size =
      std::max<std::uint32_t>(lm_cfg.vocab_size, static_cast<std::uint32_t>(corpus.vocab.size()) + 1);
  lm_cfg.decode_latency_per_token = config.latency.decode_per_token;
  lm_cfg.context_cap = std::max<std::uint32_t>(
      lm_cfg.context_cap, static_cast<std::uint32_t>(config.workload.prompt_len_max) +
                              std::max(config.gen_cap, config.knn.gen_cap));
  SyntheticLm lm(lm_cfg, config.latency.mode);
  Embedder embedder(config.seed, config.embed_dim, lm_cfg.vocab_size);

  IndexParams iparams = config.index_params;
  iparams.seed = config.seed;
  std::unique_ptr<RetrievalIndex> index = build_index(corpus, config.retriever, iparams, embedder);
  if (config.latency.mode == LatencyMode::simulated) {
    index->set_virtual_latency(LatencyModel{config.latency.retrieve_b0, config.latency.retrieve_b1});
  }

  ServingContext ctx;
  ctx.index = index.get();
  ctx.lm = &lm;
  ctx.embedder = &embedder;
  ctx.query_window = config.query_window;
  ctx.latency_mode = config.latency.mode;
  ctx.scheduler = config.scheduler;
  ctx.cache_max_size = config.cache_max_size;

  std::vector<std::vector<TokenId>> prompts = generate_workload(corpus, config.workload);
  std::size_t n_requests = prompts.size();
  std::size_t workers = config.latency.mode == LatencyMode::wall_clock ? 1 : config.workers;

  auto base_request = [&](std::size_t i) {
    GenerationRequest req;
    req.prompt = prompts[i];
    req.gen_cap = config.gen_cap;
    req.gen_stride_k = config.gen_stride_k;
    return req;
  };

  BenchReport report;
  report.retriever = to_string(config.retriever);
  report.n_requests = n_requests;
  report.repetitions = config.repetitions;

  // Baseline.
  std::vector<GenerationTrace> baseline_traces(n_requests);
  Aggregate baseline_agg;
  parallel_for(n_requests, workers,
               [&](std::size_t i) { baseline_traces[i] = run_baseline(ctx, base_request(i)); });
  for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
    for (std::size_t i = 0; i < n_requests; ++i) {
      if (rep == 0) {
        baseline_agg.add(baseline_traces[i]);
        maybe_write_trace(config, trace_dir, "baseline", i, baseline_traces[i]);
      } else {
        GenerationTrace t = run_baseline(ctx, base_request(i));
        assert_equivalent_outputs("baseline(rep)", i, baseline_traces[i].output_tokens, t.output_tokens);
        baseline_agg.add(t);
      }
    }
  }
  report.baseline.name = "baseline";
  report.baseline.mean_latency = baseline_agg.mean();
  report.baseline.std_latency = baseline_agg.stddev();
  report.baseline.speedup = 1.0;
  report.baseline.gen_latency_mean =
      baseline_agg.gen_sum / static_cast<double>(baseline_agg.latencies.size());
  report.baseline.retrieval_latency_mean =
      baseline_agg.ret_sum / static_cast<double>(baseline_agg.latencies.size());
  report.baseline.kb_calls_total = baseline_agg.kb_calls;

  std::uint64_t baseline_docs = 0;
  for (const GenerationTrace& t : baseline_traces) baseline_docs += t.kb_calls;

  double a_step = config.latency.decode_per_token * static_cast<double>(config.gen_stride_k);
  LatencyModel b_cfg{config.latency.retrieve_b0, config.latency.retrieve_b1};

  for (const VariantSpec& variant : assemble_variants(config)) {
    Aggregate agg;
    for (std::size_t rep = 0; rep < config.repetitions; ++rep) {
      // Per-request slots keep the aggregation order fixed so reports stay
      // byte-identical regardless of worker count.
      std::vector<GenerationTrace> slots(n_requests);
      parallel_for(n_requests, workers, [&](std::size_t i) {
        GenerationRequest req = base_request(i);
        req.stride_policy = variant.stride;
        req.prefetch_size = variant.prefetch;
        req.async_verify = variant.async;
        GenerationTrace t = run_speculative(ctx, req);
        assert_equivalent_outputs(variant.name, i, baseline_traces[i].output_tokens,
                                  t.output_tokens);
        if (rep == 0) maybe_write_trace(config, trace_dir, variant.name, i, t);
        slots[i] = std::move(t);
      });
      for (const GenerationTrace& t : slots) agg.add(t);
    }
    VariantResult row;
    row.name = variant.name;
    row.mean_latency = agg.mean();
    row.std_latency = agg.stddev();
    row.speedup = row.mean_latency > 0 ? report.baseline.mean_latency / row.mean_latency : 0.0;
    row.equivalent = true;
    row.gen_latency_mean = agg.gen_sum / static_cast<double>(agg.latencies.size());
    row.retrieval_latency_mean = agg.ret_sum / static_cast<double>(agg.latencies.size());
    row.observed_gamma = agg.observed_gamma();
    row.modal_stride = agg.modal_stride();
    row.kb_calls_total = agg.kb_calls;
    if (config.latency.mode == LatencyMode::simulated) {
      row.predicted_speedup =
          predict_speedup(variant.async ? VerifyMode::async : VerifyMode::sync,
                          row.observed_gamma, row.modal_stride, a_step, b_cfg,
                          baseline_docs, n_requests);
    }
    report.variants.push_back(std::move(row));
  }

  // KNN-LM serving section.
  if (config.knn.enabled) {
    std::size_t stream_len = std::min(config.knn.stream_len, corpus.stream.size());
    if (stream_len < 2) throw std::invalid_argument("knn bench: corpus stream too short");
    std::span<const TokenId> stream{corpus.stream.data(), stream_len};
    KnnDatastore datastore = build_datastore(stream, embedder, config.query_window);

    IndexParams kparams = iparams;
    kparams.dim = embedder.dim();
    std::unique_ptr<RetrievalIndex> kindex;
    if (config.knn.retriever == IndexKind::approx_dense) {
      kindex = std::make_unique<HnswIndex>(datastore.keys, kparams);
    } else {
      kindex = std::make_unique<ExactDenseIndex>(datastore.keys, kparams);
    }
    if (config.latency.mode == LatencyMode::simulated) {
      kindex->set_virtual_latency(
          LatencyModel{config.latency.retrieve_b0, config.latency.retrieve_b1});
    }
    ServingContext kctx = ctx;
    kctx.index = kindex.get();

    WorkloadParams kwl = config.workload;
    kwl.seed = hash_mix(config.workload.seed, 0x6b6e6eULL);
    kwl.n_requests = config.knn.n_requests;
    kwl.locality = config.knn.locality;
    std::vector<std::vector<TokenId>> kprompts = generate_workload_from_stream(stream, kwl);

    auto knn_request = [&](std::size_t i) {
      GenerationRequest req;
      req.prompt = kprompts[i];
      req.gen_cap = config.knn.gen_cap;
      req.gen_stride_k = 1;
      return req;
    };

    for (std::size_t k : config.knn.k_values) {
      KnnConfig kc;
      kc.num_neighbors = k;
      kc.lambda = config.knn.lambda;
      kc.temperature = config.knn.temperature;
      kc.n_consecutive = config.knn.n_consecutive;

      std::vector<GenerationTrace> kbase(kprompts.size());
      parallel_for(kprompts.size(), workers, [&](std::size_t i) {
        kbase[i] = run_knnlm(kctx, knn_request(i), datastore, KnnMode::baseline, kc);
      });
      double base_mean = 0.0;
      for (const GenerationTrace& t : kbase) base_mean += t.total_latency;
      base_mean /= static_cast<double>(kbase.size());
      report.knn_rows.push_back({k, "baseline", base_mean, 1.0, true});

      std::vector<VariantSpec> kvariants;
      for (std::uint32_t s : config.knn.stride_sweep) {
        kvariants.push_back(
            {"fixed_s" + std::to_string(s), {StridePolicy::Kind::fixed, s}, 1, false});
      }
      if (config.knn.include_os3) {
        kvariants.push_back({"os3", {StridePolicy::Kind::os3, 1}, 1, false});
      }
      for (const VariantSpec& kv : kvariants) {
        std::vector<double> lats(kprompts.size());
        parallel_for(kprompts.size(), workers, [&](std::size_t i) {
          GenerationRequest req = knn_request(i);
          req.stride_policy = kv.stride;
          GenerationTrace t = run_knnlm(kctx, req, datastore, KnnMode::speculative, kc);
          assert_equivalent_outputs("knn_k" + std::to_string(k) + "/" + kv.name, i,
                            kbase[i].output_tokens, t.output_tokens);
          lats[i] = t.total_latency;
        });
        double mean = 0.0;
        for (double v : lats) mean += v;
        mean /= static_cast<double>(lats.size());
        report.knn_rows.push_back(
            {k, kv.name, mean, mean > 0 ? base_mean / mean : 0.0, true});
      }
    }
  }

  // Batched-retrieval latency table.
  if (config.fit_batch_sizes.size() >= 2) {
    std::vector<Query> pool;
    pool.reserve(n_requests);
    for (const auto& prompt : prompts) {
      pool.push_back(encode_query(embedder, prompt, config.query_window));
    }
    fit_latency_model(*index, pool, config.fit_batch_sizes, config.fit_trials,
                      &report.batch_latency);
  }

  report.valid = true;
  return report;
}

namespace {

nlohmann::ordered_json variant_to_json(const VariantResult& row) {
  nlohmann::ordered_json j;
  j["name"] = row.name;
  j["mean_latency"] = row.mean_latency;
  j["std_latency"] = row.std_latency;
  j["speedup"] = row.speedup;
  j["equivalent"] = row.equivalent;
  j["gen_latency"] = row.gen_latency_mean;
  j["retrieval_latency"] = row.retrieval_latency_mean;
  j["observed_gamma"] = row.observed_gamma;
  j["modal_stride"] = row.modal_stride;
  j["predicted_speedup"] = row.predicted_speedup;
  j["kb_calls"] = row.kb_calls_total;
  return j;
}

VariantResult variant_from_json(const nlohmann::json& j) {
  VariantResult row;
  row.name = j.at("name").get<std::string>();
  row.mean_latency = j.at("mean_latency").get<double>();
  row.std_latency = j.at("std_latency").get<double>();
  row.speedup = j.at("speedup").get<double>();
  row.equivalent = j.at("equivalent").get<bool>();
  row.gen_latency_mean = j.at("gen_latency").get<double>();
  row.retrieval_latency_mean = j.at("retrieval_latency").get<double>();
  row.observed_gamma = j.at("observed_gamma").get<double>();
  row.modal_stride = j.at("modal_stride").get<std::uint32_t>();
  row.predicted_speedup = j.at("predicted_speedup").get<double>();
  row.kb_calls_total = j.at("kb_calls").get<std::uint64_t>();
  return row;
}

}  // namespace

void write_report_json(const BenchReport& report, std::ostream& out) {
  nlohmann::ordered_json j;
  j["valid"] = report.valid;
  j["retriever"] = report.retriever;
  j["n_requests"] = report.n_requests;
  j["repetitions"] = report.repetitions;
  j["baseline"] = variant_to_json(report.baseline);
  j["variants"] = nlohmann::ordered_json::array();
  for (const VariantResult& row : report.variants) j["variants"].push_back(variant_to_json(row));
  j["knn"] = nlohmann::ordered_json::array();
  for (const KnnVariantResult& row : report.knn_rows) {
    nlohmann::ordered_json r;
    r["k"] = row.k;
    r["name"] = row.name;
    r["mean_latency"] = row.mean_latency;
    r["speedup"] = row.speedup;
    r["equivalent"] = row.equivalent;
    j["knn"].push_back(r);
  }
  j["batch_latency"] = nlohmann::ordered_json::array();
  for (const BatchLatencySample& s : report.batch_latency) {
    nlohmann::ordered_json r;
    r["batch_size"] = s.batch_size;
    r["total_latency"] = s.total_latency;
    r["per_query_latency"] = s.per_query_latency;
    j["batch_latency"].push_back(r);
  }
  out << j.dump(2) << "\n";
}

BenchReport report_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  BenchReport report;
  report.valid = j.at("valid").get<bool>();
  report.retriever = j.at("retriever").get<std::string>();
  report.n_requests = j.at("n_requests").get<std::size_t>();
  report.repetitions = j.at("repetitions").get<std::size_t>();
  report.baseline = variant_from_json(j.at("baseline"));
  for (const auto& row : j.at("variants")) report.variants.push_back(variant_from_json(row));
  for (const auto& row : j.at("knn")) {
    KnnVariantResult r;
    r.k = row.at("k").get<std::size_t>();
    r.name = row.at("name").get<std::string>();
    r.mean_latency = row.at("mean_latency").get<double>();
    r.speedup = row.at("speedup").get<double>();
    r.equivalent = row.at("equivalent").get<bool>();
    report.knn_rows.push_back(r);
  }
  for (const auto& row : j.at("batch_latency")) {
    BatchLatencySample s;
    s.batch_size = row.at("batch_size").get<std::size_t>();
    s.total_latency = row.at("total_latency").get<double>();
    s.per_query_latency = row.at("per_query_latency").get<double>();
    report.batch_latency.push_back(s);
  }
  return report;
}

namespace {

void csv_row(std::ostream& out, const VariantResult& row) {
  out << row.name << ',' << row.mean_latency << ',' << row.std_latency << ',' << row.speedup
      << ',' << (row.equivalent ? "true" : "false") << ',' << row.gen_latency_mean << ','
      << row.retrieval_latency_mean << ',' << row.observed_gamma << ',' << row.modal_stride
      << ',' << row.predicted_speedup << ',' << row.kb_calls_total << "\n";
}

}  // namespace

void write_report_csv(const BenchReport& report, std::ostream& out) {
  out << "variant,mean_latency,std_latency,speedup,equivalent,gen_latency,retrieval_latency,"
         "observed_gamma,modal_stride,predicted_speedup,kb_calls\n";
  if (!report.valid) return;
  csv_row(out, report.baseline);
  for (const VariantResult& row : report.variants) csv_row(out, row);
  for (const KnnVariantResult& row : report.knn_rows) {
    out << "knn_k" << row.k << '/' << row.name << ',' << row.mean_latency << ",0," << row.speedup
        << ',' << (row.equivalent ? "true" : "false") << ",0,0,0,0,0,0\n";
  }
}

void write_plot_gr_csv(const BenchReport& report, std::ostream& out) {
  out << "variant,g_latency,r_latency\n";
  if (!report.valid) return;
  out << report.baseline.name << ',' << report.baseline.gen_latency_mean << ','
      << report.baseline.retrieval_latency_mean << "\n";
  for (const VariantResult& row : report.variants) {
    out << row.name << ',' << row.gen_latency_mean << ',' << row.retrieval_latency_mean << "\n";
  }
}

void write_plot_batch_csv(const BenchReport& report, std::ostream& out) {
  out << "batch_size,latency_per_query\n";
  for (const BatchLatencySample& s : report.batch_latency) {
    out << s.batch_size << ',' << s.per_query_latency << "\n";
  }
}

void emit_report_files(const BenchReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "report.json");
    if (!out) throw std::runtime_error("cannot write report.json under " + dir);
    write_report_json(report, out);
  }
  {
    std::ofstream out(fs::path(dir) / "report.csv");
    write_report_csv(report, out);
  }
  {
    std::ofstream out(fs::path(dir) / "plot_gr.csv");
    write_plot_gr_csv(report, out);
  }
  {
    std::ofstream out(fs::path(dir) / "plot_batch.csv");
    write_plot_batch_csv(report, out);
  }
}

namespace {

StridePolicy parse_stride(const std::string& text) {
  if (text == "os3") return {StridePolicy::Kind::os3, 1};
  if (text.rfind("fixed:", 0) == 0) {
    return {StridePolicy::Kind::fixed,
            static_cast<std::uint32_t>(std::stoul(text.substr(6)))};
  }
  throw std::invalid_argument("bad stride policy (want 'os3' or 'fixed:<s>'): " + text);
}

}  // namespace

BenchConfig parse_bench_config(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  BenchConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("corpus")) {
    const auto& c = j["corpus"];
    if (c.contains("path")) cfg.corpus_path = c["path"].get<std::string>();
    if (c.contains("synthetic")) {
      const auto& s = c["synthetic"];
      cfg.synthetic.num_docs = s.value("num_docs", cfg.synthetic.num_docs);
      cfg.synthetic.doc_len = s.value("doc_len", cfg.synthetic.doc_len);
      cfg.synthetic.vocab = s.value("vocab", cfg.synthetic.vocab);
    }
  }
  cfg.chunk_len = j.value("chunk_len", cfg.chunk_len);
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.query_window = j.value("query_window", cfg.query_window);
  if (j.contains("retriever")) {
    const auto& r = j["retriever"];
    cfg.retriever = index_kind_from_string(r.value("kind", std::string("exact_dense")));
    cfg.index_params.graph_degree = r.value("m", cfg.index_params.graph_degree);
    cfg.index_params.build_beam = r.value("ef_construction", cfg.index_params.build_beam);
    cfg.index_params.search_beam = r.value("ef_search", cfg.index_params.search_beam);
    cfg.index_params.bm25_k1 = r.value("k1", cfg.index_params.bm25_k1);
    cfg.index_params.bm25_b = r.value("b", cfg.index_params.bm25_b);
  }
  if (j.contains("lm")) {
    const auto& l = j["lm"];
    cfg.lm.seed = l.value("seed", cfg.lm.seed);
    cfg.lm.vocab_size = l.value("vocab_size", cfg.lm.vocab_size);
    cfg.lm.suffix_window = l.value("suffix_window", cfg.lm.suffix_window);
  }
  cfg.workload.seed = cfg.seed;
  if (j.contains("workload")) {
    const auto& w = j["workload"];
    cfg.workload.seed = w.value("seed", cfg.workload.seed);
    cfg.workload.n_requests = w.value("n_requests", cfg.workload.n_requests);
    if (w.contains("prompt_len")) {
      cfg.workload.prompt_len_min = w["prompt_len"].at(0).get<std::size_t>();
      cfg.workload.prompt_len_max = w["prompt_len"].at(1).get<std::size_t>();
    }
    cfg.workload.locality = w.value("locality", cfg.workload.locality);
    cfg.workload.segment_len = w.value("segment_len", cfg.workload.segment_len);
  }
  cfg.gen_cap = j.value("gen_cap", cfg.gen_cap);
  cfg.gen_stride_k = j.value("gen_stride_k", cfg.gen_stride_k);
  if (j.contains("latency")) {
    const auto& l = j["latency"];
    std::string mode = l.value("mode", std::string("simulated"));
    if (mode == "simulated") {
      cfg.latency.mode = LatencyMode::simulated;
    } else if (mode == "wall_clock") {
      cfg.latency.mode = LatencyMode::wall_clock;
      // wall runs measure real compute; an artificial decode delay is opt-in
      cfg.latency.decode_per_token = 0.0;
      cfg.latency.retrieve_b0 = 0.0;
      cfg.latency.retrieve_b1 = 0.0;
    } else {
      throw std::invalid_argument("bad latency mode: " + mode);
    }
    cfg.latency.decode_per_token = l.value("a", cfg.latency.decode_per_token);
    cfg.latency.retrieve_b0 = l.value("b0", cfg.latency.retrieve_b0);
    cfg.latency.retrieve_b1 = l.value("b1", cfg.latency.retrieve_b1);
    if (cfg.latency.decode_per_token < 0 || cfg.latency.retrieve_b0 < 0 ||
        cfg.latency.retrieve_b1 < 0) {
      throw std::invalid_argument("simulated latencies must be >= 0");
    }
  }
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  if (j.contains("scheduler")) {
    const auto& s = j["scheduler"];
    cfg.scheduler.window = s.value("window", cfg.scheduler.window);
    cfg.scheduler.gamma_max = s.value("gamma_max", cfg.scheduler.gamma_max);
    cfg.scheduler.s_max = s.value("s_max", cfg.scheduler.s_max);
    cfg.scheduler.initial_stride = s.value("initial_stride", cfg.scheduler.initial_stride);
  }
  cfg.cache_max_size = j.value("cache_max_size", cfg.cache_max_size);
  if (j.contains("variants")) {
    for (const auto& v : j["variants"]) {
      VariantSpec spec;
      spec.name = v.at("name").get<std::string>();
      spec.stride = parse_stride(v.value("stride", std::string("fixed:3")));
      spec.prefetch = v.value("prefetch", spec.prefetch);
      spec.async = v.value("async", spec.async);
      cfg.variants.push_back(spec);
    }
  }
  cfg.ablation_matrix = j.value("ablation_matrix", cfg.ablation_matrix);
  cfg.ablation_fixed_stride = j.value("ablation_fixed_stride", cfg.ablation_fixed_stride);
  cfg.ablation_prefetch = j.value("ablation_prefetch", cfg.ablation_prefetch);
  if (j.contains("fixed_stride_sweep")) {
    cfg.fixed_stride_sweep = j["fixed_stride_sweep"].get<std::vector<std::uint32_t>>();
  }
  if (j.contains("fit_batch_sizes")) {
    cfg.fit_batch_sizes = j["fit_batch_sizes"].get<std::vector<std::size_t>>();
  }
  cfg.fit_trials = j.value("fit_trials", cfg.fit_trials);
  if (j.contains("knn")) {
    const auto& k = j["knn"];
    cfg.knn.enabled = k.value("enabled", true);
    cfg.knn.retriever = index_kind_from_string(k.value("retriever", std::string("exact_dense")));
    if (k.contains("k")) cfg.knn.k_values = k["k"].get<std::vector<std::size_t>>();
    cfg.knn.lambda = k.value("lambda", cfg.knn.lambda);
    cfg.knn.temperature = k.value("temperature", cfg.knn.temperature);
    cfg.knn.n_consecutive = k.value("n_consecutive", cfg.knn.n_consecutive);
    cfg.knn.stream_len = k.value("stream_len", cfg.knn.stream_len);
    cfg.knn.n_requests = k.value("n_requests", cfg.knn.n_requests);
    cfg.knn.gen_cap = k.value("gen_cap", cfg.knn.gen_cap);
    cfg.knn.locality = k.value("locality", cfg.knn.locality);
    if (k.contains("stride_sweep")) {
      cfg.knn.stride_sweep = k["stride_sweep"].get<std::vector<std::uint32_t>>();
    }
    cfg.knn.include_os3 = k.value("os3", cfg.knn.include_os3);
  }
  cfg.workers = j.value("workers", cfg.workers);
  cfg.emit_traces = j.value("emit_traces", cfg.emit_traces);
  return cfg;
}

BenchConfig parse_bench_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bench_config(ss.str());
}

}  // namespace specserve
