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
#include <string>
#include <vector>

#include "specserve/knnlm.hpp"
#include "specserve/pipeline.hpp"

namespace specserve {

struct SyntheticCorpusParams {
  std::size_t num_docs = 40;
  std::size_t doc_len = 4000;   // tokens per document
  std::size_t vocab = 2000;     // distinct synthetic terms
};

std::vector<std::string> generate_synthetic_corpus(const SyntheticCorpusParams& params,
                                                   std::uint64_t seed);

struct WorkloadParams {
  std::uint64_t seed = 1;
  std::size_t n_requests = 10;
  std::size_t prompt_len_min = 32;
  std::size_t prompt_len_max = 128;
  double locality = 0.9;        // 1 - drift rate between prompt segments
  std::size_t segment_len = 16;
};

// Prompts are stitched from corpus-stream segments; after each segment the
// cursor drifts to a uniform position with probability 1 - locality. At
// locality 1 a prompt is one contiguous passage, at 0 every segment is drawn
// uniformly. Pure function of (stream, params).
std::vector<std::vector<TokenId>> generate_workload(const Corpus& corpus,
                                                    const WorkloadParams& params);
std::vector<std::vector<TokenId>> generate_workload_from_stream(std::span<const TokenId> stream,
                                                                const WorkloadParams& params);

struct BatchLatencySample {
  std::size_t batch_size = 0;
  double total_latency = 0.0;      // median over trials
  double per_query_latency = 0.0;  // total / batch_size
};

LatencyModel fit_linear_latency(const std::vector<std::pair<std::size_t, double>>& points);

// Measures retrieve_batch time per batch size (median of `trials`,
// interleaved across sizes) and least-squares fits total time against batch
// size. Requires at least two distinct sizes.
LatencyModel fit_latency_model(const RetrievalIndex& index, std::span<const Query> query_pool,
                               const std::vector<std::size_t>& batch_sizes, std::size_t trials,
                               std::vector<BatchLatencySample>* samples_out = nullptr);

struct LatencySpec {
  LatencyMode mode = LatencyMode::simulated;
  double decode_per_token = 0.01;  // a, per generated token
  double retrieve_b0 = 0.5;        // b(s) = b0 + b1 * s
  double retrieve_b1 = 0.0;
};

struct VariantSpec {
  std::string name;
  StridePolicy stride{};
  std::size_t prefetch = 1;
  bool async = false;
};

struct KnnBenchSection {
  bool enabled = false;
  IndexKind retriever = IndexKind::exact_dense;  // exact_dense or approx_dense
  std::vector<std::size_t> k_values = {1, 8, 64};
  double lambda = 0.25;
  double temperature = 1.0;
  std::size_t n_consecutive = 10;
  std::size_t stream_len = 20000;  // datastore = this prefix of the corpus stream
  std::size_t n_requests = 8;
  std::uint32_t gen_cap = 64;
  double locality = 1.0;
  std::vector<std::uint32_t> stride_sweep = {1, 2, 3, 4, 8};
  bool include_os3 = true;
};

struct BenchConfig {
  std::uint64_t seed = 1;
  std::string corpus_path;  // empty => synthetic corpus
  SyntheticCorpusParams synthetic{};
  std::size_t chunk_len = kDefaultChunkLen;
  std::size_t embed_dim = kDefaultEmbedDim;
  std::size_t query_window = kDefaultQueryWindow;
  IndexKind retriever = IndexKind::exact_dense;
  IndexParams index_params{};
  LmConfig lm{};
  WorkloadParams workload{};
  std::uint32_t gen_cap = kDefaultGenCap;
  std::uint32_t gen_stride_k = 4;
  LatencySpec latency{};
  std::size_t repetitions = 5;
  SchedulerConfig scheduler{};
  std::size_t cache_max_size = kDefaultCacheSize;
  std::vector<VariantSpec> variants;
  bool ablation_matrix = false;  // adds {spec, +P, +S, +A, +PS, +SA, +PA, +PSA}
  std::uint32_t ablation_fixed_stride = 3;
  std::size_t ablation_prefetch = 20;
  std::vector<std::uint32_t> fixed_stride_sweep;
  std::vector<std::size_t> fit_batch_sizes;
  std::size_t fit_trials = 9;
  KnnBenchSection knn{};
  std::size_t workers = 1;
  bool emit_traces = false;
};

BenchConfig parse_bench_config(const std::string& json_text);
BenchConfig parse_bench_config_file(const std::string& path);

struct VariantResult {
  std::string name;
  double mean_latency = 0.0;
  double std_latency = 0.0;
  double speedup = 0.0;  // baseline mean / variant mean
  bool equivalent = true;
  double gen_latency_mean = 0.0;
  double retrieval_latency_mean = 0.0;
  double observed_gamma = 0.0;   // uncapped run-level MLE
  std::uint32_t modal_stride = 1;
  double predicted_speedup = 0.0;
  std::uint64_t kb_calls_total = 0;
};

struct KnnVariantResult {
  std::size_t k = 0;
  std::string name;
  double mean_latency = 0.0;
  double speedup = 0.0;
  bool equivalent = true;
};

struct BenchReport {
  bool valid = false;
  std::string retriever;
  std::size_t n_requests = 0;
  std::size_t repetitions = 1;
  VariantResult baseline;
  std::vector<VariantResult> variants;
  std::vector<KnnVariantResult> knn_rows;
  std::vector<BatchLatencySample> batch_latency;
};

// Raised when a speculative run's output diverges from the baseline; carries
// the first divergent position and both token ids. A benchmark run aborts on
// it rather than reporting a speed-up for a broken variant.
class EquivalenceError : public std::runtime_error {
 public:
  EquivalenceError(const std::string& variant, std::size_t request_index, std::size_t position,
                   std::int64_t expected, std::int64_t got);
  std::string variant;
  std::size_t request_index = 0;
  std::size_t position = 0;
  std::int64_t expected = -1;
  std::int64_t got = -1;
};

// Throws EquivalenceError at the first divergent token. The hard gate every
// (request, variant) pair passes through before any latency is reported.
void assert_equivalent_outputs(const std::string& variant, std::size_t request_index,
                               const std::vector<TokenId>& baseline,
                               const std::vector<TokenId>& got);

// Runs baseline plus every variant on every request, enforcing the
// equivalence gate on each (request, variant) pair. With trace_dir non-empty
// and emit_traces set, per-request JSONL traces are written under it.
BenchReport run_benchmark(const BenchConfig& config, const std::string& trace_dir = "");

// Analytic speed-up predicted by the stride-scheduler latency model for the
// observed speculation accuracy and dominant stride. baseline_docs is the
// total number of baseline retrieval rounds over all requests.
double predict_speedup(VerifyMode mode, double gamma_obs, std::uint32_t stride, double a_step,
                       const LatencyModel& b, std::uint64_t baseline_docs,
                       std::size_t n_requests);

void write_report_json(const BenchReport& report, std::ostream& out);
BenchReport report_from_json(const std::string& json_text);
void write_report_csv(const BenchReport& report, std::ostream& out);
void write_plot_gr_csv(const BenchReport& report, std::ostream& out);
void write_plot_batch_csv(const BenchReport& report, std::ostream& out);

// Writes report.json, report.csv, plot_gr.csv and plot_batch.csv into dir.
void emit_report_files(const BenchReport& report, const std::string& dir);

}  // namespace specserve
