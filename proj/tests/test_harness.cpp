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

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "specserve/harness.hpp"

using namespace specserve;

namespace {

BenchConfig small_config() {
  BenchConfig cfg;
  cfg.seed = 9;
  cfg.synthetic = {6, 900, 400};
  cfg.chunk_len = 48;
  cfg.workload.n_requests = 4;
  cfg.workload.prompt_len_min = 24;
  cfg.workload.prompt_len_max = 48;
  cfg.workload.locality = 0.8;
  cfg.workload.seed = 9;
  cfg.gen_cap = 24;
  cfg.repetitions = 1;
  cfg.latency.mode = LatencyMode::simulated;
  cfg.latency.decode_per_token = 0.01;
  cfg.latency.retrieve_b0 = 0.3;
  cfg.latency.retrieve_b1 = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("workload generation is deterministic and respects lengths") {
  Corpus corpus = ingest_corpus(generate_synthetic_corpus({4, 600, 200}, 3), 64);
  WorkloadParams params;
  params.seed = 4;
  params.n_requests = 12;
  params.prompt_len_min = 10;
  params.prompt_len_max = 30;
  params.locality = 0.7;
  auto a = generate_workload(corpus, params);
  auto b = generate_workload(corpus, params);
  CHECK(a == b);  // byte-identical replay
  CHECK(a.size() == 12);
  for (const auto& prompt : a) {
    CHECK(prompt.size() >= 10);
    CHECK(prompt.size() <= 30);
  }
  params.seed = 5;
  CHECK(generate_workload(corpus, params) != a);
}

TEST_CASE("locality 1 keeps each prompt inside one contiguous passage") {
  Corpus corpus = ingest_corpus(generate_synthetic_corpus({4, 600, 200}, 7), 64);
  WorkloadParams params;
  params.seed = 11;
  params.n_requests = 8;
  params.prompt_len_min = 20;
  params.prompt_len_max = 40;
  params.locality = 1.0;
  // doubled stream handles anchor wrap-around
  std::vector<TokenId> doubled = corpus.stream;
  doubled.insert(doubled.end(), corpus.stream.begin(), corpus.stream.end());
  for (const auto& prompt : generate_workload(corpus, params)) {
    bool found = false;
    for (std::size_t start = 0; start + prompt.size() <= doubled.size() && !found; ++start) {
      if (std::equal(prompt.begin(), prompt.end(), doubled.begin() + std::ptrdiff_t(start))) {
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("latency fit recovers an injected linear model") {
  Corpus corpus = ingest_corpus(generate_synthetic_corpus({3, 500, 200}, 5), 64);
  Embedder embedder(5, 64, corpus.vocab.size() + 1);
  auto index = build_index(corpus, IndexKind::exact_dense, {}, embedder);
  index->set_virtual_latency(LatencyModel{1.0, 0.1});
  std::vector<Query> pool;
  for (int i = 0; i < 8; ++i) {
    pool.push_back(encode_query(
        embedder, std::span<const TokenId>(corpus.stream.data() + 10 * i, 24), 32));
  }
  std::vector<BatchLatencySample> samples;
  LatencyModel fit = fit_latency_model(*index, pool, {1, 2, 4, 8, 16}, 3, &samples);
  CHECK(fit.b0 == doctest::Approx(1.0).epsilon(0.05));
  CHECK(fit.b1 == doctest::Approx(0.1).epsilon(0.05));
  CHECK(samples.size() == 5);
  CHECK(samples.front().batch_size == 1);
  CHECK(samples.front().per_query_latency == doctest::Approx(1.1));
}

TEST_CASE("latency fit needs two distinct batch sizes") {
  Corpus corpus = ingest_corpus(generate_synthetic_corpus({2, 300, 150}, 6), 64);
  Embedder embedder(6, 64, corpus.vocab.size() + 1);
  auto index = build_index(corpus, IndexKind::exact_dense, {}, embedder);
  std::vector<Query> pool = {
      encode_query(embedder, std::span<const TokenId>(corpus.stream.data(), 24), 32)};
  CHECK_THROWS_AS(fit_latency_model(*index, pool, {4, 4, 4}, 3, nullptr), std::invalid_argument);
  CHECK_THROWS_AS(fit_linear_latency({{3, 1.0}}), std::invalid_argument);
}

TEST_CASE("per-query wall latency falls as the exact-dense batch grows") {
  Corpus corpus = ingest_corpus(generate_synthetic_corpus({20, 2000, 800}, 8), 64);
  Embedder embedder(8, 64, corpus.vocab.size() + 1);
  auto index = build_index(corpus, IndexKind::exact_dense, {}, embedder);
  std::vector<Query> pool;
  for (int i = 0; i < 16; ++i) {
    pool.push_back(encode_query(
        embedder, std::span<const TokenId>(corpus.stream.data() + 50 * i, 32), 32));
  }
  std::vector<BatchLatencySample> samples;
  fit_latency_model(*index, pool, {1, 8}, 9, &samples);
  REQUIRE(samples.size() == 2);
  CHECK(samples[1].per_query_latency < samples[0].per_query_latency);
}

TEST_CASE("equivalence gate throws with the first divergent token") {
  std::vector<TokenId> base = {1, 2, 3, 4};
  CHECK_NOTHROW(assert_equivalent_outputs("v", 0, base, base));
  std::vector<TokenId> diverged = {1, 2, 9, 4};
  try {
    assert_equivalent_outputs("variant_x", 3, base, diverged);
    FAIL("expected EquivalenceError");
  } catch (const EquivalenceError& e) {
    CHECK(e.variant == "variant_x");
    CHECK(e.request_index == 3);
    CHECK(e.position == 2);
    CHECK(e.expected == 3);
    CHECK(e.got == 9);
  }
  std::vector<TokenId> shorter = {1, 2, 3};
  CHECK_THROWS_AS(assert_equivalent_outputs("v", 0, base, shorter), EquivalenceError);
}

TEST_CASE("smallest benchmark matrix: baseline plus one fixed stride") {
  BenchConfig cfg = small_config();
  cfg.variants.push_back({"spec_s3", {StridePolicy::Kind::fixed, 3}, 1, false});
  BenchReport report = run_benchmark(cfg);
  CHECK(report.valid);
  REQUIRE(report.variants.size() == 1);
  CHECK(report.variants[0].equivalent);
  CHECK(report.baseline.mean_latency > 0);
  CHECK(report.variants[0].mean_latency > 0);
  // accounting identity in simulated mode
  CHECK(report.baseline.gen_latency_mean + report.baseline.retrieval_latency_mean ==
        doctest::Approx(report.baseline.mean_latency).epsilon(1e-9));
}

TEST_CASE("ablation matrix produces the eight named component combinations") {
  BenchConfig cfg = small_config();
  cfg.ablation_matrix = true;
  BenchReport report = run_benchmark(cfg);
  REQUIRE(report.variants.size() == 8);
  const char* expected[] = {"spec",    "spec+P",  "spec+S",  "spec+A",
                            "spec+PS", "spec+SA", "spec+PA", "spec+PSA"};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(report.variants[i].name == expected[i]);
    CHECK(report.variants[i].equivalent);
    CHECK(report.variants[i].speedup > 0);
  }
}

TEST_CASE("fixed seed and simulated latencies give byte-identical reports") {
  BenchConfig cfg = small_config();
  cfg.fixed_stride_sweep = {1, 3};
  cfg.workers = 2;  // concurrency must not perturb the virtual clocks
  std::stringstream a, b;
  write_report_json(run_benchmark(cfg), a);
  write_report_json(run_benchmark(cfg), b);
  CHECK(a.str() == b.str());
}

TEST_CASE("report round trips through json") {
  BenchConfig cfg = small_config();
  cfg.variants.push_back({"os3", {StridePolicy::Kind::os3, 1}, 4, false});
  cfg.fit_batch_sizes = {1, 2, 4};
  cfg.knn.enabled = true;
  cfg.knn.k_values = {4};
  cfg.knn.stream_len = 800;
  cfg.knn.n_requests = 2;
  cfg.knn.gen_cap = 12;
  cfg.knn.stride_sweep = {2};
  BenchReport report = run_benchmark(cfg);
  std::stringstream out;
  write_report_json(report, out);
  BenchReport back = report_from_json(out.str());
  std::stringstream again;
  write_report_json(back, again);
  CHECK(out.str() == again.str());
  CHECK(back.variants.size() == report.variants.size());
  CHECK(back.knn_rows.size() == report.knn_rows.size());
  CHECK(back.batch_latency.size() == report.batch_latency.size());
}

TEST_CASE("knn section emits one row per (k, variant) like the figure layout") {
  BenchConfig cfg = small_config();
  cfg.knn.enabled = true;
  cfg.knn.k_values = {8};
  cfg.knn.stream_len = 900;
  cfg.knn.n_requests = 2;
  cfg.knn.gen_cap = 12;
  cfg.knn.stride_sweep = {1, 2};
  cfg.knn.include_os3 = true;
  BenchReport report = run_benchmark(cfg);
  REQUIRE(report.knn_rows.size() == 4);  // baseline + s1 + s2 + os3
  CHECK(report.knn_rows[0].name == "baseline");
  CHECK(report.knn_rows[3].name == "os3");
  for (const auto& row : report.knn_rows) {
    CHECK(row.k == 8);
    CHECK(row.equivalent);
  }
}

TEST_CASE("empty variant list yields a header-only csv body") {
  BenchConfig cfg = small_config();
  BenchReport report = run_benchmark(cfg);
  report.variants.clear();
  report.knn_rows.clear();
  std::stringstream out;
  write_plot_gr_csv(report, out);
  std::string text = out.str();
  // header plus the baseline row only
  CHECK(text.rfind("variant,g_latency,r_latency\n", 0) == 0);

  BenchReport empty;
  std::stringstream csv;
  write_report_csv(empty, csv);
  CHECK(csv.str() ==
        "variant,mean_latency,std_latency,speedup,equivalent,gen_latency,retrieval_latency,"
        "observed_gamma,modal_stride,predicted_speedup,kb_calls\n");
}

TEST_CASE("config parsing applies defaults and validates") {
  BenchConfig cfg = parse_bench_config(R"({
    "seed": 17,
    "retriever": {"kind": "sparse", "k1": 1.5},
    "workload": {"n_requests": 3, "prompt_len": [8, 16], "locality": 0.5},
    "latency": {"mode": "simulated", "a": 0.02, "b0": 0.4},
    "variants": [{"name": "v", "stride": "fixed:5", "prefetch": 7, "async": true}]
  })");
  CHECK(cfg.seed == 17);
  CHECK(cfg.retriever == IndexKind::sparse);
  CHECK(cfg.index_params.bm25_k1 == doctest::Approx(1.5));
  CHECK(cfg.workload.n_requests == 3);
  CHECK(cfg.workload.seed == 17);  // inherits the global seed
  CHECK(cfg.latency.decode_per_token == doctest::Approx(0.02));
  REQUIRE(cfg.variants.size() == 1);
  CHECK(cfg.variants[0].stride.fixed_stride == 5);
  CHECK(cfg.variants[0].prefetch == 7);
  CHECK(cfg.variants[0].async);
  CHECK_THROWS(parse_bench_config(R"({"latency": {"mode": "warp"}})"));
  CHECK_THROWS(parse_bench_config(R"({"latency": {"a": -1.0}})"));
  CHECK_THROWS(parse_bench_config(R"({"variants": [{"name": "x", "stride": "sometimes"}]})"));
}

TEST_CASE("analytic speed-up prediction tracks the measured simulated speed-up") {
  BenchConfig cfg = small_config();
  cfg.workload.n_requests = 6;
  cfg.workload.locality = 0.9;
  cfg.gen_cap = 64;
  cfg.latency.retrieve_b0 = 0.5;
  cfg.variants.push_back({"os3", {StridePolicy::Kind::os3, 1}, 20, false});
  BenchReport report = run_benchmark(cfg);
  const VariantResult& row = report.variants[0];
  CHECK(row.speedup > 1.0);
  CHECK(row.predicted_speedup > 1.0);
  CHECK(std::abs(row.speedup - row.predicted_speedup) / row.predicted_speedup < 0.15);
}
