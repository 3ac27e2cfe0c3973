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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "specserve/harness.hpp"

namespace {

using namespace specserve;

std::vector<Query> make_probe_queries(const RetrievalIndex& index, std::size_t count,
                                      std::uint64_t seed) {
  std::vector<Query> out;
  out.reserve(count);
  SplitMix rng(hash_mix(seed, 0x70726f62u));
  for (std::size_t i = 0; i < count; ++i) {
    Query q;
    if (index.kind() == IndexKind::sparse) {
      CachedKey key = index.cached_key(static_cast<std::uint32_t>(rng.next_below(index.size())));
      std::size_t take = std::min<std::size_t>(key.terms.size(), 16);
      q.terms.assign(key.terms.begin(), key.terms.begin() + static_cast<std::ptrdiff_t>(take));
    } else {
      std::size_t dim = index.params().dim;
      std::vector<double> v(dim);
      double norm_sq = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        v[d] = rng.next_gaussian();
        norm_sq += v[d] * v[d];
      }
      double inv = 1.0 / std::sqrt(norm_sq);
      q.embedding.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) q.embedding[d] = static_cast<float>(v[d] * inv);
    }
    out.push_back(std::move(q));
  }
  return out;
}

int cmd_index_build(const std::string& corpus_path, const std::string& kind_name,
                    const std::string& out_path, std::size_t chunk_len, std::size_t dim,
                    std::uint64_t seed, const IndexParams& params_in,
                    const std::string& vocab_out) {
  Corpus corpus = ingest_corpus(read_corpus_input(corpus_path), chunk_len);
  Embedder embedder(seed, dim, corpus.vocab.size() + 1);
  IndexParams params = params_in;
  params.seed = seed;
  auto index = build_index(corpus, index_kind_from_string(kind_name), params, embedder);
  save_index(*index, out_path);
  std::string vocab_path = vocab_out.empty() ? out_path + ".vocab.json" : vocab_out;
  std::ofstream vout(vocab_path);
  vout << corpus.vocab.to_json() << "\n";
  std::cout << "built " << kind_name << " index over " << index->size() << " chunks -> "
            << out_path << "\n";
  std::cout << "vocab -> " << vocab_path << "\n";
  return 0;
}

int cmd_bench_run(const std::string& config_path, std::string out_dir) {
  if (const char* env = std::getenv("SPECSERVE_OUT")) out_dir = env;
  BenchConfig config = parse_bench_config_file(config_path);
  BenchReport report = run_benchmark(config, out_dir);
  write_report_csv(report, std::cout);
  if (!out_dir.empty()) {
    emit_report_files(report, out_dir);
    std::cout << "report written under " << out_dir << "\n";
  }
  return 0;
}

int cmd_fit_latency(const std::string& index_path, const std::vector<std::size_t>& sizes,
                    std::size_t trials, std::size_t n_queries, std::uint64_t seed,
                    const std::string& out_csv) {
  auto index = load_index(index_path);
  std::vector<Query> pool = make_probe_queries(*index, n_queries, seed);
  std::vector<BatchLatencySample> samples;
  LatencyModel model = fit_latency_model(*index, pool, sizes, trials, &samples);
  std::cout << "b(s) = " << model.b0 << " + " << model.b1 << " * s\n";
  std::cout << "batch_size,total_latency,latency_per_query\n";
  for (const BatchLatencySample& s : samples) {
    std::cout << s.batch_size << ',' << s.total_latency << ',' << s.per_query_latency << "\n";
  }
  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    out << "batch_size,total_latency,latency_per_query\n";
    for (const BatchLatencySample& s : samples) {
      out << s.batch_size << ',' << s.total_latency << ',' << s.per_query_latency << "\n";
    }
  }
  return 0;
}

int cmd_workload(const std::string& corpus_path, std::uint64_t seed, std::size_t n,
                 double locality, std::size_t len_min, std::size_t len_max, std::size_t chunk_len,
                 const std::string& out_path) {
  Corpus corpus = ingest_corpus(read_corpus_input(corpus_path), chunk_len);
  WorkloadParams params;
  params.seed = seed;
  params.n_requests = n;
  params.locality = locality;
  params.prompt_len_min = len_min;
  params.prompt_len_max = len_max;
  auto prompts = generate_workload(corpus, params);
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["locality"] = locality;
  j["requests"] = nlohmann::ordered_json::array();
  for (const auto& prompt : prompts) {
    nlohmann::ordered_json r;
    r["prompt"] = prompt;
    j["requests"].push_back(r);
  }
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    out << j.dump(2) << "\n";
    std::cout << "workload with " << prompts.size() << " requests -> " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speculative retrieval serving benchmark toolkit"};
  app.require_subcommand(1);

  // index build
  auto* index_cmd = app.add_subcommand("index", "index management");
  index_cmd->require_subcommand(1);
  auto* build = index_cmd->add_subcommand("build", "build a retrieval index from a corpus");
  std::string corpus_path, kind_name = "exact_dense", out_path, vocab_out;
  std::size_t chunk_len = kDefaultChunkLen, dim = kDefaultEmbedDim;
  std::uint64_t seed = 1;
  IndexParams params;
  build->add_option("--corpus", corpus_path, "text file (one doc per line) or directory of .txt")
      ->required();
  build->add_option("--kind", kind_name, "exact_dense | approx_dense | sparse");
  build->add_option("--out", out_path, "output index file")->required();
  build->add_option("--chunk-len", chunk_len, "chunk length in tokens");
  build->add_option("--dim", dim, "embedding dimension");
  build->add_option("--seed", seed, "global seed");
  build->add_option("--vocab-out", vocab_out, "vocab json path (default <out>.vocab.json)");
  build->add_option("--m", params.graph_degree, "graph degree (approx_dense)");
  build->add_option("--ef-construction", params.build_beam, "build beam (approx_dense)");
  build->add_option("--ef-search", params.search_beam, "search beam (approx_dense)");
  build->add_option("--k1", params.bm25_k1, "BM25 k1 (sparse)");
  build->add_option("--b", params.bm25_b, "BM25 b (sparse)");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "benchmark harness");
  bench_cmd->require_subcommand(1);

  auto* run = bench_cmd->add_subcommand("run", "run the benchmark matrix from a config file");
  std::string config_path, out_dir;
  run->add_option("--config", config_path, "benchmark config json")->required();
  run->add_option("--out", out_dir, "output directory (SPECSERVE_OUT overrides)");

  auto* fit = bench_cmd->add_subcommand("fit-latency", "fit the batched-retrieval latency model");
  std::string index_path, fit_csv;
  std::vector<std::size_t> sizes{1, 2, 4, 8, 16};
  std::size_t trials = 9, n_queries = 64;
  std::uint64_t fit_seed = 1;
  fit->add_option("--index", index_path, "index file")->required();
  fit->add_option("--sizes", sizes, "batch sizes to measure")->delimiter(',');
  fit->add_option("--trials", trials, "trials per size (median taken)");
  fit->add_option("--queries", n_queries, "probe query pool size");
  fit->add_option("--seed", fit_seed, "probe query seed");
  fit->add_option("--out", fit_csv, "write per-size table to csv");

  auto* wl = bench_cmd->add_subcommand("workload", "generate a seeded workload");
  std::string wl_corpus, wl_out;
  std::uint64_t wl_seed = 1;
  std::size_t wl_n = 10, wl_min = 32, wl_max = 128, wl_chunk = kDefaultChunkLen;
  double wl_locality = 0.9;
  wl->add_option("--corpus", wl_corpus, "corpus input")->required();
  wl->add_option("--seed", wl_seed, "workload seed");
  wl->add_option("--n", wl_n, "number of requests");
  wl->add_option("--locality", wl_locality, "query locality in [0,1]");
  wl->add_option("--prompt-min", wl_min, "min prompt length");
  wl->add_option("--prompt-max", wl_max, "max prompt length");
  wl->add_option("--chunk-len", wl_chunk, "chunk length in tokens");
  wl->add_option("--out", wl_out, "output json (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      return cmd_index_build(corpus_path, kind_name, out_path, chunk_len, dim, seed, params,
                             vocab_out);
    }
    if (*run) return cmd_bench_run(config_path, out_dir);
    if (*fit) return cmd_fit_latency(index_path, sizes, trials, n_queries, fit_seed, fit_csv);
    if (*wl) {
      return cmd_workload(wl_corpus, wl_seed, wl_n, wl_locality, wl_min, wl_max, wl_chunk, wl_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
