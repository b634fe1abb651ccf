// Serial vs OpenMP timings for the hot kernels, plus one FedSS round end to end.
#include <benchmark/benchmark.h>

#include <random>

#include "fedss/experiment.hpp"
#include "fedss/kernels.hpp"

using namespace fedss;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  DenseMatrix m(r, c);
  for (double& v : m.span()) v = g(rng);
  return m;
}

void BM_MatmulSerial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::matmul_serial(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_MatmulOmp(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const DenseMatrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::matmul_omp(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Retrieval similarity: N embeddings of width 64.
void BM_GramSerial(benchmark::State& st) {
  const DenseMatrix rows = random_matrix(static_cast<std::size_t>(st.range(0)), 64, 3);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gram_serial(rows));
}

void BM_GramOmp(benchmark::State& st) {
  const DenseMatrix rows = random_matrix(static_cast<std::size_t>(st.range(0)), 64, 3);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gram_omp(rows));
}

void BM_AxpySerial(benchmark::State& st) {
  const DenseMatrix in = random_matrix(1, static_cast<std::size_t>(st.range(0)), 4);
  DenseMatrix out = random_matrix(1, in.cols(), 5);
  for (auto _ : st) {
    kernels::axpy_serial(1e-3, in.span(), out.span());
    benchmark::ClobberMemory();
  }
}

void BM_AxpyOmp(benchmark::State& st) {
  const DenseMatrix in = random_matrix(1, static_cast<std::size_t>(st.range(0)), 4);
  DenseMatrix out = random_matrix(1, in.cols(), 5);
  for (auto _ : st) {
    kernels::axpy_omp(1e-3, in.span(), out.span());
    benchmark::ClobberMemory();
  }
}

// One round of K = 8 clients on the default synthetic setup; range(0) = client threads.
void BM_FedssRound(benchmark::State& st) {
  ExperimentConfig cfg = parse_config("{}");
  static const Environment env = prepare_environment(cfg);
  RoundConfig rc = cfg.round;
  rc.target_s_size = 20;
  rc.client_threads = static_cast<int>(st.range(0));
  ServerState state = ServerState::initial(initial_model(cfg, env.num_classes(), 0));
  for (auto _ : st) benchmark::DoNotOptimize(run_round(state, env.clients, rc));
}

}  // namespace

BENCHMARK(BM_MatmulSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_MatmulOmp)->Arg(64)->Arg(256);
BENCHMARK(BM_GramSerial)->Arg(1000)->Arg(4000);
BENCHMARK(BM_GramOmp)->Arg(1000)->Arg(4000);
BENCHMARK(BM_AxpySerial)->Arg(1 << 16);
BENCHMARK(BM_AxpyOmp)->Arg(1 << 16);
BENCHMARK(BM_FedssRound)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
