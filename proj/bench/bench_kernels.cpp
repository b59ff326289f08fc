// Serial reference vs OpenMP kernels at the shapes training actually hits:
// batch x hidden layers for desk (64) and full-scale (256) networks.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "abpt/kernels.hpp"

namespace {

namespace k = abpt::kernels;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

using GemmFn = void (*)(k::GemmShape, std::span<const double>, std::span<const double>, std::span<double>);

template <GemmFn F>
void BM_gemm(benchmark::State& state) {
  const k::GemmShape s{static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                       static_cast<int>(state.range(1))};
  const auto a = random_vec(static_cast<std::size_t>(s.m) * s.k, 1);
  const auto b = random_vec(static_cast<std::size_t>(s.k) * s.n, 2);
  std::vector<double> c(static_cast<std::size_t>(s.m) * s.n);
  for (auto _ : state) {
    F(s, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * s.m * s.k * s.n);
}

template <void (*F)(std::span<const double>, std::span<double>)>
void BM_tanh(benchmark::State& state) {
  const auto x = random_vec(static_cast<std::size_t>(state.range(0)), 3);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    F(x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void gemm_args(benchmark::internal::Benchmark* b) {
  for (int batch : {16, 64, 512})
    for (int width : {64, 256}) b->Args({batch, width});
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(gemm_args);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/omp")->Apply(gemm_args);
BENCHMARK(BM_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(gemm_args);
BENCHMARK(BM_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/omp")->Apply(gemm_args);
BENCHMARK(BM_tanh<k::serial::tanh_forward>)->Name("tanh/serial")->Arg(1 << 12)->Arg(1 << 17);
BENCHMARK(BM_tanh<k::parallel::tanh_forward>)->Name("tanh/omp")->Arg(1 << 12)->Arg(1 << 17);

BENCHMARK_MAIN();
