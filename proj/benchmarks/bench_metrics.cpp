#include <benchmark/benchmark.h>

#include "tailflow/metrics.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;

namespace {

Matrix gaussian_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
  }
  return m;
}

void BM_KendallTau(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = gaussian_matrix(n, 2, 4);
  const auto x = m.column(0);
  const auto y = m.column(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::kendall_tau(x, y));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_KendallTau)->Arg(1000)->Arg(5000)->Arg(20000);

void BM_W1(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = gaussian_matrix(n, 1, 5).column(0);
  const auto b = gaussian_matrix(n, 1, 6).column(0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::w1_1d(a, b));
  }
}
BENCHMARK(BM_W1)->Arg(10000)->Arg(100000);

void BM_SlicedWasserstein(benchmark::State& state) {
  const Matrix a = gaussian_matrix(10000, 10, 7);
  const Matrix b = gaussian_matrix(10000, 10, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::sliced_wasserstein(a, b, static_cast<std::size_t>(state.range(0)), 9));
  }
}
BENCHMARK(BM_SlicedWasserstein)->Arg(64)->Arg(512);

void BM_EnergyDistance(benchmark::State& state) {
  const Matrix a = gaussian_matrix(5000, 10, 10);
  const Matrix b = gaussian_matrix(5000, 10, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::energy_distance(a, b, 12));
  }
}
BENCHMARK(BM_EnergyDistance);

}  // namespace
