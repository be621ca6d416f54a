#include <benchmark/benchmark.h>

#include <cmath>

#include "tailflow/evt.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;

namespace {

std::vector<double> pareto_sample(std::size_t n) {
  Rng rng(2);
  std::vector<double> x(n);
  for (auto& v : x) v = std::pow(rng.open01(), -0.5);
  return x;
}

void BM_Hill(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = pareto_sample(n);
  const std::size_t k = evt::default_gate_k(n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evt::hill(x, k));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Hill)->Arg(10000)->Arg(100000)->Arg(1000000);

void BM_StudentTQuantile(benchmark::State& state) {
  Rng rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(evt::student_t_quantile(rng.open01(), 2.5));
  }
}
BENCHMARK(BM_StudentTQuantile);

}  // namespace
