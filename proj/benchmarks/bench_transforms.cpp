#include <benchmark/benchmark.h>

#include "tailflow/rng.hpp"
#include "tailflow/transforms.hpp"

using namespace tailflow;

namespace {

Matrix heavy_matrix(std::size_t n, std::size_t d) {
  Rng rng(1);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      m(i, j) = rng.rademacher() * std::pow(rng.open01(), -0.5);
    }
  }
  return m;
}

void BM_ApplyForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix m = heavy_matrix(n, 20);
  const auto spec = transforms::TransformSpec::uniform(transforms::Family::SoftLog, 20);
  for (auto _ : state) {
    benchmark::DoNotOptimize(transforms::apply_forward(spec, m));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 20));
}
BENCHMARK(BM_ApplyForward)->Arg(1000)->Arg(10000);

void BM_ApplyInverse(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto spec = transforms::TransformSpec::uniform(transforms::Family::SoftLog, 20);
  const Matrix m = transforms::apply_forward(spec, heavy_matrix(n, 20));
  for (auto _ : state) {
    benchmark::DoNotOptimize(transforms::apply_inverse(spec, m));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * 20));
}
BENCHMARK(BM_ApplyInverse)->Arg(1000)->Arg(10000);

}  // namespace
