#include <benchmark/benchmark.h>

#include "tailflow/nn.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;

namespace {

struct Setup {
  nn::VelocityNet net;
  Matrix x;
  std::vector<double> t;
  Matrix target;

  explicit Setup(std::size_t batch, std::size_t d = 10)
      : net([&] {
          nn::NetConfig cfg;
          cfg.data_dim = d;
          return nn::VelocityNet(cfg);
        }()),
        x(batch, d),
        t(batch),
        target(batch, d) {
    Rng rng(13);
    net.init(rng);
    for (auto& p : net.params()) p = 0.05 * rng.normal();
    for (std::size_t i = 0; i < batch; ++i) {
      t[i] = rng.open01();
      for (std::size_t j = 0; j < d; ++j) {
        x(i, j) = rng.normal();
        target(i, j) = rng.normal();
      }
    }
  }
};

void BM_Forward(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.net.forward(s.x, s.t));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1000)->Arg(5000);

void BM_LossAndGrad(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  std::vector<double> grad(s.net.n_params());
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.net.loss_and_grad(s.x, s.t, s.target, grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(1000)->Arg(5000);

void BM_Jvp(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.net.jvp(s.x, s.t, s.x));
  }
}
BENCHMARK(BM_Jvp)->Arg(1000);

}  // namespace
