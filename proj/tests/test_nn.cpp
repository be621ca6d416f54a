#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tailflow/nn.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;
using namespace tailflow::nn;

namespace {

NetConfig small_config(std::size_t d = 3, std::size_t width = 8) {
  NetConfig cfg;
  cfg.data_dim = d;
  cfg.hidden_width = width;
  cfg.hidden_layers = 2;
  cfg.embed_dim = 8;
  return cfg;
}

Matrix random_matrix(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

std::vector<double> random_times(std::size_t n, Rng& rng) {
  std::vector<double> t(n);
  for (auto& v : t) v = rng.open01();
  return t;
}

}  // namespace

TEST_CASE("time embedding basics") {
  VelocityNet net(small_config());
  SUBCASE("t = 0 gives zero sines and unit cosines") {
    const auto e = net.time_embed(0.0);
    const std::size_t half = e.size() / 2;
    for (std::size_t k = 0; k < half; ++k) {
      CHECK(e[k] == 0.0);
      CHECK(e[half + k] == 1.0);
    }
  }
  SUBCASE("norm is the number of frequency pairs for any t") {
    for (double t : {0.0, 0.123, 0.5, 0.999, 1.0}) {
      const auto e = net.time_embed(t);
      double sq = 0.0;
      for (double v : e) sq += v * v;
      CHECK(sq == doctest::Approx(static_cast<double>(e.size()) / 2.0).epsilon(1e-12));
    }
  }
  SUBCASE("production embedding has norm-squared 128") {
    NetConfig cfg;
    cfg.data_dim = 1;
    VelocityNet prod(cfg);
    const auto e = prod.time_embed(0.37);
    double sq = 0.0;
    for (double v : e) sq += v * v;
    CHECK(e.size() == 256);
    CHECK(sq == doctest::Approx(128.0).epsilon(1e-12));
  }
  SUBCASE("injective on a 1e-3 grid") {
    NetConfig cfg;
    cfg.data_dim = 1;
    VelocityNet prod(cfg);
    std::vector<std::vector<double>> embeds;
    for (int i = 0; i <= 1000; ++i) {
      embeds.push_back(prod.time_embed(static_cast<double>(i) / 1000.0));
    }
    std::sort(embeds.begin(), embeds.end());
    CHECK(std::adjacent_find(embeds.begin(), embeds.end()) == embeds.end());
  }
  SUBCASE("domain is [0,1]") {
    CHECK_THROWS_AS(net.time_embed(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(net.time_embed(1.1), std::invalid_argument);
  }
}

TEST_CASE("forward pass basics") {
  Rng rng(1);
  VelocityNet net(small_config());
  net.init(rng);
  Matrix x = random_matrix(6, 3, rng);
  const auto t = random_times(6, rng);

  SUBCASE("zero-initialized final layer gives zero output") {
    const Matrix out = net.forward(x, t);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) CHECK(out(i, j) == 0.0);
    }
  }
  SUBCASE("row permutation equivariance and determinism") {
    // Make the output nontrivial first.
    Rng prng(2);
    for (auto& p : net.params()) p = 0.1 * prng.normal();
    const Matrix out = net.forward(x, t);
    const Matrix out2 = net.forward(x, t);
    CHECK(out == out2);  // bitwise determinism

    // Reverse the batch.
    Matrix xr(x.rows(), x.cols());
    std::vector<double> tr(t.size());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const std::size_t k = x.rows() - 1 - i;
      tr[i] = t[k];
      for (std::size_t j = 0; j < x.cols(); ++j) xr(i, j) = x(k, j);
    }
    const Matrix outr = net.forward(xr, tr);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        // Row-wise map up to GEMM micro-kernel accumulation order, which
        // depends on the column position inside the batch.
        CHECK(outr(i, j) ==
              doctest::Approx(out(x.rows() - 1 - i, j)).epsilon(1e-12));
      }
    }
  }
  SUBCASE("non-finite input is reported") {
    x(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Rng prng(2);
    for (auto& p : net.params()) p = 0.1 * prng.normal();
    CHECK_THROWS_AS(net.forward(x, t), std::invalid_argument);
  }
}

TEST_CASE("loss and gradient") {
  Rng rng(3);
  VelocityNet net(small_config());
  net.init(rng);
  for (auto& p : net.params()) p = 0.2 * rng.normal();
  Matrix x = random_matrix(5, 3, rng);
  const auto t = random_times(5, rng);

  SUBCASE("target equal to the output gives zero loss and gradient") {
    const Matrix target = net.forward(x, t);
    std::vector<double> grad(net.n_params());
    const double loss = net.loss_and_grad(x, t, target, grad);
    CHECK(loss == 0.0);
    for (double g : grad) CHECK(g == 0.0);
  }
  SUBCASE("duplicating the batch changes nothing") {
    const Matrix target = random_matrix(5, 3, rng);
    std::vector<double> grad(net.n_params());
    const double loss = net.loss_and_grad(x, t, target, grad);

    Matrix x2(10, 3);
    Matrix target2(10, 3);
    std::vector<double> t2(10);
    for (std::size_t i = 0; i < 10; ++i) {
      const std::size_t k = i % 5;
      t2[i] = t[k];
      for (std::size_t j = 0; j < 3; ++j) {
        x2(i, j) = x(k, j);
        target2(i, j) = target(k, j);
      }
    }
    std::vector<double> grad2(net.n_params());
    const double loss2 = net.loss_and_grad(x2, t2, target2, grad2);
    CHECK(loss2 == doctest::Approx(loss).epsilon(1e-14));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      CHECK(grad2[i] == doctest::Approx(grad[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradient matches central differences over 50 random draws") {
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    VelocityNet net(small_config());
    net.init(rng);
    for (auto& p : net.params()) p = 0.3 * rng.normal();
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix target = random_matrix(4, 3, rng);
    const auto t = random_times(4, rng);

    std::vector<double> grad(net.n_params());
    net.loss_and_grad(x, t, target, grad);

    const double h = 1e-6;
    auto params = net.params();
    for (std::size_t p = 0; p < params.size(); p += 7) {  // probe a spread of params
      const double saved = params[p];
      params[p] = saved + h;
      const double up = net.loss(x, t, target);
      params[p] = saved - h;
      const double dn = net.loss(x, t, target);
      params[p] = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double scale = std::max({std::abs(fd), std::abs(grad[p]), 1e-8});
      worst = std::max(worst, std::abs(fd - grad[p]) / scale);
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("jvp agrees with finite differences and is zero on zero directions") {
  Rng rng(5);
  VelocityNet net(small_config());
  net.init(rng);
  for (auto& p : net.params()) p = 0.3 * rng.normal();
  const Matrix x = random_matrix(4, 3, rng);
  const auto t = random_times(4, rng);
  const Matrix v = random_matrix(4, 3, rng);

  const Matrix jv = net.jvp(x, t, v);
  const double h = 1e-4;
  Matrix xp = x, xm = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      xp(i, j) += h * v(i, j);
      xm(i, j) -= h * v(i, j);
    }
  }
  const Matrix fp = net.forward(xp, t);
  const Matrix fm = net.forward(xm, t);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double fd = (fp(i, j) - fm(i, j)) / (2.0 * h);
      num += (jv(i, j) - fd) * (jv(i, j) - fd);
      den += fd * fd;
    }
  }
  CHECK(std::sqrt(num / std::max(den, 1e-300)) <= 1e-5);

  const Matrix zero(4, 3, 0.0);
  const Matrix jz = net.jvp(x, t, zero);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(jz(i, j) == 0.0);
  }
}

TEST_CASE("jvp and vjp satisfy the adjoint identity") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(7000 + trial);
    VelocityNet net(small_config());
    net.init(rng);
    for (auto& p : net.params()) p = 0.4 * rng.normal();
    const Matrix x = random_matrix(3, 3, rng);
    const auto t = random_times(3, rng);
    const Matrix v = random_matrix(3, 3, rng);
    const Matrix u = random_matrix(3, 3, rng);

    const Matrix jv = net.jvp(x, t, v);
    const Matrix jtu = net.vjp(x, t, u);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        lhs += u(i, j) * jv(i, j);
        rhs += jtu(i, j) * v(i, j);
      }
    }
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("adamw update rules") {
  SUBCASE("zero gradient and zero decay leave params unchanged") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(4, cfg);
    std::vector<double> params{1.0, -2.0, 3.0, 0.5};
    const auto before = params;
    std::vector<double> grad(4, 0.0);
    opt.step(params, grad);
    CHECK(params == before);
  }
  SUBCASE("gradients are clipped to the global norm before the update") {
    AdamWConfig cfg;
    cfg.clip_norm = 10.0;
    std::vector<double> big{60.0, 80.0};  // norm 100
    std::vector<double> small{6.0, 8.0};  // norm 10: the clipped version
    std::vector<double> pa{1.0, 1.0}, pb{1.0, 1.0};
    AdamW oa(2, cfg), ob(2, cfg);
    oa.step(pa, big);
    ob.step(pb, small);
    CHECK(pa[0] == pb[0]);
    CHECK(pa[1] == pb[1]);
    // The in-place clip is observable too.
    CHECK(big[0] == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(big[1] == doctest::Approx(8.0).epsilon(1e-12));
  }
  SUBCASE("two identical runs produce identical parameters") {
    AdamW oa(3), ob(3);
    std::vector<double> pa{0.1, 0.2, 0.3}, pb{0.1, 0.2, 0.3};
    for (int i = 0; i < 5; ++i) {
      std::vector<double> ga{1.0, -0.5, 0.25}, gb{1.0, -0.5, 0.25};
      oa.step(pa, ga);
      ob.step(pb, gb);
    }
    CHECK(pa == pb);
    CHECK(oa.step_count() == 5);
  }
  SUBCASE("weight decay is decoupled: zero grad still shrinks params") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    AdamW opt(1, cfg);
    std::vector<double> params{1.0};
    std::vector<double> grad{0.0};
    opt.step(params, grad);
    CHECK(params[0] == doctest::Approx(1.0 - cfg.lr * 0.1 * 1.0).epsilon(1e-12));
  }
}

TEST_CASE("training smoke: regressing an affine velocity converges") {
  Rng rng(31);
  NetConfig cfg = small_config(2, 32);
  VelocityNet net(cfg);
  net.init(rng);

  // Affine target field at fixed t.
  const std::size_t n = 256;
  Matrix x = random_matrix(n, 2, rng);
  Matrix target(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    target(i, 0) = 0.8 * x(i, 0) - 0.3 * x(i, 1) + 0.1;
    target(i, 1) = -0.2 * x(i, 0) + 0.5 * x(i, 1) - 0.4;
  }
  const std::vector<double> t(n, 0.5);

  AdamW opt(net.n_params());
  std::vector<double> grad(net.n_params());
  double loss = 0.0;
  for (int epoch = 0; epoch < 2000; ++epoch) {
    loss = net.loss_and_grad(x, t, target, grad);
    opt.step(net.params(), grad);
    if (loss < 1e-4) break;
  }
  CHECK(loss < 1e-4);
}
