#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tailflow/datagen.hpp"
#include "tailflow/flow.hpp"
#include "tailflow/metrics.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;
using namespace tailflow::flow;

namespace {

Matrix gaussian_matrix(std::size_t n, std::size_t d, std::uint64_t seed,
                       double sigma = 1.0) {
  Rng rng(seed);
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) = sigma * rng.normal();
  }
  return m;
}

datagen::SampleMatrix as_sample(Matrix m) {
  datagen::SampleMatrix s;
  s.labels.assign(m.cols(), datagen::MarginLabel::Other);
  s.data = std::move(m);
  return s;
}

// A model wrapper around an untrained (zero-output) network.
TrainedModel zero_model(std::size_t d, transforms::TransformSpec spec,
                        ScheduleKind kind = ScheduleKind::Linear) {
  nn::NetConfig cfg;
  cfg.data_dim = d;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 1;
  cfg.embed_dim = 8;
  nn::VelocityNet net(cfg);
  Rng rng(99);
  net.init(rng);  // output layer zero -> v == 0
  return TrainedModel{std::move(net), std::move(spec), Schedule{kind},
                      Standardizer{}, TrainingLog{}, 0};
}

}  // namespace

TEST_CASE("schedule boundary conditions, monotonicity, and VP identity") {
  for (auto kind : {ScheduleKind::Linear, ScheduleKind::VPTrig, ScheduleKind::VPPoly,
                    ScheduleKind::Quadratic}) {
    const Schedule s{kind};
    CHECK(std::abs(s.alpha(0.0) - 1.0) <= 1e-12);
    CHECK(std::abs(s.beta(0.0)) <= 1e-12);
    CHECK(std::abs(s.alpha(1.0)) <= 1e-12);
    CHECK(std::abs(s.beta(1.0) - 1.0) <= 1e-12);
    double prev_a = s.alpha(0.0), prev_b = s.beta(0.0);
    for (int i = 1; i <= 1000; ++i) {
      const double t = static_cast<double>(i) / 1000.0;
      CHECK(s.alpha(t) <= prev_a + 1e-15);
      CHECK(s.beta(t) >= prev_b - 1e-15);
      if (s.variance_preserving()) {
        CHECK(std::abs(s.alpha(t) * s.alpha(t) + s.beta(t) * s.beta(t) - 1.0) <= 1e-12);
      }
      prev_a = s.alpha(t);
      prev_b = s.beta(t);
    }
  }
}

TEST_CASE("schedule derivatives match finite differences") {
  const double h = 1e-7;
  for (auto kind : {ScheduleKind::Linear, ScheduleKind::VPTrig, ScheduleKind::VPPoly,
                    ScheduleKind::Quadratic}) {
    const Schedule s{kind};
    for (double t = 0.05; t < 0.96; t += 0.05) {
      const double fda = (s.alpha(t + h) - s.alpha(t - h)) / (2.0 * h);
      const double fdb = (s.beta(t + h) - s.beta(t - h)) / (2.0 * h);
      CHECK(std::abs(fda - s.dalpha(t)) <= 1e-6 * (1.0 + std::abs(s.dalpha(t))));
      CHECK(std::abs(fdb - s.dbeta(t)) <= 1e-6 * (1.0 + std::abs(s.dbeta(t))));
    }
  }
  // Quadratic pinned forms from the schedule table.
  const Schedule q{ScheduleKind::Quadratic};
  for (double t : {0.1, 0.4, 0.9}) {
    CHECK(q.beta(t) == doctest::Approx(1.0 - (1.0 - t) * (1.0 - t)).epsilon(1e-14));
    CHECK(q.dalpha(t) == doctest::Approx(-2.0 * (1.0 - t)).epsilon(1e-14));
  }
}

TEST_CASE("interpolate boundary and pinned linear case") {
  const Schedule lin{ScheduleKind::Linear};
  Matrix x0(2, 2), x1(2, 2);
  x0(0, 0) = 1.0; x0(0, 1) = 2.0; x0(1, 0) = -3.0; x0(1, 1) = 0.5;
  x1(0, 0) = -1.0; x1(0, 1) = 4.0; x1(1, 0) = 2.0; x1(1, 1) = 2.5;
  Matrix xt, u;

  interpolate(lin, x0, x1, std::vector<double>{0.0, 0.0}, xt, u);
  CHECK(xt == x0);
  interpolate(lin, x0, x1, std::vector<double>{1.0, 1.0}, xt, u);
  CHECK(xt == x1);

  interpolate(lin, x0, x1, std::vector<double>{0.25, 0.25}, xt, u);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(xt(i, j) == doctest::Approx(0.75 * x0(i, j) + 0.25 * x1(i, j)).epsilon(1e-15));
      CHECK(u(i, j) == doctest::Approx(x1(i, j) - x0(i, j)).epsilon(1e-15));
    }
  }
}

TEST_CASE("train on point-mass data matches the closed-form conditional velocity") {
  // For p0 a point mass at c (identity transform, linear schedule) the true
  // velocity is v(x, t) = (x - c) / t: the noise is recoverable from x_t.
  const double c0 = 1.7, c1 = -0.6;
  const std::size_t n = 512;
  Matrix data(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    data(i, 0) = c0;
    data(i, 1) = c1;
  }
  datagen::SampleMatrix train_data = as_sample(data);
  datagen::SampleMatrix val_data = as_sample(data.slice_rows(0, 256));

  TrainConfig cfg;
  cfg.mode = TransformMode::Identity;
  cfg.schedule = ScheduleKind::Linear;
  cfg.max_epochs = 1500;
  cfg.patience = 200;
  cfg.hidden_width = 64;
  cfg.hidden_layers = 2;
  cfg.embed_dim = 64;
  cfg.seed = 12345;
  const TrainedModel model = flow::train(train_data, val_data, cfg);

  Rng rng(5150);
  double mse = 0.0;
  std::size_t count = 0;
  for (double t = 0.1; t <= 0.9 + 1e-9; t += 0.1) {
    const Schedule& s = model.schedule;
    const std::size_t b = 256;
    Matrix xt(b, 2);
    for (std::size_t i = 0; i < b; ++i) {
      xt(i, 0) = s.alpha(t) * c0 + s.beta(t) * rng.normal();
      xt(i, 1) = s.alpha(t) * c1 + s.beta(t) * rng.normal();
    }
    const std::vector<double> tv(b, t);
    const Matrix v = model.net.forward(xt, tv);
    for (std::size_t i = 0; i < b; ++i) {
      const double e0 = v(i, 0) - (xt(i, 0) - c0) / t;
      const double e1 = v(i, 1) - (xt(i, 1) - c1) / t;
      mse += e0 * e0 + e1 * e1;
      count += 2;
    }
  }
  mse /= static_cast<double>(count);
  INFO("point-mass oracle mse = ", mse);
  CHECK(mse <= 1e-2);
  CHECK(model.log.epochs <= cfg.max_epochs);
}

TEST_CASE("train on Gaussian data matches the analytic marginal field") {
  const std::size_t n = 4096;
  datagen::SampleMatrix train_data = as_sample(gaussian_matrix(n, 1, 777));
  datagen::SampleMatrix val_data = as_sample(gaussian_matrix(1024, 1, 778));

  TrainConfig cfg;
  cfg.mode = TransformMode::Identity;
  cfg.schedule = ScheduleKind::Linear;
  cfg.max_epochs = 2000;
  cfg.patience = 300;
  cfg.hidden_width = 64;
  cfg.hidden_layers = 2;
  cfg.embed_dim = 64;
  cfg.seed = 333;
  const TrainedModel model = flow::train(train_data, val_data, cfg);

  const auto oracle = gaussian_path_velocity(model.schedule, 1.0);
  Rng rng(911);
  double num = 0.0, den = 0.0;
  for (double t = 0.05; t <= 0.95 + 1e-9; t += 0.05) {
    const Schedule& s = model.schedule;
    const double sd = std::sqrt(s.alpha(t) * s.alpha(t) + s.beta(t) * s.beta(t));
    const std::size_t b = 512;
    Matrix xt(b, 1);
    for (std::size_t i = 0; i < b; ++i) xt(i, 0) = sd * rng.normal();
    const std::vector<double> tv(b, t);
    const Matrix v = model.net.forward(xt, tv);
    const Matrix w = oracle(xt, t);
    for (std::size_t i = 0; i < b; ++i) {
      num += (v(i, 0) - w(i, 0)) * (v(i, 0) - w(i, 0));
      den += w(i, 0) * w(i, 0);
    }
  }
  const double rel_rms = std::sqrt(num / den);
  INFO("relative RMS vs analytic field = ", rel_rms);
  CHECK(rel_rms <= 0.05);
}

TEST_CASE("training log length bound and early stopping") {
  datagen::SampleMatrix train_data = as_sample(gaussian_matrix(128, 1, 1));
  datagen::SampleMatrix val_data = as_sample(gaussian_matrix(64, 1, 2));
  TrainConfig cfg;
  cfg.mode = TransformMode::Identity;
  cfg.max_epochs = 400;
  cfg.patience = 25;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 1;
  cfg.embed_dim = 8;
  cfg.seed = 5;
  const TrainedModel model = flow::train(train_data, val_data, cfg);
  CHECK(model.log.epochs <= 400);
  CHECK(model.log.train_loss.size() == model.log.epochs);
  CHECK(model.log.val_loss.size() == model.log.epochs);
  // Halts within patience+1 epochs of the best epoch (or hits the cap).
  if (model.log.epochs < cfg.max_epochs) {
    CHECK(model.log.epochs - model.log.best_epoch <= cfg.patience + 1);
  }
  CHECK_THROWS_AS(flow::train(train_data, datagen::SampleMatrix{}, cfg),
                  std::invalid_argument);
}

TEST_CASE("euler sampling with the zero velocity field inverts the noise") {
  auto spec = transforms::TransformSpec::uniform(transforms::Family::SoftLog, 2);
  const TrainedModel model = zero_model(2, spec);
  const std::uint64_t seed = 4242;
  const auto res = flow::sample(model, 50, 100, transforms::kNoClamp, seed);
  CHECK_FALSE(res.diverged);

  Rng rng(seed);
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double z = rng.normal();
      CHECK(res.sample.data(i, j) ==
            doctest::Approx(transforms::soft_log_inv(z)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sampling determinism and clamp inertness") {
  auto spec = transforms::TransformSpec::uniform(transforms::Family::SoftLog, 3);
  const TrainedModel model = zero_model(3, spec);
  const auto a = flow::sample(model, 200, 50, transforms::kNoClamp, 7);
  const auto b = flow::sample(model, 200, 50, transforms::kNoClamp, 7);
  CHECK(a.sample.data == b.sample.data);  // bitwise

  // Gaussian noise stays well inside [-10, 10], so the clamp must be inert.
  const auto c = flow::sample(model, 200, 50, 10.0, 7);
  CHECK(a.sample.data == c.sample.data);

  const auto d = flow::sample(model, 200, 50, transforms::kNoClamp, 8);
  CHECK_FALSE(a.sample.data == d.sample.data);
}

TEST_CASE("analytic gaussian field: Euler endpoint moments") {
  const double sigma = 1.5;
  const Schedule lin{ScheduleKind::Linear};
  const auto field = gaussian_path_velocity(lin, sigma);
  Matrix x1 = gaussian_matrix(100000, 1, 31337);
  const auto res = euler_reverse(field, std::move(x1), 100);
  CHECK_FALSE(res.diverged);
  double mean = 0.0, var = 0.0;
  const auto n = static_cast<double>(res.x.rows());
  for (std::size_t i = 0; i < res.x.rows(); ++i) mean += res.x(i, 0);
  mean /= n;
  for (std::size_t i = 0; i < res.x.rows(); ++i) {
    var += (res.x(i, 0) - mean) * (res.x(i, 0) - mean);
  }
  var /= n;
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(var - sigma * sigma) <= 0.05 * sigma * sigma);
}

TEST_CASE("solver stability: K=50 vs K=500 on the analytic field") {
  const Matrix x1 = gaussian_matrix(20000, 1, 999);
  const double sigma = 1.5;
  SUBCASE("VP trig stays within 1% of scale") {
    const Schedule trig{ScheduleKind::VPTrig};
    const auto field = gaussian_path_velocity(trig, sigma);
    Matrix a = x1, b = x1;  // shared initial noise
    const auto ra = euler_reverse(field, std::move(a), 50);
    const auto rb = euler_reverse(field, std::move(b), 500);
    CHECK(metrics::w1_1d(ra.x.column(0), rb.x.column(0)) <= 0.01 * sigma);
  }
  SUBCASE("linear schedule converges at its measured O(1/K) rate") {
    // Right-endpoint Euler on the linear-schedule field carries a ~1.9%
    // gap at K=50; pin the observed convergence envelope.
    const Schedule lin{ScheduleKind::Linear};
    const auto field = gaussian_path_velocity(lin, sigma);
    Matrix a = x1, b = x1;
    const auto ra = euler_reverse(field, std::move(a), 50);
    const auto rb = euler_reverse(field, std::move(b), 500);
    CHECK(metrics::w1_1d(ra.x.column(0), rb.x.column(0)) <= 0.025 * sigma);
  }
}

TEST_CASE("divergent velocity is recorded, not thrown") {
  auto spec = transforms::TransformSpec::identity(1);
  TrainedModel model = zero_model(1, std::move(spec));
  for (auto& p : model.net.params()) p = 1e200;  // force overflow
  const auto res = flow::sample(model, 4, 10, transforms::kNoClamp, 1);
  CHECK(res.diverged);
  CHECK_FALSE(res.reason.empty());
}

TEST_CASE("training divergence raises DivergenceError") {
  datagen::SampleMatrix train_data = as_sample(gaussian_matrix(64, 1, 10));
  datagen::SampleMatrix val_data = as_sample(gaussian_matrix(32, 1, 11));
  TrainConfig cfg;
  cfg.mode = TransformMode::Identity;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  cfg.hidden_width = 8;
  cfg.hidden_layers = 1;
  cfg.embed_dim = 8;
  cfg.opt.lr = 1e28;  // guaranteed blow-up
  cfg.opt.clip_norm = 0.0;
  cfg.seed = 1;
  CHECK_THROWS_AS(flow::train(train_data, val_data, cfg), DivergenceError);
}

TEST_CASE("denoiser solve identities") {
  const Schedule lin{ScheduleKind::Linear};
  Rng rng(66);
  Matrix x = gaussian_matrix(20, 2, 67);
  Matrix v = gaussian_matrix(20, 2, 68);
  Matrix x0, x1;
  for (double t : {0.2, 0.5, 0.8}) {
    denoiser_solve(lin, t, x, v, x0, x1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) {
        // Defining identity alpha x0 + beta x1 = x holds exactly.
        CHECK(lin.alpha(t) * x0(i, j) + lin.beta(t) * x1(i, j) ==
              doctest::Approx(x(i, j)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("score of the analytic Gaussian path") {
  // p0 = N(0, 1), linear schedule, t = 0.5: var = 0.25 + 0.25, score = -x / 0.5.
  const Schedule lin{ScheduleKind::Linear};
  const double t = 0.5;
  const auto field = gaussian_path_velocity(lin, 1.0);
  Matrix x(5, 1);
  for (int i = 0; i < 5; ++i) x(i, 0) = -2.0 + i;
  const Matrix v = field(x, t);
  Matrix x0, x1;
  denoiser_solve(lin, t, x, v, x0, x1);
  for (int i = 0; i < 5; ++i) {
    const double score = -x1(i, 0) / lin.beta(t);
    CHECK(score == doctest::Approx(-x(i, 0) / 0.5).epsilon(1e-12));
  }
}

TEST_CASE("point-mass denoiser recovers the point") {
  const Schedule lin{ScheduleKind::Linear};
  const double c = 2.5;
  // Exact conditional velocity for a point mass at c.
  Matrix x(7, 1);
  for (int i = 0; i < 7; ++i) x(i, 0) = -3.0 + i;
  for (double t : {0.3, 0.6, 0.9}) {
    Matrix v(7, 1);
    for (int i = 0; i < 7; ++i) v(i, 0) = (x(i, 0) - c) / t;
    Matrix x0, x1;
    denoiser_solve(lin, t, x, v, x0, x1);
    for (int i = 0; i < 7; ++i) {
      CHECK(x0(i, 0) == doctest::Approx(c).epsilon(1e-12));
    }
  }
}

TEST_CASE("schedule singularities raise errors") {
  const Schedule poly{ScheduleKind::VPPoly};
  Matrix x(1, 1, 0.5), v(1, 1, 0.1), x0, x1;
  CHECK_THROWS_AS(denoiser_solve(poly, 0.0, x, v, x0, x1), std::invalid_argument);
  CHECK_THROWS_AS(denoiser_solve(poly, 1.0, x, v, x0, x1), std::invalid_argument);
  CHECK_NOTHROW(denoiser_solve(poly, 0.5, x, v, x0, x1));
}

TEST_CASE("ddim requires a variance-preserving schedule") {
  auto spec = transforms::TransformSpec::identity(1);
  TrainedModel model = zero_model(1, std::move(spec), ScheduleKind::Linear);
  CHECK_THROWS_WITH_AS(flow::ddim_sample(model, 8, 10, EtaMode::Zero, 1),
                       doctest::Contains("variance-preserving"),
                       std::invalid_argument);
}

TEST_CASE("ddpm posterior eta transcribes the closed form") {
  const Schedule trig{ScheduleKind::VPTrig};
  const double tk = 0.4, tk1 = 0.5;
  const double direct = std::sqrt(
      (trig.beta(tk) * trig.beta(tk)) / (trig.beta(tk1) * trig.beta(tk1)) *
      (1.0 - (trig.alpha(tk1) * trig.alpha(tk1)) / (trig.alpha(tk) * trig.alpha(tk))));
  CHECK(ddpm_posterior_eta(trig, tk, tk1) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(ddpm_posterior_eta(trig, tk, tk1) <= trig.beta(tk));
  // VP-poly hits alpha(1) = 0 exactly, outside the formula's domain.
  const Schedule poly{ScheduleKind::VPPoly};
  CHECK_THROWS_AS(ddpm_posterior_eta(poly, 1.0, 0.5), std::invalid_argument);
}

namespace {

// Exact variance of the DDIM chain when the denoiser is the Gaussian-path
// conditional mean: every transition is linear, so the terminal variance
// follows the scalar recursion var <- c^2 var + eta^2 with
// c = (alpha_tgt a sigma^2 + sqrt(beta_tgt^2 - eta^2) b) / (a^2 sigma^2 + b^2)
// evaluated at the source time.
double ddim_variance_oracle(const Schedule& s, double sigma, std::size_t steps,
                            EtaMode mode) {
  double var = 1.0;
  for (std::size_t k = steps; k >= 1; --k) {
    const double t_cur = static_cast<double>(k) / static_cast<double>(steps);
    const double t_tgt = static_cast<double>(k - 1) / static_cast<double>(steps);
    const double a = s.alpha(t_cur), b = s.beta(t_cur);
    const double v = a * a * sigma * sigma + b * b;
    double eta = 0.0;
    if (mode == EtaMode::DDPMPosterior) eta = ddpm_posterior_eta(s, t_tgt, t_cur);
    if (mode == EtaMode::MaxNoise) eta = s.beta(t_tgt);
    const double bt = s.beta(t_tgt);
    // FP contraction can push bt^2 - eta^2 infinitesimally negative when
    // eta == bt; clamp like the sampler does.
    const double rad = std::max(bt * bt - eta * eta, 0.0);
    const double c = (s.alpha(t_tgt) * a * sigma * sigma + std::sqrt(rad) * b) / v;
    var = c * c * var + eta * eta;
  }
  return var;
}

}  // namespace

TEST_CASE("ddim transitions match the exact linear-Gaussian propagation") {
  // With a conditional-mean denoiser the chain under-disperses at finite K
  // (the x0-posterior spread is dropped); the exact propagated variance is
  // the right oracle for the transition formula at any K.
  const double sigma = 1.25;
  const Schedule trig{ScheduleKind::VPTrig};
  const auto den = gaussian_path_denoiser(trig, sigma);
  for (auto mode : {EtaMode::Zero, EtaMode::DDPMPosterior, EtaMode::MaxNoise}) {
    Matrix x1 = gaussian_matrix(100000, 1, 2024 + static_cast<int>(mode));
    Rng rng(333 + static_cast<std::uint64_t>(mode));
    const auto res = ddim_reverse(den, trig, std::move(x1), 100, mode, rng);
    CHECK_FALSE(res.diverged);
    double var = 0.0;
    for (std::size_t i = 0; i < res.x.rows(); ++i) var += res.x(i, 0) * res.x(i, 0);
    var /= static_cast<double>(res.x.rows());
    const double oracle = ddim_variance_oracle(trig, sigma, 100, mode);
    CHECK(std::abs(var - oracle) <= 0.02 * oracle);
  }
  // eta = 0 is deterministic given the initial noise.
  Matrix a = gaussian_matrix(100, 1, 5);
  Matrix b = a;
  Rng r1(1), r2(2);
  const auto ra = ddim_reverse(den, trig, std::move(a), 20, EtaMode::Zero, r1);
  const auto rb = ddim_reverse(den, trig, std::move(b), 20, EtaMode::Zero, r2);
  CHECK(ra.x == rb.x);
}

TEST_CASE("ddim eta=0 terminal variance converges to the marginal") {
  const double sigma = 1.25;
  const Schedule trig{ScheduleKind::VPTrig};
  const auto den = gaussian_path_denoiser(trig, sigma);
  Matrix x1 = gaussian_matrix(100000, 1, 7070);
  Rng rng(7071);
  const auto res = ddim_reverse(den, trig, std::move(x1), 400, EtaMode::Zero, rng);
  double var = 0.0;
  for (std::size_t i = 0; i < res.x.rows(); ++i) var += res.x(i, 0) * res.x(i, 0);
  var /= static_cast<double>(res.x.rows());
  CHECK(std::abs(var - sigma * sigma) <= 0.02 * sigma * sigma);
  // The finite-K deficit shrinks like O(1/K).
  const double d100 = sigma * sigma - ddim_variance_oracle(trig, sigma, 100, EtaMode::Zero);
  const double d400 = sigma * sigma - ddim_variance_oracle(trig, sigma, 400, EtaMode::Zero);
  CHECK(d100 > 0.0);
  CHECK(d400 < 0.5 * d100);
}

TEST_CASE("nll on the analytic Gaussian path recovers the entropy") {
  const Schedule lin{ScheduleKind::Linear};
  const Matrix data = gaussian_matrix(100000, 1, 808);
  const auto core = nll_core(gaussian_path_velocity(lin, 1.0),
                             gaussian_path_jvp(lin, 1.0), data, 10, 4, 1e-5, 1e-5);
  double mean = 0.0;
  for (double v : core.nll) mean += v;
  mean /= static_cast<double>(core.nll.size());
  const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  CHECK(std::abs(mean - entropy) <= 0.01);
}

TEST_CASE("nll wrapper: transform term and defaults") {
  // Zero velocity field: the flow is the identity, so NLL reduces to the
  // Gaussian log-density plus the transform Jacobian term.
  const Matrix data = gaussian_matrix(512, 2, 123, 0.8);

  SUBCASE("identity transform has zero jacobian term") {
    auto spec = transforms::TransformSpec::identity(2);
    const TrainedModel model = zero_model(2, std::move(spec));
    const NLLEstimate est = flow::nll(model, data);
    CHECK(est.jacobian_term == 0.0);
    CHECK(est.hutchinson_probes == 10);
    CHECK(est.atol == 1e-5);
    CHECK(est.rtol == 1e-5);
    // -mean log N(x) / d, computable in closed form for the identity flow.
    double want = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        want += 0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * data(i, j) * data(i, j);
      }
    }
    want /= static_cast<double>(data.rows() * 2);
    CHECK(est.nll_per_dim == doctest::Approx(want).epsilon(1e-6));
  }
  SUBCASE("masked transform reports the data-space term") {
    auto spec = transforms::TransformSpec::from_mask(transforms::Family::SoftLog,
                                                     {true, false});
    const TrainedModel model = zero_model(2, std::move(spec));
    const NLLEstimate est = flow::nll(model, data);
    double want = 0.0;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      want += std::log1p(std::abs(data(i, 0)));
    }
    want /= static_cast<double>(data.rows());
    CHECK(est.jacobian_term == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("hutchinson divergence estimate is unbiased on a linear field") {
  Rng rng(2718);
  const std::size_t d = 8;
  std::vector<double> A(d * d);
  for (auto& a : A) a = rng.normal();
  // Give the field a trace that dominates the probe noise (which scales with
  // the off-diagonal Frobenius norm, not the trace).
  for (std::size_t i = 0; i < d; ++i) A[i * d + i] += 5.0;
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += A[i * d + i];

  Rng prng(281);
  double est = 0.0;
  const std::size_t probes = 10000;
  std::vector<double> e(d), ae(d);
  for (std::size_t p = 0; p < probes; ++p) {
    for (auto& v : e) v = prng.rademacher();
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += A[i * d + j] * e[j];
      ae[i] = s;
    }
    for (std::size_t i = 0; i < d; ++i) est += ae[i] * e[i];
  }
  est /= static_cast<double>(probes);
  CHECK(std::abs(est - trace) <= 0.01 * std::abs(trace));
}
