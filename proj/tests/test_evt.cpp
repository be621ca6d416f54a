#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "tailflow/evt.hpp"
#include "tailflow/rng.hpp"

using namespace tailflow;
using namespace tailflow::evt;

namespace {

// Deterministic Pareto quantile grid: x_i = (i/(n+1))^{-gamma} are the
// survival-level quantiles, no sampling noise.
std::vector<double> pareto_grid(double gamma, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 1; i <= n; ++i) {
    x[i - 1] = std::pow(static_cast<double>(i) / static_cast<double>(n + 1), -gamma);
  }
  return x;
}

}  // namespace

TEST_CASE("hill on exact Pareto quantile grid") {
  const auto x = pareto_grid(0.5, 10000);
  const auto est = hill(x, 100);
  CHECK(est.alpha_hat > 1.9);
  CHECK(est.alpha_hat < 2.1);
  CHECK(est.alpha_hat == 1.0 / est.gamma_hat);  // exact by construction
  CHECK(est.k == 100);
  CHECK(est.n == 10000);
}

TEST_CASE("hill consistency at n=1e5 with k=ceil(sqrt(n))") {
  for (double gamma : {0.4, 0.5, 1.0}) {
    const std::size_t n = 100000;
    const auto x = pareto_grid(gamma, n);
    const auto est = hill(x, default_oracle_k(n));
    const double alpha = 1.0 / gamma;
    CHECK(std::abs(est.alpha_hat - alpha) <= 0.05 * alpha);
  }
}

TEST_CASE("hill on Gaussian data is far above the gate") {
  Rng rng(555);
  const std::size_t n = 10000;
  std::vector<double> z(n);
  for (auto& v : z) v = rng.normal();
  const auto est = hill(z, default_oracle_k(n));
  CHECK(est.alpha_hat > 5.0);  // light tails read as a large index
}

TEST_CASE("hill on symmetrized Pareto sample") {
  Rng rng(556);
  const std::size_t n = 10000;
  const ParetoMargin margin{0.5, true};  // alpha = 2
  std::vector<double> x(n);
  for (auto& v : x) v = pareto_sample(margin, rng);
  const auto est = hill(x, default_gate_k(n));
  CHECK(est.alpha_hat > 1.5);
  CHECK(est.alpha_hat < 2.5);
}

TEST_CASE("hill error paths") {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  CHECK_THROWS_AS(hill(x, 0), std::invalid_argument);
  CHECK_THROWS_AS(hill(x, 4), std::invalid_argument);
  const std::vector<double> few_pos{0.0, 0.0, 0.0, 5.0, 6.0};
  CHECK_THROWS_AS(hill(few_pos, 3), std::invalid_argument);
  const std::vector<double> tied{1.0, 5.0, 5.0, 5.0, 5.0};
  CHECK_THROWS_AS(hill(tied, 3), std::invalid_argument);  // degenerate tail
}

TEST_CASE("hill scale equivariance") {
  Rng rng(99);
  std::vector<double> x(2000);
  for (auto& v : x) v = std::pow(rng.open01(), -0.7);
  const auto base = hill(x, 60);
  std::vector<double> scaled = x;
  for (auto& v : scaled) v *= 4.0;  // power of two: ratios are bitwise equal
  CHECK(hill(scaled, 60).alpha_hat == base.alpha_hat);
  for (auto& v : scaled) v *= 0.7349 / 4.0;
  CHECK(hill(scaled, 60).alpha_hat == doctest::Approx(base.alpha_hat).epsilon(1e-12));
}

TEST_CASE("hill_mask selects exactly the heavy coordinates") {
  Rng rng(777);
  const std::size_t n = 10000, d = 20;
  Matrix data(n, d);
  const ParetoMargin margin{0.5, true};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      data(i, j) = j < 14 ? pareto_sample(margin, rng) : rng.normal();
    }
  }
  const std::size_t k = default_gate_k(n);
  for (double alpha_max : {3.0, 4.0, 5.0}) {
    const auto mask = hill_mask(data, alpha_max, k);
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(mask[j] == (j < 14));
    }
  }
}

TEST_CASE("hill_mask on all-Gaussian data is all false") {
  Rng rng(778);
  Matrix data(10000, 4);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    for (std::size_t j = 0; j < data.cols(); ++j) data(i, j) = rng.normal();
  }
  const auto mask = hill_mask(data, 4.0, default_gate_k(data.rows()));
  for (std::size_t j = 0; j < data.cols(); ++j) CHECK_FALSE(mask[j]);
}

TEST_CASE("pareto_quantile pinned values and round trip") {
  const ParetoMargin plain{0.5, false};
  CHECK(pareto_quantile(plain, 0.99) == doctest::Approx(10.0).epsilon(1e-12));
  const ParetoMargin sym{0.5, true};
  CHECK(pareto_quantile(sym, 0.5) == 0.0);
  CHECK(pareto_quantile(sym, 0.9) == -pareto_quantile(sym, 0.1));
  for (double p : {0.05, 0.3, 0.6, 0.9, 0.999}) {
    const double q = pareto_quantile(plain, p);
    CHECK(pareto_survival(plain, q) == doctest::Approx(1.0 - p).epsilon(1e-12));
  }
  // Symmetrized invariant: quantile(1 - survival(t)) = t for t >= 1.
  for (double t : {1.5, 3.0, 42.0}) {
    CHECK(pareto_quantile(sym, 1.0 - pareto_survival(sym, t)) ==
          doctest::Approx(t).epsilon(1e-12));
  }
  CHECK_THROWS_AS(pareto_quantile(plain, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(pareto_quantile(plain, 1.0), std::invalid_argument);
}

TEST_CASE("normal quantile matches the CDF") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.1) == doctest::Approx(-normal_quantile(0.9)).epsilon(1e-12));
  for (double p = 1e-10; p < 1.0; p = p < 0.5 ? p * 40.0 : 1.0 - (1.0 - p) / 40.0) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("student t cdf/quantile against closed forms") {
  // nu = 1 is Cauchy.
  for (double p : {0.6, 0.8, 0.95, 0.999}) {
    const double cauchy = std::tan(std::numbers::pi * (p - 0.5));
    CHECK(student_t_quantile(p, 1.0) == doctest::Approx(cauchy).epsilon(1e-9));
  }
  // nu = 2 closed form: (2p-1) / sqrt(2 p (1-p)).
  for (double p : {0.55, 0.75, 0.9, 0.99}) {
    const double q2 = (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));
    CHECK(student_t_quantile(p, 2.0) == doctest::Approx(q2).epsilon(1e-9));
  }
  // Round trip and symmetry across nu.
  for (double nu : {0.5, 2.0, 7.0, 30.0}) {
    for (double p : {0.01, 0.2, 0.5, 0.77, 0.995}) {
      CHECK(student_t_cdf(student_t_quantile(p, nu), nu) ==
            doctest::Approx(p).epsilon(1e-9));
    }
    CHECK(student_t_quantile(0.25, nu) ==
          doctest::Approx(-student_t_quantile(0.75, nu)).epsilon(1e-9));
  }
  // Large nu approaches the normal quantile.
  CHECK(student_t_quantile(0.975, 1e7) == doctest::Approx(1.95996).epsilon(1e-4));
}

TEST_CASE("power lemma Monte Carlo") {
  SUBCASE("gamma=0.5 exponent=2") {
    const auto rep = verify_power_lemma(0.5, 2.0, 100000, 101, 0.10);
    INFO(rep.to_text());
    CHECK(rep.pass());
    CHECK(rep.lines[0].theoretical == doctest::Approx(1.0));
  }
  SUBCASE("identity power reduces to plain Hill") {
    const auto rep = verify_power_lemma(0.5, 1.0, 100000, 102, 0.10);
    INFO(rep.to_text());
    CHECK(rep.pass());
    CHECK(rep.lines[0].theoretical == doctest::Approx(2.0));
  }
  SUBCASE("gamma=0.4 exponent=0.5") {
    const auto rep = verify_power_lemma(0.4, 0.5, 100000, 103, 0.15);
    INFO(rep.to_text());
    CHECK(rep.pass());
    CHECK(rep.lines[0].theoretical == doctest::Approx(5.0));
  }
}

TEST_CASE("Breiman product Monte Carlo") {
  for (double alpha : {2.0, 1.5}) {
    const auto rep = verify_breiman(alpha, 1000000, 202 + static_cast<std::uint64_t>(alpha * 10), 0.15);
    INFO(rep.to_text());
    CHECK(rep.pass());
  }
  SUBCASE("degenerate Y=1 reduces to plain Hill consistency") {
    Rng rng(203);
    std::vector<double> x(200000);
    for (auto& v : x) v = std::pow(rng.open01(), -0.5);
    const auto est = hill(x, default_oracle_k(x.size()));
    CHECK(std::abs(est.alpha_hat - 2.0) <= 0.15 * 2.0);
  }
}

TEST_CASE("log-score slope Monte Carlo") {
  SUBCASE("gamma=0.5") {
    const auto rep = verify_log_score(0.5, 1000000, 301);
    INFO(rep.to_text());
    CHECK(rep.pass());
    CHECK(rep.lines[0].theoretical == doctest::Approx(-2.0));
  }
  SUBCASE("gamma=1") {
    const auto rep = verify_log_score(1.0, 1000000, 302);
    INFO(rep.to_text());
    CHECK(rep.pass());
  }
  SUBCASE("exact exponential input gives the same slope") {
    Rng rng(303);
    const double gamma = 0.5;
    std::vector<double> x(1000000);
    for (auto& v : x) v = gamma * rng.exponential();  // Exp(rate 1/gamma)
    const auto fit = slope_fit_log_survival(x, 3.0, 8.0, 0.5, 20);
    CHECK(std::abs(fit.slope - (-1.0 / gamma)) <= 0.3);
  }
}

TEST_CASE("annealing path is monotone and matches theory") {
  const double path[] = {1.0, 0.75, 0.5};
  const auto rep = verify_annealing_path(0.5, path, 200000, 404);
  INFO(rep.to_text());
  CHECK(rep.pass());
  CHECK(rep.lines.size() == 3);
  CHECK(rep.lines[0].theoretical == doctest::Approx(2.0));
  CHECK(rep.lines[2].theoretical == doctest::Approx(4.0));
}

TEST_CASE("verify report text carries pass/fail per line") {
  VerifyReport rep;
  rep.name = "fabricated";
  rep.lines.push_back({"metric_a", 1.0, 1.05, 0.1, true, ""});
  rep.lines.push_back({"metric_b", 1.0, 2.0, 0.1, false, "injected failure"});
  CHECK_FALSE(rep.pass());
  const auto text = rep.to_text();
  CHECK(text.find("FAIL") != std::string::npos);
  CHECK(text.find("metric_b") != std::string::npos);
  CHECK(text.find("injected failure") != std::string::npos);
}

TEST_CASE("verification reports are deterministic given the seed") {
  const auto a = verify_power_lemma(0.5, 2.0, 50000, 7, 0.10);
  const auto b = verify_power_lemma(0.5, 2.0, 50000, 7, 0.10);
  CHECK(a.lines[0].estimate == b.lines[0].estimate);
  const auto c = verify_power_lemma(0.5, 2.0, 50000, 8, 0.10);
  CHECK(a.lines[0].estimate != c.lines[0].estimate);
}
