#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tailflow/matrix.hpp"
#include "tailflow/rng.hpp"

namespace tailflow::evt {

// ---------------------------------------------------------------------------
// Hill estimator
// ---------------------------------------------------------------------------

struct HillEstimate {
  double alpha_hat = 0.0;  // tail index
  double gamma_hat = 0.0;  // shape parameter, 1 / alpha_hat
  std::size_t k = 0;       // upper order statistics used
  std::size_t n = 0;       // sample size
};

// Hill estimate from the top k order statistics of |sample|. Requires
// 1 <= k < n and at least k+1 strictly positive absolute values.
HillEstimate hill(std::span<const double> sample, std::size_t k);

// k used for Hill gating: max(10, ceil(0.05 n)), capped at n-1.
std::size_t default_gate_k(std::size_t n);
// k used by the theory-verification oracles: ceil(sqrt(n)).
std::size_t default_oracle_k(std::size_t n);

// mask[j] = (hill(column j, k).alpha_hat <= alpha_max)
std::vector<bool> hill_mask(const Matrix& data, double alpha_max, std::size_t k);

// ---------------------------------------------------------------------------
// Pareto margin
// ---------------------------------------------------------------------------

// Pareto with survival t^{-1/gamma} on [1, inf); the symmetrized variant is
// S * P with S uniform on {-1, +1}, so its support excludes (-1, 1).
struct ParetoMargin {
  double gamma = 0.5;
  bool symmetrized = false;
};

double pareto_quantile(const ParetoMargin& margin, double p);
double pareto_survival(const ParetoMargin& margin, double t);

// One draw. Non-symmetrized: U^{-gamma}; symmetrized: random sign on top.
double pareto_sample(const ParetoMargin& margin, Rng& rng);

// ---------------------------------------------------------------------------
// Gaussian / Student-t quantile machinery
// ---------------------------------------------------------------------------

double normal_cdf(double x);
double normal_quantile(double p);

double student_t_cdf(double x, double nu);
double student_t_pdf(double x, double nu);
double student_t_quantile(double p, double nu);

// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

// ---------------------------------------------------------------------------
// Theory-verification reports
// ---------------------------------------------------------------------------

struct CheckLine {
  std::string metric;
  double theoretical = 0.0;
  double estimate = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string note;
};

struct VerifyReport {
  std::string name;
  std::vector<CheckLine> lines;
  bool pass() const;
  std::string to_text() const;
};

// Hill index of X^exponent for X ~ Pareto(gamma) vs the exact value
// 1 / (gamma * exponent).
VerifyReport verify_power_lemma(double gamma, double exponent, std::size_t n,
                                std::uint64_t seed, double rel_tol = 0.10);

// Hill index of X * Y for X Pareto with tail index alpha and Y independent
// lognormal(0, 1); the product keeps tail index alpha.
VerifyReport verify_breiman(double alpha, std::size_t n, std::uint64_t seed,
                            double rel_tol = 0.15);

struct SlopeFit {
  double slope = 0.0;
  std::size_t points_used = 0;
  double z_used_max = 0.0;
};

// OLS of log empirical survival against z over an ascending grid. Grid points
// with fewer than min_count exceedances are excluded: beyond the sample's
// resolution the empirical survival is pure Poisson noise.
SlopeFit slope_fit_log_survival(std::span<const double> sample, double z_lo,
                                double z_hi, double z_step, std::size_t min_count);

// OLS slope of log empirical survival of phi(X) over a z-grid vs -1/gamma.
VerifyReport verify_log_score(double gamma, std::size_t n, std::uint64_t seed,
                              double slope_tol = 0.3, double z_lo = 3.0,
                              double z_hi = 8.0, double z_step = 0.5,
                              std::size_t min_count = 20);

// Two-sided sandwich e^{-(alpha+eps) z} <= P(phi(X) > z) <= e^{-(alpha-eps) z}
// checked pointwise as -log S(z) / z within [alpha-eps, alpha+eps].
VerifyReport verify_potter_sandwich(double alpha, double eps, std::size_t n,
                                    std::uint64_t seed, double z_lo = 3.0,
                                    double z_hi = 8.0, double z_step = 0.5,
                                    std::size_t min_count = 5);

// Hill index of X^{a} for a on an annealing path, decreasing from 1: values
// must match 1/(gamma*a) within rel_tol and increase monotonically.
VerifyReport verify_annealing_path(double gamma, std::span<const double> path,
                                   std::size_t n, std::uint64_t seed,
                                   double rel_tol = 0.15);

}  // namespace tailflow::evt
