#include "tailflow/evt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "tailflow/transforms.hpp"

namespace tailflow::evt {

// ---------------------------------------------------------------------------
// Hill
// ---------------------------------------------------------------------------

HillEstimate hill(std::span<const double> sample, std::size_t k) {
  const std::size_t n = sample.size();
  if (k < 1 || k >= n) {
    throw std::invalid_argument("hill: need 1 <= k < n (k=" + std::to_string(k) +
                                ", n=" + std::to_string(n) + ")");
  }
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = std::abs(sample[i]);
  // Partition so a[n-k-1] is the (k+1)-th largest and a[n-k..] the top k.
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(n - k - 1),
                   a.end());
  const double threshold = a[n - k - 1];
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("hill: fewer than k+1 strictly positive values");
  }
  // Fixed (ascending) summation order makes the estimate exactly invariant
  // under permutations of the input.
  std::sort(a.begin() + static_cast<std::ptrdiff_t>(n - k), a.end());
  double sum = 0.0;
  for (std::size_t i = n - k; i < n; ++i) sum += std::log(a[i] / threshold);
  const double gamma_hat = sum / static_cast<double>(k);
  if (!(gamma_hat > 0.0)) {
    throw std::invalid_argument("hill: degenerate tail (top order statistics tied)");
  }
  return HillEstimate{1.0 / gamma_hat, gamma_hat, k, n};
}

std::size_t default_gate_k(std::size_t n) {
  const std::size_t k = std::max<std::size_t>(
      10, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n))));
  return n >= 2 ? std::min(k, n - 1) : 1;
}

std::size_t default_oracle_k(std::size_t n) {
  const std::size_t k =
      static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return n >= 2 ? std::min(k, n - 1) : 1;
}

std::vector<bool> hill_mask(const Matrix& data, double alpha_max, std::size_t k) {
  std::vector<bool> mask(data.cols());
  for (std::size_t j = 0; j < data.cols(); ++j) {
    const auto col = data.column(j);
    mask[j] = hill(col, k).alpha_hat <= alpha_max;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Pareto margin
// ---------------------------------------------------------------------------

double pareto_quantile(const ParetoMargin& margin, double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("pareto_quantile: p must be in (0,1)");
  }
  if (!margin.symmetrized) {
    return std::pow(1.0 - p, -margin.gamma);
  }
  if (p == 0.5) return 0.0;
  const double s = p > 0.5 ? 1.0 : -1.0;
  return s * std::pow(2.0 * std::min(p, 1.0 - p), -margin.gamma);
}

double pareto_survival(const ParetoMargin& margin, double t) {
  if (!margin.symmetrized) {
    return t <= 1.0 ? 1.0 : std::pow(t, -1.0 / margin.gamma);
  }
  if (t >= 1.0) return 0.5 * std::pow(t, -1.0 / margin.gamma);
  if (t <= -1.0) return 1.0 - 0.5 * std::pow(-t, -1.0 / margin.gamma);
  return 0.5;
}

double pareto_sample(const ParetoMargin& margin, Rng& rng) {
  const double p = std::pow(rng.open01(), -margin.gamma);
  if (!margin.symmetrized) return p;
  return rng.rademacher() * p;
}

// ---------------------------------------------------------------------------
// Gaussian quantile (Acklam's rational approximation + one Halley step)
// ---------------------------------------------------------------------------

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley refinement against the erfc-based CDF.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

// ---------------------------------------------------------------------------
// Student-t via the regularized incomplete beta function
// ---------------------------------------------------------------------------

namespace {

double beta_cont_fraction(double a, double b, double x) {
  // Lentz's algorithm for the continued fraction in I_x(a,b).
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) {
    throw std::invalid_argument("incomplete_beta: a, b must be > 0");
  }
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cont_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                        b * std::log1p(-x) + a * std::log(x)) *
                   beta_cont_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double x, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("student_t_cdf: nu must be > 0");
  if (x == 0.0) return 0.5;
  const double z = nu / (nu + x * x);
  const double tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, z);
  return x > 0.0 ? 1.0 - tail : tail;
}

double student_t_pdf(double x, double nu) {
  if (!(nu > 0.0)) throw std::invalid_argument("student_t_pdf: nu must be > 0");
  const double ln = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                    0.5 * std::log(nu * std::numbers::pi) -
                    0.5 * (nu + 1.0) * std::log1p(x * x / nu);
  return std::exp(ln);
}

double student_t_quantile(double p, double nu) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("student_t_quantile: p must be in (0,1)");
  }
  if (!(nu > 0.0)) throw std::invalid_argument("student_t_quantile: nu must be > 0");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, nu);

  // Bracket the root, then bisect with Newton acceleration.
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, nu) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw std::runtime_error("student_t_quantile: bracket overflow");
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = student_t_cdf(x, nu) - p;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double dens = student_t_pdf(x, nu);
    double step = dens > 0.0 ? f / dens : 0.0;
    double x_new = x - step;
    if (!(x_new > lo && x_new < hi)) x_new = 0.5 * (lo + hi);
    if (std::abs(x_new - x) < 1e-14 * (1.0 + std::abs(x))) {
      x = x_new;
      break;
    }
    x = x_new;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Verification reports
// ---------------------------------------------------------------------------

bool VerifyReport::pass() const {
  for (const auto& l : lines) {
    if (!l.pass) return false;
  }
  return true;
}

std::string VerifyReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << "[" << (pass() ? "PASS" : "FAIL") << "] " << name << "\n";
  for (const auto& l : lines) {
    os << "  " << (l.pass ? "ok  " : "FAIL") << " " << l.metric
       << ": theoretical=" << l.theoretical << " estimate=" << l.estimate
       << " tolerance=" << l.tolerance;
    if (!l.note.empty()) os << "  (" << l.note << ")";
    os << "\n";
  }
  return os.str();
}

VerifyReport verify_power_lemma(double gamma, double exponent, std::size_t n,
                                std::uint64_t seed, double rel_tol) {
  Rng rng(seed);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::pow(rng.open01(), -gamma);
    y[i] = std::pow(x, exponent);
  }
  const auto est = hill(y, default_oracle_k(n));
  const double theory = 1.0 / (gamma * exponent);
  VerifyReport rep;
  rep.name = "power_lemma gamma=" + std::to_string(gamma) +
             " exponent=" + std::to_string(exponent);
  CheckLine line;
  line.metric = "hill_alpha(X^e)";
  line.theoretical = theory;
  line.estimate = est.alpha_hat;
  line.tolerance = rel_tol * theory;
  line.pass = std::abs(est.alpha_hat - theory) <= line.tolerance;
  line.note = "n=" + std::to_string(n) + " k=" + std::to_string(est.k);
  rep.lines.push_back(line);
  return rep;
}

VerifyReport verify_breiman(double alpha, std::size_t n, std::uint64_t seed,
                            double rel_tol) {
  Rng rng(seed);
  std::vector<double> prod(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::pow(rng.open01(), -1.0 / alpha);
    const double y = std::exp(rng.normal());
    prod[i] = x * y;
  }
  const auto est = hill(prod, default_oracle_k(n));
  VerifyReport rep;
  rep.name = "breiman_product alpha=" + std::to_string(alpha);
  CheckLine line;
  line.metric = "hill_alpha(X*Y)";
  line.theoretical = alpha;
  line.estimate = est.alpha_hat;
  line.tolerance = rel_tol * alpha;
  line.pass = std::abs(est.alpha_hat - alpha) <= line.tolerance;
  line.note = "n=" + std::to_string(n) + " k=" + std::to_string(est.k);
  rep.lines.push_back(line);
  return rep;
}

namespace {

// Exceedance counts of data over an ascending grid, in one sorted pass.
std::vector<std::size_t> exceedance_counts(std::vector<double>& data,
                                           const std::vector<double>& grid) {
  std::sort(data.begin(), data.end());
  std::vector<std::size_t> counts(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto it = std::upper_bound(data.begin(), data.end(), grid[g]);
    counts[g] = static_cast<std::size_t>(data.end() - it);
  }
  return counts;
}

std::vector<double> make_grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (double z = lo; z <= hi + 1e-12; z += step) g.push_back(z);
  return g;
}

}  // namespace

SlopeFit slope_fit_log_survival(std::span<const double> sample, double z_lo,
                                double z_hi, double z_step, std::size_t min_count) {
  std::vector<double> data(sample.begin(), sample.end());
  const auto grid = make_grid(z_lo, z_hi, z_step);
  const auto counts = exceedance_counts(data, grid);
  const auto n = static_cast<double>(data.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  SlopeFit fit;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (counts[g] < min_count) continue;
    const double z = grid[g];
    const double ls = std::log(static_cast<double>(counts[g]) / n);
    sx += z;
    sy += ls;
    sxx += z * z;
    sxy += z * ls;
    ++fit.points_used;
    fit.z_used_max = z;
  }
  if (fit.points_used < 2) {
    fit.slope = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const auto m = static_cast<double>(fit.points_used);
  fit.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return fit;
}

VerifyReport verify_log_score(double gamma, std::size_t n, std::uint64_t seed,
                              double slope_tol, double z_lo, double z_hi,
                              double z_step, std::size_t min_count) {
  Rng rng(seed);
  std::vector<double> tilde(n);
  for (std::size_t i = 0; i < n; ++i) {
    tilde[i] = transforms::soft_log(std::pow(rng.open01(), -gamma));
  }
  const SlopeFit fit = slope_fit_log_survival(tilde, z_lo, z_hi, z_step, min_count);

  VerifyReport rep;
  rep.name = "log_score_slope gamma=" + std::to_string(gamma);
  CheckLine line;
  line.metric = "slope(log S(z), z)";
  line.theoretical = -1.0 / gamma;
  line.tolerance = slope_tol;
  line.estimate = fit.slope;
  if (fit.points_used < 2) {
    line.pass = false;
    line.note = "fewer than 2 usable grid points";
  } else {
    line.pass = std::abs(line.estimate - line.theoretical) <= slope_tol;
    std::ostringstream note;
    note.precision(3);
    note << "n=" << n << " grid=[" << z_lo << "," << fit.z_used_max
         << "] step=" << z_step << " (points with <" << min_count
         << " exceedances excluded)";
    line.note = note.str();
  }
  rep.lines.push_back(line);
  return rep;
}

VerifyReport verify_potter_sandwich(double alpha, double eps, std::size_t n,
                                    std::uint64_t seed, double z_lo, double z_hi,
                                    double z_step, std::size_t min_count) {
  Rng rng(seed);
  const double gamma = 1.0 / alpha;
  std::vector<double> tilde(n);
  for (std::size_t i = 0; i < n; ++i) {
    tilde[i] = transforms::soft_log(std::pow(rng.open01(), -gamma));
  }
  const auto grid = make_grid(z_lo, z_hi, z_step);
  const auto counts = exceedance_counts(tilde, grid);

  VerifyReport rep;
  rep.name = "potter_sandwich alpha=" + std::to_string(alpha) +
             " eps=" + std::to_string(eps);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CheckLine line;
    std::ostringstream m;
    m.precision(3);
    m << "-log S(z)/z @ z=" << grid[g];
    line.metric = m.str();
    line.theoretical = alpha;
    line.tolerance = eps;
    if (counts[g] < min_count) {
      line.estimate = std::numeric_limits<double>::quiet_NaN();
      line.pass = true;
      line.note = "excluded: " + std::to_string(counts[g]) + " exceedances < " +
                  std::to_string(min_count) + " (beyond MC resolution at this n)";
    } else {
      const double s = static_cast<double>(counts[g]) / static_cast<double>(n);
      line.estimate = -std::log(s) / grid[g];
      line.pass = std::abs(line.estimate - alpha) <= eps;
      line.note = std::to_string(counts[g]) + " exceedances";
    }
    rep.lines.push_back(line);
  }
  return rep;
}

VerifyReport verify_annealing_path(double gamma, std::span<const double> path,
                                   std::size_t n, std::uint64_t seed,
                                   double rel_tol) {
  Rng rng(seed);
  std::vector<double> base(n);
  for (std::size_t i = 0; i < n; ++i) base[i] = std::pow(rng.open01(), -gamma);

  VerifyReport rep;
  rep.name = "annealing_path gamma=" + std::to_string(gamma);
  std::vector<double> work(n);
  double prev = 0.0;
  bool have_prev = false;
  for (double a : path) {
    for (std::size_t i = 0; i < n; ++i) work[i] = std::pow(base[i], a);
    const auto est = hill(work, default_oracle_k(n));
    const double theory = 1.0 / (gamma * a);
    CheckLine line;
    line.metric = "hill_alpha(X^a) @ a=" + std::to_string(a);
    line.theoretical = theory;
    line.estimate = est.alpha_hat;
    line.tolerance = rel_tol * theory;
    line.pass = std::abs(est.alpha_hat - theory) <= line.tolerance;
    if (have_prev && est.alpha_hat <= prev) {
      line.pass = false;
      line.note = "not monotone vs previous path point";
    }
    prev = est.alpha_hat;
    have_prev = true;
    rep.lines.push_back(line);
  }
  return rep;
}

}  // namespace tailflow::evt
