#include "tailflow/datagen.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "tailflow/evt.hpp"
#include "tailflow/rng.hpp"

namespace tailflow::datagen {

namespace {

// Copula outputs are clamped into [kUEps, 1 - kUEps] so that downstream
// quantile composition never sees 0 or 1. The standard normal CDF rounds to
// 1.0 for arguments above ~8.3, which Box-Muller can reach.
constexpr double kUEps = 1e-15;

double clamp_unit(double u) { return std::min(std::max(u, kUEps), 1.0 - kUEps); }

std::uint64_t double_bits(double x) { return std::bit_cast<std::uint64_t>(x); }

}  // namespace

CopulaKind copula_from_string(const std::string& s) {
  if (s == "gaussian") return CopulaKind::Gaussian;
  if (s == "gumbel") return CopulaKind::Gumbel;
  if (s == "husler_reiss" || s == "husler-reiss" || s == "hr")
    return CopulaKind::HuslerReiss;
  if (s == "iid") return CopulaKind::IID;
  throw std::invalid_argument("unknown copula: " + s);
}

std::string to_string(CopulaKind k) {
  switch (k) {
    case CopulaKind::Gaussian: return "gaussian";
    case CopulaKind::Gumbel: return "gumbel";
    case CopulaKind::HuslerReiss: return "husler_reiss";
    case CopulaKind::IID: return "iid";
  }
  return "?";
}

std::string to_string(MarginLabel l) {
  switch (l) {
    case MarginLabel::Pareto: return "pareto";
    case MarginLabel::Gaussian: return "gaussian";
    case MarginLabel::Other: return "other";
  }
  return "?";
}

MarginLabel label_from_string(const std::string& s) {
  if (s == "pareto") return MarginLabel::Pareto;
  if (s == "gaussian") return MarginLabel::Gaussian;
  if (s == "other") return MarginLabel::Other;
  throw std::invalid_argument("unknown margin label: " + s);
}

void DatasetSpec::validate() const {
  if (d == 0) throw std::invalid_argument("DatasetSpec: d must be positive");
  if (margins.size() != d) {
    throw std::invalid_argument("DatasetSpec: margins length must equal d");
  }
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw std::invalid_argument("DatasetSpec: split sizes must be positive");
  }
  switch (copula.kind) {
    case CopulaKind::Gaussian:
    case CopulaKind::Gumbel:
      if (!(copula.param > 0.0 && copula.param < 1.0)) {
        throw std::invalid_argument("DatasetSpec: Kendall tau must be in (0,1)");
      }
      break;
    case CopulaKind::HuslerReiss:
      if (!(copula.param > 0.0 && copula.param < 1.0)) {
        throw std::invalid_argument("DatasetSpec: rho must be in (0,1)");
      }
      break;
    case CopulaKind::IID:
      break;
  }
  for (const auto& m : margins) {
    if (m.kind == MarginKind::SymmetrizedPareto && !(m.param > 0.0)) {
      throw std::invalid_argument("DatasetSpec: Pareto tail index must be > 0");
    }
    if (m.kind == MarginKind::StudentT && !(m.param > 0.0)) {
      throw std::invalid_argument("DatasetSpec: Student-t nu must be > 0");
    }
  }
}

std::uint64_t DatasetSpec::fingerprint() const {
  std::uint64_t h = 0x7461696c666c6f77ull;  // "tailflow"
  h = hash_combine(h, static_cast<std::uint64_t>(copula.kind));
  h = hash_combine(h, double_bits(copula.param));
  h = hash_combine(h, d);
  for (const auto& m : margins) {
    h = hash_combine(h, static_cast<std::uint64_t>(m.kind));
    h = hash_combine(h, double_bits(m.param));
  }
  h = hash_combine(h, n_train);
  h = hash_combine(h, n_val);
  h = hash_combine(h, n_test);
  h = hash_combine(h, seed);
  return h;
}

DatasetSpec DatasetSpec::benchmark(CopulaKind copula, double dependence,
                                   std::size_t d, double alpha,
                                   std::size_t n_train, std::size_t n_val,
                                   std::size_t n_test, std::uint64_t seed) {
  DatasetSpec spec;
  spec.copula = {copula, dependence};
  spec.d = d;
  const auto n_pareto =
      static_cast<std::size_t>(std::ceil(0.7 * static_cast<double>(d)));
  spec.margins.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (j < n_pareto) {
      spec.margins[j] = {MarginKind::SymmetrizedPareto, alpha};
    } else {
      spec.margins[j] = {MarginKind::Gaussian, 0.0};
    }
  }
  spec.n_train = n_train;
  spec.n_val = n_val;
  spec.n_test = n_test;
  spec.seed = seed;
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Gaussian copula: equicorrelation rho = sin(pi tau / 2), one common factor.
// ---------------------------------------------------------------------------

Matrix sample_gaussian_copula(double tau, std::size_t d, std::size_t n,
                              std::uint64_t seed) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("sample_gaussian_copula: tau must be in (0,1)");
  }
  const double rho = std::sin(0.5 * std::numbers::pi * tau);
  const double w_common = std::sqrt(rho);
  const double w_own = std::sqrt(1.0 - rho);
  Rng rng(seed);
  Matrix u(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double z0 = d > 1 ? rng.normal() : 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double z = d > 1 ? w_common * z0 + w_own * rng.normal() : rng.normal();
      u(i, j) = clamp_unit(evt::normal_cdf(z));
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Gumbel copula, Marshall-Olkin construction. theta = 1/(1-tau); the mixing
// variable is positive alpha-stable with alpha = 1/theta, sampled by Kanter's
// formula: V = (sin((1-a)U)/W)^{(1-a)/a} * sin(aU) / sin(U)^{1/a} with
// U ~ Uniform(0, pi), W ~ Exp(1), so that E[exp(-tV)] = exp(-t^a).
// ---------------------------------------------------------------------------

namespace {

double positive_stable(double a, Rng& rng) {
  if (a >= 1.0 - 1e-12) return 1.0;  // degenerate limit, independence copula
  const double u = rng.open01() * std::numbers::pi;
  const double w = rng.exponential();
  return std::pow(std::sin((1.0 - a) * u) / w, (1.0 - a) / a) * std::sin(a * u) /
         std::pow(std::sin(u), 1.0 / a);
}

}  // namespace

Matrix sample_gumbel_copula(double tau, std::size_t d, std::size_t n,
                            std::uint64_t seed) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::invalid_argument("sample_gumbel_copula: tau must be in (0,1)");
  }
  const double theta = 1.0 / (1.0 - tau);
  const double a = 1.0 / theta;  // = 1 - tau
  Rng rng(seed);
  Matrix u(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = positive_stable(a, rng);
    for (std::size_t j = 0; j < d; ++j) {
      const double e = rng.exponential();
      u(i, j) = clamp_unit(std::exp(-std::pow(e / v, a)));
    }
  }
  return u;
}

// ---------------------------------------------------------------------------
// Hüsler-Reiss copula with AR(1) variogram Gamma_ij = 2 (1 - rho^{|i-j|}).
//
// Exact simulation by extremal functions (Dombry-Engelke-Oesting). The
// extremal function anchored at coordinate k is Y = exp(G) with G Gaussian,
// mean mu_j = -Gamma_jk / 2 and covariance
// Sigma_k(i,j) = (Gamma_ik + Gamma_jk - Gamma_ij) / 2, so Y_k = 1 and
// E[Y_j] = 1. Unit-Fréchet margins are mapped to uniforms at the end.
// ---------------------------------------------------------------------------

namespace {

struct HrSimulator {
  std::size_t d;
  Eigen::MatrixXd gamma;                 // variogram matrix
  std::vector<Eigen::MatrixXd> chol;     // (d-1)x(d-1) Cholesky factor per anchor
  std::vector<Eigen::VectorXd> mean;     // length d-1 per anchor (skipping k)

  explicit HrSimulator(double rho, std::size_t d_) : d(d_) {
    gamma.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            2.0 * (1.0 - std::pow(rho, static_cast<double>(i > j ? i - j : j - i)));
      }
    }
    chol.resize(d);
    mean.resize(d);
    const auto m = static_cast<Eigen::Index>(d - 1);
    for (std::size_t k = 0; k < d; ++k) {
      Eigen::MatrixXd sigma(m, m);
      Eigen::VectorXd mu(m);
      Eigen::Index a = 0;
      for (std::size_t i = 0; i < d; ++i) {
        if (i == k) continue;
        mu(a) = -0.5 * gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        Eigen::Index b = 0;
        for (std::size_t j = 0; j < d; ++j) {
          if (j == k) continue;
          sigma(a, b) = 0.5 * (gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) +
                               gamma(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) -
                               gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
          ++b;
        }
        ++a;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(sigma);
      if (llt.info() != Eigen::Success) {
        // AR(1) variograms give strictly positive definite Sigma_k; a tiny
        // ridge guards against roundoff near rho -> 1.
        sigma.diagonal().array() += 1e-12 * (1.0 + sigma.diagonal().maxCoeff());
        llt.compute(sigma);
        if (llt.info() != Eigen::Success) {
          throw std::runtime_error("husler_reiss: covariance factorization failed");
        }
      }
      chol[k] = llt.matrixL();
      mean[k] = mu;
    }
  }

  // One extremal function anchored at k; y has length d with y[k] = 1.
  void extremal_function(std::size_t k, Rng& rng, std::vector<double>& y) const {
    const auto m = static_cast<Eigen::Index>(d - 1);
    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z(i) = rng.normal();
    Eigen::VectorXd g = chol[k] * z + mean[k];
    Eigen::Index a = 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (j == k) {
        y[j] = 1.0;
      } else {
        y[j] = std::exp(g(a));
        ++a;
      }
    }
  }

  // One sample with unit Fréchet margins.
  void draw(Rng& rng, std::vector<double>& z, std::vector<double>& y) const {
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      double acc = rng.exponential();
      double zeta = 1.0 / acc;
      while (zeta > z[k]) {
        extremal_function(k, rng, y);
        bool fresh = true;
        for (std::size_t j = 0; j < k; ++j) {
          if (zeta * y[j] >= z[j]) {
            fresh = false;
            break;
          }
        }
        if (fresh) {
          for (std::size_t j = 0; j < d; ++j) z[j] = std::max(z[j], zeta * y[j]);
        }
        acc += rng.exponential();
        zeta = 1.0 / acc;
      }
    }
  }
};

}  // namespace

Matrix sample_husler_reiss(double rho, std::size_t d, std::size_t n,
                           std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw std::invalid_argument("sample_husler_reiss: rho must be in (0,1)");
  }
  if (d == 1) return sample_iid_uniform(1, n, seed);
  HrSimulator sim(rho, d);
  Rng rng(seed);
  Matrix u(n, d);
  std::vector<double> z(d), y(d);
  for (std::size_t i = 0; i < n; ++i) {
    sim.draw(rng, z, y);
    for (std::size_t j = 0; j < d; ++j) {
      u(i, j) = clamp_unit(std::exp(-1.0 / z[j]));  // unit Fréchet CDF
    }
  }
  return u;
}

double hr_bivariate_extremal_coefficient(double gamma12) {
  return 2.0 * evt::normal_cdf(0.5 * std::sqrt(gamma12));
}

Matrix sample_iid_uniform(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix u(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) u(i, j) = rng.open01();
  }
  return u;
}

Matrix sample_copula(const CopulaSpec& copula, std::size_t d, std::size_t n,
                     std::uint64_t seed) {
  switch (copula.kind) {
    case CopulaKind::Gaussian: return sample_gaussian_copula(copula.param, d, n, seed);
    case CopulaKind::Gumbel: return sample_gumbel_copula(copula.param, d, n, seed);
    case CopulaKind::HuslerReiss: return sample_husler_reiss(copula.param, d, n, seed);
    case CopulaKind::IID: return sample_iid_uniform(d, n, seed);
  }
  throw std::logic_error("sample_copula: unreachable");
}

// ---------------------------------------------------------------------------
// Margins
// ---------------------------------------------------------------------------

SampleMatrix compose_margins(const Matrix& u, const std::vector<Margin>& margins) {
  if (margins.size() != u.cols()) {
    throw std::invalid_argument("compose_margins: margins length must equal columns");
  }
  SampleMatrix out;
  out.data = Matrix(u.rows(), u.cols());
  out.labels.resize(u.cols());
  for (std::size_t j = 0; j < u.cols(); ++j) {
    const auto& m = margins[j];
    switch (m.kind) {
      case MarginKind::SymmetrizedPareto: out.labels[j] = MarginLabel::Pareto; break;
      case MarginKind::Gaussian: out.labels[j] = MarginLabel::Gaussian; break;
      case MarginKind::StudentT: out.labels[j] = MarginLabel::Other; break;
    }
    const evt::ParetoMargin pareto{m.kind == MarginKind::SymmetrizedPareto
                                       ? 1.0 / m.param
                                       : 0.0,
                                   true};
    for (std::size_t i = 0; i < u.rows(); ++i) {
      const double p = u(i, j);
      if (!(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument(
            "compose_margins: uniform variate outside (0,1) at row " +
            std::to_string(i) + ", column " + std::to_string(j));
      }
      switch (m.kind) {
        case MarginKind::SymmetrizedPareto:
          out.data(i, j) = evt::pareto_quantile(pareto, p);
          break;
        case MarginKind::Gaussian:
          out.data(i, j) = evt::normal_quantile(p);
          break;
        case MarginKind::StudentT:
          out.data(i, j) = evt::student_t_quantile(p, m.param);
          break;
      }
    }
  }
  return out;
}

SampleMatrix sample_hickling(std::size_t d, double nu, std::size_t n,
                             std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("sample_hickling: d must be >= 2");
  if (!(nu > 0.0)) throw std::invalid_argument("sample_hickling: nu must be > 0");
  Rng rng(seed);
  SampleMatrix out;
  out.data = Matrix(n, d);
  out.labels.assign(d, MarginLabel::Other);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j + 1 < d; ++j) {
      const double z = rng.normal();
      const double chi2 = 2.0 * rng.gamma(0.5 * nu);
      out.data(i, j) = z / std::sqrt(chi2 / nu);
    }
    out.data(i, d - 1) = out.data(i, d - 2) + rng.normal();
  }
  std::uint64_t h = 0x6869636b6c696e67ull;  // "hickling"
  h = hash_combine(h, d);
  h = hash_combine(h, double_bits(nu));
  h = hash_combine(h, n);
  out.fingerprint = hash_combine(h, seed);
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

SampleMatrix load_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  std::size_t expected_cols = 0;
  bool header_skipped = !has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ls, cell, ',')) {
      ++col;
      // strtod rather than stod: stod throws out_of_range on subnormals.
      const char* begin = cell.c_str();
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      bool ok = end != begin;
      while (ok && *end != '\0') {
        if (!std::isspace(static_cast<unsigned char>(*end))) ok = false;
        ++end;
      }
      if (!ok || !std::isfinite(v)) {
        throw std::runtime_error("load_csv: non-numeric cell '" + cell + "' at row " +
                                 std::to_string(line_no) + ", column " +
                                 std::to_string(col));
      }
      row.push_back(v);
    }
    if (expected_cols == 0) {
      expected_cols = row.size();
    } else if (row.size() != expected_cols) {
      throw std::runtime_error("load_csv: ragged row " + std::to_string(line_no) +
                               " (" + std::to_string(row.size()) + " cells, expected " +
                               std::to_string(expected_cols) + ")");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);
  SampleMatrix out;
  out.data = Matrix(rows.size(), expected_cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < expected_cols; ++j) out.data(i, j) = rows[i][j];
  }
  out.labels.assign(expected_cols, MarginLabel::Other);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t n_total = spec.n_train + spec.n_val + spec.n_test;
  const Matrix u = sample_copula(spec.copula, spec.d, n_total, spec.seed);
  SampleMatrix full = compose_margins(u, spec.margins);
  full.fingerprint = spec.fingerprint();

  Dataset ds;
  ds.spec = spec;
  auto cut = [&](std::size_t lo, std::size_t hi) {
    SampleMatrix part;
    part.data = full.data.slice_rows(lo, hi);
    part.labels = full.labels;
    part.fingerprint = full.fingerprint;
    return part;
  };
  ds.train = cut(0, spec.n_train);
  ds.val = cut(spec.n_train, spec.n_train + spec.n_val);
  ds.test = cut(spec.n_train + spec.n_val, n_total);
  return ds;
}

}  // namespace tailflow::datagen
