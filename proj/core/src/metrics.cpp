#include "tailflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tailflow/evt.hpp"
#include "tailflow/rng.hpp"

namespace tailflow::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> subsample(std::span<const double> v, std::size_t m, Rng& rng) {
  const auto idx = sample_without_replacement(rng, v.size(), m);
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = v[idx[i]];
  return out;
}

Matrix subsample_rows(const Matrix& m, std::size_t k, Rng& rng) {
  const auto idx = sample_without_replacement(rng, m.rows(), k);
  Matrix out(k, m.cols());
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(idx[i], j);
  }
  return out;
}

}  // namespace

double empirical_quantile(std::span<const double> v, double p) {
  if (v.empty()) throw std::invalid_argument("empirical_quantile: empty input");
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("empirical_quantile: p must be in (0,1)");
  }
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  auto idx = static_cast<std::size_t>(std::ceil(p * n));
  idx = std::min(std::max<std::size_t>(idx, 1), s.size());
  return s[idx - 1];
}

double w1_1d(std::span<const double> a, std::span<const double> b,
             std::uint64_t seed) {
  if (a.empty() || b.empty()) throw std::invalid_argument("w1_1d: empty input");
  const std::size_t m = std::min(a.size(), b.size());
  Rng rng(seed);
  std::vector<double> sa = a.size() > m ? subsample(a, m, rng)
                                        : std::vector<double>(a.begin(), a.end());
  std::vector<double> sb = b.size() > m ? subsample(b, m, rng)
                                        : std::vector<double>(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum += std::abs(sa[i] - sb[i]);
  return sum / static_cast<double>(m);
}

RiskErrors risk_metrics(std::span<const double> gen, std::span<const double> ref,
                        double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("risk_metrics: level must be in (0,1)");
  }
  const double var_ref = empirical_quantile(ref, level);
  const double var_gen = empirical_quantile(gen, level);
  if (var_ref == 0.0) {
    throw std::invalid_argument("risk_metrics: reference VaR is zero; relative error undefined");
  }
  const auto cvar = [](std::span<const double> v, double var) {
    std::vector<double> exceed;
    for (double x : v) {
      if (x > var) exceed.push_back(x);
    }
    if (exceed.empty()) return var;
    std::sort(exceed.begin(), exceed.end());  // order-independent summation
    double sum = 0.0;
    for (double x : exceed) sum += x;
    return sum / static_cast<double>(exceed.size());
  };
  const double cvar_ref = cvar(ref, var_ref);
  const double cvar_gen = cvar(gen, var_gen);
  RiskErrors out;
  out.var_rel = std::abs(var_gen - var_ref) / std::abs(var_ref);
  out.cvar_rel = cvar_ref != 0.0 ? std::abs(cvar_gen - cvar_ref) / std::abs(cvar_ref)
                                 : kInf;
  return out;
}

double extreme_quantile_err(std::span<const double> gen,
                            std::span<const double> ref, double p) {
  const double q_ref = empirical_quantile(ref, p);
  const double q_gen = empirical_quantile(gen, p);
  if (q_ref == 0.0) {
    throw std::invalid_argument("extreme_quantile_err: reference quantile is zero");
  }
  return std::abs(q_gen - q_ref) / std::abs(q_ref);
}

// ---------------------------------------------------------------------------
// Kendall's tau (Knight's algorithm)
// ---------------------------------------------------------------------------

namespace {

// Merge sort counting strict inversions.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf,
                          std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, out = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[out++] = v[j++];
    } else {
      buf[out++] = v[i++];
    }
  }
  while (i < mid) buf[out++] = v[i++];
  while (j < hi) buf[out++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

std::uint64_t tie_pairs(std::span<const double> sorted) {
  std::uint64_t total = 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      total += static_cast<std::uint64_t>(run) * (run - 1) / 2;
      run = 1;
    }
  }
  total += static_cast<std::uint64_t>(run) * (run - 1) / 2;
  return total;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (y.size() != n) throw std::invalid_argument("kendall_tau: length mismatch");
  if (n < 2) throw std::invalid_argument("kendall_tau: need at least 2 points");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];

  // Pairs tied in x, and tied in both, from the (x, y)-sorted sequence.
  std::uint64_t n1 = 0, n3 = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && x[order[j]] == x[order[i]]) ++j;
      const std::uint64_t run = j - i;
      n1 += run * (run - 1) / 2;
      std::size_t a = i;
      while (a < j) {
        std::size_t b = a + 1;
        while (b < j && ys[b] == ys[a]) ++b;
        const std::uint64_t r2 = b - a;
        n3 += r2 * (r2 - 1) / 2;
        a = b;
      }
      i = j;
    }
  }

  std::vector<double> buf(n);
  const std::uint64_t discordant = merge_count(ys, buf, 0, n);
  const std::uint64_t n2 = tie_pairs(ys);  // ys is sorted now
  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;

  const double s = static_cast<double>(n0) - static_cast<double>(n1) -
                   static_cast<double>(n2) + static_cast<double>(n3) -
                   2.0 * static_cast<double>(discordant);
  const double denom = std::sqrt((static_cast<double>(n0) - static_cast<double>(n1)) *
                                 (static_cast<double>(n0) - static_cast<double>(n2)));
  if (denom == 0.0) throw std::invalid_argument("kendall_tau: degenerate (constant) input");
  return s / denom;
}

double ake(const Matrix& gen, const Matrix& ref, std::uint64_t seed,
           std::size_t max_rows) {
  if (gen.cols() != ref.cols()) throw std::invalid_argument("ake: dimension mismatch");
  const std::size_t d = gen.cols();
  if (d < 2) throw std::invalid_argument("ake: need at least 2 coordinates");
  const std::size_t m = std::min({gen.rows(), ref.rows(), max_rows});
  Rng rng_g(derive_seed(seed, 1));
  Rng rng_r(derive_seed(seed, 2));
  const Matrix g = gen.rows() > m ? subsample_rows(gen, m, rng_g) : gen;
  const Matrix r = ref.rows() > m ? subsample_rows(ref, m, rng_r) : ref;

  std::vector<std::vector<double>> gcols(d), rcols(d);
  for (std::size_t j = 0; j < d; ++j) {
    gcols[j] = g.column(j);
    rcols[j] = r.column(j);
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      sum += std::abs(kendall_tau(gcols[i], gcols[j]) - kendall_tau(rcols[i], rcols[j]));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Sliced Wasserstein
// ---------------------------------------------------------------------------

namespace {

// sqrt of the mean over seeded unit directions of the squared 1D W2 between
// the projected samples. Sizes are equalized by seeded subsampling up front.
double sliced_w2_impl(const Matrix& a, const Matrix& b, std::size_t projections,
                      std::uint64_t seed) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw std::invalid_argument("sliced_wasserstein: empty input");
  }
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  }
  const std::size_t d = a.cols();
  const std::size_t m = std::min(a.rows(), b.rows());
  Rng rng(seed);
  const Matrix sa = a.rows() > m ? subsample_rows(a, m, rng) : a;
  const Matrix sb = b.rows() > m ? subsample_rows(b, m, rng) : b;

  std::vector<double> dir(d), pa(m), pb(m);
  double total = 0.0;
  for (std::size_t p = 0; p < projections; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dir[j] = rng.normal();
        norm += dir[j] * dir[j];
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (std::size_t j = 0; j < d; ++j) dir[j] /= norm;

    for (std::size_t i = 0; i < m; ++i) {
      double sga = 0.0, sgb = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sga += sa(i, j) * dir[j];
        sgb += sb(i, j) * dir[j];
      }
      pa[i] = sga;
      pb[i] = sgb;
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w2sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double diff = pa[i] - pb[i];
      w2sq += diff * diff;
    }
    total += w2sq / static_cast<double>(m);
  }
  return std::sqrt(total / static_cast<double>(projections));
}

// Rows of largest Euclidean norm, normalized to the unit sphere.
Matrix angular_extremes(const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const auto k = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x(i, j) * x(i, j);
    norms[i] = std::sqrt(s);
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (norms[a] != norms[b]) return norms[a] > norms[b];
    return a < b;
  });
  Matrix out(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    const double nrm = norms[idx[i]];
    if (nrm == 0.0) {
      throw std::invalid_argument("angular_w2: all-zero rows among selected extremes");
    }
    for (std::size_t j = 0; j < d; ++j) out(i, j) = x(idx[i], j) / nrm;
  }
  return out;
}

}  // namespace

double sliced_wasserstein(const Matrix& gen, const Matrix& ref,
                          std::size_t projections, std::uint64_t seed) {
  return sliced_w2_impl(gen, ref, projections, seed);
}

double angular_w2(const Matrix& gen, const Matrix& ref, std::size_t projections,
                  std::uint64_t seed) {
  if (gen.rows() < 4 || ref.rows() < 4) {
    throw std::invalid_argument("angular_w2: need at least 4 rows per sample");
  }
  const Matrix ag = angular_extremes(gen);
  const Matrix ar = angular_extremes(ref);
  return sliced_w2_impl(ag, ar, projections, seed);
}

// ---------------------------------------------------------------------------
// Energy distance
// ---------------------------------------------------------------------------

namespace {

double mean_cross_distance(const Matrix& a, const Matrix& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        s += diff * diff;
      }
      sum += std::sqrt(s);
    }
  }
  return sum / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

double mean_within_distance(const Matrix& a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.rows(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - a(j, c);
        s += diff * diff;
      }
      sum += std::sqrt(s);
    }
  }
  const auto n = static_cast<double>(a.rows());
  return 2.0 * sum / (n * n);  // V-statistic: diagonal terms are zero
}

}  // namespace

namespace {

// Lexicographic row order: canonicalizes the summation order so the estimate
// is exactly invariant under row permutations.
Matrix sort_rows(const Matrix& m) {
  std::vector<std::size_t> idx(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (m(a, j) != m(b, j)) return m(a, j) < m(b, j);
    }
    return false;
  });
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(idx[i], j);
  }
  return out;
}

}  // namespace

double energy_distance(const Matrix& gen, const Matrix& ref, std::uint64_t seed,
                       std::size_t cap) {
  if (gen.rows() < 2 || ref.rows() < 2) {
    throw std::invalid_argument("energy_distance: need at least 2 rows per sample");
  }
  if (gen.cols() != ref.cols()) {
    throw std::invalid_argument("energy_distance: dimension mismatch");
  }
  Rng rng_g(derive_seed(seed, 1));
  Rng rng_r(derive_seed(seed, 2));
  const Matrix g = sort_rows(gen.rows() > cap ? subsample_rows(gen, cap, rng_g) : gen);
  const Matrix r = sort_rows(ref.rows() > cap ? subsample_rows(ref, cap, rng_r) : ref);
  return 2.0 * mean_cross_distance(g, r) - mean_within_distance(g) -
         mean_within_distance(r);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::csv_header() {
  return "w1_all,w1_pareto,w1_gauss,hill_err,var99_rel,cvar99_rel,q995_rel,"
         "q999_rel,ake,angular_w2,sliced_w,energy,diverged,severe,catastrophic";
}

std::string MetricsReport::to_csv_row() const {
  std::ostringstream os;
  os << fmt(w1_all) << ',' << fmt(w1_pareto) << ',' << fmt(w1_gauss) << ','
     << fmt(hill_err) << ',' << fmt(var99_rel) << ',' << fmt(cvar99_rel) << ','
     << fmt(q995_rel) << ',' << fmt(q999_rel) << ',' << fmt(ake) << ','
     << fmt(angular_w2) << ',' << fmt(sliced_w) << ',' << fmt(energy) << ','
     << (diverged ? 1 : 0) << ',' << (severe ? 1 : 0) << ',' << (catastrophic ? 1 : 0);
  return os.str();
}

MetricsReport MetricsReport::from_csv_fields(std::span<const std::string> fields) {
  if (fields.size() != kCsvFieldCount) {
    throw std::invalid_argument("MetricsReport: expected " +
                                std::to_string(kCsvFieldCount) + " fields");
  }
  MetricsReport r;
  std::size_t i = 0;
  const auto next = [&]() { return std::stod(fields[i++]); };
  r.w1_all = next();
  r.w1_pareto = next();
  r.w1_gauss = next();
  r.hill_err = next();
  r.var99_rel = next();
  r.cvar99_rel = next();
  r.q995_rel = next();
  r.q999_rel = next();
  r.ake = next();
  r.angular_w2 = next();
  r.sliced_w = next();
  r.energy = next();
  r.diverged = fields[i++] == "1";
  r.severe = fields[i++] == "1";
  r.catastrophic = fields[i++] == "1";
  return r;
}

MetricsReport evaluate(const datagen::SampleMatrix& gen,
                       const datagen::SampleMatrix& ref, std::uint64_t seed) {
  const Matrix& g = gen.data;
  const Matrix& r = ref.data;
  if (g.cols() != r.cols()) throw std::invalid_argument("evaluate: dimension mismatch");
  const std::size_t d = g.cols();
  if (ref.labels.size() != d) {
    throw std::invalid_argument("evaluate: reference must carry margin labels");
  }

  MetricsReport rep;
  if (!g.all_finite()) {
    rep.diverged = true;
    rep.severe = true;
    rep.catastrophic = true;
    rep.w1_all = rep.w1_pareto = rep.w1_gauss = kInf;
    rep.hill_err = rep.var99_rel = rep.cvar99_rel = kInf;
    rep.q995_rel = rep.q999_rel = kInf;
    rep.ake = rep.angular_w2 = rep.sliced_w = rep.energy = kInf;
    return rep;
  }

  std::vector<std::size_t> pareto_cols, gauss_cols;
  for (std::size_t j = 0; j < d; ++j) {
    if (ref.labels[j] == datagen::MarginLabel::Pareto) pareto_cols.push_back(j);
    if (ref.labels[j] == datagen::MarginLabel::Gaussian) gauss_cols.push_back(j);
  }

  // Per-coordinate W1 with a sub-seed per coordinate.
  std::vector<double> w1(d);
  for (std::size_t j = 0; j < d; ++j) {
    w1[j] = w1_1d(g.column(j), r.column(j), derive_seed(seed, 100 + j));
  }
  const auto mean_over = [&](const std::vector<std::size_t>& cols) {
    if (cols.empty()) return MetricsReport::kNaN;
    double s = 0.0;
    for (auto j : cols) s += w1[j];
    return s / static_cast<double>(cols.size());
  };
  double w1_all_sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) w1_all_sum += w1[j];
  rep.w1_all = w1_all_sum / static_cast<double>(d);
  rep.w1_pareto = mean_over(pareto_cols);
  rep.w1_gauss = mean_over(gauss_cols);

  // Tail metrics over the Pareto-labeled coordinates.
  if (!pareto_cols.empty()) {
    double hill_sum = 0.0, var_sum = 0.0, cvar_sum = 0.0, q995_sum = 0.0,
           q999_sum = 0.0;
    const std::size_t k_gen = evt::default_gate_k(g.rows());
    const std::size_t k_ref = evt::default_gate_k(r.rows());
    for (auto j : pareto_cols) {
      const auto gc = g.column(j);
      const auto rc = r.column(j);
      try {
        const double a_gen = evt::hill(gc, k_gen).alpha_hat;
        const double a_ref = evt::hill(rc, k_ref).alpha_hat;
        hill_sum += std::abs(a_gen - a_ref) / a_ref;
      } catch (const std::invalid_argument&) {
        hill_sum = kInf;  // degenerate generated tail
      }
      try {
        const auto risk = risk_metrics(gc, rc, 0.99);
        var_sum += risk.var_rel;
        cvar_sum += risk.cvar_rel;
        q995_sum += extreme_quantile_err(gc, rc, 0.995);
        q999_sum += extreme_quantile_err(gc, rc, 0.999);
      } catch (const std::invalid_argument&) {
        var_sum = cvar_sum = q995_sum = q999_sum = kInf;
      }
    }
    const auto np = static_cast<double>(pareto_cols.size());
    rep.hill_err = hill_sum / np;
    rep.var99_rel = var_sum / np;
    rep.cvar99_rel = cvar_sum / np;
    rep.q995_rel = q995_sum / np;
    rep.q999_rel = q999_sum / np;
  }

  // Degenerate generated samples (constant or all-zero columns) count as
  // infinitely bad on the joint metrics rather than aborting the report.
  try {
    if (d >= 2) rep.ake = ake(g, r, derive_seed(seed, 1));
  } catch (const std::invalid_argument&) {
    rep.ake = kInf;
  }
  try {
    rep.angular_w2 = (g.rows() >= 4 && r.rows() >= 4)
                         ? angular_w2(g, r, 512, derive_seed(seed, 2))
                         : MetricsReport::kNaN;
  } catch (const std::invalid_argument&) {
    rep.angular_w2 = kInf;
  }
  rep.sliced_w = sliced_wasserstein(g, r, 512, derive_seed(seed, 3));
  rep.energy = energy_distance(g, r, derive_seed(seed, 4));

  rep.severe = rep.w1_all > 1e3;
  rep.catastrophic = !std::isnan(rep.w1_pareto) && rep.w1_pareto > 1.0;
  return rep;
}

}  // namespace tailflow::metrics
