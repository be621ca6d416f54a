#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tailflow/datagen.hpp"
#include "tailflow/matrix.hpp"

namespace tailflow::metrics {

// Empirical quantile: ascending order statistic at index ceil(p n).
double empirical_quantile(std::span<const double> v, double p);

// 1D empirical Wasserstein-1. If the sizes differ, the larger sample is
// subsampled without replacement (seeded) to the smaller size.
double w1_1d(std::span<const double> a, std::span<const double> b,
             std::uint64_t seed = 0);

struct RiskErrors {
  double var_rel = 0.0;
  double cvar_rel = 0.0;
};

// VaR at `level` of each sample plus mean exceedance beyond it; relative
// errors of generated vs reference, on the upper tail of the signed values.
RiskErrors risk_metrics(std::span<const double> gen, std::span<const double> ref,
                        double level);

double extreme_quantile_err(std::span<const double> gen,
                            std::span<const double> ref, double p);

// Kendall's tau-b by merge-sort inversion counting, O(n log n).
double kendall_tau(std::span<const double> x, std::span<const double> y);

// Mean absolute Kendall-tau difference over coordinate pairs; both samples
// are subsampled to a common size (at most max_rows).
double ake(const Matrix& gen, const Matrix& ref, std::uint64_t seed = 0,
           std::size_t max_rows = 5000);

// Sliced Wasserstein-2 with P seeded projections: sqrt of the mean over
// directions of the squared 1D W2 between projected samples.
double sliced_wasserstein(const Matrix& gen, const Matrix& ref,
                          std::size_t projections = 512, std::uint64_t seed = 0);

// Sliced W2 between the empirical angular measures of the top-ceil(sqrt(n))
// rows by Euclidean norm, normalized to the unit sphere.
double angular_w2(const Matrix& gen, const Matrix& ref,
                  std::size_t projections = 512, std::uint64_t seed = 0);

// Energy distance between the empirical measures (V-statistic form, which is
// nonnegative by the metric property); samples larger than `cap` rows are
// subsampled.
double energy_distance(const Matrix& gen, const Matrix& ref,
                       std::uint64_t seed = 0, std::size_t cap = 2000);

struct MetricsReport {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  double w1_all = kNaN;
  double w1_pareto = kNaN;  // NaN when the reference has no Pareto coordinates
  double w1_gauss = kNaN;
  double hill_err = kNaN;
  double var99_rel = kNaN;
  double cvar99_rel = kNaN;
  double q995_rel = kNaN;
  double q999_rel = kNaN;
  double ake = kNaN;
  double angular_w2 = kNaN;
  double sliced_w = kNaN;
  double energy = kNaN;
  bool diverged = false;
  bool severe = false;        // W1 over all coordinates > 1e3
  bool catastrophic = false;  // W1 over Pareto coordinates > 1

  static std::string csv_header();
  std::string to_csv_row() const;
  static MetricsReport from_csv_fields(std::span<const std::string> fields);
  static constexpr std::size_t kCsvFieldCount = 15;
};

// Full evaluation of a generated sample against a labeled reference sample.
MetricsReport evaluate(const datagen::SampleMatrix& gen,
                       const datagen::SampleMatrix& ref, std::uint64_t seed = 0);

}  // namespace tailflow::metrics
