#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tailflow/matrix.hpp"

namespace tailflow::datagen {

enum class CopulaKind { Gaussian, Gumbel, HuslerReiss, IID };
CopulaKind copula_from_string(const std::string& s);
std::string to_string(CopulaKind k);

// param is Kendall's tau for Gaussian/Gumbel, the AR(1) coefficient rho for
// Hüsler-Reiss, and unused for IID.
struct CopulaSpec {
  CopulaKind kind = CopulaKind::IID;
  double param = 0.5;
};

enum class MarginKind { SymmetrizedPareto, Gaussian, StudentT };
enum class MarginLabel { Pareto, Gaussian, Other };

// param is the tail index alpha for SymmetrizedPareto and the degrees of
// freedom nu for StudentT; unused for Gaussian.
struct Margin {
  MarginKind kind = MarginKind::Gaussian;
  double param = 0.0;
};

std::string to_string(MarginLabel l);
MarginLabel label_from_string(const std::string& s);

struct DatasetSpec {
  CopulaSpec copula;
  std::size_t d = 0;
  std::vector<Margin> margins;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t fingerprint() const;

  // The benchmark margin layout: first ceil(0.7 d) coordinates symmetrized
  // Pareto(alpha), the rest standard Gaussian.
  static DatasetSpec benchmark(CopulaKind copula, double dependence,
                               std::size_t d, double alpha, std::size_t n_train,
                               std::size_t n_val, std::size_t n_test,
                               std::uint64_t seed);
};

struct SampleMatrix {
  Matrix data;
  std::vector<MarginLabel> labels;
  std::uint64_t fingerprint = 0;
};

// Copula samplers; output is n x d with entries strictly inside (0, 1).
Matrix sample_gaussian_copula(double tau, std::size_t d, std::size_t n,
                              std::uint64_t seed);
Matrix sample_gumbel_copula(double tau, std::size_t d, std::size_t n,
                            std::uint64_t seed);
Matrix sample_husler_reiss(double rho, std::size_t d, std::size_t n,
                           std::uint64_t seed);
Matrix sample_iid_uniform(std::size_t d, std::size_t n, std::uint64_t seed);
Matrix sample_copula(const CopulaSpec& copula, std::size_t d, std::size_t n,
                     std::uint64_t seed);

// Closed-form bivariate extremal coefficient of the Hüsler-Reiss copula with
// variogram entry gamma12: 2 * Phi(sqrt(gamma12) / 2). Oracle for validating
// the exact simulation.
double hr_bivariate_extremal_coefficient(double gamma12);

// Inverse-CDF composition of margins onto uniform variates.
SampleMatrix compose_margins(const Matrix& u, const std::vector<Margin>& margins);

// The conditional Student-t benchmark: columns 0..d-2 iid Student-t(nu), last
// column Gaussian with mean equal to column d-2 and unit variance.
SampleMatrix sample_hickling(std::size_t d, double nu, std::size_t n,
                             std::uint64_t seed);

// Strict numeric CSV ingestion; labels are all Other. Rejects ragged rows and
// non-finite or non-numeric cells with their position.
SampleMatrix load_csv(const std::string& path, bool has_header);

struct Dataset {
  SampleMatrix train;
  SampleMatrix val;
  SampleMatrix test;
  DatasetSpec spec;
};

// Deterministic generation: the splits are consecutive disjoint row ranges of
// one copula draw and exhaust it.
Dataset generate(const DatasetSpec& spec);

}  // namespace tailflow::datagen
