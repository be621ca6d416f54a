#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tailflow/matrix.hpp"

namespace tailflow::transforms {

enum class Family { SoftLog, Arcsinh, Identity };

Family family_from_string(const std::string& s);
std::string to_string(Family f);

// Thrown when inverting a log-space value whose data-space image overflows
// double range. Carries the offending position so harness code can record a
// divergence instead of crashing.
struct InverseOverflowError : std::runtime_error {
  InverseOverflowError(std::size_t row_, std::size_t col_, double value_);
  std::size_t row;
  std::size_t col;
  double value;
};

// Per-coordinate transform: family gated by a boolean mask, with an optional
// scale s2 per coordinate (s2 = 1 is the plain soft-log, s2 = 0 the identity).
// Immutable once fitted; all operations on it are pure.
struct TransformSpec {
  Family family = Family::SoftLog;
  std::vector<bool> mask;
  std::vector<double> s2;
  double alpha_max = 4.0;

  std::size_t dim() const { return mask.size(); }

  static TransformSpec identity(std::size_t d);
  static TransformSpec uniform(Family f, std::size_t d);
  static TransformSpec from_mask(Family f, std::vector<bool> mask,
                                 double alpha_max = 4.0);

  void validate() const;

  // Scalar maps for coordinate j.
  double forward1(double x, std::size_t j) const;
  double inverse1(double y, std::size_t j) const;

  std::string serialize() const;
  static TransformSpec deserialize(const std::string& text);
};

// sign(x) * log(1 + |x|)
double soft_log(double x);

// sign(y) * (e^{|y|} - 1); throws on overflow of the double format
double soft_log_inv(double y);

// (sign(x)/s2) * log(1 + s2 |x|); s2 = 0 is the identity limit
double phi_s2(double x, double s2);
double phi_s2_inv(double y, double s2);

// log(x + sqrt(1 + x^2)) and its inverse sinh
double arcsinh_t(double x);
double arcsinh_inv(double y);

constexpr double kNoClamp = std::numeric_limits<double>::infinity();

// Coordinate-wise forward map; unmasked coordinates are passed through
// bitwise untouched.
Matrix apply_forward(const TransformSpec& spec, const Matrix& data);

// Inverse map. Masked coordinates are clamped to [-clamp_c, clamp_c] in
// log-space before inversion; clamp_c = kNoClamp disables the clamp.
Matrix apply_inverse(const TransformSpec& spec, const Matrix& data,
                     double clamp_c = kNoClamp);

// log |det J_Phi(x)| of the forward map. The forward map contracts, so this
// is <= 0; the data-space NLL term is its negation.
double log_det_jacobian(const TransformSpec& spec, std::span<const double> x);

}  // namespace tailflow::transforms
