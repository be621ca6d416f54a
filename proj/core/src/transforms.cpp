#include "tailflow/transforms.hpp"

#include <cmath>
#include <sstream>

namespace tailflow::transforms {

namespace {

// exp(709.79) is the last finite double; beyond this the inverse overflows.
constexpr double kExpOverflow = 709.0;

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void require_finite(double x, const char* where) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument(std::string(where) + ": non-finite input");
  }
}

}  // namespace

Family family_from_string(const std::string& s) {
  if (s == "softlog") return Family::SoftLog;
  if (s == "arcsinh") return Family::Arcsinh;
  if (s == "identity") return Family::Identity;
  throw std::invalid_argument("unknown transform family: " + s);
}

std::string to_string(Family f) {
  switch (f) {
    case Family::SoftLog: return "softlog";
    case Family::Arcsinh: return "arcsinh";
    case Family::Identity: return "identity";
  }
  return "?";
}

InverseOverflowError::InverseOverflowError(std::size_t row_, std::size_t col_,
                                           double value_)
    : std::runtime_error("inverse overflow at row " + std::to_string(row_) +
                         ", column " + std::to_string(col_) + " (log-space value " +
                         std::to_string(value_) + ")"),
      row(row_),
      col(col_),
      value(value_) {}

double soft_log(double x) {
  require_finite(x, "soft_log");
  return sign(x) * std::log1p(std::abs(x));
}

double soft_log_inv(double y) {
  require_finite(y, "soft_log_inv");
  if (std::abs(y) > kExpOverflow) {
    throw InverseOverflowError(0, 0, y);
  }
  return sign(y) * std::expm1(std::abs(y));
}

double phi_s2(double x, double s2) {
  require_finite(x, "phi_s2");
  if (s2 < 0.0) throw std::invalid_argument("phi_s2: s2 must be nonnegative");
  if (s2 == 0.0) return x;
  return sign(x) / s2 * std::log1p(s2 * std::abs(x));
}

double phi_s2_inv(double y, double s2) {
  require_finite(y, "phi_s2_inv");
  if (s2 < 0.0) throw std::invalid_argument("phi_s2_inv: s2 must be nonnegative");
  if (s2 == 0.0) return y;
  if (s2 * std::abs(y) > kExpOverflow) {
    throw InverseOverflowError(0, 0, y);
  }
  return sign(y) * std::expm1(s2 * std::abs(y)) / s2;
}

double arcsinh_t(double x) {
  require_finite(x, "arcsinh_t");
  return std::asinh(x);
}

double arcsinh_inv(double y) {
  require_finite(y, "arcsinh_inv");
  if (std::abs(y) > kExpOverflow) {
    throw InverseOverflowError(0, 0, y);
  }
  return std::sinh(y);
}

TransformSpec TransformSpec::identity(std::size_t d) {
  TransformSpec spec;
  spec.family = Family::Identity;
  spec.mask.assign(d, false);
  spec.s2.assign(d, 0.0);
  return spec;
}

TransformSpec TransformSpec::uniform(Family f, std::size_t d) {
  TransformSpec spec;
  spec.family = f;
  spec.mask.assign(d, f != Family::Identity);
  spec.s2.assign(d, f != Family::Identity ? 1.0 : 0.0);
  return spec;
}

TransformSpec TransformSpec::from_mask(Family f, std::vector<bool> mask,
                                       double alpha_max) {
  TransformSpec spec;
  spec.family = f;
  spec.s2.assign(mask.size(), 0.0);
  for (std::size_t j = 0; j < mask.size(); ++j) spec.s2[j] = mask[j] ? 1.0 : 0.0;
  spec.mask = std::move(mask);
  spec.alpha_max = alpha_max;
  return spec;
}

void TransformSpec::validate() const {
  if (mask.size() != s2.size()) {
    throw std::invalid_argument("TransformSpec: mask/s2 length mismatch");
  }
  for (std::size_t j = 0; j < s2.size(); ++j) {
    if (s2[j] < 0.0) throw std::invalid_argument("TransformSpec: negative s2");
    if (mask[j] != (s2[j] > 0.0)) {
      throw std::invalid_argument("TransformSpec: mask and s2 disagree (s2 == 0 iff identity)");
    }
  }
  if (!(alpha_max > 0.0)) throw std::invalid_argument("TransformSpec: alpha_max must be > 0");
}

double TransformSpec::forward1(double x, std::size_t j) const {
  if (!mask[j]) return x;
  switch (family) {
    case Family::SoftLog: return phi_s2(x, s2[j]);
    case Family::Arcsinh: return arcsinh_t(x);
    case Family::Identity: return x;
  }
  return x;
}

double TransformSpec::inverse1(double y, std::size_t j) const {
  if (!mask[j]) return y;
  switch (family) {
    case Family::SoftLog: return phi_s2_inv(y, s2[j]);
    case Family::Arcsinh: return arcsinh_inv(y);
    case Family::Identity: return y;
  }
  return y;
}

std::string TransformSpec::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "family=" << to_string(family) << "\n";
  os << "alpha_max=" << alpha_max << "\n";
  os << "mask=";
  for (std::size_t j = 0; j < mask.size(); ++j) os << (j ? "," : "") << (mask[j] ? 1 : 0);
  os << "\n";
  os << "s2=";
  for (std::size_t j = 0; j < s2.size(); ++j) os << (j ? "," : "") << s2[j];
  os << "\n";
  return os.str();
}

TransformSpec TransformSpec::deserialize(const std::string& text) {
  TransformSpec spec;
  spec.mask.clear();
  spec.s2.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("TransformSpec: malformed line: " + line);
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "family") {
      spec.family = family_from_string(val);
    } else if (key == "alpha_max") {
      spec.alpha_max = std::stod(val);
    } else if (key == "mask" || key == "s2") {
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) {
        if (tok.empty()) continue;
        if (key == "mask") {
          spec.mask.push_back(tok != "0");
        } else {
          spec.s2.push_back(std::stod(tok));
        }
      }
    } else {
      throw std::invalid_argument("TransformSpec: unknown key: " + key);
    }
  }
  spec.validate();
  return spec;
}

Matrix apply_forward(const TransformSpec& spec, const Matrix& data) {
  if (spec.dim() != data.cols()) {
    throw std::invalid_argument("apply_forward: dimension mismatch (spec " +
                                std::to_string(spec.dim()) + ", data " +
                                std::to_string(data.cols()) + ")");
  }
  Matrix out = data;
  for (std::size_t j = 0; j < data.cols(); ++j) {
    if (!spec.mask[j]) continue;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      out(i, j) = spec.forward1(data(i, j), j);
    }
  }
  return out;
}

Matrix apply_inverse(const TransformSpec& spec, const Matrix& data,
                     double clamp_c) {
  if (spec.dim() != data.cols()) {
    throw std::invalid_argument("apply_inverse: dimension mismatch");
  }
  if (!(clamp_c > 0.0)) {
    throw std::invalid_argument("apply_inverse: clamp must be positive or infinite");
  }
  Matrix out = data;
  for (std::size_t j = 0; j < data.cols(); ++j) {
    if (!spec.mask[j]) continue;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      double y = data(i, j);
      if (std::isfinite(clamp_c)) {
        y = std::min(std::max(y, -clamp_c), clamp_c);
      }
      try {
        out(i, j) = spec.inverse1(y, j);
      } catch (const InverseOverflowError&) {
        throw InverseOverflowError(i, j, y);
      }
    }
  }
  return out;
}

double log_det_jacobian(const TransformSpec& spec, std::span<const double> x) {
  if (spec.dim() != x.size()) {
    throw std::invalid_argument("log_det_jacobian: dimension mismatch");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!spec.mask[j]) continue;
    switch (spec.family) {
      case Family::SoftLog:
        // phi_s2'(x) = 1 / (1 + s2 |x|)
        sum -= std::log1p(spec.s2[j] * std::abs(x[j]));
        break;
      case Family::Arcsinh:
        // d/dx asinh(x) = 1 / sqrt(1 + x^2)
        sum -= 0.5 * std::log1p(x[j] * x[j]);
        break;
      case Family::Identity:
        break;
    }
  }
  return sum;
}

}  // namespace tailflow::transforms
