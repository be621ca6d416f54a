#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tailflow {

// Dense row-major matrix of doubles. Rows are observations, columns are
// coordinates. Deliberately minimal: storage plus indexed access; numerical
// kernels map the buffer into whatever view they need.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = data_[i * cols_ + j];
    return out;
  }

  void set_column(std::size_t j, std::span<const double> v) {
    if (v.size() != rows_) throw std::invalid_argument("set_column: length mismatch");
    for (std::size_t i = 0; i < rows_; ++i) data_[i * cols_ + j] = v[i];
  }

  // Rows [begin, end) as a new matrix.
  Matrix slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows_) throw std::out_of_range("slice_rows: bad range");
    Matrix out(end - begin, cols_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
              data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data());
    return out;
  }

  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace tailflow
