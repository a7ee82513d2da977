#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cdisco/tensor.hpp"

namespace cdisco {

// Row-major double matrix. Numerical work runs in double; DenseTensor stays
// the float32 carrier for anything that crosses a file boundary.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  // Rank-2 tensor -> matrix of the same shape.
  static Matrix from_tensor(const DenseTensor& t);
  DenseTensor to_tensor() const;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> col(std::size_t c) const;

  std::span<const double> data() const noexcept { return data_; }

  Matrix transpose() const;
  double frobenius_norm() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

struct EigenResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // column j pairs with values[j]
  int sweeps = 0;
};

// Cyclic Jacobi. Converges when the off-diagonal Frobenius norm drops below
// 1e-12 * ||A||_F; fails after 100 sweeps.
EigenResult symmetric_eigen(const Matrix& a);

struct SvdResult {
  Matrix u;                   // [d, r], orthonormal columns
  std::vector<double> sigma;  // [r], non-increasing, >= 0
  Matrix vt;                  // [r, N], orthonormal rows
};

// Thin SVD through the Gram matrix phi * phi^T. Columns of U (and the
// matching rows of V^T) are signed so that the largest-magnitude entry of
// each U column is positive, ties resolved toward the lowest index.
SvdResult svd(const Matrix& phi);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct IqrBounds {
  double q1 = 0.0;
  double q3 = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Tukey fences from nearest-rank quartiles.
IqrBounds iqr_bounds(std::span<const double> values, double fence = 1.5);

// Flips `v` in place so its largest-magnitude entry is positive. Returns
// true when a flip happened.
bool canonicalize_sign(std::span<double> v);

}  // namespace cdisco
