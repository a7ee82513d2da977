#include "cdisco/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cdisco/error.hpp"

namespace cdisco {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kShape, "matrix data length does not match dimensions");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_tensor(const DenseTensor& t) {
  if (t.rank() != 2) {
    throw Error(ErrorCode::kShape, "expected a rank-2 tensor, got " + shape_to_string(t.shape()));
  }
  auto src = t.data();
  return Matrix(t.dim(0), t.dim(1), std::vector<double>(src.begin(), src.end()));
}

DenseTensor Matrix::to_tensor() const {
  std::vector<float> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return DenseTensor({rows_, cols_}, std::move(out));
}

std::vector<double> Matrix::col(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

double Matrix::frobenius_norm() const { return norm2(data_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::kShape, "matmul inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShape, "dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool canonicalize_sign(std::span<double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (v.empty() || v[best] >= 0.0) return false;
  for (double& x : v) x = -x;
  return true;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.rows(); ++p) {
    for (std::size_t q = p + 1; q < a.cols(); ++q) s += 2.0 * a(p, q) * a(p, q);
  }
  return std::sqrt(s);
}

void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

EigenResult symmetric_eigen(const Matrix& input) {
  const std::size_t n = input.rows();
  if (n == 0 || input.cols() != n) throw Error(ErrorCode::kShape, "symmetric_eigen needs a square matrix");
  double scale = 1.0;
  for (double x : input.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "non-finite matrix entry");
    scale = std::max(scale, std::abs(x));
  }
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      if (std::abs(input(p, q) - input(q, p)) > 1e-6 * scale) {
        throw Error(ErrorCode::kInvalidArgument, "matrix is not symmetric");
      }
    }
  }

  Matrix a = input;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) a(p, q) = a(q, p) = 0.5 * (input(p, q) + input(q, p));
  }
  Matrix v = Matrix::identity(n);
  const double target = 1e-12 * a.frobenius_norm();
  constexpr int kMaxSweeps = 100;

  int sweeps = 0;
  double off = off_diagonal_norm(a);
  while (off > target) {
    if (sweeps == kMaxSweeps) {
      std::ostringstream msg;
      msg << "Jacobi did not converge in " << kMaxSweeps << " sweeps; off-diagonal residual " << off;
      throw Error(ErrorCode::kNumerical, msg.str());
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) rotate(a, v, p, q);
    }
    ++sweeps;
    off = off_diagonal_norm(a);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenResult result;
  result.sweeps = sweeps;
  result.values.resize(n);
  result.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    result.values[j] = a(order[j], order[j]);
    std::vector<double> column = v.col(order[j]);
    canonicalize_sign(column);
    for (std::size_t k = 0; k < n; ++k) result.vectors(k, j) = column[k];
  }
  return result;
}

namespace {

// Orthonormalizes `w` against `basis` (two passes of modified Gram-Schmidt).
// Returns the norm left over before normalization.
double orthonormalize(std::vector<double>& w, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      const double proj = dot(w, b);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= proj * b[i];
    }
  }
  const double n = norm2(w);
  if (n > 0.0) {
    for (double& x : w) x /= n;
  }
  return n;
}

}  // namespace

SvdResult svd(const Matrix& phi) {
  const std::size_t d = phi.rows();
  const std::size_t n = phi.cols();
  if (d == 0 || n == 0) throw Error(ErrorCode::kShape, "svd of an empty matrix");
  for (double x : phi.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidArgument, "svd input has non-finite entries");
  }

  Matrix gram(d, d);
  for (std::size_t p = 0; p < d; ++p) {
    for (std::size_t q = p; q < d; ++q) {
      const double g = dot(phi.row(p), phi.row(q));
      gram(p, q) = g;
      gram(q, p) = g;
    }
  }
  const EigenResult eig = symmetric_eigen(gram);
  const std::size_t r = std::min(d, n);

  // sigma_j = ||phi^T u_j|| is far more accurate for small singular values
  // than sqrt(lambda_j).
  std::vector<std::vector<double>> u_cols(r);
  std::vector<std::vector<double>> w_cols(r);
  std::vector<double> sigma(r);
  for (std::size_t j = 0; j < r; ++j) {
    u_cols[j] = eig.vectors.col(j);
    std::vector<double> w(n, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double uk = u_cols[j][k];
      if (uk == 0.0) continue;
      auto prow = phi.row(k);
      for (std::size_t i = 0; i < n; ++i) w[i] += uk * prow[i];
    }
    sigma[j] = norm2(w);
    w_cols[j] = std::move(w);
  }

  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });

  SvdResult out;
  out.u = Matrix(d, r);
  out.vt = Matrix(r, n);
  out.sigma.resize(r);
  const double tol = 1e-10 * sigma[order[0]];

  std::vector<std::vector<double>> v_rows;
  v_rows.reserve(r);
  std::vector<std::size_t> null_slots;
  for (std::size_t j = 0; j < r; ++j) {
    const std::size_t src = order[j];
    for (std::size_t k = 0; k < d; ++k) out.u(k, j) = u_cols[src][k];
    if (sigma[src] > tol && sigma[src] > 0.0) {
      out.sigma[j] = sigma[src];
      std::vector<double> v = w_cols[src];
      for (double& x : v) x /= sigma[src];
      // Re-orthogonalize against earlier rows; only the small-sigma rows
      // move noticeably and their contribution to the product is tiny.
      orthonormalize(v, v_rows);
      v_rows.push_back(std::move(v));
    } else {
      out.sigma[j] = 0.0;
      null_slots.push_back(j);
      v_rows.emplace_back();
    }
  }
  // Complete null directions with canonical vectors orthogonalized against
  // everything chosen so far.
  std::size_t next_canonical = 0;
  for (std::size_t slot : null_slots) {
    std::vector<std::vector<double>> chosen;
    for (const auto& row : v_rows) {
      if (!row.empty()) chosen.push_back(row);
    }
    while (true) {
      if (next_canonical >= n) throw Error(ErrorCode::kNumerical, "cannot complete null space of V");
      std::vector<double> e(n, 0.0);
      e[next_canonical++] = 1.0;
      if (orthonormalize(e, chosen) > 1e-3) {
        v_rows[slot] = std::move(e);
        break;
      }
    }
  }
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = v_rows[j][i];
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kInvalidArgument, "cosine similarity with a zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

IqrBounds iqr_bounds(std::span<const double> values, double fence) {
  if (values.size() < 4) throw Error(ErrorCode::kInvalidArgument, "iqr_bounds needs at least 4 values");
  IqrBounds b;
  b.q1 = percentile(values, 0.25);
  b.q3 = percentile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  b.lower = b.q1 - fence * iqr;
  b.upper = b.q3 + fence * iqr;
  return b;
}

}  // namespace cdisco
