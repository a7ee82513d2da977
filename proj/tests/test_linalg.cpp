#include <numeric>

#include "oracles.hpp"
#include "support.hpp"

using namespace cdisco;

namespace {

oracle::Grid rows_of(const Matrix& m) {
  oracle::Grid g(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) g[r].assign(m.row(r).begin(), m.row(r).end());
  return g;
}

// max |phi - U diag(sigma) V^T| relative to max |phi|
double residual(const Matrix& phi, const SvdResult& s) {
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < phi.rows(); ++i)
    for (std::size_t n = 0; n < phi.cols(); ++n) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.sigma.size(); ++j) acc += s.u(i, j) * s.sigma[j] * s.vt(j, n);
      worst = std::max(worst, std::abs(acc - phi(i, n)));
      scale = std::max(scale, std::abs(phi(i, n)));
    }
  return scale > 0 ? worst / scale : worst;
}

double orthonormal_error(const Matrix& q, bool columns) {
  const std::size_t k = columns ? q.cols() : q.rows();
  const std::size_t len = columns ? q.rows() : q.cols();
  double worst = 0.0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) {
      double acc = 0.0;
      for (std::size_t t = 0; t < len; ++t) acc += columns ? q(t, a) * q(t, b) : q(a, t) * q(b, t);
      worst = std::max(worst, std::abs(acc - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("svd of the identity") {
  const SvdResult s = svd(Matrix::identity(3));
  REQUIRE(s.sigma.size() == 3);
  for (double v : s.sigma) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(residual(Matrix::identity(3), s) <= 1e-12);
}

TEST_CASE("svd of diag(3, 1) keeps axis vectors") {
  const Matrix phi(2, 2, {3, 0, 0, 1});
  const SvdResult s = svd(phi);
  CHECK(s.sigma[0] == doctest::Approx(3.0));
  CHECK(s.sigma[1] == doctest::Approx(1.0));
  CHECK(std::abs(s.u(0, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(s.u(1, 1)) == doctest::Approx(1.0));
}

TEST_CASE("svd of a swap matrix") {
  const Matrix phi(2, 2, {0, 1, 1, 0});
  const SvdResult s = svd(phi);
  CHECK(s.sigma[0] == doctest::Approx(1.0));
  CHECK(s.sigma[1] == doctest::Approx(1.0));
  CHECK(residual(phi, s) <= 1e-12);
  CHECK(orthonormal_error(s.u, true) <= 1e-12);
}

TEST_CASE("svd of diag(5, 2, 1) padded with a zero column") {
  Matrix phi(3, 4);
  phi(0, 0) = 5;
  phi(1, 1) = 2;
  phi(2, 2) = 1;
  const SvdResult s = svd(phi);
  REQUIRE(s.sigma.size() == 3);
  CHECK(s.sigma[0] == doctest::Approx(5.0));
  CHECK(s.sigma[1] == doctest::Approx(2.0));
  CHECK(s.sigma[2] == doctest::Approx(1.0));
  CHECK(residual(phi, s) <= 1e-12);
}

TEST_CASE("svd sign convention: largest entry of each U column is positive") {
  std::mt19937_64 rng(4);
  const Matrix phi = test::normal_matrix(6, 20, rng);
  const SvdResult s = svd(phi);
  for (std::size_t j = 0; j < s.u.cols(); ++j) {
    const auto c = s.u.col(j);
    const auto it = std::max_element(c.begin(), c.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(*it > 0);
  }
}

TEST_CASE("svd matches one-sided Jacobi on random matrices") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t d = 1 + rng() % 16;
    const std::size_t n = 1 + rng() % 64;
    const Matrix phi = test::normal_matrix(d, n, rng);
    const SvdResult s = svd(phi);
    const oracle::Svd ref = oracle::hestenes(rows_of(phi));
    const std::size_t r = std::min(d, n);
    REQUIRE(s.sigma.size() == r);
    for (std::size_t j = 0; j < r; ++j) CHECK(std::abs(s.sigma[j] - ref.sigma[j]) <= 1e-8 * ref.sigma[0]);
    // sigma sorted, non-negative
    for (std::size_t j = 1; j < r; ++j) CHECK(s.sigma[j] <= s.sigma[j - 1]);
    CHECK(residual(phi, s) <= 1e-8);
    CHECK(orthonormal_error(s.u, true) <= 1e-8);
    CHECK(orthonormal_error(s.vt, false) <= 1e-8);
    // Random Gaussian matrices have distinct singular values, so directions
    // agree with the oracle up to sign.
    for (std::size_t j = 0; j < r; ++j) {
      const auto uj = s.u.col(j);
      CHECK(std::abs(std::abs(dot(uj, ref.u[j])) - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("svd handles rank deficiency") {
  std::mt19937_64 rng(6);
  // rank 2 in a 5 x 30 matrix
  const Matrix a = test::normal_matrix(5, 2, rng);
  const Matrix b = test::normal_matrix(2, 30, rng);
  const Matrix phi = matmul(a, b);
  const SvdResult s = svd(phi);
  REQUIRE(s.sigma.size() == 5);
  CHECK(s.sigma[2] <= 1e-6 * s.sigma[0]);
  CHECK(residual(phi, s) <= 1e-8);
  CHECK(orthonormal_error(s.u, true) <= 1e-8);
  CHECK(orthonormal_error(s.vt, false) <= 1e-8);
}

TEST_CASE("svd errors") {
  CHECK_CODE(svd(Matrix()), ErrorCode::kShape);
  Matrix bad(2, 2, 1.0);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_CODE(svd(bad), ErrorCode::kInvalidArgument);
}

TEST_CASE("svd is deterministic") {
  std::mt19937_64 rng(10);
  const Matrix phi = test::normal_matrix(8, 40, rng);
  const SvdResult a = svd(phi), b = svd(phi);
  CHECK(a.sigma == b.sigma);
  CHECK(std::equal(a.u.data().begin(), a.u.data().end(), b.u.data().begin()));
}

TEST_CASE("svd is invariant to sample order") {
  std::mt19937_64 rng(12);
  const Matrix phi = test::normal_matrix(7, 33, rng);
  std::vector<std::size_t> perm(33);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix shuffled(7, 33);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 33; ++c) shuffled(r, c) = phi(r, perm[c]);
  const SvdResult a = svd(phi), b = svd(shuffled);
  CHECK(test::max_abs_diff(a.sigma, b.sigma) <= 1e-9 * a.sigma[0]);
  // canonical signs make U comparable directly
  CHECK(test::max_abs_diff(a.u.data(), b.u.data()) <= 1e-7);
}

TEST_CASE("rotating the feature space rotates U and keeps sigma") {
  std::mt19937_64 rng(13);
  const std::size_t d = 6;
  const Matrix phi = test::normal_matrix(d, 25, rng);
  // Householder reflection H = I - 2 v v^T / |v|^2
  std::vector<double> v(d);
  std::normal_distribution<double> dist;
  for (auto& x : v) x = dist(rng);
  const double vv = dot(v, v);
  Matrix h = Matrix::identity(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) h(i, j) -= 2.0 * v[i] * v[j] / vv;
  const SvdResult a = svd(phi), b = svd(matmul(h, phi));
  CHECK(test::max_abs_diff(a.sigma, b.sigma) <= 1e-9 * a.sigma[0]);
  const Matrix hu = matmul(h, a.u);
  for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(std::abs(dot(hu.col(j), b.u.col(j))) - 1.0) <= 1e-7);
}

TEST_CASE("symmetric_eigen agrees with classical Jacobi") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const Matrix b = test::normal_matrix(n, n, rng);
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = b(i, j) + b(j, i);
    const EigenResult e = symmetric_eigen(a);
    const auto ref = oracle::jacobi_eigenvalues(rows_of(a));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(e.values[i] - ref[i]) <= 1e-9 * (1.0 + std::abs(ref[0])));
    // A v = lambda v
    for (std::size_t j = 0; j < n; ++j) {
      const auto vj = e.vectors.col(j);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(dot(a.row(i), vj) - e.values[j] * vj[i]) <= 1e-8 * (1.0 + a.frobenius_norm()));
    }
  }
}

TEST_CASE("symmetric_eigen rejects asymmetric input") {
  CHECK_CODE(symmetric_eigen(Matrix(2, 2, {1, 2, 0, 1})), ErrorCode::kInvalidArgument);
  CHECK_CODE(symmetric_eigen(Matrix(2, 3)), ErrorCode::kShape);
}

TEST_CASE("cosine_similarity") {
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(0.0));
  CHECK(cosine_similarity(std::vector<double>{1, 1}, std::vector<double>{2, 2}) == doctest::Approx(1.0));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{-3, 0}) == doctest::Approx(-1.0));
  CHECK_CODE(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), ErrorCode::kInvalidArgument);
  CHECK_CODE(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 0}), ErrorCode::kShape);
}

TEST_CASE("iqr_bounds") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  const IqrBounds b = iqr_bounds(v);
  CHECK(b.q1 == 25);
  CHECK(b.q3 == 75);
  CHECK(b.lower == -50);
  CHECK(b.upper == 150);

  const IqrBounds flat = iqr_bounds(std::vector<double>(10, 5.0));
  CHECK(flat.lower == 5.0);
  CHECK(flat.upper == 5.0);

  const IqrBounds spike = iqr_bounds(std::vector<double>{1, 2, 3, 1000});
  CHECK(spike.upper < 1000);
  CHECK_CODE(iqr_bounds(std::vector<double>{1, 2, 3}), ErrorCode::kInvalidArgument);
}

TEST_CASE("canonicalize_sign") {
  std::vector<double> v{0.5, -2.0, 1.0};
  CHECK(canonicalize_sign(v));
  CHECK(v == std::vector<double>{-0.5, 2.0, -1.0});
  CHECK_FALSE(canonicalize_sign(v));
  std::vector<double> tie{-1.0, 1.0};
  CHECK(canonicalize_sign(tie));
  CHECK(tie == std::vector<double>{1.0, -1.0});
}
