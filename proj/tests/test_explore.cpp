#include "cdisco/explore.hpp"

#include <fstream>
#include <set>

#include "support.hpp"

using namespace cdisco;

namespace {

RotatedBatch coeff_batch(const Matrix& coeffs) {
  RotatedBatch b;
  b.coeffs = coeffs;
  return b;
}

}  // namespace

TEST_CASE("flag_outliers: a far sample is flagged first") {
  Matrix c(101, 1);
  for (std::size_t i = 0; i < 100; ++i) c(i, 0) = static_cast<double>(i + 1);
  c(100, 0) = 1000;
  const OutlierReport r = flag_outliers(coeff_batch(c), {0}, 0.10);
  REQUIRE(r.flagged.size() == 1);
  CHECK(r.flagged[0].index == 100);
  CHECK(r.flagged[0].violations == 1);
  CHECK(r.fraction_flagged == doctest::Approx(1.0 / 101));
}

TEST_CASE("flag_outliers: identical samples are never flagged") {
  const Matrix c(20, 3, 2.5);
  const OutlierReport r = flag_outliers(coeff_batch(c), {0, 1, 2}, 0.5);
  CHECK(r.flagged.empty());
  CHECK(r.fraction_flagged == 0.0);
}

TEST_CASE("flag_outliers: more violations rank ahead, then distance, then index") {
  std::mt19937_64 rng(1);
  Matrix c = test::normal_matrix(200, 2, rng);
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 2; ++j) c(i, j) = std::clamp(c(i, j), -1.0, 1.0);
  c(5, 0) = 10;
  c(5, 1) = 10;  // two violations
  c(9, 0) = 50;  // one violation, big distance
  c(3, 1) = -8;  // one violation, smaller distance
  const OutlierReport r = flag_outliers(coeff_batch(c), {0, 1}, 0.5, 1.5, test::random_dump(200, 2, 2, rng).sample_ids);
  REQUIRE(r.flagged.size() == 3);
  CHECK(r.flagged_indices() == std::vector<std::size_t>{5, 9, 3});
  CHECK(r.flagged[0].sample_id == "s5");
  CHECK(r.per_direction_bounds.size() == 2);
}

TEST_CASE("flag_outliers respects the budget and flags only violators") {
  std::mt19937_64 rng(2);
  std::student_t_distribution<double> heavy(1.5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix c(80, 3);
    for (std::size_t i = 0; i < 80; ++i)
      for (std::size_t j = 0; j < 3; ++j) c(i, j) = heavy(rng);
    const double frac = 0.02 + 0.05 * trial;
    const OutlierReport r = flag_outliers(coeff_batch(c), {0, 1, 2}, frac);
    CHECK(r.flagged.size() <= static_cast<std::size_t>(std::ceil(frac * 80 - 1e-9)));
    for (const auto& f : r.flagged) {
      bool outside = false;
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& b = r.per_direction_bounds[k];
        outside = outside || c(f.index, k) < b.lower || c(f.index, k) > b.upper;
      }
      CHECK(outside);
      CHECK(f.violations >= 1);
    }
  }
}

TEST_CASE("flag_outliers is invariant to positive scaling") {
  std::mt19937_64 rng(3);
  std::student_t_distribution<double> heavy(2.0);
  Matrix c(60, 2);
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t j = 0; j < 2; ++j) c(i, j) = heavy(rng);
  Matrix scaled = c;
  for (std::size_t i = 0; i < 60; ++i)
    for (std::size_t j = 0; j < 2; ++j) scaled(i, j) *= 8.0;
  const auto a = flag_outliers(coeff_batch(c), {0, 1}, 0.1);
  const auto b = flag_outliers(coeff_batch(scaled), {0, 1}, 0.1);
  CHECK(a.flagged_indices() == b.flagged_indices());
  const auto again = flag_outliers(coeff_batch(c), {0, 1}, 0.1);
  CHECK(again.flagged_indices() == a.flagged_indices());
}

TEST_CASE("flag_outliers errors") {
  CHECK_CODE(flag_outliers(coeff_batch(Matrix(3, 1)), {0}), ErrorCode::kInvalidArgument);
  CHECK_CODE(flag_outliers(coeff_batch(Matrix(8, 1)), {}), ErrorCode::kInvalidArgument);
  CHECK_CODE(flag_outliers(coeff_batch(Matrix(8, 1)), {1}), ErrorCode::kInvalidArgument);
  CHECK_CODE(flag_outliers(coeff_batch(Matrix(8, 1)), {0}, 1.5), ErrorCode::kInvalidArgument);
}

TEST_CASE("flagged_accuracy") {
  OutlierReport r;
  r.flagged = {{1, "b", 1, 0.5}, {3, "d", 1, 0.2}};
  flagged_accuracy(r, {0, 1, 2, 3}, {0, 1, 2, 3});
  CHECK(*r.accuracy_on_flagged == 1.0);
  CHECK(*r.accuracy_on_rest == 1.0);

  flagged_accuracy(r, {0, 0, 2, 0}, {0, 1, 2, 3});
  CHECK(*r.accuracy_on_flagged == 0.0);
  CHECK(*r.accuracy_on_rest == 1.0);

  OutlierReport none;
  flagged_accuracy(none, {0, 1}, {0, 0});
  CHECK_FALSE(none.accuracy_on_flagged.has_value());
  CHECK(*none.accuracy_on_rest == 0.5);
  CHECK_CODE(flagged_accuracy(r, {0, 1}, {0, 1, 2}), ErrorCode::kShape);
}

TEST_CASE("project_2d: a sample on one axis") {
  ActivationDump dump;
  dump.layer_name = "l";
  dump.pooled_activations = DenseTensor({3, 3}, {0, 2, 0, 1, 1, 0, 0, 0, 3});
  dump.gradients = DenseTensor({3, 1, 3});
  dump.tracked_classes = {0};
  dump.labels = {0, 0, 0};
  dump.class_count = 1;
  dump.sample_ids = {"a", "b", "c"};
  const BasisBuild b = build_basis(dump);
  // find the singular direction aligned with e_1 and pair it with another
  std::size_t a = 0;
  for (std::size_t j = 0; j < 3; ++j)
    if (std::abs(b.basis.u(2, j)) > 0.99) a = j;
  const Matrix xy = project_2d(b.batch, a, (a + 1) % 3);
  CHECK(std::abs(xy(2, 0)) == doctest::Approx(3.0));
  CHECK(xy(2, 1) == doctest::Approx(0.0));
  CHECK_CODE(project_2d(b.batch, 1, 1), ErrorCode::kInvalidArgument);
  CHECK_CODE(project_2d(b.batch, 0, 7), ErrorCode::kInvalidArgument);
}

TEST_CASE("projection CSV has a header and one row per sample") {
  test::TempDir dir("csv");
  std::mt19937_64 rng(4);
  const Matrix xy = test::normal_matrix(7, 2, rng);
  std::vector<std::string> ids;
  for (int i = 0; i < 7; ++i) ids.push_back("s" + std::to_string(i));
  write_projection_csv(xy, ids, {0, 1, 0, 1, 0, 1, 0}, std::vector<bool>(7, false), dir / "p.csv");
  std::ifstream is(dir / "p.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "sample_id,x,y,label,flagged");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 7);
  CHECK_CODE(write_projection_csv(xy, ids, {0}, std::vector<bool>(7), dir / "q.csv"), ErrorCode::kShape);
}

TEST_CASE("separated classes stay apart on the top two directions") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.2);
  const std::size_t n = 60, d = 5;
  ActivationDump dump;
  dump.layer_name = "l";
  std::vector<float> pooled;
  for (std::size_t i = 0; i < n; ++i) {
    dump.labels.push_back(static_cast<int>(i % 2));
    dump.sample_ids.push_back("s" + std::to_string(i));
    for (std::size_t j = 0; j < d; ++j)
      pooled.push_back(static_cast<float>((j == i % 2 ? 3.0 : 0.0) + noise(rng)));
  }
  dump.pooled_activations = DenseTensor({n, d}, pooled);
  dump.gradients = DenseTensor({n, 1, d});
  dump.tracked_classes = {0};
  dump.class_count = 2;
  const BasisBuild b = build_basis(dump);
  const Matrix xy = project_2d(b.batch, 0, 1);
  double cx[2] = {0, 0}, cy[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    cx[i % 2] += xy(i, 0) / (n / 2);
    cy[i % 2] += xy(i, 1) / (n / 2);
  }
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    spread = std::max(spread, std::hypot(xy(i, 0) - cx[i % 2], xy(i, 1) - cy[i % 2]));
  CHECK(std::hypot(cx[0] - cx[1], cy[0] - cy[1]) > spread);
}
