#include "cdisco/explore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cdisco/error.hpp"

namespace cdisco {

std::vector<std::size_t> OutlierReport::flagged_indices() const {
  std::vector<std::size_t> out;
  for (const auto& f : flagged) out.push_back(f.index);
  return out;
}

OutlierReport flag_outliers(const RotatedBatch& batch, const std::vector<std::size_t>& direction_indices,
                            double target_frac, double fence, const std::vector<std::string>& sample_ids) {
  const std::size_t n = batch.sample_count();
  if (n < 4) throw Error(ErrorCode::kInvalidArgument, "outlier flagging needs at least 4 samples, got " + std::to_string(n));
  if (direction_indices.empty()) throw Error(ErrorCode::kInvalidArgument, "no directions to analyze");
  if (!(target_frac >= 0.0 && target_frac <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "target_frac outside [0, 1]");
  if (!sample_ids.empty() && sample_ids.size() != n) throw Error(ErrorCode::kShape, "sample id count does not match");

  OutlierReport report;
  report.directions = direction_indices;
  std::vector<std::size_t> violations(n, 0);
  std::vector<double> distance(n, 0.0);
  std::vector<double> column(n);
  for (std::size_t dir : direction_indices) {
    if (dir >= batch.components()) {
      throw Error(ErrorCode::kInvalidArgument, "direction " + std::to_string(dir) + " out of range");
    }
    for (std::size_t i = 0; i < n; ++i) column[i] = batch.coeffs(i, dir);
    const IqrBounds b = iqr_bounds(column, fence);
    report.per_direction_bounds.push_back(b);
    const double iqr = b.q3 - b.q1;
    for (std::size_t i = 0; i < n; ++i) {
      double past = 0.0;
      if (column[i] < b.lower) past = b.lower - column[i];
      else if (column[i] > b.upper) past = column[i] - b.upper;
      else continue;
      ++violations[i];
      // A zero IQR leaves no scale; fall back to the raw distance relative to the quartile magnitude.
      const double scale = iqr > 0.0 ? iqr : std::max(std::abs(b.q1), std::abs(b.q3));
      distance[i] += scale > 0.0 ? past / scale : past;
    }
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (violations[i] > 0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (violations[a] != violations[b]) return violations[a] > violations[b];
    return distance[a] > distance[b];
  });
  const auto budget = static_cast<std::size_t>(std::ceil(target_frac * static_cast<double>(n) - 1e-9));
  order.resize(std::min(order.size(), budget));
  for (std::size_t i : order) {
    report.flagged.push_back({i, sample_ids.empty() ? std::to_string(i) : sample_ids[i], violations[i], distance[i]});
  }
  report.fraction_flagged = static_cast<double>(report.flagged.size()) / static_cast<double>(n);
  return report;
}

void flagged_accuracy(OutlierReport& report, const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kShape, std::to_string(predictions.size()) + " predictions for " +
                                       std::to_string(labels.size()) + " labels");
  }
  std::vector<bool> is_flagged(labels.size(), false);
  for (const auto& f : report.flagged) {
    if (f.index >= labels.size()) throw Error(ErrorCode::kShape, "flagged sample outside the predictions");
    is_flagged[f.index] = true;
  }
  std::size_t hit[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int g = is_flagged[i] ? 1 : 0;
    ++count[g];
    hit[g] += predictions[i] == labels[i];
  }
  auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  report.accuracy_on_flagged = ratio(hit[1], count[1]);
  report.accuracy_on_rest = ratio(hit[0], count[0]);
}

Matrix project_2d(const RotatedBatch& batch, std::size_t direction_a, std::size_t direction_b) {
  if (direction_a == direction_b) throw Error(ErrorCode::kInvalidArgument, "projection needs two distinct directions");
  if (direction_a >= batch.components() || direction_b >= batch.components()) {
    throw Error(ErrorCode::kInvalidArgument, "projection direction out of range");
  }
  Matrix out(batch.sample_count(), 2);
  for (std::size_t i = 0; i < batch.sample_count(); ++i) {
    out(i, 0) = batch.coeffs(i, direction_a);
    out(i, 1) = batch.coeffs(i, direction_b);
  }
  return out;
}

void write_projection_csv(const Matrix& coords, const std::vector<std::string>& sample_ids,
                          const std::vector<int>& labels, const std::vector<bool>& flagged,
                          const std::filesystem::path& path) {
  const std::size_t n = coords.rows();
  if (coords.cols() != 2 || sample_ids.size() != n || labels.size() != n || flagged.size() != n) {
    throw Error(ErrorCode::kShape, "projection columns do not line up");
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(9);
  out << "sample_id,x,y,label,flagged\n";
  for (std::size_t i = 0; i < n; ++i) {
    out << sample_ids[i] << ',' << coords(i, 0) << ',' << coords(i, 1) << ',' << labels[i] << ','
        << (flagged[i] ? 1 : 0) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

}  // namespace cdisco
