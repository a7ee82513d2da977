#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdisco/discovery.hpp"
#include "cdisco/linalg.hpp"

namespace cdisco {

struct FlaggedSample {
  std::size_t index = 0;
  std::string sample_id;
  std::size_t violations = 0;  // directions whose bounds the sample breaks
  double distance = 0.0;       // summed distance past the fence, in IQR units
};

struct OutlierReport {
  std::vector<FlaggedSample> flagged;  // in flagging order
  double fraction_flagged = 0.0;
  std::vector<std::size_t> directions;
  std::vector<IqrBounds> per_direction_bounds;
  std::optional<double> accuracy_on_flagged;
  std::optional<double> accuracy_on_rest;

  std::vector<std::size_t> flagged_indices() const;
};

// Samples outside the Tukey fences of the coefficients along the given
// directions. At most ceil(target_frac * N) are flagged, most violations
// first, then larger distance, then lower index; samples inside every fence
// are never flagged.
OutlierReport flag_outliers(const RotatedBatch& batch, const std::vector<std::size_t>& direction_indices,
                            double target_frac = 0.10, double fence = 1.5,
                            const std::vector<std::string>& sample_ids = {});

void flagged_accuracy(OutlierReport& report, const std::vector<int>& predictions, const std::vector<int>& labels);

// [N, 2] coefficients along two singular directions.
Matrix project_2d(const RotatedBatch& batch, std::size_t direction_a, std::size_t direction_b);

void write_projection_csv(const Matrix& coords, const std::vector<std::string>& sample_ids,
                          const std::vector<int>& labels, const std::vector<bool>& flagged,
                          const std::filesystem::path& path);

}  // namespace cdisco
