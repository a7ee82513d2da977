#pragma once

#include <span>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/discovery.hpp"
#include "cdisco/tensor.hpp"

namespace cdisco {

struct ConceptMap {
  DenseTensor values;  // [H, W]
  std::string sample_id;
  std::string concept_source;
  bool signed_map = true;
};

// values[h, w] = sum_j u_j * spatial[h, w, j]
ConceptMap concept_map(const DenseTensor& spatial, std::span<const double> u);

struct MaskOptions {
  double quantile = 0.8;
  // Threshold |map| instead of the signed map.
  bool use_abs = false;
};

// Boolean mask at image resolution [H', W']: the map is upsampled by nearest
// neighbour and a pixel is selected when its map value is >= the nearest-rank
// quantile of the map values.
std::vector<bool> concept_pixel_mask(const ConceptMap& map, std::size_t image_h, std::size_t image_w,
                                     const MaskOptions& options = {});

// Image [H', W', C] with every unselected pixel zeroed.
DenseTensor segmentation_mask(const ConceptMap& map, const DenseTensor& image, const MaskOptions& options = {});

// Sample indices sorted by |<phi_i, u>| descending (ties by lower index).
std::vector<std::size_t> max_activating(const ActivationDump& dump, std::span<const double> u, std::size_t count);
std::vector<std::size_t> max_activating(std::span<const double> projections, std::size_t count);

// Concept-weighted input attribution: u^T J for a latent-by-input Jacobian.
std::vector<double> tabular_importance(std::span<const double> u, const Matrix& input_jacobian);

}  // namespace cdisco
