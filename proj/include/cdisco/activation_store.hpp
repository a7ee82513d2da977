#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdisco/tensor.hpp"

namespace cdisco {

// Which output the stored gradients differentiate.
enum class GradientConvention { kLogit, kProbability };

// What the `gradients` tensor holds:
//  kGradient      - the raw latent gradient at the pooled representation;
//                   sensitivities are formed after rotation as
//                   (U^T grad) * (U^T phi).
//  kPooledProduct - GAP(phi * grad) computed by the producer over spatial
//                   positions, i.e. pooling after the element-wise product;
//                   sensitivities are U^T of the stored rows.
enum class SensitivityConvention { kGradient, kPooledProduct };

const char* to_string(GradientConvention c);
const char* to_string(SensitivityConvention c);
GradientConvention parse_gradient_convention(const std::string& s);
SensitivityConvention parse_sensitivity_convention(const std::string& s);

inline constexpr int kDumpSchemaVersion = 1;

struct ActivationDump {
  std::string layer_name;
  DenseTensor pooled_activations;                  // [N, d]
  std::optional<DenseTensor> spatial_activations;  // [N, H, W, d]
  DenseTensor gradients;                           // [N, K_g, d]
  std::vector<int> tracked_classes;                // K_g ids in [0, K)
  std::vector<int> labels;                         // [N]
  std::vector<std::string> sample_ids;             // [N]
  int class_count = 0;                             // K
  GradientConvention gradient_convention = GradientConvention::kLogit;
  SensitivityConvention sensitivity_convention = SensitivityConvention::kGradient;

  std::size_t sample_count() const { return labels.size(); }
  std::size_t latent_dim() const { return pooled_activations.dim(1); }
  std::size_t tracked_count() const { return tracked_classes.size(); }

  // Position of a class id in tracked_classes; throws kNotFound.
  std::size_t tracked_index(int class_id) const;
  // Spatial slice [H, W, d] of one sample; throws if no spatial data.
  DenseTensor spatial_sample(std::size_t i) const;
  std::size_t find_sample(const std::string& id) const;

  // Throws kValidation describing the first broken invariant.
  void validate() const;

  bool operator==(const ActivationDump& other) const;
};

void save_dump(const ActivationDump& dump, const std::filesystem::path& dir);
ActivationDump load_dump(const std::filesystem::path& dir);

// Keeps samples whose label is in class_ids. Labels are re-indexed densely
// following ascending class id; tracked classes outside the subset are dropped.
ActivationDump subset_by_class(const ActivationDump& dump, const std::vector<int>& class_ids);

}  // namespace cdisco
