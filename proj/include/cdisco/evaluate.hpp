#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdisco/discovery.hpp"
#include "cdisco/interpret.hpp"
#include "cdisco/mininn.hpp"

namespace cdisco {

struct Fill {
  enum class Kind { kMean, kGray, kZero };
  Kind kind = Kind::kMean;
  std::vector<double> channel_means;  // required for kMean

  double value(std::size_t channel) const;
};

Fill::Kind parse_fill(const std::string& s);

// Per-channel mean over every pixel of an [N, H, W, C] image batch.
std::vector<double> channel_means(const DenseTensor& images);

// Replaces selected pixels (mask at image resolution) by the fill value.
DenseTensor occlude_pixels(const DenseTensor& image, const std::vector<bool>& mask, const Fill& fill);

// Occludes the pixels whose concept-map value reaches the 80th percentile.
DenseTensor occlude_concept(const DenseTensor& image, const ConceptMap& map, const Fill& fill,
                            const MaskOptions& options = {});

struct AblationReport {
  int class_id = 0;
  std::vector<std::string> concepts_removed;
  // Entry j describes the state after removing the first j concepts; entry 0
  // is the untouched model.
  std::vector<double> accuracy_after;        // top-1 over all samples
  std::vector<double> class_accuracy_after;  // top-1 over samples of class_id
  std::vector<double> degraded_fraction;     // occlusion only
  std::optional<std::size_t> sdc;            // occlusion only
  std::vector<std::size_t> zeroed_scalars;   // weight ablation only
  std::vector<std::uint64_t> control_seeds;
  std::vector<std::vector<double>> control_accuracy;        // [step][seed]
  std::vector<std::vector<double>> control_class_accuracy;  // [step][seed]

  double accuracy_before() const { return accuracy_after.empty() ? 0.0 : accuracy_after.front(); }
  double control_mean(std::size_t step, bool class_only) const;
};

// First 1-based step whose degraded fraction reaches the criterion.
std::optional<std::size_t> first_step_reaching(std::span<const double> fractions, double degrade_frac);

// Smallest destroying concepts. Step j occludes the union of the masks of
// concepts 1..j (maps computed on the unoccluded image). A sample counts as
// degraded when it was predicted as class_id before occlusion and is not
// afterwards; the fraction is taken over those initially correct samples.
AblationReport sdc(const nn::Model& model, const LabeledBatch& data, int class_id,
                   const std::vector<ConceptVector>& concepts, const Fill& fill, double degrade_frac = 0.8,
                   const MaskOptions& mask = {});

struct Annihilation {
  DenseTensor weights;
  std::vector<std::size_t> channels;  // zeroed leading-axis slices
  std::size_t zeroed = 0;             // scalars set to zero
};

// Channels whose |u_j| reaches the keep_frac percentile of |u|, capped at
// ceil((1 - keep_frac) * d) by magnitude (ties to the lower index). Channels
// with a zero component are never selected.
std::vector<std::size_t> select_channels(std::span<const double> u, double keep_frac);

Annihilation annihilate_weights(const DenseTensor& layer_weights, std::span<const double> u, double keep_frac = 0.8);
Annihilation annihilate_channels(const DenseTensor& layer_weights, const std::vector<std::size_t>& channels);

// Removes concepts 1..j from the analyzed convolution stage (kernel slices
// and biases of the selected channels), against random unit directions with
// the same per-direction channel count.
AblationReport ablation_with_control(const nn::ConvModel& model, const LabeledBatch& data, int class_id,
                                     const std::vector<ConceptVector>& concepts, double keep_frac = 0.8,
                                     std::size_t n_random_seeds = 10, std::uint64_t seed = 0);

struct AlignmentStats {
  std::vector<double> max_abs_cosine;  // per vector
  double max = 0.0;
  double mean = 0.0;
};

// max_j |cos(u, e_j)| for each vector.
AlignmentStats basis_alignment_stats(const std::vector<std::vector<double>>& vectors);

struct Faithfulness {
  double pgi = 0.0;
  double pgu = 0.0;
};

// Prediction gaps of the originally predicted class's probability under
// Gaussian noise on the top_frac most important features (PGI) or on the
// rest (PGU).
Faithfulness pgi_pgu(const nn::Model& model, const DenseTensor& inputs,
                     const std::vector<std::vector<double>>& explanations, double top_frac, double noise_std,
                     std::size_t n_perturb, std::uint64_t seed);

// Indices of the ceil(top_frac * m) largest |score| entries.
std::vector<std::size_t> top_features(std::span<const double> scores, double top_frac);

}  // namespace cdisco
