#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/linalg.hpp"

namespace cdisco {

// A unit direction in latent space together with where it came from.
struct ConceptSource {
  enum class Kind { kSingular, kCluster, kNeuron };
  Kind kind = Kind::kSingular;
  std::size_t index = 0;       // singular column or neuron index
  std::size_t cluster_id = 0;  // only for kCluster
};

std::string to_string(const ConceptSource& source);

struct ConceptVector {
  std::vector<double> direction;  // unit norm
  ConceptSource source;
  std::optional<int> class_id;
  int rank = 0;
  std::vector<std::string> member_samples;
};

struct ConceptBasis {
  Matrix u;                              // [d, r]
  std::vector<double> sigma;             // [r]
  std::string layer_name;
  std::vector<int> tracked_classes;      // row labels of z_scores
  Matrix z_scores;                       // [K_g, r]
  std::vector<std::vector<std::size_t>> ranking;  // per tracked class, by z descending

  std::size_t latent_dim() const { return u.rows(); }
  std::size_t components() const { return u.cols(); }
  std::vector<double> direction(std::size_t j) const { return u.col(j); }
};

struct RotatedBatch {
  Matrix coeffs;                        // [N, r]
  std::vector<Matrix> grad_coeffs;      // K_g x [N, r]
  std::vector<Matrix> sensitivity;      // K_g x [N, r]

  std::size_t sample_count() const { return coeffs.rows(); }
  std::size_t components() const { return coeffs.cols(); }
  std::size_t tracked_count() const { return sensitivity.size(); }
};

struct BasisOptions {
  // Subtract the per-channel mean before decomposing. Off by default: the
  // decomposition is applied to raw activations.
  bool center = false;
};

struct BasisBuild {
  ConceptBasis basis;  // z_scores and ranking still empty
  RotatedBatch batch;
};

BasisBuild build_basis(const ActivationDump& dump, const BasisOptions& options = {});

// Single-output case: mean sensitivity per direction.
std::vector<double> score_regression(const RotatedBatch& batch);

inline constexpr double kSigmaFloor = 1e-8;

// Class-contrast z-scores, one row per tracked class.
Matrix score_classes(const RotatedBatch& batch, const std::vector<int>& labels,
                     const std::vector<int>& tracked_classes);

// Argsort of z descending; equal scores keep ascending column order.
std::vector<std::size_t> rank_directions(std::span<const double> z);

// build_basis + score_classes + rankings.
BasisBuild discover(const ActivationDump& dump, const BasisOptions& options = {});

// Top-m singular directions for a class.
std::vector<ConceptVector> rank_and_select(const ConceptBasis& basis, int class_id, std::size_t m);

}  // namespace cdisco
