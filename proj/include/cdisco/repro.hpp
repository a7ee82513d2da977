#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdisco/discovery.hpp"
#include "cdisco/disentangle.hpp"
#include "cdisco/evaluate.hpp"
#include "cdisco/explore.hpp"
#include "cdisco/mininn.hpp"

// Desk-scale experiments on the synthetic substrates. The CLI `repro`
// command and the acceptance binary both run these.
namespace cdisco::repro {

struct ImageSetup {
  nn::SyntheticSpec spec;
  std::size_t n_per_class = 300;
  std::size_t held_out_per_class = 50;
  std::vector<std::size_t> conv_channels = {8, 16};
  nn::TrainConfig train{.epochs = 12, .lr = 0.05, .batch_size = 8, .seed = 0};
};

struct Config {
  std::uint64_t seed = 0;
  ImageSetup planted;
  ImageSetup superposed;
  ImageSetup corrupted;
  RefineConfig refine{.top_count = 0, .threshold_frac = 0.6, .min_cluster_size = 5, .seed = 0};
  std::size_t sdc_concepts = 3;
  double degrade_frac = 0.8;
  Fill::Kind fill = Fill::Kind::kMean;
  double keep_frac = 0.8;
  std::size_t n_random_seeds = 10;
  std::size_t uniqueness_directions = 2;  // refined top directions per class
  double corrupt_frac = 0.01;
  double outlier_target_frac = 0.10;
  std::size_t outlier_directions = 3;     // top directions per class
  // tabular task
  std::size_t tab_features = 10;
  std::vector<std::size_t> tab_active = {3, 7};
  std::size_t tab_samples = 2000;
  double tab_label_noise = 0.3;
  std::vector<std::size_t> tab_hidden = {16, 8};
  nn::TrainConfig tab_train{.epochs = 30, .lr = 0.05, .batch_size = 16, .seed = 0};
  std::size_t tab_eval_inputs = 100;
  double tab_top_frac = 0.2;
  double tab_noise_std = 0.3;
  std::size_t tab_perturbations = 1000;

  // Threads the global seed into every stochastic component.
  static Config with_seed(std::uint64_t seed);
};

struct TrainedImages {
  nn::SyntheticImages train;
  nn::SyntheticImages held;
  nn::ConvModel model;
  nn::TrainHistory history;
  ActivationDump dump;
  BasisBuild build;
};

TrainedImages train_images(const ImageSetup& setup, std::uint64_t data_seed, std::uint64_t held_seed,
                           std::uint64_t model_seed);

struct ClassConcepts {
  int class_id = 0;
  std::vector<ConceptVector> top;  // ranked singular directions
  std::vector<double> top_z;
  double mean_iou = 0.0;           // top concept mask vs planted patch, held out
  AblationReport occlusion;
  AblationReport weights;
  double weight_drop = 0.0;          // class accuracy lost by removing the top concept
  double control_weight_drop = 0.0;  // mean over random directions
};

struct PlantedResult {
  double train_accuracy = 0.0;
  double held_accuracy = 0.0;
  std::vector<ClassConcepts> classes;
  std::vector<ConceptVector> refined;
  AlignmentStats alignment;
  std::size_t latent_dim = 0;
};

PlantedResult run_planted(const Config& config);

// Mean over held-out samples of `class_id` of IoU(concept mask, planted patch).
double mean_mask_iou(const nn::ConvModel& model, const nn::SyntheticImages& held, int class_id,
                     std::span<const double> u, const MaskOptions& options = {});

struct CensusResult {
  double train_accuracy = 0.0;
  Census neurons;
  Census singular;
  std::size_t bisemantic_direction = 0;
  std::vector<ConceptVector> bisemantic_refined;
  // Per refined concept: fraction of its cluster members carrying each of the
  // class's two planted patterns.
  std::vector<std::vector<double>> pattern_share;
};

CensusResult run_census(const Config& config);

// Box blur of radius 2 applied `passes` times, per channel, edge clamped.
DenseTensor blur(const DenseTensor& image, int passes);

struct OutlierResult {
  double train_accuracy = 0.0;
  std::vector<std::size_t> corrupted;
  OutlierReport report;
  double base_rate = 0.0;
  double flagged_rate = 0.0;  // corrupted fraction inside the flagged set
};

OutlierResult run_outliers(const Config& config);

struct FaithfulnessResult {
  double train_accuracy = 0.0;
  std::size_t concept_direction = 0;
  Faithfulness scores;
  std::vector<double> importance;  // mean |u^T J| per feature
  std::vector<std::size_t> top_features;
};

FaithfulnessResult run_faithfulness(const Config& config);

struct Result {
  Config config;
  PlantedResult planted;
  CensusResult census;
  OutlierResult outliers;
  FaithfulnessResult faithfulness;
};

Result run_all(const Config& config);

}  // namespace cdisco::repro
