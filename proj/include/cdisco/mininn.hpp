#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/linalg.hpp"
#include "cdisco/tensor.hpp"

namespace cdisco::nn {

// What backward() differentiates.
struct BackwardSeed {
  enum class Kind { kCrossEntropy, kLogit, kProbability };
  Kind kind = Kind::kLogit;
  int index = 0;  // target label or output class

  static BackwardSeed cross_entropy(int label) { return {Kind::kCrossEntropy, label}; }
  static BackwardSeed logit(int cls) { return {Kind::kLogit, cls}; }
  static BackwardSeed probability(int cls) { return {Kind::kProbability, cls}; }
};

// Intermediate values of one forward pass. Layout of `stages` is model
// specific: for every stage the pre-activation and the post-activation.
struct ForwardCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
  std::vector<double> latent;  // analyzed layer activations (flat)
  std::vector<double> logits;
  std::vector<double> probs;
  bool valid = false;
};

struct Gradients {
  std::vector<std::vector<double>> params;  // aligned with Model::parameters()
  std::vector<double> latent;               // d output / d analyzed activations
};

class Model {
 public:
  virtual ~Model() = default;

  virtual std::string arch() const = 0;
  virtual Shape input_shape() const = 0;
  // Shape of the analyzed activations: [d] for dense, [H, W, d] for conv.
  virtual Shape latent_shape() const = 0;
  virtual std::size_t class_count() const = 0;
  virtual std::string layer_name() const = 0;

  virtual ForwardCache forward(std::span<const float> input) const = 0;
  virtual Gradients backward(const ForwardCache& cache, const BackwardSeed& seed, bool param_grads = true) const = 0;

  virtual std::vector<DenseTensor*> parameters() = 0;
  std::vector<const DenseTensor*> parameters() const;
  std::vector<std::string> parameter_names() const;

  std::size_t latent_dim() const { return latent_shape().back(); }
  std::vector<double> predict(std::span<const float> input) const { return forward(input).probs; }
  int predict_class(std::span<const float> input) const;

  virtual std::unique_ptr<Model> clone() const = 0;

 protected:
  virtual std::vector<std::string> names() const = 0;
};

// Dense stack with rectifier on hidden layers and softmax output. The
// analyzed layer is the output of hidden layer `analyzed_hidden`
// (post-rectifier).
class MlpModel : public Model {
 public:
  MlpModel(std::vector<std::size_t> sizes, std::uint64_t seed, std::size_t analyzed_hidden);
  MlpModel(std::vector<std::size_t> sizes, std::uint64_t seed)
      : MlpModel(sizes, seed, sizes.size() >= 3 ? sizes.size() - 3 : 0) {}

  std::string arch() const override { return "mlp"; }
  Shape input_shape() const override { return {sizes_.front()}; }
  Shape latent_shape() const override { return {sizes_[analyzed_ + 1]}; }
  std::size_t class_count() const override { return sizes_.back(); }
  std::string layer_name() const override { return "hidden" + std::to_string(analyzed_); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t analyzed_hidden() const { return analyzed_; }

  ForwardCache forward(std::span<const float> input) const override;
  Gradients backward(const ForwardCache& cache, const BackwardSeed& seed, bool param_grads = true) const override;
  std::vector<DenseTensor*> parameters() override;

  // Jacobian of the analyzed activations with respect to the input, [d, m].
  Matrix latent_jacobian(std::span<const float> input) const;

  DenseTensor& weight(std::size_t layer) { return weights_[layer]; }
  DenseTensor& bias(std::size_t layer) { return biases_[layer]; }

  std::unique_ptr<Model> clone() const override { return std::make_unique<MlpModel>(*this); }

 protected:
  std::vector<std::string> names() const override;

 private:
  std::vector<std::size_t> sizes_;
  std::size_t analyzed_ = 0;
  std::vector<DenseTensor> weights_;  // [out, in]
  std::vector<DenseTensor> biases_;   // [out]
};

// 3x3 stride-1 same-padded convolutions with rectifiers, global average
// pooling, and a dense softmax head. The analyzed layer is the output of the
// last convolution stage.
class ConvModel : public Model {
 public:
  ConvModel(std::size_t height, std::size_t width, std::size_t channels, std::vector<std::size_t> conv_channels,
            std::size_t classes, std::uint64_t seed);

  std::string arch() const override { return "conv"; }
  Shape input_shape() const override { return {height_, width_, channels_}; }
  Shape latent_shape() const override { return {height_, width_, conv_channels_.back()}; }
  std::size_t class_count() const override { return classes_; }
  std::string layer_name() const override { return "conv" + std::to_string(conv_channels_.size() - 1); }
  const std::vector<std::size_t>& conv_channels() const { return conv_channels_; }

  ForwardCache forward(std::span<const float> input) const override;
  Gradients backward(const ForwardCache& cache, const BackwardSeed& seed, bool param_grads = true) const override;
  std::vector<DenseTensor*> parameters() override;

  // Analyzed stage: kernel [d, 3, 3, c_in] and bias [d], both led by the
  // analyzed channel axis.
  DenseTensor& analyzed_kernel() { return kernels_.back(); }
  DenseTensor& analyzed_bias() { return conv_biases_.back(); }
  DenseTensor& head_weight() { return head_weight_; }
  DenseTensor& head_bias() { return head_bias_; }
  DenseTensor& kernel(std::size_t stage) { return kernels_[stage]; }

  std::unique_ptr<Model> clone() const override { return std::make_unique<ConvModel>(*this); }

 protected:
  std::vector<std::string> names() const override;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<std::size_t> conv_channels_;
  std::size_t classes_;
  std::vector<DenseTensor> kernels_;      // [out, 3, 3, in]
  std::vector<DenseTensor> conv_biases_;  // [out]
  DenseTensor head_weight_;               // [K, d]
  DenseTensor head_bias_;                 // [K]
};

void save_model(const Model& model, const std::filesystem::path& dir);
std::unique_ptr<Model> load_model(const std::filesystem::path& dir);

struct TrainConfig {
  int epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> loss;      // mean cross-entropy per epoch
  std::vector<double> accuracy;  // running accuracy per epoch (pre-update predictions)
  double final_accuracy = 0.0;   // full pass after training
};

// Mini-batch SGD on cross-entropy. Throws kNumerical naming the epoch if the
// loss stops being finite.
TrainHistory train(Model& model, const LabeledBatch& data, const TrainConfig& config);

double accuracy(const Model& model, const LabeledBatch& data);
std::vector<int> predict_all(const Model& model, const LabeledBatch& data);

// kNone plants nothing: a background-only class with an empty mask.
enum class Pattern { kHStripes, kVStripes, kDots, kCheckerboard, kNone };

const char* to_string(Pattern p);
Pattern parse_pattern(const std::string& s);

struct SyntheticSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t patch = 7;
  double amplitude = 1.0;
  // Per-sample amplitude drawn uniformly from amplitude * [1 - j, 1 + j].
  double amplitude_jitter = 0.0;
  double noise_std = 0.3;
  // One entry per class; a class with two patterns is superposed: each of its
  // samples carries one of the two, chosen at random.
  std::vector<std::vector<Pattern>> classes = {{Pattern::kHStripes}, {Pattern::kDots}, {Pattern::kCheckerboard}};
};

struct SyntheticImages {
  LabeledBatch batch;                 // features [N, H, W, C]
  DenseTensor masks;                  // [N, H, W], 1 on the planted patch
  std::vector<Pattern> patterns;      // pattern planted in each sample
};

// Class-major order: samples [c * n_per_class, (c + 1) * n_per_class) carry
// label c.
SyntheticImages gen_images(const SyntheticSpec& spec, std::size_t n_per_class, std::uint64_t seed);

// Label = [sum of active features + noise > 0]; inactive features are pure
// standard-normal noise.
LabeledBatch gen_tabular(std::size_t m_features, const std::vector<std::size_t>& active_features, std::size_t n,
                         double noise_std, std::uint64_t seed);

// Pooled activations, per-class latent gradients of the logit (or
// probability), labels, and for conv models the spatial activations with
// gradients stored as GAP(activation * gradient).
ActivationDump make_dump(const Model& model, const LabeledBatch& data, const std::vector<int>& tracked_classes,
                         GradientConvention convention = GradientConvention::kLogit);

std::vector<std::string> default_sample_ids(std::size_t n);

// A dataset on disk: data.json (labels, class count, optional planted
// pattern names) next to features.cdad and, for images, masks.cdad.
struct StoredData {
  LabeledBatch batch;
  std::optional<DenseTensor> masks;
  std::vector<std::string> patterns;
  std::string kind;  // "images" or "tabular"
};

void save_data(const StoredData& data, const std::filesystem::path& dir);
StoredData load_data(const std::filesystem::path& dir);

}  // namespace cdisco::nn
