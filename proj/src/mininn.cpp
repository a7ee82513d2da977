#include "cdisco/mininn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cdisco/error.hpp"

namespace cdisco::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

DenseTensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<float> data(shape_size(shape));
  for (float& x : data) x = static_cast<float>(dist(rng));
  return DenseTensor(std::move(shape), std::move(data));
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

void softmax(const std::vector<double>& logits, std::vector<double>& probs) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - peak);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
}

// d(output)/d(logits) for the requested seed.
std::vector<double> logit_gradient(const ForwardCache& cache, const BackwardSeed& seed) {
  const std::size_t k = cache.logits.size();
  if (seed.index < 0 || static_cast<std::size_t>(seed.index) >= k) {
    throw Error(ErrorCode::kInvalidArgument, "backward seed index " + std::to_string(seed.index) + " out of range");
  }
  const auto t = static_cast<std::size_t>(seed.index);
  std::vector<double> g(k, 0.0);
  switch (seed.kind) {
    case BackwardSeed::Kind::kCrossEntropy:
      for (std::size_t j = 0; j < k; ++j) g[j] = cache.probs[j] - (j == t ? 1.0 : 0.0);
      break;
    case BackwardSeed::Kind::kLogit:
      g[t] = 1.0;
      break;
    case BackwardSeed::Kind::kProbability:
      for (std::size_t j = 0; j < k; ++j) g[j] = cache.probs[t] * ((j == t ? 1.0 : 0.0) - cache.probs[j]);
      break;
  }
  return g;
}

void check_cache(const ForwardCache& cache) {
  if (!cache.valid) throw Error(ErrorCode::kInvalidArgument, "backward called without a forward cache");
}

}  // namespace

std::vector<const DenseTensor*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Model::parameter_names() const { return names(); }

int Model::predict_class(std::span<const float> input) const {
  const auto p = predict(input);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

// ---------------------------------------------------------------- MlpModel

MlpModel::MlpModel(std::vector<std::size_t> sizes, std::uint64_t seed, std::size_t analyzed_hidden)
    : sizes_(std::move(sizes)), analyzed_(analyzed_hidden) {
  if (sizes_.size() < 3) throw Error(ErrorCode::kInvalidArgument, "an MLP needs at least one hidden layer");
  for (auto s : sizes_) {
    if (s == 0) throw Error(ErrorCode::kInvalidArgument, "layer sizes must be positive");
  }
  if (analyzed_ + 2 >= sizes_.size()) throw Error(ErrorCode::kInvalidArgument, "analyzed layer must be a hidden layer");
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.push_back(he_normal({sizes_[l + 1], sizes_[l]}, sizes_[l], rng));
    biases_.emplace_back(Shape{sizes_[l + 1]});
  }
}

std::vector<DenseTensor*> MlpModel::parameters() {
  std::vector<DenseTensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<std::string> MlpModel::names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back("dense" + std::to_string(l) + "_weight");
    out.push_back("dense" + std::to_string(l) + "_bias");
  }
  return out;
}

ForwardCache MlpModel::forward(std::span<const float> input) const {
  if (input.size() != sizes_.front()) {
    throw Error(ErrorCode::kShape, "MLP input has " + std::to_string(input.size()) + " features, expected " +
                                       std::to_string(sizes_.front()));
  }
  ForwardCache cache;
  cache.input = to_double(input);
  const std::size_t layers = weights_.size();
  const std::vector<double>* a = &cache.input;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t out = sizes_[l + 1];
    const std::size_t in = sizes_[l];
    auto w = weights_[l].data();
    std::vector<double> pre(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = biases_[l][o];
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(w[o * in + i]) * (*a)[i];
      pre[o] = acc;
    }
    std::vector<double> post = pre;
    if (l + 1 < layers) {
      for (double& x : post) x = std::max(x, 0.0);
    }
    cache.pre.push_back(std::move(pre));
    cache.post.push_back(std::move(post));
    a = &cache.post.back();
  }
  cache.latent = cache.post[analyzed_];
  cache.logits = cache.post.back();
  softmax(cache.logits, cache.probs);
  cache.valid = true;
  return cache;
}

Gradients MlpModel::backward(const ForwardCache& cache, const BackwardSeed& seed, bool param_grads) const {
  check_cache(cache);
  Gradients g;
  const std::size_t layers = weights_.size();
  if (param_grads) g.params.resize(2 * layers);
  std::vector<double> dpost = logit_gradient(cache, seed);
  for (std::size_t l = layers; l-- > 0;) {
    if (l == analyzed_) g.latent = dpost;
    if (!param_grads && l <= analyzed_) break;
    const std::size_t out = sizes_[l + 1];
    const std::size_t in = sizes_[l];
    std::vector<double> dpre = dpost;
    if (l + 1 < layers) {
      for (std::size_t o = 0; o < out; ++o) {
        if (cache.pre[l][o] <= 0.0) dpre[o] = 0.0;
      }
    }
    const std::vector<double>& a = l == 0 ? cache.input : cache.post[l - 1];
    if (param_grads) {
      auto& dw = g.params[2 * l];
      dw.assign(out * in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) dw[o * in + i] = dpre[o] * a[i];
      }
      g.params[2 * l + 1] = dpre;
    }
    if (l == 0) break;
    auto w = weights_[l].data();
    std::vector<double> din(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      if (dpre[o] == 0.0) continue;
      for (std::size_t i = 0; i < in; ++i) din[i] += static_cast<double>(w[o * in + i]) * dpre[o];
    }
    dpost = std::move(din);
  }
  return g;
}

Matrix MlpModel::latent_jacobian(std::span<const float> input) const {
  const ForwardCache cache = forward(input);
  const std::size_t m = sizes_.front();
  Matrix jac = Matrix::identity(m);  // d a / d x, rows = units of a
  for (std::size_t l = 0; l <= analyzed_; ++l) {
    const std::size_t out = sizes_[l + 1];
    const std::size_t in = sizes_[l];
    auto w = weights_[l].data();
    Matrix next(out, m);
    for (std::size_t o = 0; o < out; ++o) {
      if (cache.pre[l][o] <= 0.0) continue;
      auto dst = next.row(o);
      for (std::size_t i = 0; i < in; ++i) {
        const double wi = w[o * in + i];
        if (wi == 0.0) continue;
        auto src = jac.row(i);
        for (std::size_t f = 0; f < m; ++f) dst[f] += wi * src[f];
      }
    }
    jac = std::move(next);
  }
  return jac;
}

// --------------------------------------------------------------- ConvModel

ConvModel::ConvModel(std::size_t height, std::size_t width, std::size_t channels,
                     std::vector<std::size_t> conv_channels, std::size_t classes, std::uint64_t seed)
    : height_(height), width_(width), channels_(channels), conv_channels_(std::move(conv_channels)),
      classes_(classes) {
  if (height_ == 0 || width_ == 0 || channels_ == 0 || classes_ < 2 || conv_channels_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "invalid conv model configuration");
  }
  std::mt19937_64 rng(seed);
  std::size_t in = channels_;
  for (std::size_t out : conv_channels_) {
    if (out == 0) throw Error(ErrorCode::kInvalidArgument, "conv stage with zero channels");
    kernels_.push_back(he_normal({out, 3, 3, in}, 9 * in, rng));
    conv_biases_.emplace_back(Shape{out});
    in = out;
  }
  head_weight_ = he_normal({classes_, in}, in, rng);
  head_bias_ = DenseTensor(Shape{classes_});
}

std::vector<DenseTensor*> ConvModel::parameters() {
  std::vector<DenseTensor*> out;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    out.push_back(&kernels_[s]);
    out.push_back(&conv_biases_[s]);
  }
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

std::vector<std::string> ConvModel::names() const {
  std::vector<std::string> out;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    out.push_back("conv" + std::to_string(s) + "_kernel");
    out.push_back("conv" + std::to_string(s) + "_bias");
  }
  out.push_back("head_weight");
  out.push_back("head_bias");
  return out;
}

namespace {

void conv3x3(const std::vector<double>& in, std::size_t h, std::size_t w, std::size_t cin, const DenseTensor& kernel,
             const DenseTensor& bias, std::vector<double>& out) {
  const std::size_t cout = kernel.dim(0);
  const std::vector<double> k = to_double(kernel.data());
  out.assign(h * w * cout, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* dst = &out[(y * w + x) * cout];
      for (std::size_t o = 0; o < cout; ++o) dst[o] = bias[o];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* src = &in[(static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * cin];
          for (std::size_t o = 0; o < cout; ++o) {
            const double* kk = &k[((o * 3 + ky) * 3 + kx) * cin];
            double acc = 0.0;
            for (std::size_t i = 0; i < cin; ++i) acc += kk[i] * src[i];
            dst[o] += acc;
          }
        }
      }
    }
  }
}

// Accumulates kernel/bias gradients and (optionally) the input gradient.
void conv3x3_backward(const std::vector<double>& in, std::size_t h, std::size_t w, std::size_t cin,
                      const DenseTensor& kernel, const std::vector<double>& dout, std::vector<double>* dkernel,
                      std::vector<double>* dbias, std::vector<double>* din) {
  const std::size_t cout = kernel.dim(0);
  const std::vector<double> k = to_double(kernel.data());
  if (dkernel) dkernel->assign(k.size(), 0.0);
  if (dbias) dbias->assign(cout, 0.0);
  if (din) din->assign(in.size(), 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* g = &dout[(y * w + x) * cout];
      if (dbias) {
        for (std::size_t o = 0; o < cout; ++o) (*dbias)[o] += g[o];
      }
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y + ky) - 1;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x + kx) - 1;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t base = (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * cin;
          for (std::size_t o = 0; o < cout; ++o) {
            const double go = g[o];
            if (go == 0.0) continue;
            const std::size_t kbase = ((o * 3 + ky) * 3 + kx) * cin;
            if (dkernel) {
              for (std::size_t i = 0; i < cin; ++i) (*dkernel)[kbase + i] += go * in[base + i];
            }
            if (din) {
              for (std::size_t i = 0; i < cin; ++i) (*din)[base + i] += go * k[kbase + i];
            }
          }
        }
      }
    }
  }
}

}  // namespace

ForwardCache ConvModel::forward(std::span<const float> input) const {
  if (input.size() != height_ * width_ * channels_) {
    throw Error(ErrorCode::kShape, "conv input has " + std::to_string(input.size()) + " values, expected " +
                                       shape_to_string(input_shape()));
  }
  ForwardCache cache;
  cache.input = to_double(input);
  const std::vector<double>* a = &cache.input;
  std::size_t cin = channels_;
  for (std::size_t s = 0; s < kernels_.size(); ++s) {
    std::vector<double> pre;
    conv3x3(*a, height_, width_, cin, kernels_[s], conv_biases_[s], pre);
    std::vector<double> post = pre;
    for (double& x : post) x = std::max(x, 0.0);
    cache.pre.push_back(std::move(pre));
    cache.post.push_back(std::move(post));
    a = &cache.post.back();
    cin = conv_channels_[s];
  }
  cache.latent = cache.post.back();
  const std::size_t d = conv_channels_.back();
  const std::size_t hw = height_ * width_;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t j = 0; j < d; ++j) pooled[j] += cache.latent[p * d + j];
  }
  for (double& x : pooled) x /= static_cast<double>(hw);
  cache.logits.assign(classes_, 0.0);
  auto hw_data = head_weight_.data();
  for (std::size_t k = 0; k < classes_; ++k) {
    double acc = head_bias_[k];
    for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(hw_data[k * d + j]) * pooled[j];
    cache.logits[k] = acc;
  }
  // The pooled vector rides along as the final "stage" of the cache.
  cache.pre.push_back(pooled);
  cache.post.push_back(std::move(pooled));
  softmax(cache.logits, cache.probs);
  cache.valid = true;
  return cache;
}

Gradients ConvModel::backward(const ForwardCache& cache, const BackwardSeed& seed, bool param_grads) const {
  check_cache(cache);
  const std::vector<double> dlogits = logit_gradient(cache, seed);
  const std::size_t d = conv_channels_.back();
  const std::size_t hw = height_ * width_;
  const std::size_t stages = kernels_.size();
  const std::vector<double>& pooled = cache.post.back();

  Gradients g;
  if (param_grads) g.params.resize(2 * stages + 2);
  auto head = head_weight_.data();
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t k = 0; k < classes_; ++k) {
    if (dlogits[k] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) dpooled[j] += static_cast<double>(head[k * d + j]) * dlogits[k];
  }
  if (param_grads) {
    auto& dw = g.params[2 * stages];
    dw.assign(classes_ * d, 0.0);
    for (std::size_t k = 0; k < classes_; ++k) {
      for (std::size_t j = 0; j < d; ++j) dw[k * d + j] = dlogits[k] * pooled[j];
    }
    g.params[2 * stages + 1] = dlogits;
  }
  std::vector<double> dpost(hw * d);
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t j = 0; j < d; ++j) dpost[p * d + j] = dpooled[j] / static_cast<double>(hw);
  }
  g.latent = dpost;
  if (!param_grads) return g;

  for (std::size_t s = stages; s-- > 0;) {
    const std::size_t cin = s == 0 ? channels_ : conv_channels_[s - 1];
    std::vector<double> dpre = dpost;
    for (std::size_t i = 0; i < dpre.size(); ++i) {
      if (cache.pre[s][i] <= 0.0) dpre[i] = 0.0;
    }
    const std::vector<double>& in = s == 0 ? cache.input : cache.post[s - 1];
    std::vector<double> din;
    conv3x3_backward(in, height_, width_, cin, kernels_[s], dpre, &g.params[2 * s], &g.params[2 * s + 1],
                     s == 0 ? nullptr : &din);
    dpost = std::move(din);
  }
  return g;
}

// -------------------------------------------------------------- checkpoints

void save_model(const Model& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  json arch = {{"version", 1}, {"arch", model.arch()}, {"layer_name", model.layer_name()}};
  if (const auto* mlp = dynamic_cast<const MlpModel*>(&model)) {
    arch["sizes"] = mlp->sizes();
    arch["analyzed_hidden"] = mlp->analyzed_hidden();
  } else if (const auto* conv = dynamic_cast<const ConvModel*>(&model)) {
    const Shape in = conv->input_shape();
    arch["height"] = in[0];
    arch["width"] = in[1];
    arch["channels"] = in[2];
    arch["conv_channels"] = conv->conv_channels();
    arch["classes"] = conv->class_count();
  }
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  json files = json::object();
  for (std::size_t i = 0; i < params.size(); ++i) {
    files[names[i]] = names[i] + ".cdad";
    write_tensor(*params[i], dir / (names[i] + ".cdad"));
  }
  arch["parameters"] = names;
  arch["files"] = files;
  std::ofstream os(dir / "model.json", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write model.json in " + dir.string());
  os << arch.dump(2) << '\n';
}

std::unique_ptr<Model> load_model(const fs::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw Error(ErrorCode::kMissingFile, "no model.json in " + dir.string());
  std::unique_ptr<Model> model;
  json arch;
  try {
    arch = json::parse(is);
    const std::string kind = arch.at("arch").get<std::string>();
    if (kind == "mlp") {
      model = std::make_unique<MlpModel>(arch.at("sizes").get<std::vector<std::size_t>>(), 0,
                                         arch.at("analyzed_hidden").get<std::size_t>());
    } else if (kind == "conv") {
      model = std::make_unique<ConvModel>(arch.at("height").get<std::size_t>(), arch.at("width").get<std::size_t>(),
                                          arch.at("channels").get<std::size_t>(),
                                          arch.at("conv_channels").get<std::vector<std::size_t>>(),
                                          arch.at("classes").get<std::size_t>(), 0);
    } else {
      throw Error(ErrorCode::kSchema, "unknown model arch '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("model.json: ") + e.what());
  }
  const auto names = model->parameter_names();
  auto params = model->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    DenseTensor t = read_tensor(dir / arch.at("files").at(names[i]).get<std::string>());
    if (t.shape() != params[i]->shape()) {
      throw Error(ErrorCode::kShape, "parameter " + names[i] + " has shape " + shape_to_string(t.shape()));
    }
    *params[i] = std::move(t);
  }
  return model;
}

// ----------------------------------------------------------------- training

std::vector<int> predict_all(const Model& model, const LabeledBatch& data) {
  const std::size_t stride = shape_size(model.input_shape());
  if (data.features.size() != data.size() * stride) throw Error(ErrorCode::kShape, "data does not fit the model input");
  std::vector<int> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out[i] = model.predict_class(data.features.data().subspan(i * stride, stride));
  }
  return out;
}

double accuracy(const Model& model, const LabeledBatch& data) {
  const auto pred = predict_all(model, data);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

TrainHistory train(Model& model, const LabeledBatch& data, const TrainConfig& config) {
  data.validate();
  if (!(config.lr >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be non-negative");
  if (config.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  if (static_cast<std::size_t>(data.class_count) != model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "model and data disagree on the class count");
  }
  const std::size_t stride = shape_size(model.input_shape());
  if (data.features.size() != data.size() * stride) throw Error(ErrorCode::kShape, "data does not fit the model input");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto params = model.parameters();
  TrainHistory hist;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::vector<double>> acc(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) acc[p].assign(params[p]->size(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const ForwardCache cache = model.forward(data.features.data().subspan(i * stride, stride));
        const auto label = static_cast<std::size_t>(data.labels[i]);
        loss -= std::log(std::max(cache.probs[label], 1e-300));
        hits += static_cast<std::size_t>(std::max_element(cache.probs.begin(), cache.probs.end()) -
                                         cache.probs.begin()) == label;
        const Gradients g = model.backward(cache, BackwardSeed::cross_entropy(data.labels[i]));
        for (std::size_t p = 0; p < params.size(); ++p) {
          for (std::size_t j = 0; j < acc[p].size(); ++j) acc[p][j] += g.params[p][j];
        }
      }
      if (config.lr == 0.0) continue;
      const double step = config.lr / static_cast<double>(end - start);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p]->mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) {
          w[j] = static_cast<float>(static_cast<double>(w[j]) - step * acc[p][j]);
        }
      }
    }
    loss /= static_cast<double>(order.size());
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kNumerical, "training diverged at epoch " + std::to_string(epoch));
    }
    hist.loss.push_back(loss);
    hist.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(order.size()));
  }
  for (const auto* p : params) p->check_finite();
  hist.final_accuracy = accuracy(model, data);
  return hist;
}

// --------------------------------------------------------------- synthetic

const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::kHStripes: return "h_stripes";
    case Pattern::kVStripes: return "v_stripes";
    case Pattern::kDots: return "dots";
    case Pattern::kCheckerboard: return "checkerboard";
    case Pattern::kNone: return "none";
  }
  return "unknown";
}

Pattern parse_pattern(const std::string& s) {
  for (Pattern p : {Pattern::kHStripes, Pattern::kVStripes, Pattern::kDots, Pattern::kCheckerboard, Pattern::kNone}) {
    if (s == to_string(p)) return p;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown pattern '" + s + "'");
}

namespace {

bool pattern_on(Pattern p, std::size_t r, std::size_t c) {
  switch (p) {
    case Pattern::kHStripes: return r % 2 == 0;
    case Pattern::kVStripes: return c % 2 == 0;
    case Pattern::kDots: return r % 2 == 0 && c % 2 == 0;
    case Pattern::kCheckerboard: return (r + c) % 2 == 0;
    case Pattern::kNone: return false;
  }
  return false;
}

}  // namespace

SyntheticImages gen_images(const SyntheticSpec& spec, std::size_t n_per_class, std::uint64_t seed) {
  if (spec.classes.empty() || n_per_class == 0) throw Error(ErrorCode::kInvalidArgument, "empty synthetic spec");
  if (spec.patch == 0 || spec.patch > spec.height || spec.patch > spec.width) {
    throw Error(ErrorCode::kInvalidArgument, "pattern patch does not fit the image");
  }
  for (const auto& alternatives : spec.classes) {
    if (alternatives.empty()) throw Error(ErrorCode::kInvalidArgument, "class without a pattern");
  }
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const std::size_t ch = spec.channels;
  const std::size_t n = spec.classes.size() * n_per_class;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<float> images(n * h * w * ch, 0.0f);
  std::vector<float> masks(n * h * w, 0.0f);
  SyntheticImages out;
  out.batch.class_count = static_cast<int>(spec.classes.size());
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const auto& alternatives = spec.classes[c];
    for (std::size_t t = 0; t < n_per_class; ++t) {
      const std::size_t i = c * n_per_class + t;
      const Pattern p = alternatives[rng() % alternatives.size()];
      const std::size_t oy = rng() % (h - spec.patch + 1);
      const std::size_t ox = rng() % (w - spec.patch + 1);
      double amp = spec.amplitude;
      if (spec.amplitude_jitter > 0.0) {
        amp *= 1.0 + spec.amplitude_jitter * (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0);
      }
      float* img = &images[i * h * w * ch];
      float* mask = &masks[i * h * w];
      for (std::size_t y = 0; y < spec.patch; ++y) {
        for (std::size_t x = 0; x < spec.patch; ++x) {
          if (p == Pattern::kNone) continue;
          const std::size_t pix = (oy + y) * w + (ox + x);
          mask[pix] = 1.0f;
          if (!pattern_on(p, y, x)) continue;
          for (std::size_t k = 0; k < ch; ++k) img[pix * ch + k] = static_cast<float>(amp);
        }
      }
      if (spec.noise_std > 0.0) {
        for (std::size_t j = 0; j < h * w * ch; ++j) img[j] += static_cast<float>(spec.noise_std * noise(rng));
      }
      out.batch.labels.push_back(static_cast<int>(c));
      out.patterns.push_back(p);
    }
  }
  out.batch.features = DenseTensor({n, h, w, ch}, std::move(images));
  out.masks = DenseTensor({n, h, w}, std::move(masks));
  return out;
}

LabeledBatch gen_tabular(std::size_t m_features, const std::vector<std::size_t>& active_features, std::size_t n,
                         double noise_std, std::uint64_t seed) {
  if (m_features == 0 || n == 0 || active_features.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "tabular generator needs features, samples and active features");
  }
  for (auto a : active_features) {
    if (a >= m_features) throw Error(ErrorCode::kInvalidArgument, "active feature index out of range");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> x(n * m_features);
  LabeledBatch batch;
  batch.class_count = 2;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < m_features; ++f) x[i * m_features + f] = static_cast<float>(normal(rng));
    double score = noise_std > 0.0 ? noise_std * normal(rng) : 0.0;
    for (auto a : active_features) score += x[i * m_features + a];
    batch.labels.push_back(score > 0.0 ? 1 : 0);
  }
  batch.features = DenseTensor({n, m_features}, std::move(x));
  return batch;
}

// -------------------------------------------------------------------- dumps

std::vector<std::string> default_sample_ids(std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = "s" + std::to_string(i);
  return ids;
}

ActivationDump make_dump(const Model& model, const LabeledBatch& data, const std::vector<int>& tracked_classes,
                         GradientConvention convention) {
  data.validate();
  if (tracked_classes.empty()) throw Error(ErrorCode::kInvalidArgument, "make_dump needs tracked classes");
  const std::size_t n = data.size();
  const std::size_t stride = shape_size(model.input_shape());
  if (data.features.size() != n * stride) throw Error(ErrorCode::kShape, "data does not fit the model input");
  const Shape latent = model.latent_shape();
  const bool spatial = latent.size() == 3;
  const std::size_t d = latent.back();
  const std::size_t positions = shape_size(latent) / d;
  const std::size_t kg = tracked_classes.size();

  std::vector<float> pooled(n * d);
  std::vector<float> grads(n * kg * d);
  std::vector<float> spatial_data;
  if (spatial) spatial_data.resize(n * positions * d);

  for (std::size_t i = 0; i < n; ++i) {
    const ForwardCache cache = model.forward(data.features.data().subspan(i * stride, stride));
    std::vector<double> mean(d, 0.0);
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += cache.latent[p * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) pooled[i * d + j] = static_cast<float>(mean[j] / static_cast<double>(positions));
    if (spatial) {
      for (std::size_t q = 0; q < positions * d; ++q) spatial_data[i * positions * d + q] = static_cast<float>(cache.latent[q]);
    }
    for (std::size_t k = 0; k < kg; ++k) {
      const BackwardSeed seed = convention == GradientConvention::kLogit ? BackwardSeed::logit(tracked_classes[k])
                                                                         : BackwardSeed::probability(tracked_classes[k]);
      const Gradients g = model.backward(cache, seed, false);
      float* dst = &grads[(i * kg + k) * d];
      if (spatial) {
        // Pool after the element-wise product of activations and gradients.
        for (std::size_t j = 0; j < d; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < positions; ++p) acc += cache.latent[p * d + j] * g.latent[p * d + j];
          dst[j] = static_cast<float>(acc / static_cast<double>(positions));
        }
      } else {
        for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>(g.latent[j]);
      }
    }
  }

  ActivationDump dump;
  dump.layer_name = model.layer_name();
  dump.pooled_activations = DenseTensor({n, d}, std::move(pooled));
  dump.gradients = DenseTensor({n, kg, d}, std::move(grads));
  if (spatial) dump.spatial_activations = DenseTensor({n, latent[0], latent[1], d}, std::move(spatial_data));
  dump.tracked_classes = tracked_classes;
  dump.labels = data.labels;
  dump.sample_ids = default_sample_ids(n);
  dump.class_count = data.class_count;
  dump.gradient_convention = convention;
  dump.sensitivity_convention = spatial ? SensitivityConvention::kPooledProduct : SensitivityConvention::kGradient;
  dump.validate();
  return dump;
}

}  // namespace cdisco::nn

namespace cdisco::nn {

void save_data(const StoredData& data, const fs::path& dir) {
  data.batch.validate();
  if (data.masks && data.masks->dim(0) != data.batch.size()) throw Error(ErrorCode::kShape, "mask count does not match samples");
  if (!data.patterns.empty() && data.patterns.size() != data.batch.size()) {
    throw Error(ErrorCode::kShape, "pattern count does not match samples");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  json meta = {{"version", 1},
               {"kind", data.kind},
               {"n", data.batch.size()},
               {"class_count", data.batch.class_count},
               {"labels", data.batch.labels},
               {"files", {{"features", "features.cdad"}}}};
  write_tensor(data.batch.features, dir / "features.cdad");
  if (data.masks) {
    meta["files"]["masks"] = "masks.cdad";
    write_tensor(*data.masks, dir / "masks.cdad");
  }
  if (!data.patterns.empty()) meta["patterns"] = data.patterns;
  std::ofstream os(dir / "data.json", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot write data.json in " + dir.string());
  os << meta.dump(2) << '\n';
}

StoredData load_data(const fs::path& dir) {
  std::ifstream is(dir / "data.json");
  if (!is) throw Error(ErrorCode::kMissingFile, "no data.json in " + dir.string());
  StoredData out;
  json meta;
  try {
    meta = json::parse(is);
    if (meta.at("version").get<int>() != 1) throw Error(ErrorCode::kVersionMismatch, "data.json version");
    out.kind = meta.at("kind").get<std::string>();
    out.batch.class_count = meta.at("class_count").get<int>();
    out.batch.labels = meta.at("labels").get<std::vector<int>>();
    if (meta.contains("patterns")) out.patterns = meta.at("patterns").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("data.json: ") + e.what());
  }
  out.batch.features = read_tensor(dir / meta["files"]["features"].get<std::string>());
  if (meta["files"].contains("masks")) out.masks = read_tensor(dir / meta["files"]["masks"].get<std::string>());
  out.batch.validate();
  return out;
}

}  // namespace cdisco::nn
