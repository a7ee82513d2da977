#include "cdisco/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cdisco/error.hpp"

namespace cdisco {

double Fill::value(std::size_t channel) const {
  switch (kind) {
    case Kind::kZero: return 0.0;
    case Kind::kGray: return 0.5;
    case Kind::kMean:
      if (channel >= channel_means.size()) {
        throw Error(ErrorCode::kInvalidArgument, "mean fill has no value for channel " + std::to_string(channel));
      }
      return channel_means[channel];
  }
  return 0.0;
}

Fill::Kind parse_fill(const std::string& s) {
  if (s == "mean") return Fill::Kind::kMean;
  if (s == "gray") return Fill::Kind::kGray;
  if (s == "zero") return Fill::Kind::kZero;
  throw Error(ErrorCode::kInvalidArgument, "unknown fill '" + s + "' (mean|gray|zero)");
}

std::vector<double> channel_means(const DenseTensor& images) {
  if (images.rank() != 4) throw Error(ErrorCode::kShape, "channel_means expects [N, H, W, C]");
  const std::size_t c = images.dim(3);
  std::vector<double> mean(c, 0.0);
  auto data = images.data();
  for (std::size_t i = 0; i < data.size(); ++i) mean[i % c] += data[i];
  for (double& m : mean) m /= static_cast<double>(data.size() / c);
  return mean;
}

DenseTensor occlude_pixels(const DenseTensor& image, const std::vector<bool>& mask, const Fill& fill) {
  if (image.rank() != 3 || mask.size() != image.dim(0) * image.dim(1)) {
    throw Error(ErrorCode::kShape, "mask does not match the image");
  }
  const std::size_t c = image.dim(2);
  DenseTensor out = image;
  auto data = out.mutable_data();
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) data[p * c + ch] = static_cast<float>(fill.value(ch));
  }
  return out;
}

DenseTensor occlude_concept(const DenseTensor& image, const ConceptMap& map, const Fill& fill,
                            const MaskOptions& options) {
  if (image.rank() != 3) throw Error(ErrorCode::kShape, "occlude_concept expects an [H, W, C] image");
  return occlude_pixels(image, concept_pixel_mask(map, image.dim(0), image.dim(1), options), fill);
}

double AblationReport::control_mean(std::size_t step, bool class_only) const {
  const auto& rows = class_only ? control_class_accuracy : control_accuracy;
  if (step >= rows.size() || rows[step].empty()) return 0.0;
  return std::accumulate(rows[step].begin(), rows[step].end(), 0.0) / static_cast<double>(rows[step].size());
}

std::optional<std::size_t> first_step_reaching(std::span<const double> fractions, double degrade_frac) {
  for (std::size_t j = 0; j < fractions.size(); ++j) {
    if (fractions[j] >= degrade_frac) return j + 1;
  }
  return std::nullopt;
}

namespace {

void check_classes(const nn::Model& model, const LabeledBatch& data, int class_id) {
  data.validate();
  if (static_cast<std::size_t>(data.class_count) != model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "model predicts " + std::to_string(model.class_count()) +
                                                 " classes but the dataset has " + std::to_string(data.class_count));
  }
  if (class_id < 0 || class_id >= data.class_count) {
    throw Error(ErrorCode::kInvalidArgument, "class " + std::to_string(class_id) + " outside the dataset's classes");
  }
}

struct Accuracies {
  double overall = 0.0;
  double in_class = 0.0;
};

Accuracies measure(const nn::Model& model, const LabeledBatch& data, int class_id) {
  const auto pred = nn::predict_all(model, data);
  std::size_t hits = 0;
  std::size_t class_hits = 0;
  std::size_t class_n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == data.labels[i];
    if (data.labels[i] == class_id) {
      ++class_n;
      class_hits += pred[i] == class_id;
    }
  }
  Accuracies a;
  a.overall = static_cast<double>(hits) / static_cast<double>(pred.size());
  a.in_class = class_n ? static_cast<double>(class_hits) / static_cast<double>(class_n) : 0.0;
  return a;
}

}  // namespace

AblationReport sdc(const nn::Model& model, const LabeledBatch& data, int class_id,
                   const std::vector<ConceptVector>& concepts, const Fill& fill, double degrade_frac,
                   const MaskOptions& mask_options) {
  check_classes(model, data, class_id);
  if (concepts.empty()) throw Error(ErrorCode::kInvalidArgument, "sdc needs at least one concept");
  const Shape latent = model.latent_shape();
  const Shape in_shape = model.input_shape();
  if (latent.size() != 3 || in_shape.size() != 3) {
    throw Error(ErrorCode::kInvalidArgument, "occlusion needs a model with spatial input and latent maps");
  }
  const std::size_t stride = shape_size(in_shape);

  AblationReport report;
  report.class_id = class_id;
  for (const auto& c : concepts) report.concepts_removed.push_back(to_string(c.source));
  const std::size_t steps = concepts.size();
  std::vector<std::size_t> degraded(steps + 1, 0);
  std::vector<std::size_t> class_hits(steps + 1, 0);
  std::size_t initially_correct = 0;
  std::size_t class_n = 0;

  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] != class_id) continue;
    ++class_n;
    const DenseTensor image(in_shape, std::vector<float>(data.features.data().begin() + static_cast<std::ptrdiff_t>(i * stride),
                                                         data.features.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
    const nn::ForwardCache cache = model.forward(image.data());
    const int before = static_cast<int>(std::max_element(cache.probs.begin(), cache.probs.end()) - cache.probs.begin());
    const bool correct = before == class_id;
    initially_correct += correct;
    class_hits[0] += correct;
    std::vector<float> latent_f(cache.latent.begin(), cache.latent.end());
    const DenseTensor spatial(latent, std::move(latent_f));
    std::vector<bool> union_mask(in_shape[0] * in_shape[1], false);
    for (std::size_t j = 0; j < steps; ++j) {
      const ConceptMap map = concept_map(spatial, concepts[j].direction);
      const auto m = concept_pixel_mask(map, in_shape[0], in_shape[1], mask_options);
      for (std::size_t p = 0; p < m.size(); ++p) union_mask[p] = union_mask[p] || m[p];
      const DenseTensor occluded = occlude_pixels(image, union_mask, fill);
      const int after = model.predict_class(occluded.data());
      class_hits[j + 1] += after == class_id;
      if (correct && after != class_id) ++degraded[j + 1];
    }
  }
  for (std::size_t j = 0; j <= steps; ++j) {
    report.class_accuracy_after.push_back(class_n ? static_cast<double>(class_hits[j]) / static_cast<double>(class_n) : 0.0);
    report.degraded_fraction.push_back(
        initially_correct ? static_cast<double>(degraded[j]) / static_cast<double>(initially_correct) : 0.0);
  }
  report.sdc = first_step_reaching(std::span<const double>(report.degraded_fraction).subspan(1), degrade_frac);
  return report;
}

std::vector<std::size_t> select_channels(std::span<const double> u, double keep_frac) {
  if (u.empty()) throw Error(ErrorCode::kInvalidArgument, "empty concept vector");
  if (!(keep_frac >= 0.0 && keep_frac <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "keep_frac outside [0, 1]");
  std::vector<double> mag(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) mag[j] = std::abs(u[j]);
  const double threshold = percentile(mag, keep_frac);
  const auto cap = static_cast<std::size_t>(std::ceil((1.0 - keep_frac) * static_cast<double>(u.size()) - 1e-9));
  std::vector<std::size_t> order(u.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  std::vector<std::size_t> out;
  for (std::size_t j : order) {
    if (out.size() >= cap || mag[j] < threshold || mag[j] == 0.0) break;
    out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Annihilation annihilate_channels(const DenseTensor& layer_weights, const std::vector<std::size_t>& channels) {
  if (layer_weights.rank() < 1) throw Error(ErrorCode::kShape, "layer weights need a leading channel axis");
  const std::size_t d = layer_weights.dim(0);
  const std::size_t slice = layer_weights.size() / d;
  Annihilation out{layer_weights, {}, 0};
  auto data = out.weights.mutable_data();
  for (std::size_t j : channels) {
    if (j >= d) throw Error(ErrorCode::kShape, "channel " + std::to_string(j) + " out of range");
    std::fill(data.begin() + static_cast<std::ptrdiff_t>(j * slice),
              data.begin() + static_cast<std::ptrdiff_t>((j + 1) * slice), 0.0f);
    out.zeroed += slice;
  }
  out.channels = channels;
  return out;
}

Annihilation annihilate_weights(const DenseTensor& layer_weights, std::span<const double> u, double keep_frac) {
  if (layer_weights.rank() < 1 || layer_weights.dim(0) != u.size()) {
    throw Error(ErrorCode::kShape, "weights lead with " + std::to_string(layer_weights.rank() ? layer_weights.dim(0) : 0) +
                                       " channels but the concept has " + std::to_string(u.size()));
  }
  return annihilate_channels(layer_weights, select_channels(u, keep_frac));
}

namespace {

nn::ConvModel without_channels(const nn::ConvModel& model, const std::vector<std::size_t>& channels) {
  nn::ConvModel out = model;
  out.analyzed_kernel() = annihilate_channels(out.analyzed_kernel(), channels).weights;
  out.analyzed_bias() = annihilate_channels(out.analyzed_bias(), channels).weights;
  return out;
}

void merge_into(std::vector<std::size_t>& acc, const std::vector<std::size_t>& add) {
  acc.insert(acc.end(), add.begin(), add.end());
  std::sort(acc.begin(), acc.end());
  acc.erase(std::unique(acc.begin(), acc.end()), acc.end());
}

std::vector<std::size_t> top_magnitude(std::span<const double> u, std::size_t count) {
  std::vector<std::size_t> order(u.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(u[a]) > std::abs(u[b]); });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

AblationReport ablation_with_control(const nn::ConvModel& model, const LabeledBatch& data, int class_id,
                                     const std::vector<ConceptVector>& concepts, double keep_frac,
                                     std::size_t n_random_seeds, std::uint64_t seed) {
  check_classes(model, data, class_id);
  nn::ConvModel probe = model;
  const std::size_t d = probe.analyzed_kernel().dim(0);

  AblationReport report;
  report.class_id = class_id;
  const Accuracies base = measure(model, data, class_id);
  report.accuracy_after.push_back(base.overall);
  report.class_accuracy_after.push_back(base.in_class);
  report.zeroed_scalars.push_back(0);

  std::vector<std::size_t> per_concept_count;
  std::vector<std::size_t> removed;
  for (const auto& c : concepts) {
    if (c.direction.size() != d) throw Error(ErrorCode::kShape, "concept length does not match the analyzed channels");
    const auto channels = select_channels(c.direction, keep_frac);
    per_concept_count.push_back(channels.size());
    merge_into(removed, channels);
    const nn::ConvModel ablated = without_channels(model, removed);
    const Accuracies a = measure(ablated, data, class_id);
    report.concepts_removed.push_back(to_string(c.source));
    report.accuracy_after.push_back(a.overall);
    report.class_accuracy_after.push_back(a.in_class);
    report.zeroed_scalars.push_back(removed.size() * (probe.analyzed_kernel().size() / d + 1));
  }

  report.control_accuracy.assign(concepts.size() + 1, {});
  report.control_class_accuracy.assign(concepts.size() + 1, {});
  for (std::size_t s = 0; s < n_random_seeds; ++s) {
    const std::uint64_t run_seed = seed + s;
    report.control_seeds.push_back(run_seed);
    std::mt19937_64 rng(run_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    report.control_accuracy[0].push_back(base.overall);
    report.control_class_accuracy[0].push_back(base.in_class);
    std::vector<std::size_t> random_removed;
    for (std::size_t j = 0; j < concepts.size(); ++j) {
      std::vector<double> dir(d);
      for (double& x : dir) x = normal(rng);
      const double len = norm2(dir);
      for (double& x : dir) x /= len;
      merge_into(random_removed, top_magnitude(dir, per_concept_count[j]));
      const Accuracies a = measure(without_channels(model, random_removed), data, class_id);
      report.control_accuracy[j + 1].push_back(a.overall);
      report.control_class_accuracy[j + 1].push_back(a.in_class);
    }
  }
  return report;
}

AlignmentStats basis_alignment_stats(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw Error(ErrorCode::kInvalidArgument, "no vectors to compare against the basis");
  AlignmentStats stats;
  for (const auto& v : vectors) {
    const double len = norm2(v);
    if (len == 0.0) throw Error(ErrorCode::kInvalidArgument, "zero concept vector");
    double peak = 0.0;
    for (double x : v) peak = std::max(peak, std::abs(x));
    const double cosine = std::min(1.0, peak / len);
    stats.max_abs_cosine.push_back(cosine);
    stats.max = std::max(stats.max, cosine);
    stats.mean += cosine;
  }
  stats.mean /= static_cast<double>(vectors.size());
  return stats;
}

std::vector<std::size_t> top_features(std::span<const double> scores, double top_frac) {
  if (!(top_frac > 0.0 && top_frac < 1.0)) throw Error(ErrorCode::kInvalidArgument, "top_frac must lie in (0, 1)");
  const std::size_t m = scores.size();
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(top_frac * static_cast<double>(m) - 1e-9)), 1, m);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) > std::abs(scores[b]); });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

Faithfulness pgi_pgu(const nn::Model& model, const DenseTensor& inputs,
                     const std::vector<std::vector<double>>& explanations, double top_frac, double noise_std,
                     std::size_t n_perturb, std::uint64_t seed) {
  if (!(top_frac > 0.0 && top_frac < 1.0)) throw Error(ErrorCode::kInvalidArgument, "top_frac must lie in (0, 1)");
  if (noise_std < 0.0) throw Error(ErrorCode::kInvalidArgument, "noise_std must be non-negative");
  if (n_perturb == 0) throw Error(ErrorCode::kInvalidArgument, "n_perturb must be positive");
  if (inputs.rank() != 2) throw Error(ErrorCode::kShape, "pgi_pgu expects inputs [n, m]");
  const std::size_t n = inputs.dim(0);
  const std::size_t m = inputs.dim(1);
  if (explanations.size() != n) throw Error(ErrorCode::kShape, "one explanation per input is required");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double pgi = 0.0;
  double pgu = 0.0;
  std::vector<float> x(m);
  for (std::size_t i = 0; i < n; ++i) {
    if (explanations[i].size() != m) throw Error(ErrorCode::kShape, "explanation length does not match the features");
    auto row = inputs.data().subspan(i * m, m);
    const auto base = model.predict(row);
    const auto cls = static_cast<std::size_t>(std::max_element(base.begin(), base.end()) - base.begin());
    const auto top = top_features(explanations[i], top_frac);
    std::vector<bool> important(m, false);
    for (auto f : top) important[f] = true;
    for (int pass = 0; pass < 2; ++pass) {
      const bool perturb_important = pass == 0;
      double gap = 0.0;
      for (std::size_t t = 0; t < n_perturb; ++t) {
        for (std::size_t f = 0; f < m; ++f) {
          x[f] = row[f];
          if (important[f] == perturb_important && noise_std > 0.0) {
            x[f] = static_cast<float>(row[f] + noise_std * normal(rng));
          }
        }
        gap += std::abs(base[cls] - model.predict(x)[cls]);
      }
      (perturb_important ? pgi : pgu) += gap / static_cast<double>(n_perturb);
    }
  }
  return {pgi / static_cast<double>(n), pgu / static_cast<double>(n)};
}

}  // namespace cdisco
