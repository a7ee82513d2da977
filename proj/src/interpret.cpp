#include "cdisco/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdisco/error.hpp"

namespace cdisco {

ConceptMap concept_map(const DenseTensor& spatial, std::span<const double> u) {
  if (spatial.rank() != 3) throw Error(ErrorCode::kShape, "concept_map expects [H, W, d] activations");
  const std::size_t h = spatial.dim(0);
  const std::size_t w = spatial.dim(1);
  const std::size_t d = spatial.dim(2);
  if (u.size() != d) {
    throw Error(ErrorCode::kShape, "concept vector has " + std::to_string(u.size()) + " entries for " +
                                       std::to_string(d) + " channels");
  }
  auto data = spatial.data();
  std::vector<float> values(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += u[j] * data[p * d + j];
    values[p] = static_cast<float>(acc);
  }
  ConceptMap map;
  map.values = DenseTensor({h, w}, std::move(values));
  return map;
}

std::vector<bool> concept_pixel_mask(const ConceptMap& map, std::size_t image_h, std::size_t image_w,
                                     const MaskOptions& options) {
  const std::size_t h = map.values.dim(0);
  const std::size_t w = map.values.dim(1);
  if (image_h % h != 0 || image_w % w != 0) {
    throw Error(ErrorCode::kShape, "image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                                       " is not an integer multiple of the map size " + std::to_string(h) + "x" +
                                       std::to_string(w));
  }
  std::vector<double> v(map.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = map.values[i];
    v[i] = options.use_abs ? std::abs(x) : x;
  }
  const double threshold = percentile(v, options.quantile);
  const std::size_t sy = image_h / h;
  const std::size_t sx = image_w / w;
  std::vector<bool> mask(image_h * image_w);
  for (std::size_t y = 0; y < image_h; ++y) {
    for (std::size_t x = 0; x < image_w; ++x) mask[y * image_w + x] = v[(y / sy) * w + x / sx] >= threshold;
  }
  return mask;
}

DenseTensor segmentation_mask(const ConceptMap& map, const DenseTensor& image, const MaskOptions& options) {
  if (image.rank() != 3) throw Error(ErrorCode::kShape, "segmentation_mask expects an [H, W, C] image");
  const std::size_t ih = image.dim(0);
  const std::size_t iw = image.dim(1);
  const std::size_t c = image.dim(2);
  const std::vector<bool> keep = concept_pixel_mask(map, ih, iw, options);
  DenseTensor out = image;
  auto data = out.mutable_data();
  for (std::size_t p = 0; p < ih * iw; ++p) {
    if (keep[p]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) data[p * c + ch] = 0.0f;
  }
  return out;
}

std::vector<std::size_t> max_activating(std::span<const double> projections, std::size_t count) {
  if (count > projections.size()) throw Error(ErrorCode::kInvalidArgument, "count exceeds the number of samples");
  std::vector<std::size_t> order(projections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(projections[a]) > std::abs(projections[b]);
  });
  order.resize(count);
  return order;
}

std::vector<std::size_t> max_activating(const ActivationDump& dump, std::span<const double> u, std::size_t count) {
  const std::size_t n = dump.sample_count();
  const std::size_t d = dump.latent_dim();
  if (u.size() != d) throw Error(ErrorCode::kShape, "direction length does not match the latent dimension");
  auto pooled = dump.pooled_activations.data();
  std::vector<double> proj(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += pooled[i * d + j] * u[j];
    proj[i] = acc;
  }
  return max_activating(proj, count);
}

std::vector<double> tabular_importance(std::span<const double> u, const Matrix& input_jacobian) {
  if (input_jacobian.rows() != u.size()) {
    throw Error(ErrorCode::kShape, "jacobian has " + std::to_string(input_jacobian.rows()) +
                                       " latent rows for a concept of length " + std::to_string(u.size()));
  }
  std::vector<double> scores(input_jacobian.cols(), 0.0);
  for (std::size_t j = 0; j < u.size(); ++j) {
    auto row = input_jacobian.row(j);
    for (std::size_t f = 0; f < scores.size(); ++f) scores[f] += u[j] * row[f];
  }
  return scores;
}

}  // namespace cdisco
