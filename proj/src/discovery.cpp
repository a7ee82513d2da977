#include "cdisco/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdisco/error.hpp"

namespace cdisco {

std::string to_string(const ConceptSource& source) {
  switch (source.kind) {
    case ConceptSource::Kind::kSingular:
      return "singular:" + std::to_string(source.index);
    case ConceptSource::Kind::kCluster:
      return "cluster:" + std::to_string(source.index) + "/" + std::to_string(source.cluster_id);
    case ConceptSource::Kind::kNeuron:
      return "neuron:" + std::to_string(source.index);
  }
  return "unknown";
}

BasisBuild build_basis(const ActivationDump& dump, const BasisOptions& options) {
  dump.validate();
  const std::size_t n = dump.sample_count();
  const std::size_t d = dump.latent_dim();
  const std::size_t kg = dump.tracked_count();
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 samples to decompose");

  // Column-stack the pooled representations: phi is [d, N].
  Matrix phi(d, n);
  auto pooled = dump.pooled_activations.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) phi(j, i) = pooled[i * d + j];
  }
  if (options.center) {
    for (std::size_t j = 0; j < d; ++j) {
      auto row = phi.row(j);
      const double mean = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(n);
      for (double& x : row) x -= mean;
    }
  }

  SvdResult s = svd(phi);
  const std::size_t r = s.sigma.size();

  BasisBuild out;
  out.basis.u = std::move(s.u);
  out.basis.sigma = std::move(s.sigma);
  out.basis.layer_name = dump.layer_name;
  out.basis.tracked_classes = dump.tracked_classes;
  const Matrix& u = out.basis.u;

  // Rotations use the raw activations even when the basis was centered.
  RotatedBatch& batch = out.batch;
  batch.coeffs = Matrix(n, r);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = pooled.subspan(i * d, d);
    for (std::size_t c = 0; c < r; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += u(j, c) * x[j];
      batch.coeffs(i, c) = acc;
    }
  }
  auto grads = dump.gradients.data();
  batch.grad_coeffs.assign(kg, Matrix(n, r));
  batch.sensitivity.assign(kg, Matrix(n, r));
  const bool pooled_product = dump.sensitivity_convention == SensitivityConvention::kPooledProduct;
  for (std::size_t k = 0; k < kg; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      auto g = grads.subspan((i * kg + k) * d, d);
      for (std::size_t c = 0; c < r; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += u(j, c) * g[j];
        batch.grad_coeffs[k](i, c) = acc;
        batch.sensitivity[k](i, c) = pooled_product ? acc : acc * batch.coeffs(i, c);
      }
    }
  }
  return out;
}

std::vector<double> score_regression(const RotatedBatch& batch) {
  if (batch.tracked_count() != 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "score_regression expects a single tracked output; use score_classes for multi-class dumps");
  }
  const Matrix& s = batch.sensitivity[0];
  std::vector<double> mean(s.cols(), 0.0);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t c = 0; c < s.cols(); ++c) mean[c] += s(i, c);
  }
  for (double& m : mean) m /= static_cast<double>(s.rows());
  return mean;
}

Matrix score_classes(const RotatedBatch& batch, const std::vector<int>& labels,
                     const std::vector<int>& tracked_classes) {
  const std::size_t n = batch.sample_count();
  const std::size_t r = batch.components();
  if (labels.size() != n) throw Error(ErrorCode::kShape, "labels do not match the batch");
  if (tracked_classes.size() != batch.tracked_count()) {
    throw Error(ErrorCode::kShape, "tracked class list does not match the batch");
  }
  Matrix z(tracked_classes.size(), r);
  for (std::size_t k = 0; k < tracked_classes.size(); ++k) {
    const int cls = tracked_classes[k];
    const Matrix& s = batch.sensitivity[k];
    std::vector<double> in_mean(r, 0.0);
    std::vector<double> out_mean(r, 0.0);
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = labels[i] == cls ? in_mean : out_mean;
      for (std::size_t c = 0; c < r; ++c) acc[c] += s(i, c);
      n_in += labels[i] == cls;
    }
    const std::size_t n_out = n - n_in;
    if (n_in == 0) throw Error(ErrorCode::kNotFound, "tracked class " + std::to_string(cls) + " has no samples");
    if (n_out < 2) {
      throw Error(ErrorCode::kInvalidArgument,
                  "class " + std::to_string(cls) + " needs at least 2 out-of-class samples");
    }
    for (std::size_t c = 0; c < r; ++c) {
      in_mean[c] /= static_cast<double>(n_in);
      out_mean[c] /= static_cast<double>(n_out);
    }
    std::vector<double> out_var(r, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] == cls) continue;
      for (std::size_t c = 0; c < r; ++c) {
        const double dev = s(i, c) - out_mean[c];
        out_var[c] += dev * dev;
      }
    }
    for (std::size_t c = 0; c < r; ++c) {
      const double sd = std::sqrt(out_var[c] / static_cast<double>(n_out));
      z(k, c) = (in_mean[c] - out_mean[c]) / std::max(sd, kSigmaFloor);
    }
  }
  return z;
}

std::vector<std::size_t> rank_directions(std::span<const double> z) {
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  return order;
}

BasisBuild discover(const ActivationDump& dump, const BasisOptions& options) {
  BasisBuild b = build_basis(dump, options);
  b.basis.z_scores = score_classes(b.batch, dump.labels, dump.tracked_classes);
  b.basis.ranking.clear();
  for (std::size_t k = 0; k < dump.tracked_count(); ++k) {
    b.basis.ranking.push_back(rank_directions(b.basis.z_scores.row(k)));
  }
  return b;
}

std::vector<ConceptVector> rank_and_select(const ConceptBasis& basis, int class_id, std::size_t m) {
  auto it = std::find(basis.tracked_classes.begin(), basis.tracked_classes.end(), class_id);
  if (it == basis.tracked_classes.end()) {
    throw Error(ErrorCode::kNotFound, "class " + std::to_string(class_id) + " is not tracked");
  }
  const auto k = static_cast<std::size_t>(it - basis.tracked_classes.begin());
  if (k >= basis.ranking.size()) throw Error(ErrorCode::kInvalidArgument, "basis has not been scored");
  if (m < 1 || m > basis.components()) {
    throw Error(ErrorCode::kInvalidArgument, "m must lie in [1, " + std::to_string(basis.components()) + "]");
  }
  std::vector<ConceptVector> out;
  for (std::size_t pos = 0; pos < m; ++pos) {
    const std::size_t col = basis.ranking[k][pos];
    ConceptVector v;
    v.direction = basis.direction(col);
    v.source = {ConceptSource::Kind::kSingular, col, 0};
    v.class_id = class_id;
    v.rank = static_cast<int>(pos);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace cdisco
