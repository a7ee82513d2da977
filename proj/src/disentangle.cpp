#include "cdisco/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cdisco/error.hpp"

namespace cdisco {

double Dendrogram::max_height() const {
  double h = 0.0;
  for (const auto& m : merges) h = std::max(h, m.height);
  return h;
}

double Dendrogram::node_height(std::size_t n_points, std::size_t node) const {
  return node < n_points ? 0.0 : merges[node - n_points].height;
}

bool Dendrogram::root_split_significant(std::size_t n_points, double threshold_frac) const {
  if (merges.empty()) return false;
  const Merge& root = merges.back();
  const double tighter = std::min(node_height(n_points, root.a), node_height(n_points, root.b));
  return tighter < (1.0 - threshold_frac) * root.height;
}

std::vector<int> Dendrogram::cut(std::size_t n_points, double height) const {
  // Cluster ids in `merges` follow the scipy convention: points are
  // 0..n-1 and the cluster created by merge t is n + t.
  std::vector<std::size_t> parent(n_points + merges.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t t = 0; t < merges.size(); ++t) {
    const std::size_t node = n_points + t;
    if (merges[t].height <= height) {
      parent[find(merges[t].a)] = node;
      parent[find(merges[t].b)] = node;
    }
  }
  std::vector<int> labels(n_points, -1);
  std::vector<std::pair<std::size_t, int>> seen;
  int next = 0;
  for (std::size_t i = 0; i < n_points; ++i) {
    const std::size_t root = find(i);
    auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == root; });
    if (it == seen.end()) {
      seen.emplace_back(root, next);
      labels[i] = next++;
    } else {
      labels[i] = it->second;
    }
  }
  return labels;
}

Dendrogram ward_linkage(const Matrix& points) {
  const std::size_t n = points.rows();
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "hierarchical clustering needs at least 2 points");
  // Squared Ward distances, updated with the Lance-Williams recurrence.
  Matrix d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < points.cols(); ++c) {
        const double diff = points(i, c) - points(j, c);
        s += diff * diff;
      }
      d2(i, j) = d2(j, i) = s;
    }
  }
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> node_id(n);
  std::iota(node_id.begin(), node_id.end(), 0);
  std::vector<bool> active(n, true);

  Dendrogram dendro;
  for (std::size_t step = 0; step + 1 < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    std::size_t bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (active[j] && d2(i, j) < best) {
          best = d2(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    const double ni = static_cast<double>(size[bi]);
    const double nj = static_cast<double>(size[bj]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double nk = static_cast<double>(size[k]);
      const double updated = ((ni + nk) * d2(bi, k) + (nj + nk) * d2(bj, k) - nk * best) / (ni + nj + nk);
      d2(bi, k) = d2(k, bi) = std::max(updated, 0.0);
    }
    dendro.merges.push_back({node_id[bi], node_id[bj], std::sqrt(std::max(best, 0.0)), size[bi] + size[bj]});
    size[bi] += size[bj];
    node_id[bi] = n + step;
    active[bj] = false;
  }
  return dendro;
}

namespace {

Matrix cluster_means(const Matrix& points, const std::vector<int>& labels, std::size_t k) {
  Matrix means(k, points.cols());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    if (labels[i] < 0) continue;
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t j = 0; j < points.cols(); ++j) means(c, j) += points(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < points.cols(); ++j) means(c, j) /= static_cast<double>(counts[c]);
  }
  return means;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

ClusterOutcome hierarchical_cluster(const Matrix& points, double threshold_frac) {
  if (!(threshold_frac > 0.0 && threshold_frac <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold_frac must lie in (0, 1]");
  }
  const Dendrogram dendro = ward_linkage(points);
  ClusterOutcome out;
  if (dendro.root_split_significant(points.rows(), threshold_frac)) {
    out.assignments = dendro.cut(points.rows(), threshold_frac * dendro.max_height());
  } else {
    out.assignments.assign(points.rows(), 0);
  }
  out.n_clusters = static_cast<std::size_t>(*std::max_element(out.assignments.begin(), out.assignments.end()) + 1);
  out.centroids = cluster_means(points, out.assignments, out.n_clusters);
  out.sizes.assign(out.n_clusters, 0);
  for (int a : out.assignments) ++out.sizes[static_cast<std::size_t>(a)];
  return out;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kInvalidArgument, "kmeans needs 1 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  }
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  Matrix centroids(k, d);
  std::vector<bool> chosen(n, false);
  std::size_t first = std::min(n - 1, static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(n)));
  chosen[first] = true;
  std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = sq_dist(points.row(i), centroids.row(0));
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double target = unit_draw(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        pick = i;
        target -= nearest[i];
        if (target < 0.0) break;
      }
    }
    if (pick == n) {
      // Every point coincides with a chosen centroid; take the first unused.
      pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
    }
    chosen[pick] = true;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(points.row(i), centroids.row(c)));
  }

  KMeansResult res;
  res.assignments.assign(n, 0);
  constexpr int kMaxIterations = 100;
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    double inertia = 0.0;
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sq_dist(points.row(i), centroids.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double dc = sq_dist(points.row(i), centroids.row(c));
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      res.assignments[i] = static_cast<int>(best);
      dist[i] = best_d;
      inertia += best_d;
    }
    res.inertia_history.push_back(inertia);
    res.iterations = iter + 1;

    Matrix updated = cluster_means(points, res.assignments, k);
    std::vector<std::size_t> counts(k, 0);
    for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // Reseed an empty cluster at the point farthest from its centroid.
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy(points.row(far).begin(), points.row(far).end(), updated.row(c).begin());
      dist[far] = 0.0;
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(sq_dist(updated.row(c), centroids.row(c))));
    centroids = std::move(updated);
    if (shift < 1e-6) break;
  }
  // Final assignment against the converged centroids.
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = sq_dist(points.row(i), centroids.row(0));
    for (std::size_t c = 1; c < k; ++c) {
      const double dc = sq_dist(points.row(i), centroids.row(c));
      if (dc < best_d) {
        best_d = dc;
        best = c;
      }
    }
    res.assignments[i] = static_cast<int>(best);
    inertia += best_d;
  }
  if (inertia < res.inertia_history.back()) res.inertia_history.push_back(inertia);
  res.centroids = std::move(centroids);
  return res;
}

namespace {

std::vector<std::size_t> top_indices(const std::vector<double>& score, std::size_t count) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(count);
  return order;
}

}  // namespace

std::vector<std::size_t> select_top_activating(const RotatedBatch& batch, std::size_t direction_index,
                                               std::size_t count) {
  if (direction_index >= batch.components()) {
    throw Error(ErrorCode::kInvalidArgument, "direction index " + std::to_string(direction_index) + " out of range");
  }
  if (count < 1 || count > batch.sample_count()) throw Error(ErrorCode::kInvalidArgument, "count must lie in [1, N]");
  std::vector<double> score(batch.sample_count());
  for (std::size_t i = 0; i < score.size(); ++i) score[i] = batch.coeffs(i, direction_index);
  return top_indices(score, count);
}

std::vector<std::size_t> select_top_projecting(const ActivationDump& dump, std::span<const double> direction,
                                               std::size_t count) {
  const std::size_t n = dump.sample_count();
  const std::size_t d = dump.latent_dim();
  if (direction.size() != d) throw Error(ErrorCode::kShape, "direction length does not match the latent dimension");
  if (count < 1 || count > n) throw Error(ErrorCode::kInvalidArgument, "count must lie in [1, N]");
  auto pooled = dump.pooled_activations.data();
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += pooled[i * d + j] * direction[j];
    score[i] = acc;
  }
  return top_indices(score, count);
}

std::size_t RefineConfig::resolved_top_count(std::size_t n) const {
  const std::size_t wanted = top_count > 0 ? top_count : std::max<std::size_t>(30, (n * 2 + 99) / 100);
  return std::min(wanted, n);
}

ClusterOutcome cluster_top_activators(const ActivationDump& dump, std::span<const double> direction,
                                      const RefineConfig& config, std::vector<std::size_t>* members) {
  const std::size_t n = dump.sample_count();
  const std::size_t d = dump.latent_dim();
  const std::vector<std::size_t> top = select_top_projecting(dump, direction, config.resolved_top_count(n));
  if (top.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 top activators to cluster");

  Matrix points(top.size(), d);
  auto pooled = dump.pooled_activations.data();
  for (std::size_t r = 0; r < top.size(); ++r) {
    for (std::size_t j = 0; j < d; ++j) points(r, j) = pooled[top[r] * d + j];
  }
  const ClusterOutcome coarse = hierarchical_cluster(points, config.threshold_frac);
  const KMeansResult km = kmeans(points, coarse.n_clusters, config.seed);

  std::vector<std::size_t> counts(coarse.n_clusters, 0);
  for (int a : km.assignments) ++counts[static_cast<std::size_t>(a)];
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] >= config.min_cluster_size) kept.push_back(c);
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<int> relabel(coarse.n_clusters, -1);
  for (std::size_t pos = 0; pos < kept.size(); ++pos) relabel[kept[pos]] = static_cast<int>(pos);

  ClusterOutcome out;
  out.n_clusters = kept.size();
  out.assignments.resize(top.size());
  for (std::size_t r = 0; r < top.size(); ++r) {
    out.assignments[r] = relabel[static_cast<std::size_t>(km.assignments[r])];
    if (out.assignments[r] < 0) out.dropped.push_back(dump.sample_ids[top[r]]);
  }
  // Centroids over the full pooled activations of the retained members.
  out.centroids = cluster_means(points, out.assignments, out.n_clusters);
  for (std::size_t c : kept) out.sizes.push_back(counts[c]);
  if (members) *members = top;
  return out;
}

std::vector<ConceptVector> refine_direction(const ActivationDump& dump, std::span<const double> direction,
                                            const RefineConfig& config, const ConceptSource& origin) {
  std::vector<std::size_t> top;
  const ClusterOutcome clusters = cluster_top_activators(dump, direction, config, &top);
  if (clusters.n_clusters == 0) {
    throw Error(ErrorCode::kNumerical, "no significant clusters (all below min_cluster_size=" +
                                           std::to_string(config.min_cluster_size) + ")");
  }
  std::vector<ConceptVector> out;
  for (std::size_t c = 0; c < clusters.n_clusters; ++c) {
    std::vector<double> dir(clusters.centroids.row(c).begin(), clusters.centroids.row(c).end());
    const double len = norm2(dir);
    if (len == 0.0) throw Error(ErrorCode::kNumerical, "cluster centroid at the origin has no direction");
    for (double& x : dir) x /= len;
    ConceptVector v;
    v.direction = std::move(dir);
    v.source = {ConceptSource::Kind::kCluster, origin.index, c};
    v.rank = static_cast<int>(c);
    for (std::size_t r = 0; r < top.size(); ++r) {
      if (clusters.assignments[r] == static_cast<int>(c)) v.member_samples.push_back(dump.sample_ids[top[r]]);
    }
    out.push_back(std::move(v));
  }
  return out;
}

double Census::multi_cluster_fraction() const {
  if (counts.empty()) return 0.0;
  const auto multi = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 1; });
  return static_cast<double>(multi) / static_cast<double>(counts.size());
}

Census polysemanticity_census(const ActivationDump& dump, const std::vector<std::vector<double>>& directions,
                              const RefineConfig& config) {
  if (directions.empty()) throw Error(ErrorCode::kInvalidArgument, "census needs at least one direction");
  Census census;
  for (const auto& dir : directions) {
    const ClusterOutcome c = cluster_top_activators(dump, dir, config);
    census.counts.push_back(c.n_clusters);
    ++census.histogram[c.n_clusters];
  }
  return census;
}

}  // namespace cdisco
