#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/discovery.hpp"
#include "cdisco/linalg.hpp"

namespace cdisco {

struct ClusterOutcome {
  std::size_t n_clusters = 0;
  std::vector<int> assignments;       // per input point; -1 marks a dropped point
  Matrix centroids;                   // [n_clusters, d]
  std::vector<std::size_t> sizes;     // members per retained cluster
  std::vector<std::string> dropped;   // sample ids removed by the size rule
};

struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double height = 0.0;
  std::size_t size = 0;
};

struct Dendrogram {
  std::vector<Merge> merges;  // n - 1 merges in the order performed

  double max_height() const;
  // 0 for a leaf.
  double node_height(std::size_t n_points, std::size_t node) const;
  // The final merge counts as a real split only when at least one of the two
  // groups it joins is tight compared to the gap between them:
  // min(child heights) < (1 - threshold_frac) * root height.
  bool root_split_significant(std::size_t n_points, double threshold_frac) const;
  // Flat labels after applying only the merges with height <= cut; labels
  // are numbered by first appearance in point order.
  std::vector<int> cut(std::size_t n_points, double height) const;
};

// Agglomerative clustering, Ward linkage on Euclidean distance. Merge heights
// follow the usual convention sqrt(2 n_a n_b / (n_a + n_b)) * ||c_a - c_b||.
Dendrogram ward_linkage(const Matrix& points);

// Flat clustering by cutting the Ward dendrogram at
// threshold_frac * (maximum merge height). A plain cut can never return a
// single cluster below threshold_frac = 1, so an insignificant root split
// (see Dendrogram::root_split_significant) yields one cluster.
ClusterOutcome hierarchical_cluster(const Matrix& points, double threshold_frac);

struct KMeansResult {
  std::vector<int> assignments;
  Matrix centroids;                   // [k, d]
  std::vector<double> inertia_history;  // after each assignment step
  int iterations = 0;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

// Lloyd iterations from seeded k-means++ initialization. Stops when no
// centroid moves more than 1e-6 or after 100 iterations.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed);

// Samples with the largest coefficients along one rotated direction.
std::vector<std::size_t> select_top_activating(const RotatedBatch& batch, std::size_t direction_index,
                                               std::size_t count);

// Same selection by projection of the pooled activations on an arbitrary
// direction.
std::vector<std::size_t> select_top_projecting(const ActivationDump& dump, std::span<const double> direction,
                                               std::size_t count);

struct RefineConfig {
  std::size_t top_count = 0;  // 0 picks max(30, 2% of N)
  double threshold_frac = 0.6;
  std::size_t min_cluster_size = 5;
  std::uint64_t seed = 0;

  std::size_t resolved_top_count(std::size_t n) const;
};

// Clustering stage shared by refinement and the census: top activators of
// `direction`, Ward cut, k-means with the resulting count, size filter.
ClusterOutcome cluster_top_activators(const ActivationDump& dump, std::span<const double> direction,
                                      const RefineConfig& config, std::vector<std::size_t>* members = nullptr);

// Splits one direction into unit concept vectors, one per surviving cluster,
// ordered by cluster size (largest first). Throws when every cluster is too
// small.
std::vector<ConceptVector> refine_direction(const ActivationDump& dump, std::span<const double> direction,
                                            const RefineConfig& config, const ConceptSource& origin = {});

struct Census {
  std::vector<std::size_t> counts;                // per direction
  std::map<std::size_t, std::size_t> histogram;   // n_clusters -> directions

  double multi_cluster_fraction() const;
};

Census polysemanticity_census(const ActivationDump& dump, const std::vector<std::vector<double>>& directions,
                              const RefineConfig& config);

}  // namespace cdisco
