#pragma once

#include <filesystem>
#include <vector>

#include "uasr/features.hpp"
#include "uasr/mat.hpp"

namespace uasr {

struct KMeansModel {
  MatD centroids;  // K x d
  uint64_t seed = 0;
  std::vector<double> inertia_history;  // per-iteration sum of squared distances

  int num_clusters() const { return centroids.rows; }
  int dim() const { return centroids.cols; }
};

// Lloyd's algorithm with k-means++ init. Empty clusters are re-seeded with
// the point farthest from its assigned centroid. Deterministic given seed.
KMeansModel fit_kmeans(const std::vector<FeatureSequence>& corpus, int k, int max_iters,
                       uint64_t seed);

// Nearest centroid by squared Euclidean distance, ties to the lowest index.
std::vector<int> assign(const KMeansModel& model, const FeatureSequence& features);

void save_kmeans(const KMeansModel& model, const std::filesystem::path& path);
KMeansModel load_kmeans(const std::filesystem::path& path);

}  // namespace uasr
