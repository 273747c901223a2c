#include "uasr/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "uasr/io.hpp"
#include "uasr/parallel.hpp"
#include "uasr/rng.hpp"

namespace uasr {

namespace {

constexpr char kMagic[8] = {'U', 'A', 'S', 'R', 'K', 'M', 'N', 'S'};
constexpr uint32_t kVersion = 1;

MatD stack_frames(const std::vector<FeatureSequence>& corpus) {
  size_t total = 0;
  int d = corpus.front().dim();
  for (const auto& f : corpus) total += size_t(f.num_frames());
  MatD x(int(total), d);
  size_t r = 0;
  for (const auto& f : corpus)
    for (int t = 0; t < f.num_frames(); ++t, ++r)
      for (int c = 0; c < d; ++c) x.at(int(r), c) = f.frames.at(t, c);
  return x;
}

double sq_dist(const double* a, const double* b, int d) {
  double acc = 0.0;
  for (int i = 0; i < d; ++i) {
    double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

KMeansModel fit_kmeans(const std::vector<FeatureSequence>& corpus, int k, int max_iters,
                       uint64_t seed) {
  UASR_REQUIRE(!corpus.empty() && k >= 1, "fit_kmeans: empty corpus or k < 1");
  MatD x = stack_frames(corpus);
  int n = x.rows, d = x.cols;
  if (n < k) throw Error(format_msg("fit_kmeans: %d frames < K=%d", n, k));

  {
    std::set<std::vector<double>> distinct;
    for (int i = 0; i < n && int(distinct.size()) < k; ++i)
      distinct.insert(std::vector<double>(x.row(i), x.row(i) + d));
    if (int(distinct.size()) < k)
      throw Error(format_msg("fit_kmeans: only %zu distinct points for K=%d", distinct.size(), k));
  }

  Rng rng(seed);
  KMeansModel model;
  model.seed = seed;
  model.centroids = MatD(k, d);

  // k-means++ seeding
  std::vector<double> min_d2(size_t(n), std::numeric_limits<double>::infinity());
  int first = rng.uniform_int(n);
  std::copy(x.row(first), x.row(first) + d, model.centroids.row(0));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d2 = sq_dist(x.row(i), model.centroids.row(c - 1), d);
      if (d2 < min_d2[size_t(i)]) min_d2[size_t(i)] = d2;
      total += min_d2[size_t(i)];
    }
    int pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += min_d2[size_t(i)];
        if (acc >= target) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = rng.uniform_int(n);
    }
    std::copy(x.row(pick), x.row(pick) + d, model.centroids.row(c));
  }

  std::vector<int> labels(size_t(n), -1);
  size_t chunk = 2048;
  size_t num_chunks = (size_t(n) + chunk - 1) / chunk;

  for (int iter = 0; iter < max_iters; ++iter) {
    // assignment, parallel over fixed chunks with per-chunk partial sums
    std::vector<double> chunk_inertia(num_chunks, 0.0);
    std::vector<bool> chunk_changed(num_chunks, false);
    std::vector<std::vector<double>> chunk_sum(num_chunks);
    std::vector<std::vector<int>> chunk_count(num_chunks);
    parallel_chunks(size_t(n), chunk, [&](size_t ci, size_t b, size_t e) {
      auto& sum = chunk_sum[ci];
      auto& cnt = chunk_count[ci];
      sum.assign(size_t(k) * d, 0.0);
      cnt.assign(size_t(k), 0);
      for (size_t i = b; i < e; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (int c = 0; c < k; ++c) {
          double d2 = sq_dist(x.row(int(i)), model.centroids.row(c), d);
          if (d2 < best) {
            best = d2;
            best_c = c;
          }
        }
        chunk_inertia[ci] += best;
        if (labels[i] != best_c) {
          labels[i] = best_c;
          chunk_changed[ci] = true;
        }
        cnt[size_t(best_c)] += 1;
        const double* row = x.row(int(i));
        double* s = sum.data() + size_t(best_c) * d;
        for (int c2 = 0; c2 < d; ++c2) s[c2] += row[c2];
      }
    });

    double inertia = 0.0;
    bool changed = false;
    std::vector<double> sum(size_t(k) * d, 0.0);
    std::vector<long> count(size_t(k), 0);
    for (size_t ci = 0; ci < num_chunks; ++ci) {
      inertia += chunk_inertia[ci];
      changed = changed || chunk_changed[ci];
      for (size_t j = 0; j < sum.size(); ++j) sum[j] += chunk_sum[ci][j];
      for (int c = 0; c < k; ++c) count[size_t(c)] += chunk_count[ci][size_t(c)];
    }
    model.inertia_history.push_back(inertia);

    // update step; empty clusters take the point farthest from its centroid
    for (int c = 0; c < k; ++c) {
      if (count[size_t(c)] > 0) {
        for (int j = 0; j < d; ++j)
          model.centroids.at(c, j) = sum[size_t(c) * d + j] / double(count[size_t(c)]);
      } else {
        double worst = -1.0;
        int worst_i = 0;
        for (int i = 0; i < n; ++i) {
          double d2 = sq_dist(x.row(i), model.centroids.row(labels[size_t(i)]), d);
          if (d2 > worst) {
            worst = d2;
            worst_i = i;
          }
        }
        std::copy(x.row(worst_i), x.row(worst_i) + d, model.centroids.row(c));
        labels[size_t(worst_i)] = c;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return model;
}

std::vector<int> assign(const KMeansModel& model, const FeatureSequence& features) {
  if (features.dim() != model.dim())
    throw Error(format_msg("assign: feature dim %d != model dim %d", features.dim(), model.dim()));
  std::vector<int> ids(size_t(features.num_frames()));
  int d = model.dim();
  std::vector<double> row(static_cast<size_t>(d));
  for (int t = 0; t < features.num_frames(); ++t) {
    for (int c = 0; c < d; ++c) row[size_t(c)] = features.frames.at(t, c);
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (int c = 0; c < model.num_clusters(); ++c) {
      double d2 = sq_dist(row.data(), model.centroids.row(c), d);
      if (d2 < best) {  // strict: ties stay with the lowest index
        best = d2;
        best_c = c;
      }
    }
    ids[size_t(t)] = best_c;
  }
  return ids;
}

void save_kmeans(const KMeansModel& model, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kMagic, kVersion);
  write_pod<uint32_t>(os, uint32_t(model.num_clusters()));
  write_pod<uint32_t>(os, uint32_t(model.dim()));
  write_pod<uint64_t>(os, model.seed);
  std::vector<float> c32(model.centroids.data.begin(), model.centroids.data.end());
  write_vec<float>(os, c32);
}

KMeansModel load_kmeans(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kMagic, "kmeans");
  uint32_t k = read_pod<uint32_t>(is);
  uint32_t d = read_pod<uint32_t>(is);
  KMeansModel model;
  model.seed = read_pod<uint64_t>(is);
  auto c32 = read_vec<float>(is);
  if (c32.size() != size_t(k) * d) throw Error("kmeans file has inconsistent sizes");
  model.centroids = MatD(int(k), int(d));
  for (size_t i = 0; i < c32.size(); ++i) model.centroids.data[i] = c32[i];
  return model;
}

}  // namespace uasr
