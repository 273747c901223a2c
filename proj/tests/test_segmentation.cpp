#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "uasr/io.hpp"
#include "uasr/kmeans.hpp"
#include "uasr/pca.hpp"
#include "uasr/rng.hpp"
#include "uasr/segment.hpp"

using namespace uasr;
namespace fs = std::filesystem;

namespace {

FeatureSequence make_features(const MatF& frames, const std::string& id = "utt") {
  FeatureSequence f;
  f.utterance_id = id;
  f.frames = frames;
  return f;
}

}  // namespace

TEST_CASE("kmeans degenerate and exact cases") {
  // K=1: centroid equals the global mean
  Rng rng(1);
  MatF frames(40, 3);
  for (auto& v : frames.data) v = float(rng.normal());
  auto model = fit_kmeans({make_features(frames)}, 1, 50, 7);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int t = 0; t < 40; ++t) mean += frames.at(t, c);
    mean /= 40;
    CHECK(std::abs(model.centroids.at(0, c) - mean) < 1e-9);
  }

  // two tight clusters: exact optimum
  MatF two(20, 2);
  for (int t = 0; t < 10; ++t) {
    two.at(t, 0) = 0.0f;
    two.at(t, 1) = 0.0f;
  }
  for (int t = 10; t < 20; ++t) {
    two.at(t, 0) = 10.0f;
    two.at(t, 1) = 10.0f;
  }
  auto m2 = fit_kmeans({make_features(two)}, 2, 50, 3);
  std::vector<std::pair<double, double>> got = {
      {m2.centroids.at(0, 0), m2.centroids.at(0, 1)},
      {m2.centroids.at(1, 0), m2.centroids.at(1, 1)}};
  std::sort(got.begin(), got.end());
  CHECK(std::abs(got[0].first) < 1e-9);
  CHECK(std::abs(got[0].second) < 1e-9);
  CHECK(std::abs(got[1].first - 10.0) < 1e-9);
  CHECK(std::abs(got[1].second - 10.0) < 1e-9);

  // fewer distinct points than K
  MatF constant(5, 2);
  CHECK_THROWS_AS(fit_kmeans({make_features(constant)}, 3, 10, 0), Error);
}

TEST_CASE("kmeans inertia non-increasing and determinism") {
  Rng rng(42);
  MatF frames(300, 4);
  for (auto& v : frames.data) v = float(rng.normal() * 2.0);
  auto a = fit_kmeans({make_features(frames)}, 8, 30, 123);
  for (size_t i = 1; i < a.inertia_history.size(); ++i)
    CHECK(a.inertia_history[i] <= a.inertia_history[i - 1] + 1e-9);
  auto b = fit_kmeans({make_features(frames)}, 8, 30, 123);
  CHECK(a.centroids.data == b.centroids.data);
}

TEST_CASE("assign nearest centroid with tie to lowest index") {
  KMeansModel model;
  model.centroids = MatD(3, 1);
  model.centroids.at(0, 0) = 0.0;
  model.centroids.at(1, 0) = 2.0;
  model.centroids.at(2, 0) = 4.0;

  MatF frames(3, 1);
  frames.at(0, 0) = 2.0f;   // exactly centroid 1
  frames.at(1, 0) = 1.0f;   // equidistant from 0 and 1 -> 0
  frames.at(2, 0) = 3.9f;   // nearest 2
  auto ids = assign(model, make_features(frames));
  CHECK(ids == std::vector<int>{1, 0, 2});

  MatF same(4, 1);
  for (auto& v : same.data) v = 0.2f;
  auto constant = assign(model, make_features(same));
  CHECK(constant == std::vector<int>(4, 0));

  MatF wrong(2, 3);
  CHECK_THROWS_AS(assign(model, make_features(wrong)), Error);
}

TEST_CASE("boundaries from cluster ids") {
  auto seg = boundaries_from_ids({1, 1, 2, 2, 2, 1});
  CHECK(seg.boundaries == std::vector<int>{2, 5});
  auto spans = seg.spans();
  REQUIRE(spans.size() == 3);
  CHECK(spans[0] == std::pair<int, int>{0, 2});
  CHECK(spans[1] == std::pair<int, int>{2, 5});
  CHECK(spans[2] == std::pair<int, int>{5, 6});

  CHECK(boundaries_from_ids({3, 3, 3}).boundaries.empty());
  CHECK(boundaries_from_ids({1, 2, 1, 2}).num_segments() == 4);

  // segments partition the range and merging same-id neighbors is a no-op
  Rng rng(5);
  std::vector<int> ids(50);
  for (auto& v : ids) v = rng.uniform_int(3);
  auto s = boundaries_from_ids(ids);
  auto sp = s.spans();
  int covered = 0;
  for (size_t i = 0; i < sp.size(); ++i) {
    CHECK(sp[i].first < sp[i].second);
    if (i) CHECK(sp[i].first == sp[i - 1].second);
    covered += sp[i].second - sp[i].first;
    for (int t = sp[i].first; t < sp[i].second; ++t) CHECK(ids[size_t(t)] == ids[size_t(sp[i].first)]);
    if (i) CHECK(ids[size_t(sp[i].first)] != ids[size_t(sp[i - 1].first)]);
  }
  CHECK(covered == 50);
}

TEST_CASE("pca rank-1 data and reconstruction") {
  Rng rng(9);
  MatF line(200, 3);
  for (int t = 0; t < 200; ++t) {
    double a = rng.normal();
    line.at(t, 0) = float(a);
    line.at(t, 1) = float(2.0 * a);
    line.at(t, 2) = float(-a);
  }
  auto model = fit_pca({make_features(line)}, 1);
  CHECK(model.explained_variance_ratio[0] >= 1.0 - 1e-9);

  // orthonormal columns
  MatF gauss(400, 4);
  for (auto& v : gauss.data) v = float(rng.normal());
  auto full = fit_pca({make_features(gauss)}, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 4; ++k) dot += full.projection.at(k, i) * full.projection.at(k, j);
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
    }

  // descending explained variance and full-rank reconstruction
  for (size_t i = 1; i < full.explained_variance.size(); ++i)
    CHECK(full.explained_variance[i] <= full.explained_variance[i - 1] + 1e-12);
  MatD proj = pca_project(full, gauss);
  double err = 0.0, norm = 0.0;
  for (int t = 0; t < gauss.rows; ++t)
    for (int c = 0; c < 4; ++c) {
      double recon = full.mean[size_t(c)];
      for (int j = 0; j < 4; ++j) recon += proj.at(t, j) * full.projection.at(c, j);
      double diff = recon - gauss.at(t, c);
      err += diff * diff;
      norm += double(gauss.at(t, c)) * gauss.at(t, c);
    }
  CHECK(std::sqrt(err / norm) < 1e-6);

  // projecting the mean vector gives zero
  MatF mean_row(1, 4);
  for (int c = 0; c < 4; ++c) mean_row.at(0, c) = float(full.mean[size_t(c)]);
  MatD zero = pca_project(full, mean_row);
  for (double v : zero.data) CHECK(std::abs(v) < 1e-5);

  // r > d clamps
  auto clamped = fit_pca({make_features(gauss)}, 10);
  CHECK(clamped.output_dim() == 4);
}

TEST_CASE("pca isotropic gaussian has near-uniform explained variance") {
  Rng rng(12345);
  MatF gauss(10000, 4);
  for (auto& v : gauss.data) v = float(rng.normal());
  auto model = fit_pca({make_features(gauss)}, 4);
  for (double r : model.explained_variance_ratio) {
    CHECK(r > 0.22);
    CHECK(r < 0.28);
  }
}

TEST_CASE("segment representations pool and pair") {
  PcaModel identity;
  identity.mean = {0.0, 0.0};
  identity.projection = MatD(2, 2);
  identity.projection.at(0, 0) = 1.0;
  identity.projection.at(1, 1) = 1.0;

  // one segment: mean only
  MatF frames(3, 2);
  for (int t = 0; t < 3; ++t) {
    frames.at(t, 0) = float(t);
    frames.at(t, 1) = float(2 * t);
  }
  auto seg1 = boundaries_from_ids({1, 1, 1});
  auto reps1 = build_segment_reps(make_features(frames), seg1, identity);
  REQUIRE(reps1.num_segments() == 1);
  CHECK(reps1.reps.at(0, 0) == doctest::Approx(1.0));
  CHECK(reps1.reps.at(0, 1) == doctest::Approx(2.0));

  // two segments with pooled means u, v -> [(u+v)/2, v]
  MatF f2(4, 2);
  f2.at(0, 0) = 1.0f;
  f2.at(1, 0) = 3.0f;  // segment A mean (2, 0)
  f2.at(2, 0) = 10.0f;
  f2.at(3, 0) = 10.0f;  // segment B mean (10, 0)
  auto seg2 = boundaries_from_ids({1, 1, 2, 2});
  auto reps2 = build_segment_reps(make_features(f2), seg2, identity);
  REQUIRE(reps2.num_segments() == 2);
  CHECK(reps2.reps.at(0, 0) == doctest::Approx(6.0));
  CHECK(reps2.reps.at(1, 0) == doctest::Approx(10.0));

  // piecewise-constant features with identity pca: means exact
  MatF f3(6, 2);
  for (int t = 0; t < 3; ++t) f3.at(t, 0) = 5.0f;
  for (int t = 3; t < 6; ++t) f3.at(t, 0) = -2.0f;
  auto seg3 = boundaries_from_ids({0, 0, 0, 1, 1, 1});
  auto reps3 = build_segment_reps(make_features(f3), seg3, identity);
  CHECK(reps3.reps.at(1, 0) == doctest::Approx(-2.0));
  CHECK(reps3.segment_spans[1] == std::pair<int, int>{3, 6});
}

TEST_CASE("boundary precision recall") {
  auto exact = boundary_prf({3, 7, 9}, {3, 7, 9}, 0);
  CHECK(exact.precision == doctest::Approx(1.0));
  CHECK(exact.recall == doctest::Approx(1.0));
  CHECK(exact.f1 == doctest::Approx(1.0));

  // over-segmentation: every frame predicted
  std::vector<int> every;
  for (int t = 1; t < 100; ++t) every.push_back(t);
  auto over = boundary_prf(every, {10, 50, 90}, 1);
  CHECK(over.recall == doctest::Approx(1.0));
  CHECK(over.precision == doctest::Approx(3.0 / 99.0));

  auto partial = boundary_prf({10, 30}, {11, 50}, 1);
  CHECK(partial.precision == doctest::Approx(0.5));
  CHECK(partial.recall == doctest::Approx(0.5));
}

TEST_CASE("piecewise-constant features give exact boundaries through the pipeline") {
  // three levels, k-means with K=3 must recover the change points exactly
  MatF frames(12, 2);
  std::vector<int> gold_levels = {0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2};
  for (int t = 0; t < 12; ++t) {
    frames.at(t, 0) = float(5 * gold_levels[size_t(t)]);
    frames.at(t, 1) = float(-3 * gold_levels[size_t(t)]);
  }
  auto f = make_features(frames);
  auto model = fit_kmeans({f}, 3, 20, 0);
  auto ids = assign(model, f);
  auto seg = boundaries_from_ids(ids);
  auto prf = boundary_prf(seg.boundaries, {4, 7}, 0);
  CHECK(prf.precision == doctest::Approx(1.0));
  CHECK(prf.recall == doctest::Approx(1.0));
}

TEST_CASE("model files round trip") {
  auto dir = fs::temp_directory_path() / "uasr_segmodels";
  fs::create_directories(dir);
  Rng rng(4);
  MatF frames(100, 3);
  for (auto& v : frames.data) v = float(rng.normal());
  auto km = fit_kmeans({make_features(frames)}, 4, 20, 5);
  save_kmeans(km, dir / "kmeans.bin");
  auto km2 = load_kmeans(dir / "kmeans.bin");
  CHECK(km2.num_clusters() == 4);
  save_kmeans(km2, dir / "kmeans2.bin");
  CHECK(read_text_file(dir / "kmeans.bin") == read_text_file(dir / "kmeans2.bin"));

  auto pca = fit_pca({make_features(frames)}, 2);
  save_pca(pca, dir / "pca.bin");
  auto pca2 = load_pca(dir / "pca.bin");
  save_pca(pca2, dir / "pca2.bin");
  CHECK(read_text_file(dir / "pca.bin") == read_text_file(dir / "pca2.bin"));

  std::vector<std::pair<std::string, std::vector<int>>> bounds = {{"a", {1, 5, 9}}, {"b", {}}};
  write_boundaries(dir / "bounds.tsv", bounds);
  auto back = read_boundaries(dir / "bounds.tsv");
  CHECK(back == bounds);
  fs::remove_all(dir);
}
