#include "uasr/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uasr/io.hpp"

namespace uasr {

namespace {
constexpr char kMagic[8] = {'U', 'A', 'S', 'R', 'P', 'C', 'A', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void symmetric_eigen(const MatD& a, std::vector<double>& values, MatD& vectors) {
  int n = a.rows;
  MatD m = a;
  vectors = MatD(n, n);
  for (int i = 0; i < n; ++i) vectors.at(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = m.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double mip = m.at(i, p), miq = m.at(i, q);
          m.at(i, p) = c * mip - s * miq;
          m.at(i, q) = s * mip + c * miq;
        }
        for (int i = 0; i < n; ++i) {
          double mpi = m.at(p, i), mqi = m.at(q, i);
          m.at(p, i) = c * mpi - s * mqi;
          m.at(q, i) = s * mpi + c * mqi;
        }
        for (int i = 0; i < n; ++i) {
          double vip = vectors.at(i, p), viq = vectors.at(i, q);
          vectors.at(i, p) = c * vip - s * viq;
          vectors.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  values.resize(size_t(n));
  for (int i = 0; i < n; ++i) values[size_t(i)] = m.at(i, i);

  // sort descending; fix sign so the largest-magnitude entry is positive
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return values[size_t(x)] > values[size_t(y)]; });
  std::vector<double> sorted_vals(static_cast<size_t>(n));
  MatD sorted_vecs(n, n);
  for (int j = 0; j < n; ++j) {
    int src = order[size_t(j)];
    sorted_vals[size_t(j)] = values[size_t(src)];
    int arg = 0;
    double big = 0.0;
    for (int i = 0; i < n; ++i)
      if (std::abs(vectors.at(i, src)) > big) {
        big = std::abs(vectors.at(i, src));
        arg = i;
      }
    double sign = vectors.at(arg, src) >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) sorted_vecs.at(i, j) = sign * vectors.at(i, src);
  }
  values = std::move(sorted_vals);
  vectors = std::move(sorted_vecs);
}

PcaModel fit_pca(const std::vector<FeatureSequence>& corpus, int r) {
  UASR_REQUIRE(!corpus.empty(), "fit_pca: empty corpus");
  int d = corpus.front().dim();
  if (r > d) {
    log_warn("pca rank %d clamped to feature dim %d", r, d);
    r = d;
  }
  UASR_REQUIRE(r >= 1, "fit_pca: rank < 1");

  size_t n = 0;
  std::vector<double> mean(size_t(d), 0.0);
  for (const auto& f : corpus) {
    for (int t = 0; t < f.num_frames(); ++t) {
      const float* row = f.frames.row(t);
      for (int c = 0; c < d; ++c) mean[size_t(c)] += row[c];
    }
    n += size_t(f.num_frames());
  }
  if (n <= size_t(r)) throw Error(format_msg("fit_pca: %zu frames <= rank %d", n, r));
  for (double& v : mean) v /= double(n);

  MatD cov(d, d);
  for (const auto& f : corpus) {
    for (int t = 0; t < f.num_frames(); ++t) {
      const float* row = f.frames.row(t);
      for (int i = 0; i < d; ++i) {
        double xi = row[i] - mean[size_t(i)];
        for (int j = i; j < d; ++j) cov.at(i, j) += xi * (row[j] - mean[size_t(j)]);
      }
    }
  }
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < i; ++j) cov.at(i, j) = cov.at(j, i);
  for (auto& v : cov.data) v /= double(n);

  std::vector<double> values;
  MatD vectors;
  symmetric_eigen(cov, values, vectors);

  double total = 0.0;
  for (double v : values) total += std::max(v, 0.0);

  PcaModel model;
  model.mean = mean;
  model.projection = MatD(d, r);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < r; ++j) model.projection.at(i, j) = vectors.at(i, j);
  for (int j = 0; j < r; ++j) {
    double ev = std::max(values[size_t(j)], 0.0);
    model.explained_variance.push_back(ev);
    model.explained_variance_ratio.push_back(total > 0 ? ev / total : 0.0);
  }
  return model;
}

MatD pca_project(const PcaModel& model, const MatF& frames) {
  int d = model.input_dim(), r = model.output_dim();
  if (frames.cols != d)
    throw Error(format_msg("pca_project: dim %d != model dim %d", frames.cols, d));
  MatD out(frames.rows, r);
  for (int t = 0; t < frames.rows; ++t) {
    const float* row = frames.row(t);
    for (int j = 0; j < r; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i)
        acc += (double(row[i]) - model.mean[size_t(i)]) * model.projection.at(i, j);
      out.at(t, j) = acc;
    }
  }
  return out;
}

void save_pca(const PcaModel& model, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kMagic, kVersion);
  write_pod<uint32_t>(os, uint32_t(model.input_dim()));
  write_pod<uint32_t>(os, uint32_t(model.output_dim()));
  std::vector<float> buf(model.mean.begin(), model.mean.end());
  write_vec<float>(os, buf);
  buf.assign(model.projection.data.begin(), model.projection.data.end());
  write_vec<float>(os, buf);
  buf.assign(model.explained_variance.begin(), model.explained_variance.end());
  write_vec<float>(os, buf);
  buf.assign(model.explained_variance_ratio.begin(), model.explained_variance_ratio.end());
  write_vec<float>(os, buf);
}

PcaModel load_pca(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kMagic, "pca");
  uint32_t d = read_pod<uint32_t>(is);
  uint32_t r = read_pod<uint32_t>(is);
  PcaModel model;
  auto mean = read_vec<float>(is);
  model.mean.assign(mean.begin(), mean.end());
  auto proj = read_vec<float>(is);
  if (proj.size() != size_t(d) * r) throw Error("pca file has inconsistent sizes");
  model.projection = MatD(int(d), int(r));
  for (size_t i = 0; i < proj.size(); ++i) model.projection.data[i] = proj[i];
  auto ev = read_vec<float>(is);
  model.explained_variance.assign(ev.begin(), ev.end());
  auto evr = read_vec<float>(is);
  model.explained_variance_ratio.assign(evr.begin(), evr.end());
  return model;
}

}  // namespace uasr
