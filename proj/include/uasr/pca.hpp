#pragma once

#include <filesystem>
#include <vector>

#include "uasr/features.hpp"
#include "uasr/mat.hpp"

namespace uasr {

struct PcaModel {
  std::vector<double> mean;  // d
  MatD projection;           // d x r, orthonormal columns, descending variance
  std::vector<double> explained_variance;        // per component
  std::vector<double> explained_variance_ratio;  // sums to <= 1

  int input_dim() const { return projection.rows; }
  int output_dim() const { return projection.cols; }
};

// Top-r eigenvectors of the covariance of mean-centered frames. r > d is
// clamped to d with a warning.
PcaModel fit_pca(const std::vector<FeatureSequence>& corpus, int r);

// (x - mean) * projection, one output row per frame.
MatD pca_project(const PcaModel& model, const MatF& frames);

void save_pca(const PcaModel& model, const std::filesystem::path& path);
PcaModel load_pca(const std::filesystem::path& path);

// Cyclic Jacobi eigensolver for symmetric matrices; returns eigenvalues in
// descending order with matching columns in vecs.
void symmetric_eigen(const MatD& a, std::vector<double>& values, MatD& vectors);

}  // namespace uasr
