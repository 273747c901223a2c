#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uasr/features.hpp"
#include "uasr/pca.hpp"

namespace uasr {

// Frame indices where a new segment starts (excluding 0 and T), plus the
// per-frame cluster ids they were derived from.
struct Segmentation {
  std::vector<int> boundaries;
  std::vector<int> cluster_ids;

  int num_frames() const { return int(cluster_ids.size()); }
  int num_segments() const { return int(boundaries.size()) + 1; }
  // half-open [start, end) frame span of each segment
  std::vector<std::pair<int, int>> spans() const;
};

struct SegmentSequence {
  std::string utterance_id;
  MatD reps;  // num_segments x r
  std::vector<std::pair<int, int>> segment_spans;

  int num_segments() const { return reps.rows; }
  int dim() const { return reps.cols; }
};

Segmentation boundaries_from_ids(const std::vector<int>& ids);

// Mean-pool PCA projections per segment, then average each segment with its
// right neighbor (the last segment keeps its own mean).
SegmentSequence build_segment_reps(const FeatureSequence& features, const Segmentation& seg,
                                   const PcaModel& pca);

struct BoundaryScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int matched = 0;
};

// Greedy one-to-one matching within +/- tolerance frames.
BoundaryScore boundary_prf(const std::vector<int>& predicted, const std::vector<int>& gold,
                           int tolerance_frames = 1);

// "utterance_id<TAB>comma-separated boundaries" per line.
void write_boundaries(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<int>>>& boundaries);
std::vector<std::pair<std::string, std::vector<int>>> read_boundaries(
    const std::filesystem::path& path);

}  // namespace uasr
