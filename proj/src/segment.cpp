#include "uasr/segment.hpp"

#include <algorithm>

#include "uasr/io.hpp"

namespace uasr {

std::vector<std::pair<int, int>> Segmentation::spans() const {
  std::vector<std::pair<int, int>> out;
  int start = 0;
  for (int b : boundaries) {
    out.emplace_back(start, b);
    start = b;
  }
  out.emplace_back(start, num_frames());
  return out;
}

Segmentation boundaries_from_ids(const std::vector<int>& ids) {
  UASR_REQUIRE(!ids.empty(), "boundaries_from_ids: empty id sequence");
  Segmentation seg;
  seg.cluster_ids = ids;
  for (size_t t = 1; t < ids.size(); ++t)
    if (ids[t] != ids[t - 1]) seg.boundaries.push_back(int(t));
  return seg;
}

SegmentSequence build_segment_reps(const FeatureSequence& features, const Segmentation& seg,
                                   const PcaModel& pca) {
  UASR_REQUIRE(seg.num_frames() == features.num_frames(),
               "segmentation does not match feature length");
  MatD projected = pca_project(pca, features.frames);
  auto spans = seg.spans();
  int m = int(spans.size());
  int r = pca.output_dim();

  MatD means(m, r);
  for (int s = 0; s < m; ++s) {
    auto [b, e] = spans[size_t(s)];
    for (int t = b; t < e; ++t)
      for (int j = 0; j < r; ++j) means.at(s, j) += projected.at(t, j);
    for (int j = 0; j < r; ++j) means.at(s, j) /= double(e - b);
  }

  SegmentSequence out;
  out.utterance_id = features.utterance_id;
  out.segment_spans = spans;
  out.reps = MatD(m, r);
  for (int s = 0; s < m; ++s) {
    if (s + 1 < m) {
      for (int j = 0; j < r; ++j) out.reps.at(s, j) = 0.5 * (means.at(s, j) + means.at(s + 1, j));
    } else {
      for (int j = 0; j < r; ++j) out.reps.at(s, j) = means.at(s, j);
    }
  }
  return out;
}

BoundaryScore boundary_prf(const std::vector<int>& predicted, const std::vector<int>& gold,
                           int tolerance_frames) {
  std::vector<bool> used(gold.size(), false);
  int matched = 0;
  for (int p : predicted) {
    for (size_t g = 0; g < gold.size(); ++g) {
      if (used[g]) continue;
      if (std::abs(gold[g] - p) <= tolerance_frames) {
        used[g] = true;
        ++matched;
        break;
      }
    }
  }
  BoundaryScore score;
  score.matched = matched;
  score.precision = predicted.empty() ? 0.0 : double(matched) / double(predicted.size());
  score.recall = gold.empty() ? 0.0 : double(matched) / double(gold.size());
  if (score.precision + score.recall > 0)
    score.f1 = 2 * score.precision * score.recall / (score.precision + score.recall);
  return score;
}

void write_boundaries(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::vector<int>>>& boundaries) {
  auto os = open_out(path, false);
  for (const auto& [id, bs] : boundaries) {
    os << id << "\t";
    for (size_t i = 0; i < bs.size(); ++i) {
      if (i) os << ",";
      os << bs[i];
    }
    os << "\n";
  }
}

std::vector<std::pair<std::string, std::vector<int>>> read_boundaries(
    const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() < 1) continue;
    std::vector<int> bs;
    if (cols.size() > 1 && !cols[1].empty())
      for (const auto& tok : split(cols[1], ',')) bs.push_back(std::stoi(tok));
    out.emplace_back(cols[0], std::move(bs));
  }
  return out;
}

}  // namespace uasr
