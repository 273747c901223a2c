#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "uasr/mat.hpp"

namespace uasr {

struct FeatureSequence {
  std::string utterance_id;
  MatF frames;  // T x d
  double frame_stride_ms = 20.0;

  int num_frames() const { return frames.rows; }
  int dim() const { return frames.cols; }
};

struct ArchiveEntry {
  std::string utterance_id;
  std::string relative_path;
  int num_frames = 0;
};

// On-disk layout: dir/{manifest.tsv, stats.bin, <id>.f32}. Each .f32 file is
// a row-major T x d matrix of little-endian 32-bit floats.
struct FeatureArchive {
  std::filesystem::path dir;
  std::vector<ArchiveEntry> manifest;
  int dim = 0;
  std::vector<double> mean;      // per-dimension, over the fit split
  std::vector<double> variance;  // per-dimension, > 0 after fitting

  bool has_stats() const { return !mean.empty(); }
  const ArchiveEntry* find(const std::string& utterance_id) const;
};

FeatureArchive write_archive(const std::vector<FeatureSequence>& features,
                             const std::filesystem::path& dir);
FeatureArchive read_archive(const std::filesystem::path& dir);

FeatureSequence load_utterance(const FeatureArchive& archive, const std::string& utterance_id);
std::vector<FeatureSequence> load_all(const FeatureArchive& archive);

// Global per-dimension mean/variance over the given utterances (typically the
// training split); stored in stats.bin next to the manifest.
void fit_normalization(FeatureArchive& archive, const std::vector<std::string>& utterance_ids);
void save_stats(const FeatureArchive& archive);

void apply_normalization(const FeatureArchive& archive, FeatureSequence& features);

}  // namespace uasr
