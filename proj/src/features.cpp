#include "uasr/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uasr/io.hpp"

namespace uasr {

namespace {

constexpr char kStatsMagic[8] = {'U', 'A', 'S', 'R', 'S', 'T', 'A', 'T'};
constexpr uint32_t kStatsVersion = 1;

std::filesystem::path manifest_path(const std::filesystem::path& dir) {
  return dir / "manifest.tsv";
}

}  // namespace

const ArchiveEntry* FeatureArchive::find(const std::string& utterance_id) const {
  for (const auto& e : manifest)
    if (e.utterance_id == utterance_id) return &e;
  return nullptr;
}

FeatureArchive write_archive(const std::vector<FeatureSequence>& features,
                             const std::filesystem::path& dir) {
  UASR_REQUIRE(!features.empty(), "write_archive: no utterances");
  std::filesystem::create_directories(dir);
  FeatureArchive archive;
  archive.dir = dir;
  archive.dim = features.front().dim();

  std::set<std::string> seen;
  for (const auto& f : features) {
    if (f.dim() != archive.dim)
      throw Error(format_msg("dim mismatch: utterance %s has d=%d, archive has d=%d",
                             f.utterance_id.c_str(), f.dim(), archive.dim));
    if (f.num_frames() < 1) throw Error("empty utterance: " + f.utterance_id);
    if (!seen.insert(f.utterance_id).second)
      throw Error("duplicate utterance_id: " + f.utterance_id);
    std::string rel = f.utterance_id + ".f32";
    auto os = open_out(dir / rel);
    write_bytes(os, f.frames.data.data(), f.frames.data.size() * sizeof(float));
    archive.manifest.push_back({f.utterance_id, rel, f.num_frames()});
  }

  auto os = open_out(manifest_path(dir), false);
  os << "#dim\t" << archive.dim << "\n";
  for (const auto& e : archive.manifest)
    os << e.utterance_id << "\t" << e.relative_path << "\t" << e.num_frames << "\n";
  return archive;
}

FeatureArchive read_archive(const std::filesystem::path& dir) {
  FeatureArchive archive;
  archive.dir = dir;
  auto lines = read_lines(manifest_path(dir));
  std::set<std::string> seen;
  for (const auto& line : lines) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() == 2 && cols[0] == "#dim") {
      archive.dim = std::stoi(cols[1]);
      continue;
    }
    if (cols.size() != 3) throw Error("bad manifest line: " + line);
    if (!seen.insert(cols[0]).second) throw Error("duplicate utterance_id in manifest: " + cols[0]);
    archive.manifest.push_back({cols[0], cols[1], std::stoi(cols[2])});
  }
  if (archive.dim <= 0) throw Error("manifest missing #dim header: " + dir.string());

  // verify stored sizes against the manifest
  for (const auto& e : archive.manifest) {
    auto p = dir / e.relative_path;
    auto actual = std::filesystem::file_size(p);
    auto expect = size_t(e.num_frames) * size_t(archive.dim) * sizeof(float);
    if (actual != expect)
      throw Error(format_msg("frame count mismatch for utterance %s: manifest says %d frames "
                             "but file holds %zu bytes",
                             e.utterance_id.c_str(), e.num_frames, size_t(actual)));
  }

  auto stats = dir / "stats.bin";
  if (std::filesystem::exists(stats)) {
    auto is = open_in(stats);
    read_magic(is, kStatsMagic, "stats");
    uint32_t d = read_pod<uint32_t>(is);
    if (int(d) != archive.dim) throw Error("stats.bin dim disagrees with manifest");
    archive.mean = read_vec<double>(is);
    archive.variance = read_vec<double>(is);
  }
  return archive;
}

FeatureSequence load_utterance(const FeatureArchive& archive, const std::string& utterance_id) {
  const ArchiveEntry* e = archive.find(utterance_id);
  if (!e) throw Error("utterance not in archive: " + utterance_id);
  FeatureSequence f;
  f.utterance_id = utterance_id;
  f.frames = MatF(e->num_frames, archive.dim);
  auto is = open_in(archive.dir / e->relative_path);
  read_bytes(is, f.frames.data.data(), f.frames.data.size() * sizeof(float));
  return f;
}

std::vector<FeatureSequence> load_all(const FeatureArchive& archive) {
  std::vector<FeatureSequence> out;
  out.reserve(archive.manifest.size());
  for (const auto& e : archive.manifest) out.push_back(load_utterance(archive, e.utterance_id));
  return out;
}

void fit_normalization(FeatureArchive& archive, const std::vector<std::string>& utterance_ids) {
  int d = archive.dim;
  std::vector<double> sum(size_t(d), 0.0), sq(size_t(d), 0.0);
  size_t n = 0;
  for (const auto& id : utterance_ids) {
    FeatureSequence f = load_utterance(archive, id);
    for (int t = 0; t < f.num_frames(); ++t) {
      const float* row = f.frames.row(t);
      for (int c = 0; c < d; ++c) {
        sum[size_t(c)] += row[c];
        sq[size_t(c)] += double(row[c]) * row[c];
      }
    }
    n += size_t(f.num_frames());
  }
  UASR_REQUIRE(n > 1, "fit_normalization: need at least 2 frames");
  archive.mean.resize(size_t(d));
  archive.variance.resize(size_t(d));
  for (int c = 0; c < d; ++c) {
    archive.mean[size_t(c)] = sum[size_t(c)] / double(n);
    double var = sq[size_t(c)] / double(n) - archive.mean[size_t(c)] * archive.mean[size_t(c)];
    archive.variance[size_t(c)] = std::max(var, 1e-12);
  }
  save_stats(archive);
}

void save_stats(const FeatureArchive& archive) {
  auto os = open_out(archive.dir / "stats.bin");
  write_magic(os, kStatsMagic, kStatsVersion);
  write_pod<uint32_t>(os, uint32_t(archive.dim));
  write_vec<double>(os, archive.mean);
  write_vec<double>(os, archive.variance);
}

void apply_normalization(const FeatureArchive& archive, FeatureSequence& features) {
  UASR_REQUIRE(archive.has_stats(), "archive has no normalization stats");
  for (int t = 0; t < features.num_frames(); ++t) {
    float* row = features.frames.row(t);
    for (int c = 0; c < features.dim(); ++c)
      row[c] = float((row[c] - archive.mean[size_t(c)]) / std::sqrt(archive.variance[size_t(c)]));
  }
}

}  // namespace uasr
