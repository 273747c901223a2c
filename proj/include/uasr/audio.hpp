#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

struct AudioWave {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 16000;
  std::string utterance_id;
};

// Half-open [start_frame, end_frame) ranges judged as speech. Frames use the
// analysis framing below (25 ms window / 20 ms hop by default).
struct VoicedIntervals {
  std::vector<std::pair<int, int>> intervals;
};

struct VadConfig {
  double window_ms = 25.0;
  double hop_ms = 20.0;
  double k = 0.5;           // hysteresis thresholds at mean +/- k * stddev of log-energy
  int hangover_frames = 5;  // bridge speech gaps up to this many frames
  int smooth_width = 3;     // centered moving average over log-energies
  double energy_eps = 1e-12;
  // absolute fallback when the log-energy spread is too narrow to carry a
  // silence/speech contrast (all-silent, all-loud, or already-trimmed input):
  // frames are speech iff log-energy exceeds this
  double abs_floor_log = -13.8;  // ~1e-6 mean square, i.e. 1e-3 RMS
  double min_sigma = 1.0;
};

AudioWave load_audio(const std::filesystem::path& path);
void save_audio(const AudioWave& wave, const std::filesystem::path& path);

int frame_count(size_t num_samples, int sample_rate, double window_ms, double hop_ms);

// Per-frame mean-square energies with the VAD framing.
std::vector<double> frame_energies(const AudioWave& wave, const VadConfig& config);

VoicedIntervals detect_voice(const AudioWave& wave, const VadConfig& config = {});

AudioWave remove_silence(const AudioWave& wave, const VoicedIntervals& voiced,
                         const VadConfig& config = {});

// "utterance_id<TAB>start_frame<TAB>end_frame", one interval per line.
void write_vad_mask(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, VoicedIntervals>>& masks);
std::vector<std::pair<std::string, VoicedIntervals>> read_vad_mask(
    const std::filesystem::path& path);

}  // namespace uasr
