#pragma once

#include "uasr/audio.hpp"
#include "uasr/features.hpp"

namespace uasr {

struct MfccConfig {
  double window_ms = 25.0;
  double hop_ms = 20.0;  // matches the 20 ms feature stride used downstream
  int num_mel = 26;
  int num_ceps = 13;
  bool add_deltas = true;  // appends delta and delta-delta blocks (d = 3 * num_ceps)
  double preemphasis = 0.97;
  double low_freq_hz = 20.0;
  double high_freq_hz = 0.0;  // 0 means Nyquist
};

FeatureSequence compute_features(const AudioWave& wave, const MfccConfig& config = {});

}  // namespace uasr
