#include "uasr/mfcc.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace uasr {

namespace {

// iterative radix-2 FFT; n must be a power of two
void fft(std::vector<std::complex<double>>& a) {
  size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / double(len);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// standard two-tap regression deltas with edge replication
MatD deltas(const MatD& x, int window = 2) {
  MatD out(x.rows, x.cols);
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  for (int t = 0; t < x.rows; ++t) {
    for (int c = 0; c < x.cols; ++c) {
      double acc = 0.0;
      for (int n = 1; n <= window; ++n) {
        int hi = std::min(x.rows - 1, t + n);
        int lo = std::max(0, t - n);
        acc += n * (x.at(hi, c) - x.at(lo, c));
      }
      out.at(t, c) = acc / denom;
    }
  }
  return out;
}

}  // namespace

FeatureSequence compute_features(const AudioWave& wave, const MfccConfig& config) {
  int win = int(std::lround(config.window_ms * wave.sample_rate / 1000.0));
  int hop = int(std::lround(config.hop_ms * wave.sample_rate / 1000.0));
  if (wave.samples.size() < size_t(win))
    throw Error(format_msg("utterance %s too short for one %d-sample analysis window",
                           wave.utterance_id.c_str(), win));
  int t = int((wave.samples.size() - size_t(win)) / size_t(hop)) + 1;

  size_t nfft = 1;
  while (nfft < size_t(win)) nfft <<= 1;

  // pre-emphasis over the whole signal, first sample replicated
  std::vector<double> emph(wave.samples.size());
  emph[0] = double(wave.samples[0]) * (1.0 - config.preemphasis);
  for (size_t i = 1; i < emph.size(); ++i)
    emph[i] = double(wave.samples[i]) - config.preemphasis * double(wave.samples[i - 1]);

  std::vector<double> hamming(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    hamming[size_t(i)] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1));

  // triangular mel filterbank
  double high = config.high_freq_hz > 0 ? config.high_freq_hz : wave.sample_rate / 2.0;
  double mel_lo = hz_to_mel(config.low_freq_hz), mel_hi = hz_to_mel(high);
  int nbins = int(nfft) / 2 + 1;
  std::vector<double> centers(size_t(config.num_mel) + 2);
  for (int m = 0; m < config.num_mel + 2; ++m)
    centers[size_t(m)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (config.num_mel + 1));
  auto bin_freq = [&](int b) { return double(b) * wave.sample_rate / double(nfft); };

  MatD mel_log(t, config.num_mel);
  std::vector<std::complex<double>> buf(nfft);
  for (int f = 0; f < t; ++f) {
    for (size_t i = 0; i < nfft; ++i) {
      double v = i < size_t(win) ? emph[size_t(f) * hop + i] * hamming[i] : 0.0;
      buf[i] = {v, 0.0};
    }
    fft(buf);
    for (int m = 0; m < config.num_mel; ++m) {
      double lo = centers[size_t(m)], c = centers[size_t(m) + 1], hi = centers[size_t(m) + 2];
      double acc = 0.0;
      for (int b = 0; b < nbins; ++b) {
        double fr = bin_freq(b);
        double w = 0.0;
        if (fr >= lo && fr <= c && c > lo)
          w = (fr - lo) / (c - lo);
        else if (fr > c && fr <= hi && hi > c)
          w = (hi - fr) / (hi - c);
        if (w > 0.0) acc += w * std::norm(buf[size_t(b)]);
      }
      mel_log.at(f, m) = std::log(std::max(acc, 1e-10));
    }
  }

  // DCT-II with orthonormal scaling
  MatD ceps(t, config.num_ceps);
  for (int f = 0; f < t; ++f) {
    for (int k = 0; k < config.num_ceps; ++k) {
      double acc = 0.0;
      for (int m = 0; m < config.num_mel; ++m)
        acc += mel_log.at(f, m) * std::cos(M_PI * k * (m + 0.5) / config.num_mel);
      double scale = std::sqrt(2.0 / config.num_mel) * (k == 0 ? std::sqrt(0.5) : 1.0);
      ceps.at(f, k) = acc * scale;
    }
  }

  FeatureSequence out;
  out.utterance_id = wave.utterance_id;
  out.frame_stride_ms = config.hop_ms;
  if (config.add_deltas) {
    MatD d1 = deltas(ceps);
    MatD d2 = deltas(d1);
    out.frames = MatF(t, config.num_ceps * 3);
    for (int f = 0; f < t; ++f)
      for (int k = 0; k < config.num_ceps; ++k) {
        out.frames.at(f, k) = float(ceps.at(f, k));
        out.frames.at(f, config.num_ceps + k) = float(d1.at(f, k));
        out.frames.at(f, 2 * config.num_ceps + k) = float(d2.at(f, k));
      }
  } else {
    out.frames = to_float(ceps);
  }
  for (float v : out.frames.data)
    if (!std::isfinite(v)) throw Error("non-finite MFCC value for " + wave.utterance_id);
  return out;
}

}  // namespace uasr
