#include "uasr/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "uasr/io.hpp"

namespace uasr {

namespace {

struct RiffChunk {
  char id[4];
  uint32_t size;
};

}  // namespace

AudioWave load_audio(const std::filesystem::path& path) {
  auto is = open_in(path);

  char riff[4];
  read_bytes(is, riff, 4);
  if (std::memcmp(riff, "RIFF", 4) != 0)
    throw Error("malformed WAV header (missing RIFF): " + path.string());
  read_pod<uint32_t>(is);  // overall size, unused
  char wave[4];
  read_bytes(is, wave, 4);
  if (std::memcmp(wave, "WAVE", 4) != 0)
    throw Error("malformed WAV header (missing WAVE): " + path.string());

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  AudioWave out;
  out.utterance_id = path.stem().string();

  while (is.peek() != EOF) {
    RiffChunk ch;
    is.read(ch.id, 4);
    if (!is) break;
    ch.size = read_pod<uint32_t>(is);
    if (std::memcmp(ch.id, "fmt ", 4) == 0) {
      format = read_pod<uint16_t>(is);
      channels = read_pod<uint16_t>(is);
      sample_rate = read_pod<uint32_t>(is);
      read_pod<uint32_t>(is);  // byte rate
      read_pod<uint16_t>(is);  // block align
      bits = read_pod<uint16_t>(is);
      if (ch.size > 16) is.seekg(ch.size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(ch.id, "data", 4) == 0) {
      if (!have_fmt) throw Error("malformed WAV (data before fmt): " + path.string());
      if (format != 1) throw Error("unsupported WAV encoding (want PCM): " + path.string());
      if (channels != 1)
        throw Error(format_msg("unsupported channel count %d (want mono): %s", int(channels),
                               path.string().c_str()));
      if (bits != 16)
        throw Error(format_msg("unsupported bit depth %d (want 16): %s", int(bits),
                               path.string().c_str()));
      size_t n = ch.size / 2;
      std::vector<int16_t> raw(n);
      if (n) read_bytes(is, raw.data(), n * 2);
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) out.samples[i] = float(raw[i]) / 32768.0f;
      out.sample_rate = int(sample_rate);
      return out;
    } else {
      is.seekg(ch.size + (ch.size & 1), std::ios::cur);
    }
  }
  throw Error("malformed WAV (no data chunk): " + path.string());
}

void save_audio(const AudioWave& wave, const std::filesystem::path& path) {
  auto os = open_out(path);
  uint32_t data_size = uint32_t(wave.samples.size() * 2);
  write_bytes(os, "RIFF", 4);
  write_pod<uint32_t>(os, 36 + data_size);
  write_bytes(os, "WAVE", 4);
  write_bytes(os, "fmt ", 4);
  write_pod<uint32_t>(os, 16);
  write_pod<uint16_t>(os, 1);  // PCM
  write_pod<uint16_t>(os, 1);  // mono
  write_pod<uint32_t>(os, uint32_t(wave.sample_rate));
  write_pod<uint32_t>(os, uint32_t(wave.sample_rate * 2));
  write_pod<uint16_t>(os, 2);
  write_pod<uint16_t>(os, 16);
  write_bytes(os, "data", 4);
  write_pod<uint32_t>(os, data_size);
  for (float s : wave.samples) {
    double clipped = std::clamp(double(s), -1.0, 1.0);
    auto v = int16_t(std::lrint(clipped * 32767.0));
    write_pod<int16_t>(os, v);
  }
}

int frame_count(size_t num_samples, int sample_rate, double window_ms, double hop_ms) {
  int win = int(std::lround(window_ms * sample_rate / 1000.0));
  int hop = int(std::lround(hop_ms * sample_rate / 1000.0));
  if (num_samples < size_t(win)) return 0;
  return int((num_samples - size_t(win)) / size_t(hop)) + 1;
}

std::vector<double> frame_energies(const AudioWave& wave, const VadConfig& config) {
  int win = int(std::lround(config.window_ms * wave.sample_rate / 1000.0));
  int hop = int(std::lround(config.hop_ms * wave.sample_rate / 1000.0));
  int t = frame_count(wave.samples.size(), wave.sample_rate, config.window_ms, config.hop_ms);
  std::vector<double> energies(size_t(std::max(t, 0)));
  for (int f = 0; f < t; ++f) {
    double acc = 0.0;
    const float* p = wave.samples.data() + size_t(f) * hop;
    for (int i = 0; i < win; ++i) acc += double(p[i]) * double(p[i]);
    energies[size_t(f)] = acc / win;
  }
  return energies;
}

VoicedIntervals detect_voice(const AudioWave& wave, const VadConfig& config) {
  UASR_REQUIRE(!wave.samples.empty(), "detect_voice: empty waveform");
  std::vector<double> energies = frame_energies(wave, config);
  int t = int(energies.size());
  VoicedIntervals out;
  if (t == 0) return out;

  std::vector<double> loge(energies.size());
  for (int f = 0; f < t; ++f) loge[size_t(f)] = std::log(energies[size_t(f)] + config.energy_eps);

  // centered moving average
  std::vector<double> smooth(loge.size());
  int half = config.smooth_width / 2;
  for (int f = 0; f < t; ++f) {
    double acc = 0.0;
    int n = 0;
    for (int j = std::max(0, f - half); j <= std::min(t - 1, f + half); ++j, ++n)
      acc += loge[size_t(j)];
    smooth[size_t(f)] = acc / n;
  }

  double mean = 0.0;
  for (double v : smooth) mean += v;
  mean /= t;
  double var = 0.0;
  for (double v : smooth) var += (v - mean) * (v - mean);
  double sigma = std::sqrt(var / t);

  std::vector<char> speech(size_t(t), 0);
  if (sigma < config.min_sigma) {
    // spread too narrow to carry a silence/speech contrast: classify on the
    // absolute level alone
    for (int f = 0; f < t; ++f) speech[size_t(f)] = smooth[size_t(f)] > config.abs_floor_log;
  } else {
    // hysteresis thresholds at +-k*sigma around the midpoint of the observed
    // log-energy range; since sigma <= range/2, both thresholds stay strictly
    // inside the range, so speech-dominated input cannot lose its speech
    double lo_e = smooth[0], hi_e = smooth[0];
    for (double v : smooth) {
      lo_e = std::min(lo_e, v);
      hi_e = std::max(hi_e, v);
    }
    double center = 0.5 * (lo_e + hi_e);
    double hi = center + config.k * sigma;
    double lo = center - config.k * sigma;
    // regions above the low threshold qualify only if they peak above the
    // high threshold
    int f = 0;
    while (f < t) {
      if (smooth[size_t(f)] <= lo) {
        ++f;
        continue;
      }
      int start = f;
      bool peaked = false;
      while (f < t && smooth[size_t(f)] > lo) {
        if (smooth[size_t(f)] > hi) peaked = true;
        ++f;
      }
      if (peaked)
        for (int j = start; j < f; ++j) speech[size_t(j)] = 1;
    }
  }

  // collect runs, bridging gaps up to the hangover length
  int f = 0;
  while (f < t) {
    if (!speech[size_t(f)]) {
      ++f;
      continue;
    }
    int start = f;
    while (f < t && speech[size_t(f)]) ++f;
    if (!out.intervals.empty() && start - out.intervals.back().second <= config.hangover_frames)
      out.intervals.back().second = f;
    else
      out.intervals.emplace_back(start, f);
  }
  return out;
}

AudioWave remove_silence(const AudioWave& wave, const VoicedIntervals& voiced,
                         const VadConfig& config) {
  int hop = int(std::lround(config.hop_ms * wave.sample_rate / 1000.0));
  int t = frame_count(wave.samples.size(), wave.sample_rate, config.window_ms, config.hop_ms);
  AudioWave out;
  out.sample_rate = wave.sample_rate;
  out.utterance_id = wave.utterance_id;
  int prev_end = 0;
  for (auto [start, end] : voiced.intervals) {
    if (start < 0 || end > t || start >= end)
      throw Error(format_msg("voiced interval [%d,%d) out of range for %d frames", start, end, t));
    if (start < prev_end) throw Error("voiced intervals overlap or are unsorted");
    prev_end = end;
    // frame f owns samples [f*hop, (f+1)*hop), the last frame extends to the
    // end of the waveform so the frames partition the samples
    size_t s0 = size_t(start) * hop;
    size_t s1 = (end == t) ? wave.samples.size() : size_t(end) * hop;
    out.samples.insert(out.samples.end(), wave.samples.begin() + long(s0),
                       wave.samples.begin() + long(s1));
  }
  return out;
}

void write_vad_mask(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, VoicedIntervals>>& masks) {
  auto os = open_out(path, false);
  for (const auto& [id, vi] : masks)
    for (auto [s, e] : vi.intervals) os << id << "\t" << s << "\t" << e << "\n";
}

std::vector<std::pair<std::string, VoicedIntervals>> read_vad_mask(
    const std::filesystem::path& path) {
  std::vector<std::pair<std::string, VoicedIntervals>> out;
  std::map<std::string, size_t> index;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 3) throw Error("bad VAD mask line: " + line);
    auto it = index.find(cols[0]);
    if (it == index.end()) {
      index[cols[0]] = out.size();
      out.push_back({cols[0], {}});
      it = index.find(cols[0]);
    }
    out[it->second].second.intervals.emplace_back(std::stoi(cols[1]), std::stoi(cols[2]));
  }
  return out;
}

}  // namespace uasr
