#include "uasr/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "uasr/audio.hpp"
#include "uasr/ctc.hpp"
#include "uasr/decode.hpp"
#include "uasr/evalmetrics.hpp"
#include "uasr/features.hpp"
#include "uasr/gan.hpp"
#include "uasr/hmm.hpp"
#include "uasr/io.hpp"
#include "uasr/kmeans.hpp"
#include "uasr/mfcc.hpp"
#include "uasr/ngram.hpp"
#include "uasr/pca.hpp"
#include "uasr/segment.hpp"
#include "uasr/selftrain.hpp"
#include "uasr/synth.hpp"
#include "uasr/text.hpp"
#include "uasr/xval.hpp"

namespace uasr {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// configuration schema

namespace {

struct SchemaEntry {
  const char* key;
  char type;  // s string, i int, d double, b bool, L comma list of doubles
  const char* def;
  double lo = 0.0, hi = 0.0;  // for i/d when lo < hi
};

const std::vector<SchemaEntry>& schema() {
  static const std::vector<SchemaEntry> entries = {
      {"project.experiment_dir", 's', "exp"},
      {"project.seed", 'i', "0", 0, 9e18},
      {"data.wav_dir", 's', ""},
      {"data.external_features", 's', ""},
      {"data.external_vad", 's', ""},
      {"data.sample_rate", 'i', "16000", 1, 1e7},
      {"data.allow_other_sample_rate", 'b', "false"},
      {"data.train_frac", 'd', "0.8", 0.0, 1.0},
      {"data.dev_frac", 'd', "0.1", 0.0, 1.0},
      {"synth.num_phones", 'i', "8", 2, 64},
      {"synth.num_words", 'i', "30", 2, 100000},
      {"synth.feature_dim", 'i', "12", 2, 256},
      {"synth.n_utterances", 'i', "500", 1, 1000000},
      {"synth.noise_level", 'd', "0.2", 0.0, 1000.0},
      {"synth.mean_margin", 'd', "4.0", 1e-9, 1e6},
      {"synth.matched", 'b', "true"},
      {"synth.silence_prob_interior", 'd', "0.25", 0.0, 1.0},
      {"synth.min_frames_per_phone", 'i', "2", 1, 100},
      {"synth.max_frames_per_phone", 'i', "4", 1, 100},
      {"synth.min_words", 'i', "2", 1, 100},
      {"synth.max_words", 'i', "6", 1, 100},
      {"synth.min_word_len", 'i', "1", 1, 10},
      {"synth.max_word_len", 'i', "4", 1, 10},
      {"synth.min_sil_frames", 'i', "1", 1, 50},
      {"synth.max_sil_frames", 'i', "3", 1, 50},
      {"vad.k", 'd', "0.5", 0.0, 10.0},
      {"vad.hangover", 'i', "5", 0, 1000},
      {"vad.smooth", 'i', "3", 1, 99},
      {"mfcc.num_ceps", 'i', "13", 1, 64},
      {"mfcc.num_mel", 'i', "26", 2, 128},
      {"mfcc.deltas", 'b', "true"},
      {"cluster.k", 'i', "128", 1, 8192},
      {"cluster.max_iters", 'i', "50", 1, 10000},
      {"pca.rank", 'i', "512", 1, 8192},
      {"textprep.text_file", 's', ""},
      {"textprep.lexicon_file", 's', ""},
      {"textprep.min_count", 'i', "1000", 0, 9e18},
      {"textprep.sil_rate", 'd', "0.25", 0.0, 1.0},
      {"textprep.oov_policy", 's', "skip-sentence"},
      {"lm.order", 'i', "4", 1, 8},
      {"lm.prune_min_count", 'i', "3", 0, 9e18},
      {"gan.lambda", 'd', "1.5", 1.5, 2.0},
      {"gan.gamma", 'd', "0.5", 0.5, 0.75},
      {"gan.eta", 'd', "2.0", 2.0, 4.0},
      {"gan.lr_gen", 'd', "1e-4", 1e-12, 1.0},
      {"gan.lr_disc", 'd', "1e-5", 1e-12, 1.0},
      {"gan.beta1", 'd', "0.5", 0.0, 1.0},
      {"gan.beta2", 'd', "0.98", 0.0, 1.0},
      {"gan.weight_decay_disc", 'd', "1e-4", 0.0, 1.0},
      {"gan.batch", 'i', "160", 1, 100000},
      {"gan.steps", 'i', "20000", 0, 9e18},
      {"gan.checkpoint_interval", 'i', "500", 1, 9e18},
      {"gan.hidden", 'i', "384", 1, 8192},
      {"gan.dropout", 'd', "0.1", 0.0, 0.99},
      {"gan.minimax", 'b', "false"},
      {"gan.sweep", 'b', "false"},
      {"gan.sweep_seeds", 'i', "5", 1, 100},
      {"gan.sweep_lambdas", 'L', "1.5,2.0"},
      {"gan.sweep_gammas", 'L', "0.5,0.75"},
      {"gan.sweep_etas", 'L', "2,4"},
      {"decode.unit", 's', "word"},
      {"decode.beam_dev", 'i', "50", 1, 100000},
      {"decode.beam_final", 'i', "500", 1, 100000},
      {"decode.beam_pseudo", 'i', "50", 1, 100000},
      {"decode.mu", 'd', "0.03", 0.0, 10.0},
      {"decode.grid_scale_step", 'd', "1.0", 0.01, 8.0},
      {"decode.grid_nu_step", 'd', "1.0", 0.01, 11.0},
      {"decode.refine", 'b', "true"},
      {"selftrain.strategy", 's', "hmm+ctc"},
      {"selftrain.hmm_states", 'i', "1", 1, 3},
      {"selftrain.hmm_components", 'i', "1", 1, 2},
      {"selftrain.hmm_iterations", 'i', "10", 1, 1000},
      {"selftrain.ctc_hidden", 'i', "256", 1, 8192},
      {"selftrain.ctc_kernel", 'i', "5", 1, 31},
      {"selftrain.ctc_steps", 'i', "2000", 1, 9e18},
      {"selftrain.ctc_lr", 'd', "1e-3", 1e-12, 1.0},
      {"selftrain.ctc_batch", 'i', "16", 1, 100000},
  };
  return entries;
}

const SchemaEntry& schema_entry(const std::string& key) {
  for (const auto& e : schema())
    if (key == e.key) return e;
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

PipelineConfig::PipelineConfig() {
  for (const auto& e : schema()) values_[e.key] = e.def;
}

void PipelineConfig::set(const std::string& dotted_key, const std::string& value) {
  const SchemaEntry& e = schema_entry(dotted_key);
  switch (e.type) {
    case 'i': {
      long v = 0;
      try {
        v = std::stol(value);
      } catch (...) {
        throw ConfigError("config " + dotted_key + ": not an integer: " + value);
      }
      if (e.lo < e.hi && (v < e.lo || v > e.hi))
        throw ConfigError(format_msg("config %s: %ld outside [%g, %g]", dotted_key.c_str(), v,
                                     e.lo, e.hi));
      break;
    }
    case 'd': {
      double v = 0;
      try {
        v = std::stod(value);
      } catch (...) {
        throw ConfigError("config " + dotted_key + ": not a number: " + value);
      }
      if (e.lo < e.hi && (v < e.lo || v > e.hi))
        throw ConfigError(format_msg("config %s: %g outside [%g, %g]", dotted_key.c_str(), v,
                                     e.lo, e.hi));
      break;
    }
    case 'b':
      if (value != "true" && value != "false")
        throw ConfigError("config " + dotted_key + ": want true|false, got " + value);
      break;
    case 'L': {
      for (const auto& tok : split(value, ','))
        try {
          std::stod(tok);
        } catch (...) {
          throw ConfigError("config " + dotted_key + ": bad list element: " + tok);
        }
      break;
    }
    default:
      break;
  }
  values_[dotted_key] = value;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path,
                                    const std::vector<std::string>& overrides) {
  PipelineConfig config;
  std::string section;
  for (const auto& raw : read_lines(path)) {
    std::string line = raw;
    if (auto pos = line.find('#'); pos != std::string::npos) line = line.substr(0, pos);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("bad section header: " + raw);
      section = line.substr(1, line.size() - 2);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad config line (want key = value): " + raw);
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("config key outside any [section]: " + raw);
    config.set(section + "." + key, value);
  }
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("bad override (want section.key=value): " + o);
    config.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return config;
}

PipelineConfig PipelineConfig::from_overrides(const std::vector<std::string>& overrides) {
  PipelineConfig config;
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("bad override (want section.key=value): " + o);
    config.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return config;
}

const std::string& PipelineConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

long PipelineConfig::get_int(const std::string& key) const { return std::stol(get_string(key)); }
double PipelineConfig::get_double(const std::string& key) const {
  return std::stod(get_string(key));
}
bool PipelineConfig::get_bool(const std::string& key) const { return get_string(key) == "true"; }

std::vector<double> PipelineConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& tok : split(get_string(key), ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

std::string PipelineConfig::serialize() const {
  std::string out, section;
  for (const auto& [key, value] : values_) {
    auto dot = key.find('.');
    std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

std::string PipelineConfig::serialize_section(const std::string& section) const {
  std::string out;
  for (const auto& [key, value] : values_)
    if (key.rfind(section + ".", 0) == 0) out += key + " = " + value + "\n";
  return out;
}

void PipelineConfig::save_effective(const std::filesystem::path& experiment_dir) const {
  fs::create_directories(experiment_dir);
  write_text_file(experiment_dir / "config.effective", serialize());
}

std::filesystem::path PipelineConfig::experiment_dir() const {
  return get_string("project.experiment_dir");
}

uint64_t PipelineConfig::seed() const { return uint64_t(get_int("project.seed")); }

// ---------------------------------------------------------------------------
// manifest and stage gates

std::vector<std::string> Manifest::ids(const std::string& split) const {
  auto it = splits.find(split);
  return it == splits.end() ? std::vector<std::string>{} : it->second;
}

void Manifest::save(const std::filesystem::path& path) const {
  auto os = open_out(path, false);
  for (const auto& [split, ids] : splits)
    for (const auto& id : ids) os << split << "\t" << id << "\n";
}

Manifest Manifest::load(const std::filesystem::path& path) {
  Manifest m;
  std::set<std::string> seen;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw Error("bad manifest line: " + line);
    if (!seen.insert(cols[1]).second) throw Error("utterance in multiple splits: " + cols[1]);
    m.splits[cols[0]].push_back(cols[1]);
  }
  return m;
}

StageGate::StageGate(const std::filesystem::path& experiment_dir, const std::string& stage)
    : marker_(experiment_dir / ".stage" / (stage + ".done")),
      stage_(stage),
      hash_(0xcbf29ce484222325ULL) {}

void StageGate::add_config(const std::string& serialized) { hash_ = fnv1a_str(serialized, hash_); }

void StageGate::add_input_file(const std::filesystem::path& path) {
  hash_ = fnv1a_str(path.filename().string(), hash_);
  if (fs::exists(path)) hash_ ^= hash_file(path);
}

bool StageGate::up_to_date() const {
  if (!fs::exists(marker_)) return false;
  return read_text_file(marker_) == format_msg("%016llx\n", (unsigned long long)hash_);
}

void StageGate::commit() const {
  fs::create_directories(marker_.parent_path());
  write_text_file(marker_, format_msg("%016llx\n", (unsigned long long)hash_));
}

// ---------------------------------------------------------------------------
// shared layout helpers

namespace {

struct Layout {
  fs::path exp;
  explicit Layout(const PipelineConfig& config) : exp(config.experiment_dir()) {}
  fs::path features() const { return exp / "features"; }
  fs::path vad_mask() const { return exp / "features" / "vad.tsv"; }
  fs::path manifest() const { return exp / "manifest.tsv"; }
  fs::path refs() const { return exp / "refs.tsv"; }
  fs::path ref_words() const { return exp / "ref_words.tsv"; }
  fs::path gold_boundaries() const { return exp / "gold_boundaries.tsv"; }
  fs::path text_dir() const { return exp / "text"; }
  fs::path text_file() const { return exp / "text" / "text.txt"; }
  fs::path lexicon() const { return exp / "text" / "lexicon.tsv"; }
  fs::path inventory() const { return exp / "text" / "inventory.txt"; }
  fs::path phones() const { return exp / "text" / "phones.txt"; }
  fs::path phones_sil() const { return exp / "text" / "phones_sil.txt"; }
  fs::path models() const { return exp / "models"; }
  fs::path kmeans() const { return exp / "models" / "kmeans.bin"; }
  fs::path pca() const { return exp / "models" / "pca.bin"; }
  fs::path lm_phone() const { return exp / "models" / "lm_phone.bin"; }
  fs::path lm_word() const { return exp / "models" / "lm_word.bin"; }
  fs::path segments() const { return exp / "segments"; }
  fs::path boundaries() const { return exp / "segments" / "boundaries.tsv"; }
  fs::path segmentation_json() const { return exp / "segments" / "segmentation.json"; }
  fs::path gan_dir() const { return exp / "gan"; }
  fs::path select_dir() const { return exp / "select"; }
  fs::path selection() const { return exp / "select" / "selection.json"; }
  fs::path tune_dir() const { return exp / "tune"; }
  fs::path tuning() const { return exp / "tune" / "tuning.json"; }
  fs::path decode_dir() const { return exp / "decode"; }
  fs::path decode_tsv(const std::string& split) const {
    return exp / "decode" / (split + ".tsv");
  }
  fs::path selftrain_dir() const { return exp / "selftrain"; }
  fs::path eval_dir() const { return exp / "eval"; }
  fs::path synth_json() const { return exp / "synth.json"; }
};

void require(bool ok, const std::string& stage_needed) {
  if (!ok) throw PrerequisiteError("requires: " + stage_needed);
}

json load_json(const fs::path& path) { return json::parse(read_text_file(path)); }

void save_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<FeatureSequence> load_split(const Layout& layout, const Manifest& manifest,
                                        const std::string& split, bool normalized = true) {
  FeatureArchive archive = read_archive(layout.features());
  std::vector<FeatureSequence> out;
  for (const auto& id : manifest.ids(split)) {
    FeatureSequence f = load_utterance(archive, id);
    if (normalized) apply_normalization(archive, f);
    out.push_back(std::move(f));
  }
  return out;
}

// segment representations are stored as a float archive plus boundary lists
std::vector<SegmentSequence> load_segments(const Layout& layout, const Manifest& manifest,
                                           const std::string& split) {
  FeatureArchive archive = read_archive(layout.segments());
  FeatureArchive feats = read_archive(layout.features());
  std::map<std::string, std::vector<int>> bounds;
  for (auto& [id, b] : read_boundaries(layout.boundaries())) bounds[id] = b;
  std::vector<SegmentSequence> out;
  for (const auto& id : manifest.ids(split)) {
    FeatureSequence reps = load_utterance(archive, id);
    const ArchiveEntry* fe = feats.find(id);
    UASR_REQUIRE(fe, "segments: utterance missing from feature archive: " + id);
    SegmentSequence seq;
    seq.utterance_id = id;
    seq.reps = to_double(reps.frames);
    Segmentation seg;
    seg.cluster_ids.assign(size_t(fe->num_frames), 0);
    seg.boundaries = bounds[id];
    seq.segment_spans = seg.spans();
    out.push_back(std::move(seq));
  }
  return out;
}

PhonemeSequence parse_phone_line(const std::string& symbols, const PhonemeInventory& inventory,
                                 const std::string& id) {
  return to_indices(split_ws(symbols), inventory, id);
}

std::map<std::string, PhonemeSequence> load_refs(const Layout& layout,
                                                 const PhonemeInventory& inventory) {
  std::map<std::string, PhonemeSequence> refs;
  for (const auto& line : read_lines(layout.refs())) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw Error("bad refs line: " + line);
    refs[cols[0]] = parse_phone_line(cols[1], inventory, cols[0]);
  }
  return refs;
}

GanConfig gan_config_from(const PipelineConfig& config) {
  GanConfig g;
  g.lambda_gp = config.get_double("gan.lambda");
  g.gamma_sp = config.get_double("gan.gamma");
  g.eta_pd = config.get_double("gan.eta");
  g.lr_gen = config.get_double("gan.lr_gen");
  g.lr_disc = config.get_double("gan.lr_disc");
  g.adam_beta1 = config.get_double("gan.beta1");
  g.adam_beta2 = config.get_double("gan.beta2");
  g.weight_decay_disc = config.get_double("gan.weight_decay_disc");
  g.batch_size = int(config.get_int("gan.batch"));
  g.total_steps = config.get_int("gan.steps");
  g.checkpoint_interval = config.get_int("gan.checkpoint_interval");
  g.seed = config.seed();
  g.hidden_dim = int(config.get_int("gan.hidden"));
  g.dropout_p = config.get_double("gan.dropout");
  g.minimax_gen_loss = config.get_bool("gan.minimax");
  return g;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// stages

bool stage_synth(const PipelineConfig& config, bool force) {
  Layout layout(config);
  StageGate gate(layout.exp, "synth");
  gate.add_config(config.serialize_section("synth"));
  gate.add_config(config.serialize_section("project"));
  gate.add_config(config.serialize_section("data"));
  if (!force && gate.up_to_date()) return false;

  SyntheticSpec spec;
  spec.num_phones = int(config.get_int("synth.num_phones"));
  spec.num_words = int(config.get_int("synth.num_words"));
  spec.feature_dim = int(config.get_int("synth.feature_dim"));
  spec.noise_level = config.get_double("synth.noise_level");
  spec.mean_margin = config.get_double("synth.mean_margin");
  spec.silence_prob_interior = config.get_double("synth.silence_prob_interior");
  spec.min_frames_per_phone = int(config.get_int("synth.min_frames_per_phone"));
  spec.max_frames_per_phone = int(config.get_int("synth.max_frames_per_phone"));
  spec.min_words_per_sentence = int(config.get_int("synth.min_words"));
  spec.max_words_per_sentence = int(config.get_int("synth.max_words"));
  spec.min_word_len = int(config.get_int("synth.min_word_len"));
  spec.max_word_len = int(config.get_int("synth.max_word_len"));
  spec.min_sil_frames = int(config.get_int("synth.min_sil_frames"));
  spec.max_sil_frames = int(config.get_int("synth.max_sil_frames"));
  spec.seed = config.seed();
  int n = int(config.get_int("synth.n_utterances"));

  SyntheticCorpus corpus = generate_synthetic(spec, n, config.get_bool("synth.matched"));
  ProbeResult probe = linear_probe(corpus);
  log_info("synth: probe frame accuracy %.4f, probe PER %.4f", probe.frame_accuracy, probe.per);

  FeatureArchive archive = write_archive(corpus.features, layout.features());

  Manifest manifest;
  int n_train = int(std::lround(config.get_double("data.train_frac") * n));
  int n_dev = int(std::lround(config.get_double("data.dev_frac") * n));
  n_train = std::min(n_train, n);
  n_dev = std::min(n_dev, n - n_train);
  for (int u = 0; u < n; ++u) {
    const std::string& id = corpus.features[size_t(u)].utterance_id;
    if (u < n_train)
      manifest.splits["train"].push_back(id);
    else if (u < n_train + n_dev)
      manifest.splits["dev"].push_back(id);
    else
      manifest.splits["test"].push_back(id);
  }
  if (manifest.splits["dev"].empty()) manifest.splits["dev"] = manifest.splits["train"];
  if (manifest.splits["test"].empty()) manifest.splits["test"] = manifest.splits["dev"];
  manifest.save(layout.manifest());
  fit_normalization(archive, manifest.ids("train"));

  {
    auto os = open_out(layout.refs(), false);
    for (const auto& ref : corpus.references)
      os << ref.utterance_id << "\t" << join(to_symbols(ref, corpus.inventory), " ") << "\n";
  }
  {
    auto os = open_out(layout.ref_words(), false);
    for (size_t u = 0; u < corpus.ref_words.size(); ++u)
      os << corpus.features[u].utterance_id << "\t" << join(corpus.ref_words[u], " ") << "\n";
  }
  {
    std::vector<std::pair<std::string, std::vector<int>>> bounds;
    for (size_t u = 0; u < corpus.gold_boundaries.size(); ++u)
      bounds.emplace_back(corpus.features[u].utterance_id, corpus.gold_boundaries[u]);
    write_boundaries(layout.gold_boundaries(), bounds);
  }
  fs::create_directories(layout.text_dir());
  {
    auto os = open_out(layout.text_file(), false);
    for (const auto& sent : corpus.text_corpus) os << join(sent, " ") << "\n";
  }
  write_lexicon(corpus.lexicon, layout.lexicon());

  json j;
  j["probe_frame_accuracy"] = probe.frame_accuracy;
  j["probe_per"] = probe.per;
  j["n_utterances"] = n;
  j["num_phones"] = spec.num_phones;
  j["feature_dim"] = spec.feature_dim;
  save_json(layout.synth_json(), j);
  gate.commit();
  return true;
}

bool stage_vad(const PipelineConfig& config, bool force) {
  Layout layout(config);
  std::string wav_dir = config.get_string("data.wav_dir");
  if (wav_dir.empty()) throw ConfigError("vad: data.wav_dir is not set");
  StageGate gate(layout.exp, "vad");
  gate.add_config(config.serialize_section("vad"));
  gate.add_config(config.serialize_section("data"));
  if (!force && gate.up_to_date()) return false;

  fs::create_directories(layout.features());
  std::string external = config.get_string("data.external_vad");
  if (!external.empty()) {
    auto masks = read_vad_mask(external);
    write_vad_mask(layout.vad_mask(), masks);
    gate.commit();
    return true;
  }

  VadConfig vad;
  vad.k = config.get_double("vad.k");
  vad.hangover_frames = int(config.get_int("vad.hangover"));
  vad.smooth_width = int(config.get_int("vad.smooth"));

  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(wav_dir))
    if (entry.path().extension() == ".wav") wavs.push_back(entry.path());
  std::sort(wavs.begin(), wavs.end());
  UASR_REQUIRE(!wavs.empty(), "vad: no .wav files in " + wav_dir);

  std::vector<std::pair<std::string, VoicedIntervals>> masks;
  for (const auto& path : wavs) {
    AudioWave wave = load_audio(path);
    masks.emplace_back(wave.utterance_id, detect_voice(wave, vad));
  }
  write_vad_mask(layout.vad_mask(), masks);
  gate.commit();
  return true;
}

bool stage_featurize(const PipelineConfig& config, bool force) {
  Layout layout(config);
  StageGate gate(layout.exp, "featurize");
  gate.add_config(config.serialize_section("mfcc"));
  gate.add_config(config.serialize_section("data"));
  gate.add_input_file(layout.vad_mask());
  if (!force && gate.up_to_date()) return false;

  std::string wav_dir = config.get_string("data.wav_dir");
  std::string external = config.get_string("data.external_features");

  if (!wav_dir.empty()) {
    require(fs::exists(layout.vad_mask()), "vad");
    std::map<std::string, VoicedIntervals> masks;
    for (auto& [id, vi] : read_vad_mask(layout.vad_mask())) masks[id] = vi;

    MfccConfig mfcc;
    mfcc.num_ceps = int(config.get_int("mfcc.num_ceps"));
    mfcc.num_mel = int(config.get_int("mfcc.num_mel"));
    mfcc.add_deltas = config.get_bool("mfcc.deltas");

    std::vector<fs::path> wavs;
    for (const auto& entry : fs::directory_iterator(wav_dir))
      if (entry.path().extension() == ".wav") wavs.push_back(entry.path());
    std::sort(wavs.begin(), wavs.end());

    std::vector<FeatureSequence> features;
    for (const auto& path : wavs) {
      AudioWave wave = load_audio(path);
      if (wave.sample_rate != config.get_int("data.sample_rate") &&
          !config.get_bool("data.allow_other_sample_rate"))
        throw Error(format_msg("featurize: %s has sample rate %d, want %ld", path.c_str(),
                               wave.sample_rate, config.get_int("data.sample_rate")));
      auto it = masks.find(wave.utterance_id);
      VoicedIntervals vi = it != masks.end() ? it->second : detect_voice(wave);
      AudioWave voiced = remove_silence(wave, vi);
      if (voiced.samples.empty()) {
        log_warn("featurize: %s is fully silent, dropped", wave.utterance_id.c_str());
        continue;
      }
      features.push_back(compute_features(voiced, mfcc));
    }
    UASR_REQUIRE(!features.empty(), "featurize: every utterance was dropped");
    write_archive(features, layout.features());
  } else if (!external.empty()) {
    FeatureArchive src = read_archive(external);
    std::vector<FeatureSequence> features = load_all(src);
    write_archive(features, layout.features());
  } else {
    // synthetic experiments write the archive in stage_synth
    require(fs::exists(layout.features() / "manifest.tsv"), "synth");
  }

  FeatureArchive archive = read_archive(layout.features());
  Manifest manifest;
  if (fs::exists(layout.manifest())) {
    manifest = Manifest::load(layout.manifest());
  } else {
    int n = int(archive.manifest.size());
    int n_train = int(std::lround(config.get_double("data.train_frac") * n));
    int n_dev = int(std::lround(config.get_double("data.dev_frac") * n));
    n_train = std::min(n_train, n);
    n_dev = std::min(n_dev, n - n_train);
    for (int u = 0; u < n; ++u) {
      const std::string& id = archive.manifest[size_t(u)].utterance_id;
      if (u < n_train)
        manifest.splits["train"].push_back(id);
      else if (u < n_train + n_dev)
        manifest.splits["dev"].push_back(id);
      else
        manifest.splits["test"].push_back(id);
    }
    if (manifest.splits["dev"].empty()) manifest.splits["dev"] = manifest.splits["train"];
    if (manifest.splits["test"].empty()) manifest.splits["test"] = manifest.splits["dev"];
    manifest.save(layout.manifest());
  }
  if (!archive.has_stats()) fit_normalization(archive, manifest.ids("train"));
  gate.commit();
  return true;
}

bool stage_cluster(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.features() / "manifest.tsv"), "featurize");
  StageGate gate(layout.exp, "cluster");
  gate.add_config(config.serialize_section("cluster"));
  gate.add_input_file(layout.features() / "manifest.tsv");
  gate.add_input_file(layout.features() / "stats.bin");
  if (!force && gate.up_to_date()) return false;

  Manifest manifest = Manifest::load(layout.manifest());
  std::vector<FeatureSequence> train = load_split(layout, manifest, "train");
  KMeansModel model = fit_kmeans(train, int(config.get_int("cluster.k")),
                                 int(config.get_int("cluster.max_iters")), config.seed());
  fs::create_directories(layout.models());
  save_kmeans(model, layout.kmeans());
  gate.commit();
  return true;
}

bool stage_segment(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.kmeans()), "cluster");
  StageGate gate(layout.exp, "segment");
  gate.add_config(config.serialize_section("pca"));
  gate.add_input_file(layout.kmeans());
  gate.add_input_file(layout.features() / "manifest.tsv");
  if (!force && gate.up_to_date()) return false;

  Manifest manifest = Manifest::load(layout.manifest());
  KMeansModel kmeans = load_kmeans(layout.kmeans());
  std::vector<FeatureSequence> train = load_split(layout, manifest, "train");
  PcaModel pca = fit_pca(train, int(config.get_int("pca.rank")));
  save_pca(pca, layout.pca());

  std::vector<FeatureSequence> reps_out;
  std::vector<std::pair<std::string, std::vector<int>>> bounds;
  for (const auto& [split, ids] : manifest.splits) {
    (void)split;
    for (const auto& id : ids) {
      FeatureArchive archive = read_archive(layout.features());
      FeatureSequence f = load_utterance(archive, id);
      apply_normalization(archive, f);
      Segmentation seg = boundaries_from_ids(assign(kmeans, f));
      SegmentSequence reps = build_segment_reps(f, seg, pca);
      FeatureSequence store;
      store.utterance_id = id;
      store.frames = to_float(reps.reps);
      reps_out.push_back(std::move(store));
      bounds.emplace_back(id, seg.boundaries);
    }
  }
  write_archive(reps_out, layout.segments());
  std::sort(bounds.begin(), bounds.end());
  write_boundaries(layout.boundaries(), bounds);

  json j;
  j["num_utterances"] = reps_out.size();
  j["pca_rank"] = pca.output_dim();
  if (fs::exists(layout.gold_boundaries())) {
    std::map<std::string, std::vector<int>> gold;
    for (auto& [id, b] : read_boundaries(layout.gold_boundaries())) gold[id] = b;
    long matched = 0, pred_total = 0, gold_total = 0;
    for (const auto& [id, b] : bounds) {
      auto it = gold.find(id);
      if (it == gold.end()) continue;
      BoundaryScore s = boundary_prf(b, it->second, 1);
      matched += s.matched;
      pred_total += long(b.size());
      gold_total += long(it->second.size());
    }
    double precision = pred_total ? double(matched) / double(pred_total) : 0.0;
    double recall = gold_total ? double(matched) / double(gold_total) : 0.0;
    j["boundary_precision"] = precision;
    j["boundary_recall"] = recall;
    j["boundary_f1"] =
        precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  save_json(layout.segmentation_json(), j);
  gate.commit();
  return true;
}

bool stage_preptext(const PipelineConfig& config, bool force) {
  Layout layout(config);
  std::string text_file = config.get_string("textprep.text_file");
  std::string lexicon_file = config.get_string("textprep.lexicon_file");
  if (text_file.empty()) text_file = layout.text_file().string();
  if (lexicon_file.empty()) lexicon_file = layout.lexicon().string();
  require(fs::exists(text_file), "synth (or set textprep.text_file)");
  require(fs::exists(lexicon_file), "synth (or set textprep.lexicon_file)");

  StageGate gate(layout.exp, "preptext");
  gate.add_config(config.serialize_section("textprep"));
  gate.add_input_file(text_file);
  gate.add_input_file(lexicon_file);
  if (!force && gate.up_to_date()) return false;

  Lexicon lexicon = read_lexicon(lexicon_file);
  if (fs::path(lexicon_file) != layout.lexicon()) write_lexicon(lexicon, layout.lexicon());

  OovPolicy policy;
  std::string policy_name = config.get_string("textprep.oov_policy");
  if (policy_name == "skip-sentence")
    policy = OovPolicy::kSkipSentence;
  else if (policy_name == "drop-word")
    policy = OovPolicy::kDropWord;
  else if (policy_name == "error")
    policy = OovPolicy::kError;
  else
    throw ConfigError("textprep.oov_policy: want skip-sentence|drop-word|error");

  // first pass with an unpruned inventory to collect phoneme counts
  std::vector<std::vector<std::string>> sentences;
  for (const auto& line : read_lines(text_file)) {
    auto words = split_ws(line);
    if (!words.empty()) sentences.push_back(words);
  }
  UASR_REQUIRE(!sentences.empty(), "preptext: empty text corpus");

  std::vector<std::vector<std::string>> phonemized;
  {
    std::vector<std::vector<std::string>> all_prons;
    for (const auto& [w, pron] : lexicon.entries) all_prons.push_back(pron);
    PhonemeInventory full = build_inventory(all_prons, 0);
    for (const auto& sent : sentences) {
      auto r = phonemize(sent, lexicon, full, policy);
      if (r.skipped || r.phones.empty()) continue;
      phonemized.push_back(to_symbols(r.phones, full));
    }
  }
  UASR_REQUIRE(!phonemized.empty(), "preptext: no sentence survived phonemization");
  PhonemeInventory inventory =
      build_inventory(phonemized, config.get_int("textprep.min_count"));
  write_inventory(inventory, layout.inventory());

  // second pass against the pruned inventory; affected sentences drop out
  long dropped = 0;
  std::vector<PhonemeSequence> phones, phones_sil;
  double sil_rate = config.get_double("textprep.sil_rate");
  uint64_t seed = derive_seed(config.seed(), 0x73696c);
  long line_no = 0;
  for (const auto& sent : sentences) {
    ++line_no;
    PhonemizeResult r;
    try {
      r = phonemize(sent, lexicon, inventory, policy);
    } catch (const Error&) {
      throw;
    }
    if (r.skipped || r.phones.empty()) {
      ++dropped;
      continue;
    }
    phones.push_back(r.phones);
    phones_sil.push_back(
        insert_silence(r.phones, r.word_boundaries, sil_rate, derive_seed(seed, uint64_t(line_no))));
  }
  UASR_REQUIRE(!phones.empty(), "preptext: every sentence was dropped");
  write_phone_corpus(phones, inventory, layout.phones());
  write_phone_corpus(phones_sil, inventory, layout.phones_sil());

  json j;
  j["sentences"] = sentences.size();
  j["kept"] = phones.size();
  j["dropped"] = dropped;
  j["inventory_size"] = inventory.size();
  save_json(layout.text_dir() / "textprep.json", j);
  gate.commit();
  return true;
}

bool stage_train_lm(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.phones()), "preptext");
  StageGate gate(layout.exp, "train-lm");
  gate.add_config(config.serialize_section("lm"));
  gate.add_input_file(layout.phones());
  gate.add_input_file(layout.text_file());
  if (!force && gate.up_to_date()) return false;

  int order = int(config.get_int("lm.order"));
  long prune = config.get_int("lm.prune_min_count");

  std::vector<std::vector<std::string>> phone_sentences;
  for (const auto& line : read_lines(layout.phones())) {
    auto toks = split_ws(line);
    if (!toks.empty()) phone_sentences.push_back(toks);
  }
  NGramLm phone_lm = train_ngram(phone_sentences, order, prune);
  fs::create_directories(layout.models());
  save_ngram(phone_lm, layout.lm_phone());
  export_arpa(phone_lm, layout.models() / "lm_phone.arpa");

  std::vector<std::vector<std::string>> word_sentences;
  for (const auto& line : read_lines(layout.text_file())) {
    auto toks = split_ws(line);
    if (!toks.empty()) word_sentences.push_back(toks);
  }
  NGramLm word_lm = train_ngram(word_sentences, order, prune);
  save_ngram(word_lm, layout.lm_word());
  gate.commit();
  return true;
}

namespace {

struct GanRunSpec {
  std::string run_id;
  GanConfig config;
};

std::vector<GanRunSpec> gan_runs(const PipelineConfig& config) {
  std::vector<GanRunSpec> runs;
  GanConfig base = gan_config_from(config);
  if (!config.get_bool("gan.sweep")) {
    runs.push_back({"single", base});
    return runs;
  }
  auto lambdas = config.get_double_list("gan.sweep_lambdas");
  auto gammas = config.get_double_list("gan.sweep_gammas");
  auto etas = config.get_double_list("gan.sweep_etas");
  long seeds = config.get_int("gan.sweep_seeds");
  for (double l : lambdas)
    for (double g : gammas)
      for (double e : etas)
        for (long s = 0; s < seeds; ++s) {
          GanConfig c = base;
          c.lambda_gp = l;
          c.gamma_sp = g;
          c.eta_pd = e;
          c.seed = derive_seed(base.seed, uint64_t(s) + 1);
          GanRunSpec spec;
          spec.config = c;
          spec.run_id = "l" + format_double(l) + "_g" + format_double(g) + "_e" +
                        format_double(e) + "_s" + std::to_string(s);
          runs.push_back(std::move(spec));
        }
  return runs;
}

}  // namespace

bool stage_train_gan(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.boundaries()), "segment");
  require(fs::exists(layout.phones_sil()), "preptext");
  require(fs::exists(layout.lm_phone()), "train-lm");
  StageGate gate(layout.exp, "train-gan");
  gate.add_config(config.serialize_section("gan"));
  gate.add_input_file(layout.boundaries());
  gate.add_input_file(layout.phones_sil());
  gate.add_input_file(layout.lm_phone());
  if (!force && gate.up_to_date()) return false;

  Manifest manifest = Manifest::load(layout.manifest());
  PhonemeInventory inventory = read_inventory(layout.inventory());
  NGramLm lm = load_ngram(layout.lm_phone());
  std::vector<SegmentSequence> train = load_segments(layout, manifest, "train");
  std::vector<SegmentSequence> dev = load_segments(layout, manifest, "dev");
  std::vector<PhonemeSequence> text = read_phone_corpus(layout.phones_sil(), inventory);

  fs::create_directories(layout.gan_dir());
  json runs_json = json::array();
  for (const auto& run : gan_runs(config)) {
    validate_gan_config(run.config);
    fs::path run_dir = layout.gan_dir() / run.run_id;
    fs::create_directories(run_dir);
    log_info("gan: training run %s (%ld steps)", run.run_id.c_str(), run.config.total_steps);
    TrainResult result = train_gan(run.config, train, text, lm, inventory, &dev);

    std::string log_lines;
    for (const auto& r : result.log) {
      json rec;
      rec["step"] = r.step;
      rec["kind"] = std::string(1, r.kind);
      rec["disc_loss"] = r.disc_loss;
      rec["gen_loss"] = r.gen_loss;
      rec["l_gp"] = r.l_gp;
      rec["l_sp"] = r.l_sp;
      rec["l_pd"] = r.l_pd;
      log_lines += rec.dump() + "\n";
    }
    write_text_file(run_dir / "log.jsonl", log_lines);

    for (const auto& ckpt : result.checkpoints)
      save_checkpoint(ckpt, run_dir / format_msg("ckpt_%06ld.bin", ckpt.step));
    runs_json.push_back(run.run_id);
  }
  save_json(layout.gan_dir() / "runs.json", runs_json);
  gate.commit();
  return true;
}

bool stage_select(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.gan_dir() / "runs.json"), "train-gan");
  StageGate gate(layout.exp, "select");
  gate.add_input_file(layout.gan_dir() / "runs.json");
  gate.add_config(config.serialize_section("gan"));
  if (!force && gate.up_to_date()) return false;

  json runs = load_json(layout.gan_dir() / "runs.json");
  std::vector<CandidateReport> reports;
  std::map<std::string, std::string> candidate_file;
  for (const auto& run : runs) {
    fs::path run_dir = layout.gan_dir() / run.get<std::string>();
    std::vector<fs::path> ckpts;
    for (const auto& entry : fs::directory_iterator(run_dir))
      if (entry.path().extension() == ".bin") ckpts.push_back(entry.path());
    std::sort(ckpts.begin(), ckpts.end());
    for (const auto& path : ckpts) {
      Checkpoint ckpt = load_checkpoint(path);
      if (!ckpt.metric.valid || ckpt.step == 0) continue;
      CandidateReport r;
      r.config_id = run.get<std::string>() + "@" + std::to_string(ckpt.step);
      r.nll = ckpt.metric.nll;
      r.usage = ckpt.metric.usage;
      r.total_logprob = ckpt.metric.total_logprob;
      reports.push_back(r);
      candidate_file[r.config_id] =
          (fs::path(run.get<std::string>()) / path.filename()).string();
    }
  }
  UASR_REQUIRE(!reports.empty(), "select: no valid checkpoint candidates");

  CandidateReport anchor = select_anchor(reports);
  std::vector<CandidateReport> survivors = filter_candidates(reports, anchor);
  CandidateReport chosen = select_final(survivors);

  std::set<std::string> surviving;
  for (const auto& s : survivors) surviving.insert(s.config_id);
  std::string sweep_lines;
  for (const auto& r : reports) {
    json rec;
    rec["config_id"] = r.config_id;
    rec["nll"] = r.nll;
    rec["usage"] = r.usage;
    rec["adjusted"] = r.usage > 0 ? r.adjusted_nll() : 0.0;
    rec["total_logprob"] = r.total_logprob;
    rec["survived"] = surviving.count(r.config_id) > 0;
    rec["chosen"] = r.config_id == chosen.config_id;
    sweep_lines += rec.dump() + "\n";
  }
  fs::create_directories(layout.select_dir());
  write_text_file(layout.select_dir() / "sweep.jsonl", sweep_lines);

  json sel;
  sel["config_id"] = chosen.config_id;
  sel["checkpoint"] = candidate_file[chosen.config_id];
  sel["nll"] = chosen.nll;
  sel["usage"] = chosen.usage;
  sel["adjusted"] = chosen.adjusted_nll();
  sel["total_logprob"] = chosen.total_logprob;
  sel["anchor"] = anchor.config_id;
  sel["num_candidates"] = reports.size();
  sel["num_survivors"] = survivors.size();
  save_json(layout.selection(), sel);
  gate.commit();
  return true;
}

namespace {

struct DecodeAssets {
  PhonemeInventory inventory;
  NGramLm phone_lm, word_lm;
  Lexicon lexicon;
  GeneratorParams generator;
  bool word_unit = true;

  DecoderContext context() const {
    if (word_unit) return build_decoder(lexicon, inventory, word_lm);
    return build_decoder(make_phoneme_lexicon(inventory), inventory, phone_lm);
  }
};

DecodeAssets load_decode_assets(const PipelineConfig& config, const Layout& layout) {
  require(fs::exists(layout.selection()), "select");
  DecodeAssets a;
  a.inventory = read_inventory(layout.inventory());
  a.phone_lm = load_ngram(layout.lm_phone());
  a.word_lm = load_ngram(layout.lm_word());
  a.lexicon = read_lexicon(layout.lexicon());
  json sel = load_json(layout.selection());
  Checkpoint ckpt =
      load_checkpoint(layout.gan_dir() / sel["checkpoint"].get<std::string>());
  a.generator = ckpt.generator;
  std::string unit = config.get_string("decode.unit");
  if (unit != "word" && unit != "phoneme")
    throw ConfigError("decode.unit: want word|phoneme");
  a.word_unit = unit == "word";
  return a;
}

}  // namespace

bool stage_tune_decode(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.selection()), "select");
  StageGate gate(layout.exp, "tune-decode");
  gate.add_config(config.serialize_section("decode"));
  gate.add_input_file(layout.selection());
  if (!force && gate.up_to_date()) return false;

  DecodeAssets assets = load_decode_assets(config, layout);
  Manifest manifest = Manifest::load(layout.manifest());
  std::vector<SegmentSequence> dev = load_segments(layout, manifest, "dev");
  UASR_REQUIRE(!dev.empty(), "tune-decode: empty dev split");
  DecoderContext ctx = assets.context();

  std::vector<PhonemeSequence> viterbi;
  std::vector<PosteriorSequence> posteriors;
  for (const auto& s : dev) {
    viterbi.push_back(viterbi_transcribe(assets.generator, s));
    posteriors.push_back(generator_forward(assets.generator, s, false, 0));
  }

  auto evaluate_cells = [&](const std::vector<std::pair<double, double>>& cells) {
    std::vector<TuneCandidate> candidates;
    for (auto [scale, nu] : cells) {
      TuneCandidate cand;
      cand.config.acoustic_scale = scale;
      cand.config.blank_bonus = nu;
      cand.config.beam_size = int(config.get_int("decode.beam_dev"));
      for (const auto& post : posteriors) {
        EmissionSequence em = build_emissions(post, cand.config, assets.inventory.sil_index);
        cand.decoded.push_back(decode_beam(em, ctx, cand.config));
      }
      candidates.push_back(std::move(cand));
    }
    return candidates;
  };

  std::vector<std::pair<double, double>> cells;
  double sstep = config.get_double("decode.grid_scale_step");
  double nstep = config.get_double("decode.grid_nu_step");
  for (double s = 0.0; s <= 8.0 + 1e-9; s += sstep)
    for (double nu = -3.0; nu <= 8.0 + 1e-9; nu += nstep) cells.emplace_back(s, nu);

  std::vector<TuneCandidate> candidates = evaluate_cells(cells);
  TuneOutcome outcome =
      tune_decode(candidates, viterbi, assets.phone_lm, assets.inventory,
                  config.get_double("decode.mu"));

  json cells_json = json::array();
  for (size_t i = 0; i < candidates.size(); ++i) {
    json c;
    c["acoustic_scale"] = candidates[i].config.acoustic_scale;
    c["nu"] = candidates[i].config.blank_bonus;
    c["objective"] = outcome.objectives[i];
    cells_json.push_back(c);
  }

  if (config.get_bool("decode.refine")) {
    auto refined = decode_refinement_grid(outcome.best.acoustic_scale, outcome.best.blank_bonus);
    std::vector<TuneCandidate> extra = evaluate_cells(refined);
    TuneOutcome refined_outcome =
        tune_decode(extra, viterbi, assets.phone_lm, assets.inventory,
                    config.get_double("decode.mu"));
    for (size_t i = 0; i < extra.size(); ++i) {
      json c;
      c["acoustic_scale"] = extra[i].config.acoustic_scale;
      c["nu"] = extra[i].config.blank_bonus;
      c["objective"] = refined_outcome.objectives[i];
      cells_json.push_back(c);
    }
    double best_coarse = *std::min_element(outcome.objectives.begin(), outcome.objectives.end());
    double best_refined =
        *std::min_element(refined_outcome.objectives.begin(), refined_outcome.objectives.end());
    if (best_refined < best_coarse) outcome.best = refined_outcome.best;
  }

  json j;
  j["acoustic_scale"] = outcome.best.acoustic_scale;
  j["nu"] = outcome.best.blank_bonus;
  j["unit"] = assets.word_unit ? "word" : "phoneme";
  j["cells"] = cells_json;
  save_json(layout.tuning(), j);
  gate.commit();
  return true;
}

bool stage_decode(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.tuning()), "tune-decode");
  StageGate gate(layout.exp, "decode");
  gate.add_config(config.serialize_section("decode"));
  gate.add_input_file(layout.tuning());
  gate.add_input_file(layout.selection());
  if (!force && gate.up_to_date()) return false;

  DecodeAssets assets = load_decode_assets(config, layout);
  Manifest manifest = Manifest::load(layout.manifest());
  DecoderContext ctx = assets.context();
  json tuning = load_json(layout.tuning());

  DecodeConfig base;
  base.acoustic_scale = tuning["acoustic_scale"].get<double>();
  base.blank_bonus = tuning["nu"].get<double>();

  fs::create_directories(layout.decode_dir());
  for (const auto& [split, ids] : manifest.splits) {
    DecodeConfig cfg = base;
    cfg.beam_size = int(split == "train" ? config.get_int("decode.beam_pseudo")
                                         : config.get_int("decode.beam_final"));
    std::vector<SegmentSequence> segs = load_segments(layout, manifest, split);
    auto os = open_out(layout.decode_tsv(split), false);
    for (const auto& s : segs) {
      PosteriorSequence post = generator_forward(assets.generator, s, false, 0);
      EmissionSequence em = build_emissions(post, cfg, assets.inventory.sil_index);
      DecodeResult r = decode_beam(em, ctx, cfg);
      std::vector<std::string> phones;
      for (int p : r.phones.phones) phones.push_back(assets.inventory.symbol(p));
      os << s.utterance_id << "\t" << join(r.words, " ") << "\t" << join(phones, " ") << "\t"
         << r.total_score << "\n";
    }
  }
  gate.commit();
  return true;
}

namespace {

std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>>
read_decode_tsv(const fs::path& path) {
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 4) throw Error("bad decode line: " + line);
    out[cols[0]] = {split_ws(cols[1]), split_ws(cols[2])};
  }
  return out;
}

}  // namespace

bool stage_self_train(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.decode_tsv("train")), "decode");
  StageGate gate(layout.exp, "self-train");
  gate.add_config(config.serialize_section("selftrain"));
  gate.add_input_file(layout.decode_tsv("train"));
  if (!force && gate.up_to_date()) return false;

  PhonemeInventory inventory = read_inventory(layout.inventory());
  Manifest manifest = Manifest::load(layout.manifest());
  std::vector<FeatureSequence> features = load_split(layout, manifest, "train");
  NGramLm phone_lm = load_ngram(layout.lm_phone());

  auto decoded = read_decode_tsv(layout.decode_tsv("train"));
  std::vector<PhonemeSequence> pseudo;
  for (const auto& f : features) {
    auto it = decoded.find(f.utterance_id);
    UASR_REQUIRE(it != decoded.end(), "self-train: missing decode for " + f.utterance_id);
    pseudo.push_back(to_indices(it->second.second, inventory, f.utterance_id));
  }

  std::vector<PhonemeSequence> refs;
  bool have_refs = fs::exists(layout.refs());
  std::map<std::string, PhonemeSequence> ref_map;
  if (have_refs) {
    ref_map = load_refs(layout, inventory);
    for (const auto& f : features) refs.push_back(ref_map.at(f.utterance_id));
  }

  SelfTrainInputs inputs;
  inputs.features = &features;
  inputs.pseudo_labels = &pseudo;
  inputs.inventory = &inventory;
  inputs.phone_lm = &phone_lm;
  inputs.references = have_refs ? &refs : nullptr;
  json tuning = load_json(layout.tuning());
  inputs.decode_config.acoustic_scale = tuning["acoustic_scale"].get<double>();
  inputs.decode_config.blank_bonus = tuning["nu"].get<double>();
  inputs.decode_config.beam_size = int(config.get_int("decode.beam_pseudo"));
  inputs.hmm_config.states_per_phoneme = int(config.get_int("selftrain.hmm_states"));
  inputs.hmm_config.num_components = int(config.get_int("selftrain.hmm_components"));
  inputs.hmm_config.iterations = int(config.get_int("selftrain.hmm_iterations"));
  inputs.ctc_config.hidden_dim = int(config.get_int("selftrain.ctc_hidden"));
  inputs.ctc_config.kernel = int(config.get_int("selftrain.ctc_kernel"));
  inputs.ctc_config.total_steps = config.get_int("selftrain.ctc_steps");
  inputs.ctc_config.lr = config.get_double("selftrain.ctc_lr");
  inputs.ctc_config.batch_size = int(config.get_int("selftrain.ctc_batch"));
  inputs.ctc_config.seed = config.seed();

  PcaModel pca;
  GanConfig gan_config = gan_config_from(config);
  std::vector<PhonemeSequence> text;
  SelfTrainStrategy strategy = parse_strategy(config.get_string("selftrain.strategy"));
  if (strategy == SelfTrainStrategy::kHmmResegmentGan) {
    pca = load_pca(layout.pca());
    text = read_phone_corpus(layout.phones_sil(), inventory);
    inputs.pca = &pca;
    inputs.gan_config = &gan_config;
    inputs.text_corpus = &text;
  }

  SelfTrainResult result = self_train_pipeline(strategy, inputs);

  fs::create_directories(layout.selftrain_dir());
  write_phone_corpus(result.final_labels, inventory, layout.selftrain_dir() / "labels.tsv", true);
  if (result.hmm) save_hmm(*result.hmm, layout.selftrain_dir() / "hmm.bin");
  if (result.ctc) save_ctc(*result.ctc, layout.selftrain_dir() / "ctc.bin");

  json j;
  j["strategy"] = strategy_name(strategy);
  json stages = json::array();
  for (const auto& m : result.metrics) {
    json s;
    s["stage"] = m.stage;
    if (m.per >= 0) s["per"] = m.per;
    stages.push_back(s);
  }
  j["stages"] = stages;
  save_json(layout.selftrain_dir() / "metrics.json", j);
  gate.commit();
  return true;
}

bool stage_evaluate(const PipelineConfig& config, bool force) {
  Layout layout(config);
  require(fs::exists(layout.decode_tsv("test")), "decode");
  StageGate gate(layout.exp, "evaluate");
  gate.add_input_file(layout.decode_tsv("test"));
  gate.add_input_file(layout.selection());
  if (!force && gate.up_to_date()) return false;

  json j;
  j["references"] = fs::exists(layout.refs());
  if (fs::exists(layout.refs())) {
    PhonemeInventory inventory = read_inventory(layout.inventory());
    Manifest manifest = Manifest::load(layout.manifest());
    auto ref_map = load_refs(layout, inventory);

    std::map<std::string, std::vector<std::string>> ref_words;
    if (fs::exists(layout.ref_words()))
      for (const auto& line : read_lines(layout.ref_words())) {
        auto cols = split(line, '\t');
        if (cols.size() == 2) ref_words[cols[0]] = split_ws(cols[1]);
      }

    DecodeAssets assets = load_decode_assets(config, layout);
    for (const std::string split : {"dev", "test"}) {
      if (!fs::exists(layout.decode_tsv(split))) continue;
      auto decoded = read_decode_tsv(layout.decode_tsv(split));
      std::vector<SegmentSequence> segs =
          load_segments(layout, Manifest::load(layout.manifest()), split);

      std::vector<PhonemeSequence> viterbi_hyps, decode_hyps, refs;
      std::vector<ErrorReport> word_reports;
      for (const auto& s : segs) {
        auto rit = ref_map.find(s.utterance_id);
        if (rit == ref_map.end()) continue;
        refs.push_back(rit->second);
        viterbi_hyps.push_back(viterbi_transcribe(assets.generator, s));
        auto dit = decoded.find(s.utterance_id);
        UASR_REQUIRE(dit != decoded.end(), "evaluate: missing decode for " + s.utterance_id);
        decode_hyps.push_back(to_indices(dit->second.second, inventory, s.utterance_id));
        auto wit = ref_words.find(s.utterance_id);
        if (wit != ref_words.end())
          word_reports.push_back(edit_distance(wit->second, dit->second.first));
      }
      if (refs.empty()) continue;
      json sj;
      sj["viterbi_per"] = corpus_per(viterbi_hyps, refs, inventory);
      sj["decode_per"] = corpus_per(decode_hyps, refs, inventory);
      if (!word_reports.empty()) sj["decode_wer"] = accumulate(word_reports).rate();
      j[split] = sj;
    }
  }
  save_json(layout.eval_dir() / "eval.json", j);
  gate.commit();
  return true;
}

// ---------------------------------------------------------------------------
// report

void report_run(const std::filesystem::path& experiment_dir) {
  PipelineConfig dummy;  // layout only needs the path
  Layout layout(dummy);
  layout.exp = experiment_dir;

  json report;
  auto section = [&](const std::string& name, const fs::path& probe,
                     const std::function<json()>& fill) {
    json s;
    s["present"] = fs::exists(probe);
    if (fs::exists(probe)) {
      json content = fill();
      for (auto& [k, v] : content.items()) s[k] = v;
    }
    report[name] = s;
  };

  section("features", layout.features() / "manifest.tsv", [&] {
    json s;
    FeatureArchive archive = read_archive(layout.features());
    s["utterances"] = archive.manifest.size();
    s["dim"] = archive.dim;
    if (fs::exists(layout.synth_json())) s["synth"] = load_json(layout.synth_json());
    return s;
  });
  section("segmentation", layout.segmentation_json(),
          [&] { return load_json(layout.segmentation_json()); });
  section("text", layout.text_dir() / "textprep.json",
          [&] { return load_json(layout.text_dir() / "textprep.json"); });
  section("gan", layout.gan_dir() / "runs.json", [&] {
    json s;
    s["runs"] = load_json(layout.gan_dir() / "runs.json");
    return s;
  });
  section("select", layout.selection(), [&] { return load_json(layout.selection()); });
  section("decode", layout.tuning(), [&] {
    json s;
    json tuning = load_json(layout.tuning());
    s["acoustic_scale"] = tuning["acoustic_scale"];
    s["nu"] = tuning["nu"];
    s["unit"] = tuning["unit"];
    if (fs::exists(layout.eval_dir() / "eval.json"))
      s["eval"] = load_json(layout.eval_dir() / "eval.json");
    return s;
  });
  section("selftrain", layout.selftrain_dir() / "metrics.json",
          [&] { return load_json(layout.selftrain_dir() / "metrics.json"); });

  save_json(experiment_dir / "report.json", report);

  std::string text;
  text += "pipeline report\n===============\n";
  for (auto& [name, s] : report.items()) {
    text += "\n[" + name + "]\n";
    if (!s["present"].get<bool>()) {
      text += "  (absent)\n";
      continue;
    }
    for (auto& [k, v] : s.items()) {
      if (k == "present") continue;
      text += "  " + k + " = " + v.dump() + "\n";
    }
  }
  write_text_file(experiment_dir / "report.txt", text);
}

}  // namespace uasr
