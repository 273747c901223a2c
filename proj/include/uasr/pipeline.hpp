#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

// A stage was invoked before the stages it depends on.
class PrerequisiteError : public Error {
 public:
  explicit PrerequisiteError(const std::string& msg) : Error(msg) {}
};

// Sectioned key=value configuration. Every key is declared in the schema
// with a type, default, and range; unknown keys are rejected at load.
class PipelineConfig {
 public:
  PipelineConfig();  // defaults

  static PipelineConfig load(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});
  static PipelineConfig from_overrides(const std::vector<std::string>& overrides);

  void set(const std::string& dotted_key, const std::string& value);  // validates

  const std::string& get_string(const std::string& dotted_key) const;
  long get_int(const std::string& dotted_key) const;
  double get_double(const std::string& dotted_key) const;
  bool get_bool(const std::string& dotted_key) const;
  std::vector<double> get_double_list(const std::string& dotted_key) const;

  // serialized sectioned form, also used for stage-cache hashing
  std::string serialize() const;
  std::string serialize_section(const std::string& section) const;
  void save_effective(const std::filesystem::path& experiment_dir) const;

  std::filesystem::path experiment_dir() const;
  uint64_t seed() const;

 private:
  std::map<std::string, std::string> values_;
};

struct Manifest {
  // split name -> utterance ids; splits are disjoint
  std::map<std::string, std::vector<std::string>> splits;

  std::vector<std::string> ids(const std::string& split) const;
  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);
};

// Completion marker with input hashes; a stage whose marker matches its
// current inputs is up to date and skipped unless forced.
class StageGate {
 public:
  StageGate(const std::filesystem::path& experiment_dir, const std::string& stage);
  void add_config(const std::string& serialized);
  void add_input_file(const std::filesystem::path& path);
  bool up_to_date() const;
  void commit() const;
  const std::string& stage() const { return stage_; }

 private:
  std::filesystem::path marker_;
  std::string stage_;
  uint64_t hash_;
};

// Stage entry points, shared by the CLI and the acceptance suite. Each
// returns true when work was done, false when the cached result was reused.
bool stage_synth(const PipelineConfig& config, bool force);
bool stage_vad(const PipelineConfig& config, bool force);
bool stage_featurize(const PipelineConfig& config, bool force);
bool stage_cluster(const PipelineConfig& config, bool force);
bool stage_segment(const PipelineConfig& config, bool force);
bool stage_preptext(const PipelineConfig& config, bool force);
bool stage_train_lm(const PipelineConfig& config, bool force);
bool stage_train_gan(const PipelineConfig& config, bool force);
bool stage_select(const PipelineConfig& config, bool force);
bool stage_tune_decode(const PipelineConfig& config, bool force);
bool stage_decode(const PipelineConfig& config, bool force);
bool stage_self_train(const PipelineConfig& config, bool force);
bool stage_evaluate(const PipelineConfig& config, bool force);

// Aggregates whatever stage outputs exist into report.json / report.txt;
// missing stages are flagged rather than fatal.
void report_run(const std::filesystem::path& experiment_dir);

}  // namespace uasr
