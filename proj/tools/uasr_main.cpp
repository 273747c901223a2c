// Pipeline driver: one binary, one subcommand per stage. Stages cache their
// outputs in the experiment directory and skip re-running when inputs are
// unchanged (use --force to recompute).

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "uasr/pipeline.hpp"

namespace {

// exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 divergence
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kMissingPrerequisite = 3;
constexpr int kDivergence = 4;
constexpr int kOtherError = 1;

struct StageSpec {
  const char* name;
  const char* help;
  bool (*run)(const uasr::PipelineConfig&, bool);
};

const std::vector<StageSpec>& stages() {
  static const std::vector<StageSpec> specs = {
      {"synth", "generate a synthetic corpus (features, text, lexicon, references)",
       uasr::stage_synth},
      {"vad", "detect voiced intervals for WAV input", uasr::stage_vad},
      {"featurize", "remove silences and compute/ingest features", uasr::stage_featurize},
      {"cluster", "fit k-means over training-split features", uasr::stage_cluster},
      {"segment", "derive boundaries and build segment representations", uasr::stage_segment},
      {"preptext", "phonemize text, build the inventory, insert SIL", uasr::stage_preptext},
      {"train-lm", "train phoneme and word n-gram language models", uasr::stage_train_lm},
      {"train-gan", "adversarial training (single run or sweep)", uasr::stage_train_gan},
      {"select", "unsupervised checkpoint selection", uasr::stage_select},
      {"tune-decode", "tune acoustic scale and blank bonus without labels",
       uasr::stage_tune_decode},
      {"decode", "beam-decode all splits with the tuned configuration", uasr::stage_decode},
      {"self-train", "HMM/CTC self-training on pseudo-labels", uasr::stage_self_train},
      {"evaluate", "error rates against references, when available", uasr::stage_evaluate},
  };
  return specs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unsupervised phoneme recognition pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  app.add_option("-c,--config", config_path, "configuration file (sectioned key = value)");
  app.add_option("-s,--set", overrides,
                 "override a config value, e.g. --set gan.steps=1000 (repeatable)");
  app.add_flag("-f,--force", force, "recompute even when the cached stage is up to date");

  std::string requested;
  for (const auto& spec : stages()) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->callback([&requested, name = spec.name] { requested = name; });
  }
  CLI::App* report_cmd = app.add_subcommand("report", "aggregate stage outputs into a report");
  report_cmd->callback([&requested] { requested = "report"; });

  CLI11_PARSE(app, argc, argv);

  try {
    uasr::PipelineConfig config =
        config_path.empty() ? uasr::PipelineConfig::from_overrides(overrides)
                            : uasr::PipelineConfig::load(config_path, overrides);
    config.save_effective(config.experiment_dir());

    if (requested == "report") {
      uasr::report_run(config.experiment_dir());
      std::printf("report written to %s\n",
                  (config.experiment_dir() / "report.json").string().c_str());
      return kOk;
    }
    for (const auto& spec : stages()) {
      if (requested != spec.name) continue;
      bool ran = spec.run(config, force);
      std::printf("%s: %s\n", spec.name, ran ? "done" : "up to date");
      return kOk;
    }
    std::fprintf(stderr, "unknown stage: %s\n", requested.c_str());
    return kOtherError;
  } catch (const uasr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const uasr::PrerequisiteError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingPrerequisite;
  } catch (const uasr::DivergenceError& e) {
    std::fprintf(stderr, "numeric divergence: %s\n", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOtherError;
  }
}
