#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "uasr/io.hpp"
#include "uasr/pipeline.hpp"

using namespace uasr;
namespace fs = std::filesystem;

namespace {

fs::path temp_exp(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("uasr_pipe_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// minimal synthetic run configuration, small enough for unit tests
std::vector<std::string> tiny_overrides(const fs::path& exp) {
  return {
      "project.experiment_dir=" + exp.string(),
      "project.seed=5",
      "synth.n_utterances=24",
      "synth.num_phones=4",
      "synth.num_words=8",
      "synth.feature_dim=6",
      "synth.noise_level=0.3",
      "cluster.k=10",
      "cluster.max_iters=15",
      "pca.rank=6",
      "textprep.min_count=1",
      "lm.order=2",
      "lm.prune_min_count=0",
      "gan.batch=4",
      "gan.steps=6",
      "gan.checkpoint_interval=2",
      "gan.hidden=8",
      "decode.beam_dev=20",
      "decode.beam_final=30",
      "decode.beam_pseudo=20",
      "decode.grid_scale_step=4",
      "decode.grid_nu_step=5.5",
      "decode.refine=false",
      "selftrain.strategy=hmm",
      "selftrain.hmm_iterations=3",
      "selftrain.ctc_steps=10",
  };
}

int run_cli(const std::vector<std::string>& args) {
  std::string cmd = UASR_CLI_PATH;
  for (const auto& a : args) cmd += " " + a;
  cmd += " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing, overrides, validation") {
  PipelineConfig config;
  CHECK(config.get_int("lm.order") == 4);
  CHECK(config.get_double("gan.lambda") == doctest::Approx(1.5));

  config.set("gan.lambda", "2.0");
  CHECK(config.get_double("gan.lambda") == doctest::Approx(2.0));
  CHECK_THROWS_AS(config.set("gan.lambda", "0.7"), ConfigError);   // range
  CHECK_THROWS_AS(config.set("gan.nonsense", "1"), ConfigError);   // unknown key
  CHECK_THROWS_AS(config.set("lm.order", "noise"), ConfigError);   // type

  auto dir = temp_exp("cfg");
  write_text_file(dir / "run.conf",
                  "[project]\nseed = 9\n# comment\n[gan]\nsteps = 42\n");
  PipelineConfig loaded = PipelineConfig::load(dir / "run.conf", {"gan.hidden=16"});
  CHECK(loaded.get_int("project.seed") == 9);
  CHECK(loaded.get_int("gan.steps") == 42);
  CHECK(loaded.get_int("gan.hidden") == 16);

  write_text_file(dir / "bad.conf", "[gan]\nbogus = 1\n");
  CHECK_THROWS_AS(PipelineConfig::load(dir / "bad.conf"), ConfigError);

  // effective config round-trips through the serializer
  loaded.save_effective(dir);
  PipelineConfig back = PipelineConfig::load(dir / "config.effective");
  CHECK(back.serialize() == loaded.serialize());
  fs::remove_all(dir);
}

TEST_CASE("manifest round trip rejects overlapping splits") {
  auto dir = temp_exp("mani");
  Manifest m;
  m.splits["train"] = {"a", "b"};
  m.splits["dev"] = {"c"};
  m.save(dir / "manifest.tsv");
  Manifest back = Manifest::load(dir / "manifest.tsv");
  CHECK(back.ids("train") == std::vector<std::string>{"a", "b"});
  CHECK(back.ids("dev") == std::vector<std::string>{"c"});
  CHECK(back.ids("nope").empty());

  write_text_file(dir / "bad.tsv", "train\ta\ndev\ta\n");
  CHECK_THROWS_AS(Manifest::load(dir / "bad.tsv"), Error);
  fs::remove_all(dir);
}

TEST_CASE("stage caching: unchanged inputs are a no-op, changes invalidate") {
  auto exp = temp_exp("cache");
  PipelineConfig config = PipelineConfig::from_overrides(tiny_overrides(exp));

  CHECK(stage_synth(config, false));        // first run does the work
  CHECK_FALSE(stage_synth(config, false));  // cached
  CHECK(stage_synth(config, true));         // forced

  CHECK(stage_featurize(config, false));
  CHECK(stage_cluster(config, false));
  CHECK_FALSE(stage_cluster(config, false));

  // changing an upstream artifact invalidates the stage
  auto stats = exp / "features" / "stats.bin";
  auto bytes = read_text_file(stats);
  write_text_file(stats, bytes + "x");
  CHECK(stage_cluster(config, false));
  fs::remove_all(exp);
}

TEST_CASE("full synthetic chain through the stage functions") {
  auto exp = temp_exp("chain");
  PipelineConfig config = PipelineConfig::from_overrides(tiny_overrides(exp));

  CHECK(stage_synth(config, false));
  CHECK(stage_featurize(config, false));
  CHECK(stage_cluster(config, false));
  CHECK(stage_segment(config, false));
  CHECK(stage_preptext(config, false));
  CHECK(stage_train_lm(config, false));
  CHECK(stage_train_gan(config, false));
  CHECK(stage_select(config, false));
  CHECK(stage_tune_decode(config, false));
  CHECK(stage_decode(config, false));
  CHECK(stage_self_train(config, false));
  CHECK(stage_evaluate(config, false));
  report_run(exp);

  CHECK(fs::exists(exp / "report.json"));
  CHECK(fs::exists(exp / "report.txt"));
  auto report = read_text_file(exp / "report.json");
  for (const char* section :
       {"features", "segmentation", "text", "gan", "select", "decode", "selftrain"})
    CHECK(report.find("\"" + std::string(section) + "\"") != std::string::npos);
  // every section of a full run is present
  CHECK(report.find("\"present\": false") == std::string::npos);
  fs::remove_all(exp);
}

TEST_CASE("missing prerequisites name the stage to run") {
  auto exp = temp_exp("prereq");
  PipelineConfig config = PipelineConfig::from_overrides(tiny_overrides(exp));
  CHECK_THROWS_WITH_AS(stage_cluster(config, false), doctest::Contains("featurize"),
                       PrerequisiteError);
  CHECK_THROWS_WITH_AS(stage_train_gan(config, false), doctest::Contains("segment"),
                       PrerequisiteError);
  CHECK_THROWS_WITH_AS(stage_select(config, false), doctest::Contains("train-gan"),
                       PrerequisiteError);
  fs::remove_all(exp);
}

TEST_CASE("partial report flags absent stages") {
  auto exp = temp_exp("partial");
  PipelineConfig config = PipelineConfig::from_overrides(tiny_overrides(exp));
  CHECK(stage_synth(config, false));
  report_run(exp);
  auto report = read_text_file(exp / "report.json");
  CHECK(report.find("\"present\": false") != std::string::npos);
  fs::remove_all(exp);
}

TEST_CASE("cli exit codes") {
  auto exp = temp_exp("cli");
  std::vector<std::string> base;
  for (const auto& o : tiny_overrides(exp)) base.push_back("--set " + o);
  std::string flags;
  for (const auto& b : base) flags += b + " ";

  // config error: bad key
  CHECK(run_cli({"--set", "gan.never=1", "synth"}) == 2);
  // missing prerequisite
  CHECK(run_cli({flags, "cluster"}) == 3);
  // ok path
  CHECK(run_cli({flags, "synth"}) == 0);
  CHECK(run_cli({flags, "featurize"}) == 0);
  CHECK(run_cli({flags, "cluster"}) == 0);
  // re-run is a cached no-op, still exit 0
  CHECK(run_cli({flags, "cluster"}) == 0);
  fs::remove_all(exp);
}
