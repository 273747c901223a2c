#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "uasr/hmm.hpp"
#include "uasr/io.hpp"
#include "uasr/rng.hpp"

using namespace uasr;

namespace {

PhonemeInventory toy_inventory(int phones) {
  PhonemeInventory inv;
  inv.symbols.push_back("SIL");
  inv.sil_index = 0;
  for (int p = 1; p < phones; ++p) inv.symbols.push_back("p" + std::to_string(p));
  return inv;
}

// enumerate all monotone chain alignments; returns (logsumexp, max) over
// alignment log-probabilities under the same transition convention as the
// implementation (entry in chain state 0, must end in the last state)
std::pair<double, double> enumerate_alignments(const HmmModel& model,
                                               const FeatureSequence& features,
                                               const PhonemeSequence& phones) {
  std::vector<int> chain;
  for (int p : phones.phones)
    for (int s = 0; s < model.config.states_per_phoneme; ++s)
      chain.push_back(model.state_index(p, s));
  int t_len = features.num_frames(), n = int(chain.size());
  double total = -std::numeric_limits<double>::infinity();
  double best = total;
  std::function<void(int, int, double)> walk = [&](int t, int k, double logp) {
    logp += model.emission_loglik(chain[static_cast<size_t>(k)], features.frames.row(t));
    if (t == t_len - 1) {
      if (k == n - 1) {
        double m = std::max(total, logp);
        total = m + std::log(std::exp(total - m) + std::exp(logp - m));
        best = std::max(best, logp);
      }
      return;
    }
    const HmmState& st = model.states[static_cast<size_t>(chain[static_cast<size_t>(k)])];
    walk(t + 1, k, logp + std::log(st.self_loop));
    if (k + 1 < n) walk(t + 1, k + 1, logp + std::log(st.forward));
  };
  walk(0, 0, 0.0);
  return {total, best};
}

HmmModel random_model(Rng& rng, int phones, int dim, int states_per = 1) {
  HmmModel model;
  model.config.states_per_phoneme = states_per;
  model.config.num_components = 1;
  model.num_phones = phones;
  model.dim = dim;
  for (int s = 0; s < phones * states_per; ++s) {
    HmmState st;
    st.means = MatD(1, dim);
    st.vars = MatD(1, dim);
    st.weights = {1.0};
    for (int j = 0; j < dim; ++j) {
      st.means.at(0, j) = rng.normal() * 2.0;
      st.vars.at(0, j) = 0.5 + rng.uniform();
    }
    double p = 0.2 + 0.6 * rng.uniform();
    st.self_loop = p;
    st.forward = 1.0 - p;
    model.states.push_back(std::move(st));
  }
  return model;
}

FeatureSequence random_features(Rng& rng, int t, int dim) {
  FeatureSequence f;
  f.utterance_id = "u";
  f.frames = MatF(t, dim);
  for (auto& v : f.frames.data) v = float(rng.normal());
  return f;
}

}  // namespace

TEST_CASE("single frame, single one-state phoneme") {
  Rng rng(1);
  HmmModel model = random_model(rng, 2, 3);
  FeatureSequence f = random_features(rng, 1, 3);
  PhonemeSequence phones;
  phones.phones = {1};
  double expect = model.emission_loglik(model.state_index(1, 0), f.frames.row(0));
  CHECK(hmm_total_logprob(model, f, phones) == doctest::Approx(expect));
  Alignment a = forced_align(model, f, phones);
  CHECK(a.chain_states == std::vector<int>{0});
  CHECK(a.loglik == doctest::Approx(expect));
}

TEST_CASE("forward and viterbi match exhaustive enumeration") {
  Rng rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    int phones = 2 + rng.uniform_int(2);
    int dim = 1 + rng.uniform_int(3);
    int states_per = 1 + rng.uniform_int(2);
    HmmModel model = random_model(rng, phones, dim, states_per);
    int label_len = 1 + rng.uniform_int(2);
    PhonemeSequence label;
    for (int i = 0; i < label_len; ++i) label.phones.push_back(rng.uniform_int(phones));
    int min_frames = label_len * states_per;
    int t = min_frames + rng.uniform_int(3);
    FeatureSequence f = random_features(rng, t, dim);

    auto [total, best] = enumerate_alignments(model, f, label);
    CHECK(std::abs(hmm_total_logprob(model, f, label) - total) < 1e-9);
    Alignment a = forced_align(model, f, label);
    CHECK(std::abs(a.loglik - best) < 1e-9);
    // log-sum dominates max
    CHECK(a.loglik <= total + 1e-12);

    // alignment is monotone and complete
    CHECK(a.chain_states.front() == 0);
    CHECK(a.chain_states.back() == label_len * states_per - 1);
    for (size_t i = 1; i < a.chain_states.size(); ++i) {
      int step = a.chain_states[i] - a.chain_states[i - 1];
      CHECK(step >= 0);
      CHECK(step <= 1);
    }
  }
}

TEST_CASE("infeasible length gives -inf / error") {
  Rng rng(3);
  HmmModel model = random_model(rng, 3, 2);
  FeatureSequence f = random_features(rng, 2, 2);
  PhonemeSequence label;
  label.phones = {1, 2, 1};  // needs 3 frames
  CHECK(hmm_total_logprob(model, f, label) ==
        -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(forced_align(model, f, label), Error);
}

TEST_CASE("closed-form single-phone training") {
  // one phoneme, one Gaussian, one utterance: mean and (floored) variance of
  // the features
  auto inv = toy_inventory(2);
  Rng rng(9);
  FeatureSequence f = random_features(rng, 40, 2);
  PhonemeSequence label;
  label.utterance_id = "u";
  label.phones = {1};
  HmmConfig config;
  config.iterations = 3;
  HmmModel model = train_hmm({f}, {label}, inv, config);

  double mean0 = 0.0, var0 = 0.0;
  for (int t = 0; t < 40; ++t) mean0 += f.frames.at(t, 0);
  mean0 /= 40;
  for (int t = 0; t < 40; ++t) {
    double d = f.frames.at(t, 0) - mean0;
    var0 += d * d;
  }
  var0 = std::max(var0 / 40, config.var_floor);
  int s1 = model.state_index(1, 0);
  CHECK(model.states[static_cast<size_t>(s1)].means.at(0, 0) == doctest::Approx(mean0).epsilon(1e-9));
  CHECK(model.states[static_cast<size_t>(s1)].vars.at(0, 0) == doctest::Approx(var0).epsilon(1e-9));
}

TEST_CASE("em recovers well-separated alternating phonemes") {
  auto inv = toy_inventory(3);
  Rng rng(31);
  std::vector<FeatureSequence> corpus;
  std::vector<PhonemeSequence> labels;
  // phoneme 1 near (-5, -5), phoneme 2 near (5, 5), alternating runs
  for (int u = 0; u < 8; ++u) {
    FeatureSequence f;
    f.utterance_id = "u" + std::to_string(u);
    std::vector<float> rows;
    PhonemeSequence label;
    label.utterance_id = f.utterance_id;
    for (int block = 0; block < 4; ++block) {
      int phone = (block % 2) + 1;
      label.phones.push_back(phone);
      int frames = 3 + rng.uniform_int(3);
      for (int i = 0; i < frames; ++i) {
        double base = phone == 1 ? -5.0 : 5.0;
        rows.push_back(float(base + 0.3 * rng.normal()));
        rows.push_back(float(base + 0.3 * rng.normal()));
      }
    }
    f.frames = MatF(int(rows.size()) / 2, 2);
    std::copy(rows.begin(), rows.end(), f.frames.data.begin());
    corpus.push_back(f);
    labels.push_back(label);
  }
  HmmConfig config;
  config.iterations = 10;
  HmmModel model = train_hmm(corpus, labels, inv, config);

  // EM log-likelihood is non-decreasing
  for (size_t i = 1; i < model.train_loglik_history.size(); ++i)
    CHECK(model.train_loglik_history[i] >= model.train_loglik_history[i - 1] - 1e-6);

  CHECK(std::abs(model.states[static_cast<size_t>(model.state_index(1, 0))].means.at(0, 0) - (-5.0)) < 1e-1);
  CHECK(std::abs(model.states[static_cast<size_t>(model.state_index(2, 0))].means.at(0, 0) - 5.0) < 1e-1);

  // learned means land within 1e-2 of the empirical cluster means
  double acc1 = 0.0;
  long n1 = 0;
  for (size_t u = 0; u < corpus.size(); ++u) {
    // frames generated in alternating blocks; recompute block structure from
    // the sign of the feature
    for (int t = 0; t < corpus[u].num_frames(); ++t) {
      if (corpus[u].frames.at(t, 0) < 0) {
        acc1 += corpus[u].frames.at(t, 0);
        ++n1;
      }
    }
  }
  CHECK(std::abs(model.states[static_cast<size_t>(model.state_index(1, 0))].means.at(0, 0) - acc1 / double(n1)) <
        1e-2);
}

TEST_CASE("training skips infeasible utterances") {
  auto inv = toy_inventory(3);
  Rng rng(4);
  FeatureSequence ok = random_features(rng, 10, 2);
  ok.utterance_id = "ok";
  FeatureSequence tiny = random_features(rng, 1, 2);
  tiny.utterance_id = "tiny";
  PhonemeSequence label_ok, label_long;
  label_ok.phones = {1, 2};
  label_long.phones = {1, 2, 1, 2};  // cannot fit in one frame
  HmmConfig config;
  config.iterations = 2;
  HmmModel model = train_hmm({ok, tiny}, {label_ok, label_long}, inv, config);
  CHECK(model.num_phones == 3);
}

TEST_CASE("hmm model file round trip") {
  auto dir = std::filesystem::temp_directory_path() / "uasr_hmm";
  std::filesystem::create_directories(dir);
  Rng rng(6);
  HmmModel model = random_model(rng, 3, 2);
  save_hmm(model, dir / "hmm.bin");
  HmmModel back = load_hmm(dir / "hmm.bin");
  CHECK(back.num_phones == model.num_phones);
  CHECK(back.states[0].means.data == model.states[0].means.data);
  save_hmm(back, dir / "hmm2.bin");
  CHECK(uasr::read_text_file(dir / "hmm.bin") == uasr::read_text_file(dir / "hmm2.bin"));
  std::filesystem::remove_all(dir);
}
