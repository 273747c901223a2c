#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "uasr/ctc.hpp"
#include "uasr/io.hpp"
#include "uasr/rng.hpp"

using namespace uasr;
namespace fs = std::filesystem;

namespace {

// brute force: enumerate every alignment in (V)^T and sum path products of
// those mapping to the target under the collapse function
double enumerate_posterior(const MatD& log_emissions, const std::vector<int>& target, int blank) {
  int t_len = log_emissions.rows, v = log_emissions.cols;
  double total = 0.0;
  std::vector<int> alignment(static_cast<size_t>(t_len), 0);
  long combos = 1;
  for (int t = 0; t < t_len; ++t) combos *= v;
  for (long code = 0; code < combos; ++code) {
    long rest = code;
    double logp = 0.0;
    for (int t = 0; t < t_len; ++t) {
      alignment[static_cast<size_t>(t)] = int(rest % v);
      rest /= v;
      logp += log_emissions.at(t, alignment[static_cast<size_t>(t)]);
    }
    if (ctc_collapse(alignment, blank) == target) total += std::exp(logp);
  }
  return total;
}

MatD random_log_dist(Rng& rng, int t, int v) {
  MatD m(t, v);
  for (int r = 0; r < t; ++r) {
    double total = 0.0;
    for (int c = 0; c < v; ++c) {
      m.at(r, c) = std::exp(rng.normal());
      total += m.at(r, c);
    }
    for (int c = 0; c < v; ++c) m.at(r, c) = std::log(m.at(r, c) / total);
  }
  return m;
}

}  // namespace

TEST_CASE("collapse function") {
  // c eps a a eps a b b -> c a a b  (paper's worked example, ids for letters)
  // c=2, a=0, b=1, eps=3
  std::vector<int> alignment = {2, 3, 0, 0, 3, 0, 1, 1};
  CHECK(ctc_collapse(alignment, 3) == std::vector<int>{2, 0, 0, 1});

  CHECK(ctc_collapse({0, 0, 3, 1}, 3) == std::vector<int>{0, 1});
  CHECK(ctc_collapse({3, 3, 3}, 3).empty());
  CHECK(ctc_collapse({0, 3, 0}, 3) == std::vector<int>{0, 0});

  // idempotence holds on outputs free of adjacent repeats, which is exactly
  // the image of blank-free alignments (a blank-separated repeat like
  // "a eps a" necessarily loses its repeat on a second application)
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> raw(static_cast<size_t>(1 + rng.uniform_int(10)));
    for (auto& v : raw) v = rng.uniform_int(3);  // no blanks
    auto once = ctc_collapse(raw, 3);
    auto twice = ctc_collapse(once, 3);
    CHECK(twice == once);
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> raw(static_cast<size_t>(1 + rng.uniform_int(10)));
    for (auto& v : raw) v = rng.uniform_int(4);  // with blanks
    auto once = ctc_collapse(raw, 3);
    bool has_adjacent_repeat = false;
    for (size_t i = 1; i < once.size(); ++i)
      if (once[i] == once[i - 1]) has_adjacent_repeat = true;
    auto twice = ctc_collapse(once, 3);
    if (!has_adjacent_repeat) CHECK(twice == once);
    else CHECK(twice != once);
  }
}

TEST_CASE("hand-enumerable ctc value") {
  // T=2, alphabet {a, eps}, uniform 0.5: paths aa, a_, _a -> p = 0.75
  MatD logp(2, 2);
  for (auto& v : logp.data) v = std::log(0.5);
  auto r = ctc_loss(logp, {0}, 1);
  CHECK(r.loss == doctest::Approx(-std::log(0.75)));
}

TEST_CASE("ctc loss matches enumeration and finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    int v = 2 + rng.uniform_int(2);   // includes blank, |B| <= 3
    int t = 1 + rng.uniform_int(6);
    int blank = v - 1;
    int u = 1 + rng.uniform_int(3);
    std::vector<int> target(static_cast<size_t>(u));
    for (auto& y : target) y = rng.uniform_int(v - 1);
    int repeats = 0;
    for (size_t i = 1; i < target.size(); ++i)
      if (target[i] == target[i - 1]) ++repeats;
    if (int(target.size()) + repeats > t) {
      CHECK_THROWS_AS(ctc_loss(random_log_dist(rng, t, v), target, blank), Error);
      continue;
    }
    MatD logp = random_log_dist(rng, t, v);
    auto r = ctc_loss(logp, target, blank);
    double expect = enumerate_posterior(logp, target, blank);
    CHECK(std::abs(std::exp(-r.loss) - expect) < 1e-9);

    // finite differences on the log emissions
    double h = 1e-4;
    for (size_t i = 0; i < logp.data.size(); ++i) {
      double keep = logp.data[i];
      logp.data[i] = keep + h;
      double hi = ctc_loss(logp, target, blank).loss;
      logp.data[i] = keep - h;
      double lo = ctc_loss(logp, target, blank).loss;
      logp.data[i] = keep;
      double fd = (hi - lo) / (2.0 * h);
      double a = r.grad.data[i];
      double denom = std::max(std::abs(a), std::abs(fd));
      if (denom > 1e-5)
        CHECK(std::abs(a - fd) / denom < 1e-4);
      else
        CHECK(std::abs(a - fd) < 1e-7);
    }
  }
}

TEST_CASE("ctc rejects bad targets") {
  MatD logp(4, 3);
  for (auto& v : logp.data) v = std::log(1.0 / 3.0);
  CHECK_THROWS_AS(ctc_loss(logp, {}, 2), Error);
  CHECK_THROWS_AS(ctc_loss(logp, {2}, 2), Error);       // blank in target
  CHECK_THROWS_AS(ctc_loss(logp, {0, 0, 0}, 2), Error);  // needs 5 frames
}

TEST_CASE("greedy decode applies the collapse function") {
  PhonemeInventory inv;
  inv.symbols = {"SIL", "a", "b"};
  inv.sil_index = 0;

  CtcConfig config;
  config.hidden_dim = 8;
  config.seed = 1;
  CtcModel model;
  model.blank = 3;
  model.conv1 = Conv1d::make_same(2, 4, 3);
  model.conv2 = Conv1d::make_same(4, 4, 3);
  Rng rng(2);
  model.conv1.init_uniform(rng);
  model.conv2.init_uniform(rng);

  FeatureSequence f;
  f.utterance_id = "u";
  f.frames = MatF(5, 2);
  for (auto& v : f.frames.data) v = float(rng.normal());
  auto out = ctc_greedy_decode(model, f);
  // whatever the argmaxes, the output has no blanks and no adjacent repeats
  for (size_t i = 0; i < out.phones.size(); ++i) {
    CHECK(out.phones[i] != model.blank);
    if (i) CHECK(out.phones[i] != out.phones[i - 1]);
  }
}

TEST_CASE("ctc training overfits one utterance and is reproducible") {
  PhonemeInventory inv;
  inv.symbols = {"SIL", "a", "b", "c"};
  inv.sil_index = 0;

  // well-separated class means over time
  Rng rng(11);
  FeatureSequence f;
  f.utterance_id = "u0";
  f.frames = MatF(12, 4);
  std::vector<int> phones = {1, 2, 3, 1};
  for (int t = 0; t < 12; ++t) {
    int phone = phones[static_cast<size_t>(t / 3)];
    for (int c = 0; c < 4; ++c)
      f.frames.at(t, c) = float((c == phone ? 3.0 : 0.0) + 0.05 * rng.normal());
  }
  PhonemeSequence label;
  label.utterance_id = "u0";
  label.phones = phones;

  CtcConfig config;
  config.hidden_dim = 24;
  config.total_steps = 400;
  config.lr = 3e-3;
  config.batch_size = 1;
  config.seed = 5;
  std::vector<double> history;
  CtcModel model = train_ctc({f}, {label}, inv, config, &history);
  CHECK(history.back() < 0.1);

  auto decoded = ctc_greedy_decode(model, f);
  CHECK(decoded.phones == phones);

  // fixed seed: bit-identical reruns
  CtcModel again = train_ctc({f}, {label}, inv, config);
  CHECK(model.conv1.w == again.conv1.w);
  CHECK(model.conv2.w == again.conv2.w);

  // empty labels are rejected
  PhonemeSequence empty;
  CHECK_THROWS_AS(train_ctc({f}, {empty}, inv, config), Error);
}

TEST_CASE("ctc model file round trip") {
  auto dir = fs::temp_directory_path() / "uasr_ctc";
  fs::create_directories(dir);
  CtcModel model;
  model.blank = 4;
  model.conv1 = Conv1d::make_same(3, 6, 5);
  model.conv2 = Conv1d::make_same(6, 5, 5);
  Rng rng(8);
  model.conv1.init_uniform(rng);
  model.conv2.init_uniform(rng);
  save_ctc(model, dir / "ctc.bin");
  CtcModel back = load_ctc(dir / "ctc.bin");
  CHECK(back.blank == model.blank);
  CHECK(back.conv1.w == model.conv1.w);
  save_ctc(back, dir / "ctc2.bin");
  CHECK(read_text_file(dir / "ctc.bin") == read_text_file(dir / "ctc2.bin"));
  fs::remove_all(dir);
}
