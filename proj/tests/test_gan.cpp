#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "uasr/gan.hpp"
#include "uasr/rng.hpp"

using namespace uasr;
using namespace uasr::detail;

namespace {

// central finite differences vs analytic, relative error < 1e-4
void check_grads(std::vector<double>& params, const std::vector<double>& analytic,
                 const std::function<double()>& eval, double h = 1e-4) {
  REQUIRE(params.size() == analytic.size());
  for (size_t i = 0; i < params.size(); ++i) {
    double keep = params[i];
    params[i] = keep + h;
    double hi = eval();
    params[i] = keep - h;
    double lo = eval();
    params[i] = keep;
    double fd = (hi - lo) / (2.0 * h);
    double a = analytic[i];
    double denom = std::max(std::abs(a), std::abs(fd));
    if (denom > 1e-5) {
      CHECK(std::abs(a - fd) / denom < 1e-4);
    } else {
      CHECK(std::abs(a - fd) < 1e-7);
    }
  }
}

GanConfig small_config(Rng& rng) {
  GanConfig c;
  c.hidden_dim = 4 + rng.uniform_int(6);
  c.lambda_gp = 1.5 + 0.5 * rng.uniform();
  c.gamma_sp = 0.5 + 0.25 * rng.uniform();
  c.eta_pd = 2.0 + 2.0 * rng.uniform();
  return c;
}

MatD random_rows(Rng& rng, int t, int c, bool distribution) {
  MatD m(t, c);
  for (auto& v : m.data) v = rng.normal();
  if (distribution) {
    for (int r = 0; r < t; ++r) {
      double total = 0.0;
      for (int j = 0; j < c; ++j) {
        m.at(r, j) = std::exp(m.at(r, j));
        total += m.at(r, j);
      }
      for (int j = 0; j < c; ++j) m.at(r, j) /= total;
    }
  }
  return m;
}

}  // namespace

TEST_CASE("generator forward basics") {
  GanConfig config;
  SegmentSequence segs;
  segs.utterance_id = "u";
  segs.reps = MatD(3, 5);
  Rng rng(2);
  for (auto& v : segs.reps.data) v = rng.normal();

  GeneratorParams zero = init_generator(5, 4, config, 0);
  for (auto& w : zero.conv.w) w = 0.0;
  for (auto& b : zero.conv.b) b = 0.0;
  auto post = generator_forward(zero, segs, false, 0);
  CHECK(post.rows.rows == 3);
  for (int t = 0; t < 3; ++t)
    for (int c = 0; c < 4; ++c) CHECK(post.rows.at(t, c) == doctest::Approx(0.25));

  GeneratorParams gen = init_generator(5, 4, config, 9);
  auto a = generator_forward(gen, segs, false, 1);
  auto b = generator_forward(gen, segs, false, 2);
  CHECK(a.rows.data == b.rows.data);  // eval mode ignores the seed

  SegmentSequence one;
  one.reps = MatD(1, 5);
  auto single = generator_forward(gen, one, false, 0);
  REQUIRE(single.rows.rows == 1);
  double sum = 0.0;
  for (int c = 0; c < 4; ++c) sum += single.rows.at(0, c);
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("collapse merges runs and samples uniformly") {
  // argmaxes a a b b -> 2 rows
  PosteriorSequence post;
  post.rows = MatD(4, 2);
  post.rows.at(0, 0) = 0.9;
  post.rows.at(0, 1) = 0.1;
  post.rows.at(1, 0) = 0.8;
  post.rows.at(1, 1) = 0.2;
  post.rows.at(2, 0) = 0.3;
  post.rows.at(2, 1) = 0.7;
  post.rows.at(3, 0) = 0.4;
  post.rows.at(3, 1) = 0.6;
  post.source_segments = {0, 1, 2, 3};
  auto c = collapse(post, 5);
  REQUIRE(c.rows.rows == 2);
  CHECK(c.source_segments[0] <= 1);
  CHECK(c.source_segments[1] >= 2);

  // all-distinct argmaxes: identity
  PosteriorSequence distinct;
  distinct.rows = MatD(3, 3);
  distinct.rows.at(0, 0) = 1.0;
  distinct.rows.at(1, 1) = 1.0;
  distinct.rows.at(2, 2) = 1.0;
  distinct.source_segments = {0, 1, 2};
  auto id = collapse(distinct, 0);
  CHECK(id.rows.rows == 3);
  CHECK(id.source_segments == std::vector<int>{0, 1, 2});

  // all-equal argmaxes over T=5: uniform source choice
  PosteriorSequence same;
  same.rows = MatD(5, 2);
  for (int t = 0; t < 5; ++t) {
    same.rows.at(t, 0) = 0.6 + 0.01 * t;
    same.rows.at(t, 1) = 0.4 - 0.01 * t;
  }
  same.source_segments = {0, 1, 2, 3, 4};
  std::vector<int> histogram(5, 0);
  for (int seed = 0; seed < 10000; ++seed) {
    auto out = collapse(same, uint64_t(seed));
    REQUIRE(out.rows.rows == 1);
    histogram[size_t(out.source_segments[0])] += 1;
  }
  for (int count : histogram) {
    CHECK(count > 1800);
    CHECK(count < 2200);
  }
}

TEST_CASE("collapse preserves the argmax string") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    int t = 1 + rng.uniform_int(8), o = 2 + rng.uniform_int(3);
    MatD rows = random_rows(rng, t, o, true);
    PosteriorSequence post;
    post.rows = rows;
    post.source_segments.resize(size_t(t));
    for (int i = 0; i < t; ++i) post.source_segments[size_t(i)] = i;
    auto c = collapse(post, uint64_t(trial));
    CHECK(c.rows.rows <= t);
    auto argmax_string = [](const MatD& m) {
      std::vector<int> s;
      int prev = -1;
      for (int r = 0; r < m.rows; ++r) {
        int a = 0;
        for (int j = 1; j < m.cols; ++j)
          if (m.at(r, j) > m.at(r, a)) a = j;
        if (a != prev) s.push_back(a);
        prev = a;
      }
      return s;
    };
    auto full = argmax_string(post.rows);
    std::vector<int> collapsed;
    for (int r = 0; r < c.rows.rows; ++r) {
      int a = 0;
      for (int j = 1; j < c.rows.cols; ++j)
        if (c.rows.at(r, j) > c.rows.at(r, a)) a = j;
      collapsed.push_back(a);
    }
    CHECK(collapsed == full);
  }
}

TEST_CASE("discriminator trivial values") {
  GanConfig config;
  config.hidden_dim = 6;
  DiscriminatorParams disc = init_discriminator(3, config, 0);
  CHECK(disc.receptive_field() == 16);
  for (auto* conv : {&disc.conv1, &disc.conv2, &disc.conv3}) {
    for (auto& w : conv->w) w = 0.0;
    for (auto& b : conv->b) b = 0.0;
  }
  Rng rng(4);
  MatD rows = random_rows(rng, 5, 3, true);
  auto out = discriminator_forward(disc, rows);
  CHECK(out.score == doctest::Approx(0.0));
  for (double l : out.logits) CHECK(l == doctest::Approx(0.0));

  MatD wrong(2, 7);
  CHECK_THROWS_AS(discriminator_forward(disc, wrong), Error);
}

TEST_CASE("adversarial loss spot values") {
  GanConfig config;
  config.hidden_dim = 5;
  // zero discriminator: logit 0 everywhere -> disc_loss = 2 log 2
  DiscriminatorParams disc = init_discriminator(3, config, 1);
  for (auto* conv : {&disc.conv1, &disc.conv2, &disc.conv3}) {
    for (auto& w : conv->w) w = 0.0;
    for (auto& b : conv->b) b = 0.0;
  }
  Rng rng(6);
  std::vector<MatD> real = {random_rows(rng, 4, 3, true)};
  std::vector<MatD> fake = {random_rows(rng, 3, 3, true)};
  auto l = loss_adversarial(disc, real, fake, config);
  CHECK(l.disc_loss == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(l.gen_loss == doctest::Approx(std::log(2.0)));

  // perfect discriminator saturates at the +-30 clamp and its loss vanishes
  double dl = -log_sigmoid(30.0) - log_sigmoid(30.0);
  CHECK(dl < 1e-9);
}

TEST_CASE("smoothness and diversity spot values") {
  PosteriorSequence p;
  p.rows = MatD(2, 3);
  p.rows.at(0, 0) = 1.0;  // one-hot a
  p.rows.at(1, 1) = 1.0;  // one-hot b
  CHECK(loss_smoothness(p) == doctest::Approx(2.0));

  PosteriorSequence same;
  same.rows = MatD(4, 3);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 3; ++c) same.rows.at(t, c) = 1.0 / 3.0;
  CHECK(loss_smoothness(same) == doctest::Approx(0.0));

  PosteriorSequence single;
  single.rows = MatD(1, 3);
  single.rows.at(0, 0) = 1.0;
  CHECK(loss_smoothness(single) == doctest::Approx(0.0));

  // uniform rows: L_pd = -log|O| (minimum)
  std::vector<PosteriorSequence> uniform_batch = {same};
  CHECK(loss_diversity(uniform_batch) == doctest::Approx(-std::log(3.0)));

  // all rows one-hot on the same phoneme: L_pd = 0 (maximum)
  PosteriorSequence hot;
  hot.rows = MatD(3, 3);
  for (int t = 0; t < 3; ++t) hot.rows.at(t, 2) = 1.0;
  std::vector<PosteriorSequence> hot_batch = {hot};
  CHECK(loss_diversity(hot_batch) == doctest::Approx(0.0));

  // two rows one-hot on different phonemes -> -log 2
  CHECK(loss_diversity({p}) == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("gradient penalty trivial values") {
  GanConfig config;
  config.hidden_dim = 4;
  // zero discriminator: grad norm 0 -> penalty 1
  DiscriminatorParams zero = init_discriminator(3, config, 2);
  for (auto* conv : {&zero.conv1, &zero.conv2, &zero.conv3}) {
    for (auto& w : conv->w) w = 0.0;
    for (auto& b : conv->b) b = 0.0;
  }
  Rng rng(8);
  std::vector<MatD> real = {random_rows(rng, 4, 3, true)};
  std::vector<MatD> fake = {random_rows(rng, 4, 3, true)};
  CHECK(loss_gradient_penalty(zero, real, fake, 3) == doctest::Approx(1.0));

  // fixed linear map with input-gradient norm exactly 1: C(x) = sum of one
  // input channel per step / M. Build via conv1 identity-ish passthrough is
  // nonlinear (GELU), so check instead on a directly constructed gradient:
  // a single-step input where the analytic gradient is computable.
  // gelu'(0) = 0.5, so a one-weight path x -> h -> logit has d logit/dx =
  // w1 * 0.5 ... scale w3 to land the norm exactly on 1.
  DiscriminatorParams lin = zero;
  lin.conv1.wt(0, lin.conv1.kernel - 1, 0) = 1.0;  // causal tap on current step
  lin.conv2.wt(0, lin.conv2.kernel - 1, 0) = 1.0;
  lin.conv3.wt(0, lin.conv3.kernel - 1, 0) = 1.0;
  MatD probe(1, 3);
  probe.at(0, 0) = 0.3;
  probe.at(0, 1) = 0.4;
  probe.at(0, 2) = 0.3;
  MatD g = discriminator_input_gradient(lin, probe);
  double norm = 0.0;
  for (double v : g.data) norm += v * v;
  norm = std::sqrt(norm);
  REQUIRE(norm > 0.0);
  lin.conv3.wt(0, lin.conv3.kernel - 1, 0) = 1.0 / norm;
  std::vector<MatD> pr = {probe};
  CHECK(loss_gradient_penalty(lin, pr, pr, 0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("finite differences: discriminator input gradient inside L_gp") {
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    GanConfig config = small_config(rng);
    int o = 2 + rng.uniform_int(4);
    int t = 1 + rng.uniform_int(6);
    DiscriminatorParams disc = init_discriminator(o, config, rng.next_u64());
    MatD x = random_rows(rng, t, o, true);
    MatD g = discriminator_input_gradient(disc, x);

    double h = 1e-4;
    for (size_t i = 0; i < x.data.size(); ++i) {
      double keep = x.data[i];
      x.data[i] = keep + h;
      double hi = discriminator_forward_acts(disc, x).score;
      x.data[i] = keep - h;
      double lo = discriminator_forward_acts(disc, x).score;
      x.data[i] = keep;
      double fd = (hi - lo) / (2.0 * h);
      double denom = std::max(std::abs(g.data[i]), std::abs(fd));
      if (denom > 1e-5)
        CHECK(std::abs(g.data[i] - fd) / denom < 1e-4);
      else
        CHECK(std::abs(g.data[i] - fd) < 1e-7);
    }
  }
}

TEST_CASE("finite differences: discriminator objective incl. gradient penalty") {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    GanConfig config = small_config(rng);
    int o = 2 + rng.uniform_int(4);
    DiscriminatorParams disc = init_discriminator(o, config, rng.next_u64());
    MatD real = random_rows(rng, 1 + rng.uniform_int(6), o, false);
    MatD fake = random_rows(rng, 1 + rng.uniform_int(6), o, true);
    double u = rng.uniform();

    DiscGrads grads;
    grads.init(disc);
    disc_objective_with_grads(disc, real, fake, u, config, &grads);

    auto eval = [&]() {
      return disc_objective_with_grads(disc, real, fake, u, config, nullptr).total;
    };
    check_grads(disc.conv1.w, grads.w1, eval);
    check_grads(disc.conv1.b, grads.b1, eval);
    check_grads(disc.conv2.w, grads.w2, eval);
    check_grads(disc.conv2.b, grads.b2, eval);
    check_grads(disc.conv3.w, grads.w3, eval);
    check_grads(disc.conv3.b, grads.b3, eval);
  }
}

TEST_CASE("finite differences: generator objective") {
  Rng rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    GanConfig config = small_config(rng);
    int o = 2 + rng.uniform_int(4);
    int r = 2 + rng.uniform_int(7);
    int t = 1 + rng.uniform_int(6);
    GeneratorParams gen = init_generator(r, o, config, rng.next_u64());
    DiscriminatorParams disc = init_discriminator(o, config, rng.next_u64());
    MatD segments = random_rows(rng, t, r, false);
    uint64_t drop_seed = rng.next_u64();
    uint64_t collapse_seed = rng.next_u64();
    config.minimax_gen_loss = (trial % 5 == 0);

    GenGrads grads;
    grads.init(gen);
    gen_objective_with_grads(gen, disc, segments, config, drop_seed, collapse_seed, &grads);

    auto eval = [&]() {
      return gen_objective_with_grads(gen, disc, segments, config, drop_seed, collapse_seed,
                                      nullptr)
          .total;
    };
    check_grads(gen.conv.w, grads.w, eval);
    check_grads(gen.conv.b, grads.b, eval);
  }
}

TEST_CASE("zero auxiliary weights reduce to the pure adversarial step") {
  Rng rng(404);
  GanConfig config = small_config(rng);
  config.gamma_sp = 0.0;
  config.eta_pd = 0.0;
  int o = 3, r = 4, t = 5;
  GeneratorParams gen = init_generator(r, o, config, 1);
  DiscriminatorParams disc = init_discriminator(o, config, 2);
  MatD segments = random_rows(rng, t, r, false);

  GenGrads grads;
  grads.init(gen);
  auto parts = gen_objective_with_grads(gen, disc, segments, config, 7, 8, &grads);
  CHECK(parts.total == doctest::Approx(parts.adversarial));

  // hand-built pure adversarial gradient: backprop -log sigmoid(score)
  // through disc input, collapse routing, softmax and conv
  GenActs acts = generator_forward_acts(gen, segments, true, 7);
  PosteriorSequence post;
  post.rows = acts.probs;
  post.source_segments = {0, 1, 2, 3, 4};
  PosteriorSequence fake = collapse(post, 8);
  DiscActs facts = discriminator_forward_acts(disc, fake.rows);
  double ds = -sigmoid(-facts.score);
  MatD dcollapsed = discriminator_backward(disc, fake.rows, facts, ds, nullptr);
  MatD dprobs(t, o);
  for (int m = 0; m < fake.rows.rows; ++m)
    for (int c = 0; c < o; ++c) dprobs.at(fake.source_segments[size_t(m)], c) += dcollapsed.at(m, c);
  GenGrads pure;
  pure.init(gen);
  generator_backward(gen, acts, dprobs, &pure);
  for (size_t i = 0; i < grads.w.size(); ++i) CHECK(grads.w[i] == doctest::Approx(pure.w[i]));
  for (size_t i = 0; i < grads.b.size(); ++i) CHECK(grads.b[i] == doctest::Approx(pure.b[i]));
}

TEST_CASE("viterbi transcription merges duplicates with low-index ties") {
  GanConfig config;
  GeneratorParams gen = init_generator(2, 3, config, 0);
  // craft logits via weights: zero weights, bias decides; bias all equal ->
  // ties resolve to phoneme 0
  for (auto& w : gen.conv.w) w = 0.0;
  for (auto& b : gen.conv.b) b = 0.0;
  SegmentSequence segs;
  segs.reps = MatD(4, 2);
  auto out = viterbi_transcribe(gen, segs);
  CHECK(out.phones == std::vector<int>{0});

  // argmaxes a a SIL b -> a SIL b (merge only adjacent duplicates)
  PosteriorSequence post;
  post.rows = MatD(4, 3);
  post.rows.at(0, 1) = 1.0;
  post.rows.at(1, 1) = 1.0;
  post.rows.at(2, 0) = 1.0;
  post.rows.at(3, 2) = 1.0;
  // emulate via collapse + argmax reading
  std::vector<int> merged;
  int prev = -1;
  for (int r = 0; r < 4; ++r) {
    int a = 0;
    for (int j = 1; j < 3; ++j)
      if (post.rows.at(r, j) > post.rows.at(r, a)) a = j;
    if (a != prev) merged.push_back(a);
    prev = a;
  }
  CHECK(merged == std::vector<int>{1, 0, 2});
}

TEST_CASE("config validation enforces sweep ranges") {
  GanConfig ok;
  ok.lambda_gp = 1.75;
  ok.gamma_sp = 0.6;
  ok.eta_pd = 3.0;
  CHECK_NOTHROW(validate_gan_config(ok));
  GanConfig bad = ok;
  bad.lambda_gp = 0.5;
  CHECK_THROWS_AS(validate_gan_config(bad), ConfigError);
  bad = ok;
  bad.eta_pd = 9.0;
  CHECK_THROWS_AS(validate_gan_config(bad), ConfigError);
  bad = ok;
  bad.lr_disc = 0.0;
  CHECK_THROWS_AS(validate_gan_config(bad), ConfigError);
}
