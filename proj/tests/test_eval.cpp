#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "uasr/evalmetrics.hpp"
#include "uasr/rng.hpp"
#include "uasr/synth.hpp"

using namespace uasr;

namespace {

std::vector<int> seq(std::initializer_list<int> v) { return std::vector<int>(v); }

std::vector<int> random_seq(Rng& rng, int max_len, int alphabet) {
  std::vector<int> out(static_cast<size_t>(rng.uniform_int(max_len + 1)));
  for (auto& v : out) v = rng.uniform_int(alphabet);
  return out;
}

}  // namespace

TEST_CASE("edit distance basics") {
  auto same = edit_distance(seq({1, 2, 3}), seq({1, 2, 3}));
  CHECK(same.total_errors() == 0);
  CHECK(same.rate() == doctest::Approx(0.0));

  auto sub = edit_distance(seq({1, 2, 3}), seq({1, 2, 4}));
  CHECK(sub.substitutions == 1);
  CHECK(sub.insertions == 0);
  CHECK(sub.deletions == 0);
  CHECK(sub.rate() == doctest::Approx(1.0 / 3.0));

  auto del = edit_distance(seq({1, 2}), seq({}));
  CHECK(del.deletions == 2);
  CHECK(del.rate() == doctest::Approx(1.0));

  auto empty_ref = edit_distance(seq({}), seq({5, 6, 7}));
  CHECK(empty_ref.empty_reference);
  CHECK(empty_ref.reference_length == 0);
  CHECK(empty_ref.insertions == 3);
  CHECK(empty_ref.rate() == doctest::Approx(3.0));

  auto words = edit_distance(std::vector<std::string>{"the", "cat"},
                             std::vector<std::string>{"the", "hat"});
  CHECK(words.substitutions == 1);
}

TEST_CASE("edit distance metric properties") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = random_seq(rng, 8, 4);
    auto b = random_seq(rng, 8, 4);
    auto c = random_seq(rng, 8, 4);
    long ab = edit_distance(a, b).total_errors();
    long ba = edit_distance(b, a).total_errors();
    long bc = edit_distance(b, c).total_errors();
    long ac = edit_distance(a, c).total_errors();
    CHECK(ab == ba);  // symmetry of the total (I and D swap roles)
    CHECK(ac <= ab + bc);
    CHECK((ab == 0) == (a == b));
  }

  // swapping ref/hyp exchanges insertions and deletions
  auto fwd = edit_distance(seq({1, 2, 3, 4}), seq({1, 3}));
  auto rev = edit_distance(seq({1, 3}), seq({1, 2, 3, 4}));
  CHECK(fwd.deletions == rev.insertions);
  CHECK(fwd.insertions == rev.deletions);
  CHECK(fwd.substitutions == rev.substitutions);
}

TEST_CASE("micro averaging sums counts before dividing") {
  std::vector<ErrorReport> reports;
  reports.push_back(edit_distance(seq({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}),
                                  seq({1, 2, 3, 4, 5, 6, 7, 8, 9, 10})));
  reports.push_back(edit_distance(seq({1}), seq({2})));
  auto total = accumulate(reports);
  CHECK(total.rate() == doctest::Approx(1.0 / 11.0));
}

TEST_CASE("synthetic generation is deterministic and structured") {
  SyntheticSpec spec;
  spec.num_phones = 5;
  spec.num_words = 10;
  spec.feature_dim = 6;
  spec.seed = 42;
  auto a = generate_synthetic(spec, 20, true);
  auto b = generate_synthetic(spec, 20, true);
  REQUIRE(a.features.size() == 20);
  for (size_t u = 0; u < a.features.size(); ++u)
    CHECK(a.features[u].frames.data == b.features[u].frames.data);
  CHECK(a.inventory.size() == 6);  // SIL + 5

  // frame labels match reference phones when collapsed
  for (size_t u = 0; u < a.features.size(); ++u) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int l : a.frame_labels[u]) {
      if (l != prev) collapsed.push_back(l);
      prev = l;
    }
    CHECK(collapsed == a.references[u].phones);
  }

  // gold boundaries are the label change points
  for (size_t u = 0; u < a.features.size(); ++u) {
    std::vector<int> expect;
    for (size_t t = 1; t < a.frame_labels[u].size(); ++t)
      if (a.frame_labels[u][t] != a.frame_labels[u][t - 1]) expect.push_back(int(t));
    CHECK(a.gold_boundaries[u] == expect);
  }

  // matched mode: text corpus is a permutation of the reference words
  auto sorted_text = a.text_corpus;
  auto sorted_refs = a.ref_words;
  std::sort(sorted_text.begin(), sorted_text.end());
  std::sort(sorted_refs.begin(), sorted_refs.end());
  CHECK(sorted_text == sorted_refs);

  // unmatched mode: disjoint sentence sets
  auto c = generate_synthetic(spec, 20, false);
  std::sort(c.text_corpus.begin(), c.text_corpus.end());
  for (const auto& words : c.ref_words)
    CHECK_FALSE(std::binary_search(c.text_corpus.begin(), c.text_corpus.end(), words));
}

TEST_CASE("noise-free single-frame emissions equal the means exactly") {
  SyntheticSpec spec;
  spec.num_phones = 4;
  spec.num_words = 6;
  spec.feature_dim = 5;
  spec.noise_level = 0.0;
  spec.min_frames_per_phone = 1;
  spec.max_frames_per_phone = 1;
  spec.silence_at_edges = false;
  spec.silence_prob_interior = 0.0;
  spec.seed = 3;
  auto corpus = generate_synthetic(spec, 5, true);
  for (size_t u = 0; u < corpus.features.size(); ++u) {
    const auto& f = corpus.features[u];
    REQUIRE(f.num_frames() == int(corpus.frame_labels[u].size()));
    for (int t = 0; t < f.num_frames(); ++t) {
      int phone = corpus.frame_labels[u][static_cast<size_t>(t)];
      for (int c = 0; c < f.dim(); ++c)
        CHECK(f.frames.at(t, c) == doctest::Approx(corpus.phone_means.at(phone, c)));
    }
  }
}

TEST_CASE("degenerate synthetic specs are rejected") {
  SyntheticSpec spec;
  spec.mean_margin = 0.0;
  CHECK_THROWS_AS(generate_synthetic(spec, 3, true), Error);
}

TEST_CASE("linear probe separates a gentle-noise corpus") {
  SyntheticSpec spec;
  spec.num_phones = 6;
  spec.num_words = 12;
  spec.feature_dim = 8;
  spec.mean_margin = 4.0;
  spec.noise_level = 0.4;  // 0.1 x margin
  spec.seed = 7;
  auto corpus = generate_synthetic(spec, 60, true);
  auto probe = linear_probe(corpus);
  CHECK(probe.frame_accuracy >= 0.98);
  CHECK(probe.per <= 2.0 / 100.0);
}
