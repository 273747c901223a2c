#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "uasr/rng.hpp"
#include "uasr/xval.hpp"

using namespace uasr;

namespace {

PhonemeInventory toy_inventory() {
  // SIL + 3 phones
  return build_inventory({{"a", "b", "c"}}, 0);
}

NGramLm uniform_lm(const PhonemeInventory& inv) {
  NGramLm lm;
  lm.order = 1;
  for (int i = 0; i < inv.size(); ++i)
    if (inv.is_scorable(i)) lm.vocab.push_back(inv.symbol(i));
  std::sort(lm.vocab.begin(), lm.vocab.end());
  double p = 1.0 / double(lm.vocab.size() + 1);
  for (int i = 0; i <= int(lm.vocab.size()); ++i) lm.table[{i}].logp = std::log(p);
  return lm;
}

CandidateReport report(const std::string& id, double nll, double usage, double total) {
  CandidateReport r;
  r.config_id = id;
  r.nll = nll;
  r.usage = usage;
  r.total_logprob = total;
  return r;
}

}  // namespace

TEST_CASE("evaluate_candidate strips SIL and counts usage") {
  auto inv = toy_inventory();
  auto lm = uniform_lm(inv);
  int sil = inv.sil_index;
  int a = inv.index_of("a"), b = inv.index_of("b");

  std::vector<PhonemeSequence> transcripts;
  PhonemeSequence t1;
  t1.phones = {sil, a, a, sil};
  transcripts.push_back(t1);
  PhonemeSequence t2;
  t2.phones = {b, sil};
  transcripts.push_back(t2);

  auto r = evaluate_candidate("c0", transcripts, lm, inv);
  CHECK(r.usage == doctest::Approx(2.0 / 3.0));
  // uniform over 4 events: every token scores -log 4
  CHECK(r.nll == doctest::Approx(std::log(4.0)));
  CHECK(r.total_logprob == doctest::Approx(-3.0 * std::log(4.0)));
  CHECK(r.num_empty == 0);

  // [SIL a a SIL] scored as [a a]: same nll as the explicit strip
  PhonemeSequence bare;
  bare.phones = {a, a};
  auto r2 = evaluate_candidate("c1", {bare}, lm, inv);
  auto r3 = evaluate_candidate("c2", {t1}, lm, inv);
  CHECK(r2.nll == doctest::Approx(r3.nll));

  // all-SIL transcripts error out
  PhonemeSequence silent;
  silent.phones = {sil, sil};
  CHECK_THROWS_AS(evaluate_candidate("c3", {silent}, lm, inv), Error);

  // empty-after-strip counted but skipped when another utterance scores
  auto r4 = evaluate_candidate("c4", {t1, silent}, lm, inv);
  CHECK(r4.num_empty == 1);
  CHECK(r4.nll == doctest::Approx(std::log(4.0)));
}

TEST_CASE("anchor selection minimizes usage-adjusted nll") {
  auto a = report("A", 2.0, 0.5, -10.0);
  auto b = report("B", 2.1, 0.9, -10.0);
  // adjusted: A = 2.0 - log 0.5 = 2.693, B = 2.1 - log 0.9 = 2.205
  CHECK(a.adjusted_nll() == doctest::Approx(2.0 - std::log(0.5)));
  CHECK(b.adjusted_nll() == doctest::Approx(2.1 - std::log(0.9)));
  auto anchor = select_anchor({a, b});
  CHECK(anchor.config_id == "B");

  auto only = select_anchor({a});
  CHECK(only.config_id == "A");

  // identical reports: first config_id wins
  auto t1 = report("x", 1.0, 0.5, -1.0);
  auto t2 = report("y", 1.0, 0.5, -1.0);
  CHECK(select_anchor({t2, t1}).config_id == "x");

  // zero-usage candidates are excluded, not fatal
  auto degenerate = report("z", 0.1, 0.0, -1.0);
  CHECK(select_anchor({degenerate, a}).config_id == "A");
  CHECK_THROWS_AS(select_anchor({degenerate}), Error);
}

TEST_CASE("margin filter") {
  auto anchor = report("anchor", 2.0, 0.5, -10.0);

  // same usage, nll = anchor + log 1.3 -> rejected (margin is log 1.2)
  auto near = report("near", 2.0 + std::log(1.3), 0.5, -10.0);
  // usage 2x anchor, nll = anchor + log 2 -> bound log 2 + log 1.2 -> accepted
  auto wide = report("wide", 2.0 + std::log(2.0), 1.0, -10.0);

  auto survivors = filter_candidates({anchor, near, wide}, anchor);
  std::vector<std::string> ids;
  for (const auto& s : survivors) ids.push_back(s.config_id);
  CHECK(ids == std::vector<std::string>{"anchor", "wide"});

  // anchor alone always survives its own bound
  auto solo = filter_candidates({anchor}, anchor);
  REQUIRE(solo.size() == 1);
  CHECK(solo[0].config_id == "anchor");
}

TEST_CASE("final selection maximizes unnormalized total log prob") {
  auto a = report("a", 2.0, 0.5, -100.0);
  auto b = report("b", 2.0, 0.5, -50.0);  // shorter total wins
  auto c = report("c", 2.0, 0.5, -70.0);
  CHECK(select_final({a, b, c}).config_id == "b");
  CHECK(select_final({a}).config_id == "a");

  auto t1 = report("t1", 2.0, 0.5, -50.0);
  auto t2 = report("t2", 2.0, 0.5, -50.0);
  CHECK(select_final({t2, t1}).config_id == "t1");
}

TEST_CASE("scale property: constant nll shift leaves selection unchanged") {
  Rng rng(5);
  std::vector<CandidateReport> reports;
  for (int i = 0; i < 10; ++i)
    reports.push_back(report("c" + std::to_string(i), 1.0 + rng.uniform() * 3.0,
                             0.1 + 0.9 * rng.uniform(), -100.0 * rng.uniform()));
  auto anchor = select_anchor(reports);
  auto survivors = filter_candidates(reports, anchor);

  std::vector<CandidateReport> shifted = reports;
  for (auto& r : shifted) r.nll += 5.0;
  auto anchor2 = select_anchor(shifted);
  auto survivors2 = filter_candidates(shifted, anchor2);
  CHECK(anchor2.config_id == anchor.config_id);
  REQUIRE(survivors2.size() == survivors.size());
  for (size_t i = 0; i < survivors.size(); ++i)
    CHECK(survivors2[i].config_id == survivors[i].config_id);
}

TEST_CASE("full selection is pure and repeatable") {
  auto inv = toy_inventory();
  auto lm = uniform_lm(inv);
  Rng rng(17);
  std::vector<std::vector<PhonemeSequence>> candidates;
  for (int c = 0; c < 4; ++c) {
    std::vector<PhonemeSequence> ts;
    for (int u = 0; u < 6; ++u) {
      PhonemeSequence t;
      int len = 2 + rng.uniform_int(5);
      for (int i = 0; i < len; ++i) t.phones.push_back(1 + rng.uniform_int(inv.size() - 1));
      ts.push_back(t);
    }
    candidates.push_back(ts);
  }
  auto run = [&]() {
    std::vector<CandidateReport> reports;
    for (size_t c = 0; c < candidates.size(); ++c)
      reports.push_back(
          evaluate_candidate("c" + std::to_string(c), candidates[c], lm, inv));
    auto anchor = select_anchor(reports);
    auto survivors = filter_candidates(reports, anchor);
    return select_final(survivors).config_id;
  };
  CHECK(run() == run());
}
