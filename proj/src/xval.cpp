#include "uasr/xval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace uasr {

double CandidateReport::adjusted_nll() const { return nll - std::log(usage); }

CandidateReport evaluate_candidate(const std::string& config_id,
                                   const std::vector<PhonemeSequence>& transcripts,
                                   const NGramLm& lm, const PhonemeInventory& inventory) {
  UASR_REQUIRE(!transcripts.empty(), "evaluate_candidate: no transcripts");

  // inventory index -> lm id, SIL and blank excluded from scoring
  std::vector<int> lm_id(size_t(inventory.size()), -1);
  for (int i = 0; i < inventory.size(); ++i) {
    if (!inventory.is_scorable(i)) continue;
    lm_id[size_t(i)] = lm.symbol_id(inventory.symbol(i));
    if (lm_id[size_t(i)] < 0)
      throw Error("evaluate_candidate: inventory symbol not in LM vocab: " +
                  inventory.symbol(i));
  }

  CandidateReport report;
  report.config_id = config_id;
  report.num_transcripts = int(transcripts.size());

  std::set<int> used;
  double nll_acc = 0.0;
  int scored = 0;
  for (const auto& t : transcripts) {
    std::vector<int> ids;
    for (int p : t.phones) {
      if (!inventory.is_scorable(p)) continue;
      used.insert(p);
      ids.push_back(lm_id[size_t(p)]);
    }
    if (ids.empty()) {
      report.num_empty += 1;
      continue;
    }
    std::vector<double> lp = score(lm, ids);
    double total = 0.0;
    for (double v : lp) total += v;
    report.total_logprob += total;
    nll_acc += -total / double(ids.size());
    ++scored;
  }
  if (scored == 0) throw Error("evaluate_candidate: all transcripts empty after SIL stripping");
  report.nll = nll_acc / double(scored);
  report.usage = double(used.size()) / double(inventory.num_scorable());
  return report;
}

CandidateReport select_anchor(const std::vector<CandidateReport>& reports) {
  UASR_REQUIRE(!reports.empty(), "select_anchor: no candidates");
  const CandidateReport* best = nullptr;
  for (const auto& r : reports) {
    if (r.usage <= 0.0) {
      log_warn("candidate %s excluded from anchor selection: usage is 0", r.config_id.c_str());
      continue;
    }
    if (!best) {
      best = &r;
      continue;
    }
    double a = r.adjusted_nll(), b = best->adjusted_nll();
    if (a < b || (a == b && (r.nll < best->nll ||
                             (r.nll == best->nll && r.config_id < best->config_id))))
      best = &r;
  }
  if (!best) throw Error("select_anchor: every candidate has zero usage");
  return *best;
}

std::vector<CandidateReport> filter_candidates(const std::vector<CandidateReport>& reports,
                                               const CandidateReport& anchor) {
  std::vector<CandidateReport> out;
  for (const auto& r : reports) {
    if (r.usage <= 0.0) continue;
    double bound = anchor.nll + std::log(r.usage / anchor.usage) + std::log(1.2);
    if (r.nll < bound) out.push_back(r);
  }
  return out;
}

CandidateReport select_final(const std::vector<CandidateReport>& survivors) {
  UASR_REQUIRE(!survivors.empty(), "select_final: no surviving candidates");
  const CandidateReport* best = &survivors.front();
  for (const auto& r : survivors) {
    if (r.total_logprob > best->total_logprob ||
        (r.total_logprob == best->total_logprob && r.config_id < best->config_id))
      best = &r;
  }
  return *best;
}

}  // namespace uasr
