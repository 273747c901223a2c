#pragma once

#include <string>
#include <vector>

#include "uasr/ngram.hpp"
#include "uasr/text.hpp"

namespace uasr {

// Unsupervised model-selection report for one candidate configuration.
struct CandidateReport {
  std::string config_id;
  double nll = 0.0;            // mean per-token negative log-likelihood, SIL stripped
  double usage = 0.0;          // fraction of scorable inventory used
  double total_logprob = 0.0;  // unnormalized sum of token log-probs
  int num_transcripts = 0;
  int num_empty = 0;  // empty after SIL stripping, skipped in the NLL mean

  double adjusted_nll() const;  // nll - log(usage)
};

CandidateReport evaluate_candidate(const std::string& config_id,
                                   const std::vector<PhonemeSequence>& transcripts,
                                   const NGramLm& lm, const PhonemeInventory& inventory);

// argmin of nll - log(usage); ties by lower nll then config_id. Candidates
// with usage == 0 are excluded with a warning.
CandidateReport select_anchor(const std::vector<CandidateReport>& reports);

// keeps candidates with nll < anchor.nll + log(usage/anchor.usage) + log 1.2
std::vector<CandidateReport> filter_candidates(const std::vector<CandidateReport>& reports,
                                               const CandidateReport& anchor);

// argmax of total_logprob; ties by config_id
CandidateReport select_final(const std::vector<CandidateReport>& survivors);

}  // namespace uasr
