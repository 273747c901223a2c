#pragma once

#include <string>
#include <vector>

#include "uasr/gan.hpp"
#include "uasr/ngram.hpp"
#include "uasr/text.hpp"

namespace uasr {

// Frame/segment-level log-scores over an emission alphabet. The blank entry
// (SIL for phoneme systems, epsilon for letter CTC) drives the CTC-style
// collapse semantics during decoding.
struct EmissionSequence {
  std::string utterance_id;
  MatD rows;  // M x V
  int blank = 0;
  double blank_bonus = 0.0;  // the nu already folded into the blank column
};

struct DecodeConfig {
  double acoustic_scale = 1.0;  // tuned in [0, 8]
  double blank_bonus = 0.0;     // nu, tuned in [-3, 8]
  int beam_size = 50;           // dev beam; final scoring uses 500
  double lm_weight_alpha = 1.0;
};

void validate_decode_config(const DecodeConfig& config);

struct DecodeResult {
  std::vector<std::string> words;
  PhonemeSequence phones;  // concatenated lexicon pronunciations
  double acoustic_score = 0.0;
  double lm_score = 0.0;
  double bonus_score = 0.0;
  double total_score = 0.0;
};

// Runs of equal argmax are averaged into one row, then log, acoustic scale,
// and the blank bonus are applied.
EmissionSequence build_emissions(const PosteriorSequence& posteriors, const DecodeConfig& config,
                                 int blank_index);

// Same scaling/bonus treatment for rows that are already log-likelihoods
// (HMM relabeling path); no run averaging.
EmissionSequence build_emissions_from_loglik(const std::string& utterance_id, const MatD& loglik,
                                             const DecodeConfig& config, int blank_index);

// Prebuilt lexicon trie plus LM symbol mappings, shared across utterances.
struct DecoderContext {
  struct Node {
    std::vector<std::pair<int, int>> edges;  // (phone id, child node)
    std::vector<int> words;                  // lexicographically sorted word ids
  };
  std::vector<Node> nodes;  // node 0 is the root
  std::vector<std::string> word_names;
  std::vector<std::vector<int>> word_phones;
  std::vector<int> word_lm_ids;
  const NGramLm* lm = nullptr;
};

DecoderContext build_decoder(const Lexicon& lexicon, const PhonemeInventory& inventory,
                             const NGramLm& lm);

// Identity lexicon over scorable phonemes, for phoneme-level decoding with a
// phoneme-token LM.
Lexicon make_phoneme_lexicon(const PhonemeInventory& inventory);

DecodeResult decode_beam(const EmissionSequence& emissions, const DecoderContext& context,
                         const DecodeConfig& config);
DecodeResult decode_beam(const EmissionSequence& emissions, const Lexicon& lexicon,
                         const PhonemeInventory& inventory, const NGramLm& lm,
                         const DecodeConfig& config);

// One (acoustic_scale, nu) candidate of the unsupervised tuning objective.
struct TuneCandidate {
  DecodeConfig config;
  std::vector<DecodeResult> decoded;  // one per dev utterance, fixed order
};

struct TuneOutcome {
  DecodeConfig best;
  std::vector<double> objectives;  // aligned with the candidate list
};

// Minimizes sum_j H_LM(decoded_j) * max(ED(decoded_j, viterbi_j), mu) with
// the LM-training-data entropy as a floor on H_LM. The Viterbi outputs have
// SIL stripped before comparison.
TuneOutcome tune_decode(const std::vector<TuneCandidate>& candidates,
                        const std::vector<PhonemeSequence>& dev_viterbi, const NGramLm& lm,
                        const PhonemeInventory& inventory, double mu = 0.03);

// supervised validation path: pick alpha minimizing summed word edit distance
double tune_lm_weight_supervised(const std::vector<EmissionSequence>& dev_emissions,
                                 const std::vector<std::vector<std::string>>& references,
                                 const DecoderContext& context, const DecodeConfig& base,
                                 const std::vector<double>& alpha_grid);

// default tuning grids: unit steps over [0,8] x [-3,8], then a half-step
// refinement pass around the best cell
std::vector<std::pair<double, double>> decode_tuning_grid();
std::vector<std::pair<double, double>> decode_refinement_grid(double best_scale, double best_nu);

}  // namespace uasr
