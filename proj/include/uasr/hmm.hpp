#pragma once

#include <filesystem>
#include <vector>

#include "uasr/decode.hpp"
#include "uasr/features.hpp"
#include "uasr/text.hpp"

namespace uasr {

struct HmmConfig {
  int states_per_phoneme = 1;  // left-to-right chain per phoneme
  int num_components = 1;      // diagonal Gaussians per state
  int iterations = 10;
  double var_floor = 1e-3;
  double self_loop_init = 0.5;
};

// One emitting state: diagonal-covariance GMM plus self-loop/forward
// transition probabilities (they sum to 1; no exit probability is modeled,
// an alignment just has to end in the final chain state).
struct HmmState {
  MatD means;  // components x dim
  MatD vars;   // components x dim, floored
  std::vector<double> weights;
  double self_loop = 0.5;
  double forward = 0.5;
};

struct HmmModel {
  HmmConfig config;
  int num_phones = 0;
  int dim = 0;
  std::vector<HmmState> states;  // num_phones * states_per_phoneme
  std::vector<double> train_loglik_history;

  int state_index(int phone, int sub) const { return phone * config.states_per_phoneme + sub; }
  double emission_loglik(int state, const float* frame) const;
  // log p(x | phone): logsumexp over the phone's states, uniform state prior
  double phone_loglik(int phone, const float* frame) const;
};

struct Alignment {
  std::vector<int> chain_states;  // per-frame index into the utterance chain
  double loglik = 0.0;

  // map chain index to the phone position in the label sequence
  int phone_position(int chain_index, int states_per_phoneme) const {
    return chain_states[size_t(chain_index)] / states_per_phoneme;
  }
};

// EM from a flat start (global feature statistics); utterances whose label
// chain is longer than their frame count are skipped with a warning.
HmmModel train_hmm(const std::vector<FeatureSequence>& features,
                   const std::vector<PhonemeSequence>& pseudo_labels,
                   const PhonemeInventory& inventory, const HmmConfig& config);

// log p(X | P) marginalized over alignments (forward algorithm, log space);
// -inf when no alignment is feasible
double hmm_total_logprob(const HmmModel& model, const FeatureSequence& features,
                         const PhonemeSequence& phones);

// max-probability state path; ties prefer the path whose forward transitions
// happen earlier
Alignment forced_align(const HmmModel& model, const FeatureSequence& features,
                       const PhonemeSequence& phones);

// per-frame phone log-likelihood rows fed through the beam decoder
std::vector<PhonemeSequence> hmm_relabel(const HmmModel& model,
                                         const std::vector<FeatureSequence>& features,
                                         const DecoderContext& decoder,
                                         const PhonemeInventory& inventory,
                                         const DecodeConfig& decode_config);

void save_hmm(const HmmModel& model, const std::filesystem::path& path);
HmmModel load_hmm(const std::filesystem::path& path);

}  // namespace uasr
