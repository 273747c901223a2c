#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uasr/ctc.hpp"
#include "uasr/gan.hpp"
#include "uasr/hmm.hpp"
#include "uasr/pca.hpp"

namespace uasr {

enum class SelfTrainStrategy {
  kHmm,              // one HMM round, relabel
  kHmmHmm,           // two HMM rounds
  kCtcDirect,        // CTC straight on the GAN pseudo-labels
  kHmmCtc,           // HMM round, then CTC on the relabeled data
  kHmmResegmentGan,  // HMM forced-alignment boundaries, GAN retrained on them
};

SelfTrainStrategy parse_strategy(const std::string& name);
std::string strategy_name(SelfTrainStrategy strategy);

struct SelfTrainInputs {
  const std::vector<FeatureSequence>* features = nullptr;
  const std::vector<PhonemeSequence>* pseudo_labels = nullptr;  // SIL-free GAN decodes
  const PhonemeInventory* inventory = nullptr;
  const NGramLm* phone_lm = nullptr;
  DecodeConfig decode_config;
  HmmConfig hmm_config;
  CtcConfig ctc_config;
  // HMM label chains get SIL wrapped around them so silence frames at the
  // utterance edges have a state to live in
  bool wrap_labels_with_sil = true;
  const std::vector<PhonemeSequence>* references = nullptr;  // evaluation only
  // resegment + GAN retraining path
  const PcaModel* pca = nullptr;
  const GanConfig* gan_config = nullptr;
  const std::vector<PhonemeSequence>* text_corpus = nullptr;
};

struct StageMetric {
  std::string stage;
  double per = -1.0;  // -1 when no references were supplied
};

struct SelfTrainResult {
  std::vector<PhonemeSequence> final_labels;
  std::vector<StageMetric> metrics;
  std::optional<HmmModel> hmm;
  std::optional<CtcModel> ctc;
};

SelfTrainResult self_train_pipeline(SelfTrainStrategy strategy, const SelfTrainInputs& inputs);

// micro-averaged phoneme error rate with SIL/blank stripped on both sides
double corpus_per(const std::vector<PhonemeSequence>& hypotheses,
                  const std::vector<PhonemeSequence>& references,
                  const PhonemeInventory& inventory);

}  // namespace uasr
