#pragma once

#include <vector>

#include "uasr/features.hpp"
#include "uasr/ngram.hpp"
#include "uasr/text.hpp"

namespace uasr {

// Synthetic speech-like corpus: a bigram word grammar over a random lexicon,
// per-phoneme Gaussian feature emissions with margin-separated means, and
// injected silence runs standing in for imperfect silence removal.
struct SyntheticSpec {
  int num_phones = 8;  // excluding SIL
  int num_words = 30;
  int min_word_len = 1, max_word_len = 4;
  int feature_dim = 12;
  double mean_margin = 4.0;   // minimum pairwise distance between emission means
  double noise_level = 0.2;   // stddev of the additive feature noise
  int min_frames_per_phone = 2, max_frames_per_phone = 4;
  int min_words_per_sentence = 2, max_words_per_sentence = 6;
  double silence_prob_interior = 0.25;  // chance of a silence run between words
  bool silence_at_edges = true;
  int min_sil_frames = 1, max_sil_frames = 3;
  uint64_t seed = 0;
};

struct SyntheticCorpus {
  PhonemeInventory inventory;
  Lexicon lexicon;
  MatD phone_means;  // inventory.size() x feature_dim (row 0 = SIL)
  std::vector<FeatureSequence> features;
  std::vector<PhonemeSequence> references;      // gold phones incl. injected SIL
  std::vector<std::vector<std::string>> ref_words;
  std::vector<std::vector<int>> frame_labels;   // per-frame inventory index
  std::vector<std::vector<int>> gold_boundaries;
  std::vector<std::vector<std::string>> text_corpus;  // unpaired text (words)
};

// matched: the text corpus is a shuffle of the audio transcriptions;
// unmatched: freshly sampled sentences disjoint from them.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, int n_utterances,
                                   bool matched = true);

struct ProbeResult {
  double frame_accuracy = 0.0;
  double per = 0.0;  // collapsed frame argmaxes vs reference, SIL stripped
};

// Supervised multinomial-logistic probe over frames; the fixture validity
// gate for every synthetic corpus used in acceptance runs.
ProbeResult linear_probe(const SyntheticCorpus& corpus, int iterations = 300, double lr = 0.5);

}  // namespace uasr
