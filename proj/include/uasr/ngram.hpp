#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

// Backoff n-gram model over an arbitrary symbol vocabulary (phonemes or
// words). Events are vocab symbols plus EOS; BOS only ever appears in
// contexts. Estimation is interpolated modified Kneser-Ney; corpora too small
// to support discount estimation fall back to recursive add-k smoothing
// (k = 0.01). Only the highest order is pruned.
class NGramLm {
 public:
  struct Entry {
    double logp = kNoProb;  // natural log; kNoProb for context-only entries
    double bow = 0.0;       // natural log backoff weight
  };
  static constexpr double kNoProb = 1.0;  // impossible log-prob, marks "absent"

  int order = 0;
  long prune_min_count = 0;
  bool used_add_k_fallback = false;
  double add_k = 0.01;
  std::vector<std::string> vocab;
  double train_entropy = 0.0;  // mean conditional entropy over the training corpus
  std::map<std::vector<int>, Entry> table;  // key = gram ids, length 1..order

  int vocab_size() const { return int(vocab.size()); }
  int eos_id() const { return vocab_size(); }
  int bos_id() const { return vocab_size() + 1; }
  int num_events() const { return vocab_size() + 1; }  // vocab + EOS

  int symbol_id(const std::string& symbol) const;  // -1 if unknown

  // log p(word | context); context most-recent-last, may contain BOS
  double logprob(std::span<const int> context, int word) const;

  // full conditional distribution over events (vocab + EOS)
  std::vector<double> conditional(std::span<const int> context) const;

  double entropy(std::span<const int> context) const;
};

NGramLm train_ngram(const std::vector<std::vector<std::string>>& corpus, int order,
                    long prune_min_count);

// Per-token natural-log probabilities with BOS padding; no EOS term, so an
// empty sequence scores to an empty list.
std::vector<double> score(const NGramLm& lm, const std::vector<int>& tokens);
std::vector<double> score_symbols(const NGramLm& lm, const std::vector<std::string>& tokens);

// Mean over positions of the conditional distribution entropy.
double mean_entropy(const NGramLm& lm, const std::vector<int>& tokens);

void save_ngram(const NGramLm& lm, const std::filesystem::path& path);
NGramLm load_ngram(const std::filesystem::path& path);

// Textual interchange dump (ARPA): "\data\" header with per-order counts,
// then "log10prob<TAB>ngram<TAB>log10bow" lines per order.
void export_arpa(const NGramLm& lm, const std::filesystem::path& path);

}  // namespace uasr
