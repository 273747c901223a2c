#pragma once

#include <filesystem>
#include <vector>

#include "uasr/features.hpp"
#include "uasr/net.hpp"
#include "uasr/text.hpp"

namespace uasr {

// CTC collapse: merge consecutive repeats, then drop blanks.
std::vector<int> ctc_collapse(const std::vector<int>& alignment, int blank);

struct CtcLossResult {
  double loss = 0.0;  // negative log posterior
  MatD grad;          // d loss / d log_emissions, exact
};

// log_emissions: T x (V+1) normalized log-distributions, blank at index
// `blank`. Throws when no alignment of the target is feasible.
CtcLossResult ctc_loss(const MatD& log_emissions, const std::vector<int>& target, int blank);

struct CtcConfig {
  int hidden_dim = 256;
  int kernel = 5;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch_size = 16;
  long total_steps = 2000;
  uint64_t seed = 0;
};

// Two same-padded convolutions (GELU between) over frame features, emitting
// log-probabilities over inventory + blank.
struct CtcModel {
  Conv1d conv1;  // dim -> hidden
  Conv1d conv2;  // hidden -> V+1
  int blank = 0;

  int input_dim() const { return conv1.in_ch; }
  int num_outputs() const { return conv2.out_ch; }
};

MatD ctc_forward(const CtcModel& model, const FeatureSequence& features);  // log-probs

CtcModel train_ctc(const std::vector<FeatureSequence>& features,
                   const std::vector<PhonemeSequence>& labels, const PhonemeInventory& inventory,
                   const CtcConfig& config, std::vector<double>* loss_history = nullptr);

PhonemeSequence ctc_greedy_decode(const CtcModel& model, const FeatureSequence& features);

void save_ctc(const CtcModel& model, const std::filesystem::path& path);
CtcModel load_ctc(const std::filesystem::path& path);

}  // namespace uasr
