#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uasr/net.hpp"
#include "uasr/ngram.hpp"
#include "uasr/segment.hpp"
#include "uasr/text.hpp"

namespace uasr {

// Single non-causal convolution from segment representations to phoneme
// logits; softmax per step. Dropout applies to the input in train mode.
struct GeneratorParams {
  Conv1d conv;  // in = segment dim, out = |O|, kernel 4
  double dropout_p = 0.1;

  int input_dim() const { return conv.in_ch; }
  int num_phones() const { return conv.out_ch; }
  size_t param_count() const { return conv.param_count(); }
};

// Three causal convolution blocks (the first embeds the |O|-dim rows, the
// last produces one logit per step) with GELU between; receptive field is
// 3*(kernel-1)+1 = 16 steps at kernel 6. The utterance score is the mean of
// the per-step logits.
struct DiscriminatorParams {
  Conv1d conv1;  // |O| -> hidden
  Conv1d conv2;  // hidden -> hidden
  Conv1d conv3;  // hidden -> 1
  int receptive_field() const {
    return (conv1.kernel - 1) + (conv2.kernel - 1) + (conv3.kernel - 1) + 1;
  }
  size_t param_count() const {
    return conv1.param_count() + conv2.param_count() + conv3.param_count();
  }
};

struct PosteriorSequence {
  std::string utterance_id;
  MatD rows;                         // M x |O|, each row a distribution
  std::vector<int> source_segments;  // original segment index behind each row
};

struct GanConfig {
  double lambda_gp = 1.5;   // [1.5, 2.0]
  double gamma_sp = 0.5;    // [0.5, 0.75]
  double eta_pd = 2.0;      // [2, 4]
  double lr_gen = 1e-4;
  double lr_disc = 1e-5;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.98;
  double weight_decay_disc = 1e-4;
  int batch_size = 160;
  long total_steps = 20000;  // desk-scale default; the paper setting is 150k
  long checkpoint_interval = 500;
  uint64_t seed = 0;
  int hidden_dim = 384;
  int gen_kernel = 4;
  int disc_kernel = 6;
  double dropout_p = 0.1;
  double logit_clamp = 30.0;
  bool minimax_gen_loss = false;  // true switches to log(1 - sigma(C(G(S))))
};

// throws ConfigError when a weight falls outside its sweep range
void validate_gan_config(const GanConfig& config);

GeneratorParams init_generator(int input_dim, int num_phones, const GanConfig& config,
                               uint64_t seed);
DiscriminatorParams init_discriminator(int num_phones, const GanConfig& config, uint64_t seed);

PosteriorSequence generator_forward(const GeneratorParams& params, const SegmentSequence& segments,
                                    bool train_mode, uint64_t seed);

// Maximal runs with equal argmax collapse to a single row sampled uniformly
// from the run; source_segments records the sampled index for gradient
// routing.
PosteriorSequence collapse(const PosteriorSequence& posteriors, uint64_t seed);

struct DiscOutput {
  std::vector<double> logits;  // one per step
  double score = 0.0;          // mean over steps
};

DiscOutput discriminator_forward(const DiscriminatorParams& params, const MatD& rows);

struct AdvLoss {
  double disc_loss = 0.0;
  double gen_loss = 0.0;
};

MatD one_hot_rows(const PhonemeSequence& phones, int num_phones);

// Batch losses on precomputed discriminator scores; training uses the
// gradient paths in gan.cpp directly.
AdvLoss loss_adversarial(const DiscriminatorParams& disc, const std::vector<MatD>& real,
                         const std::vector<MatD>& fake, const GanConfig& config);

double loss_gradient_penalty(const DiscriminatorParams& disc, const std::vector<MatD>& real,
                             const std::vector<MatD>& fake, uint64_t seed);

// sum over adjacent pre-collapse rows of the squared L2 distance
double loss_smoothness(const PosteriorSequence& posteriors);

// mean over the batch of -entropy(mean over steps of the softmax rows)
double loss_diversity(const std::vector<PosteriorSequence>& batch);

struct MetricSnapshot {
  double nll = 0.0;
  double usage = 0.0;
  double adjusted = 0.0;  // nll - log(usage)
  double total_logprob = 0.0;
  bool valid = false;
};

struct Checkpoint {
  long step = 0;
  GeneratorParams generator;
  DiscriminatorParams discriminator;
  Adam gen_opt, disc_opt;
  std::string rng_state;
  MetricSnapshot metric;
};

struct TrainLogRecord {
  long step = 0;
  char kind = 'd';  // 'd' or 'g'
  double disc_loss = 0.0, gen_loss = 0.0, l_gp = 0.0, l_sp = 0.0, l_pd = 0.0;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<TrainLogRecord> log;
};

// Alternating Adam updates (even steps discriminator, odd steps generator);
// deterministic given config.seed, resumable from any checkpoint.
TrainResult train_gan(const GanConfig& config, const std::vector<SegmentSequence>& audio,
                      const std::vector<PhonemeSequence>& text, const NGramLm& lm,
                      const PhonemeInventory& inventory,
                      const std::vector<SegmentSequence>* dev_audio = nullptr,
                      const Checkpoint* resume_from = nullptr);

PhonemeSequence viterbi_transcribe(const GeneratorParams& params,
                                   const SegmentSequence& segments);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Gradient entry points used by training and the finite-difference suite.
namespace detail {

struct GenActs {
  MatD dropped_in;
  MatD logits;
  MatD probs;
};

GenActs generator_forward_acts(const GeneratorParams& params, const MatD& input, bool train_mode,
                               uint64_t seed);

struct DiscActs {
  MatD z1, h1, z2, h2, z3;
  double score = 0.0;
};

DiscActs discriminator_forward_acts(const DiscriminatorParams& params, const MatD& rows);

struct DiscGrads {
  std::vector<double> w1, b1, w2, b2, w3, b3;
  void init(const DiscriminatorParams& p);
  void add_scaled(const DiscGrads& other, double scale);
};

struct GenGrads {
  std::vector<double> w, b;
  void init(const GeneratorParams& p);
  void add_scaled(const GenGrads& other, double scale);
};

// backward of d(score)/d(...) given dL/dscore; returns dL/d(input rows) and
// accumulates parameter gradients when grads is non-null
MatD discriminator_backward(const DiscriminatorParams& params, const MatD& rows,
                            const DiscActs& acts, double dscore, DiscGrads* grads);

// input gradient of the mean-logit score, d(score)/d(rows)
MatD discriminator_input_gradient(const DiscriminatorParams& params, const MatD& rows);

// d/dtheta of (|grad_x C(x)| - 1)^2 for one interpolated sample; returns the
// penalty value
double gradient_penalty_backward(const DiscriminatorParams& params, const MatD& rows,
                                 DiscGrads* grads);

// chain dL/d(prob rows) through softmax and conv into parameter grads
void generator_backward(const GeneratorParams& params, const GenActs& acts, const MatD& dprobs,
                        GenGrads* grads);

// dL/d(prob rows) of the smoothness term (per-utterance sum)
MatD smoothness_backward(const MatD& probs);

// dL/d(prob rows) of the per-utterance diversity term -H(mean rows)
MatD diversity_backward(const MatD& probs);

struct GenLossParts {
  double adversarial = 0.0, smoothness = 0.0, diversity = 0.0;
  double total = 0.0;
};

// full generator objective (adversarial + gamma*L_sp + eta*L_pd) for one
// utterance, with parameter gradients when grads is non-null
GenLossParts gen_objective_with_grads(const GeneratorParams& gen,
                                      const DiscriminatorParams& disc, const MatD& segments,
                                      const GanConfig& config, uint64_t drop_seed,
                                      uint64_t collapse_seed, GenGrads* grads);

struct DiscLossParts {
  double adversarial = 0.0, gradient_penalty = 0.0;
  double total = 0.0;
};

// discriminator objective (adversarial + lambda*L_gp) for one (real, fake)
// pair; fake rows are detached inputs here
DiscLossParts disc_objective_with_grads(const DiscriminatorParams& disc, const MatD& real,
                                        const MatD& fake, double interp_u,
                                        const GanConfig& config, DiscGrads* grads);

}  // namespace detail

}  // namespace uasr
