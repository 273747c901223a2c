#include "uasr/gan.hpp"

#include <algorithm>
#include <cmath>

#include "uasr/io.hpp"
#include "uasr/parallel.hpp"
#include "uasr/xval.hpp"

namespace uasr {

namespace {

constexpr char kCkptMagic[8] = {'U', 'A', 'S', 'R', 'G', 'A', 'N', 'C'};
constexpr uint32_t kCkptVersion = 1;

// derivative of log(sigmoid(x)) with the clamp applied
double d_log_sigmoid(double x, double clamp) {
  if (x <= -clamp || x >= clamp) return 0.0;
  return sigmoid(-x);
}

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

void check_finite(double v, long step, const char* what) {
  if (!std::isfinite(v))
    throw DivergenceError(format_msg("non-finite %s at step %ld", what, step));
}

}  // namespace

void validate_gan_config(const GanConfig& config) {
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (!in(config.lambda_gp, 1.5, 2.0))
    throw ConfigError("gan.lambda_gp outside [1.5, 2.0]");
  if (!in(config.gamma_sp, 0.5, 0.75))
    throw ConfigError("gan.gamma_sp outside [0.5, 0.75]");
  if (!in(config.eta_pd, 2.0, 4.0))
    throw ConfigError("gan.eta_pd outside [2, 4]");
  if (config.lr_gen <= 0 || config.lr_disc <= 0)
    throw ConfigError("gan learning rates must be > 0");
  if (config.batch_size < 1) throw ConfigError("gan.batch_size < 1");
  if (config.dropout_p < 0 || config.dropout_p >= 1)
    throw ConfigError("gan.dropout_p outside [0, 1)");
}

GeneratorParams init_generator(int input_dim, int num_phones, const GanConfig& config,
                               uint64_t seed) {
  GeneratorParams g;
  g.conv = Conv1d::make_same(input_dim, num_phones, config.gen_kernel);
  g.dropout_p = config.dropout_p;
  Rng rng(derive_seed(seed, 0x67656e));
  g.conv.init_uniform(rng);
  return g;
}

DiscriminatorParams init_discriminator(int num_phones, const GanConfig& config, uint64_t seed) {
  DiscriminatorParams d;
  d.conv1 = Conv1d::make_causal(num_phones, config.hidden_dim, config.disc_kernel);
  d.conv2 = Conv1d::make_causal(config.hidden_dim, config.hidden_dim, config.disc_kernel);
  d.conv3 = Conv1d::make_causal(config.hidden_dim, 1, config.disc_kernel);
  Rng rng(derive_seed(seed, 0x64697363));
  d.conv1.init_uniform(rng);
  d.conv2.init_uniform(rng);
  d.conv3.init_uniform(rng);
  return d;
}

namespace detail {

GenActs generator_forward_acts(const GeneratorParams& params, const MatD& input, bool train_mode,
                               uint64_t seed) {
  UASR_REQUIRE(input.cols == params.input_dim(), "generator: segment dim mismatch");
  GenActs acts;
  acts.dropped_in = input;
  if (train_mode && params.dropout_p > 0.0) {
    Rng rng(seed);
    double keep = 1.0 - params.dropout_p;
    for (auto& v : acts.dropped_in.data) v = rng.uniform() < keep ? v / keep : 0.0;
  }
  acts.logits = conv1d_forward(params.conv, acts.dropped_in);
  acts.probs = softmax_rows(acts.logits);
  return acts;
}

DiscActs discriminator_forward_acts(const DiscriminatorParams& params, const MatD& rows) {
  UASR_REQUIRE(rows.rows >= 1, "discriminator: empty input");
  UASR_REQUIRE(rows.cols == params.conv1.in_ch, "discriminator: row dimension mismatch");
  DiscActs acts;
  acts.z1 = conv1d_forward(params.conv1, rows);
  acts.h1 = acts.z1;
  for (auto& v : acts.h1.data) v = gelu(v);
  acts.z2 = conv1d_forward(params.conv2, acts.h1);
  acts.h2 = acts.z2;
  for (auto& v : acts.h2.data) v = gelu(v);
  acts.z3 = conv1d_forward(params.conv3, acts.h2);
  double total = 0.0;
  for (int t = 0; t < acts.z3.rows; ++t) total += acts.z3.at(t, 0);
  acts.score = total / acts.z3.rows;
  return acts;
}

void DiscGrads::init(const DiscriminatorParams& p) {
  w1.assign(p.conv1.w.size(), 0.0);
  b1.assign(p.conv1.b.size(), 0.0);
  w2.assign(p.conv2.w.size(), 0.0);
  b2.assign(p.conv2.b.size(), 0.0);
  w3.assign(p.conv3.w.size(), 0.0);
  b3.assign(p.conv3.b.size(), 0.0);
}

void DiscGrads::add_scaled(const DiscGrads& other, double scale) {
  auto add = [scale](std::vector<double>& a, const std::vector<double>& b) {
    for (size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  };
  add(w1, other.w1);
  add(b1, other.b1);
  add(w2, other.w2);
  add(b2, other.b2);
  add(w3, other.w3);
  add(b3, other.b3);
}

void GenGrads::init(const GeneratorParams& p) {
  w.assign(p.conv.w.size(), 0.0);
  b.assign(p.conv.b.size(), 0.0);
}

void GenGrads::add_scaled(const GenGrads& other, double scale) {
  for (size_t i = 0; i < w.size(); ++i) w[i] += scale * other.w[i];
  for (size_t i = 0; i < b.size(); ++i) b[i] += scale * other.b[i];
}

MatD discriminator_backward(const DiscriminatorParams& params, const MatD& rows,
                            const DiscActs& acts, double dscore, DiscGrads* grads) {
  int m = acts.z3.rows;
  MatD dz3(m, 1);
  for (int t = 0; t < m; ++t) dz3.at(t, 0) = dscore / m;

  if (grads) conv1d_backward_params(params.conv3, acts.h2, dz3, grads->w3, grads->b3);
  MatD dh2 = conv1d_backward_input(params.conv3, dz3, acts.h2.rows);
  MatD dz2 = dh2;
  for (size_t i = 0; i < dz2.data.size(); ++i) dz2.data[i] *= gelu_d1(acts.z2.data[i]);

  if (grads) conv1d_backward_params(params.conv2, acts.h1, dz2, grads->w2, grads->b2);
  MatD dh1 = conv1d_backward_input(params.conv2, dz2, acts.h1.rows);
  MatD dz1 = dh1;
  for (size_t i = 0; i < dz1.data.size(); ++i) dz1.data[i] *= gelu_d1(acts.z1.data[i]);

  if (grads) conv1d_backward_params(params.conv1, rows, dz1, grads->w1, grads->b1);
  return conv1d_backward_input(params.conv1, dz1, rows.rows);
}

MatD discriminator_input_gradient(const DiscriminatorParams& params, const MatD& rows) {
  DiscActs acts = discriminator_forward_acts(params, rows);
  return discriminator_backward(params, rows, acts, 1.0, nullptr);
}

double gradient_penalty_backward(const DiscriminatorParams& params, const MatD& rows,
                                 DiscGrads* grads) {
  DiscActs acts = discriminator_forward_acts(params, rows);
  MatD g = discriminator_backward(params, rows, acts, 1.0, nullptr);

  double norm_sq = 0.0;
  for (double v : g.data) norm_sq += v * v;
  double norm = std::sqrt(norm_sq);
  double penalty = (norm - 1.0) * (norm - 1.0);
  if (!grads || norm < 1e-12) return penalty;

  // d penalty / d g
  MatD v = g;
  double scale = 2.0 * (norm - 1.0) / norm;
  for (auto& x : v.data) x *= scale;

  // Phi(theta) = <grad_x C(x; theta), v> with v held fixed. The tangent pass
  // computes Phi; reversing it (and the primal dependencies of z1/z2) yields
  // d Phi / d theta, the exact parameter gradient of the penalty.
  int m = acts.z3.rows;
  MatD t1 = conv1d_forward(params.conv1, v, false);
  MatD a1 = t1;
  for (size_t i = 0; i < a1.data.size(); ++i) a1.data[i] *= gelu_d1(acts.z1.data[i]);
  MatD t2 = conv1d_forward(params.conv2, a1, false);
  MatD a2 = t2;
  for (size_t i = 0; i < a2.data.size(); ++i) a2.data[i] *= gelu_d1(acts.z2.data[i]);

  MatD d_t3(m, 1);
  for (int t = 0; t < m; ++t) d_t3.at(t, 0) = 1.0 / m;

  conv1d_backward_params(params.conv3, a2, d_t3, grads->w3, grads->b3, false);
  MatD d_a2 = conv1d_backward_input(params.conv3, d_t3, a2.rows);

  MatD d_t2 = d_a2;
  MatD d_z2 = d_a2;
  for (size_t i = 0; i < d_t2.data.size(); ++i) {
    d_t2.data[i] *= gelu_d1(acts.z2.data[i]);
    d_z2.data[i] *= gelu_d2(acts.z2.data[i]) * t2.data[i];
  }

  conv1d_backward_params(params.conv2, a1, d_t2, grads->w2, grads->b2, false);
  MatD d_a1 = conv1d_backward_input(params.conv2, d_t2, a1.rows);

  MatD d_t1 = d_a1;
  MatD d_z1 = d_a1;
  for (size_t i = 0; i < d_t1.data.size(); ++i) {
    d_t1.data[i] *= gelu_d1(acts.z1.data[i]);
    d_z1.data[i] *= gelu_d2(acts.z1.data[i]) * t1.data[i];
  }

  conv1d_backward_params(params.conv1, v, d_t1, grads->w1, grads->b1, false);

  // primal dependencies: z2 = conv2(h1) and z1 = conv1(x)
  conv1d_backward_params(params.conv2, acts.h1, d_z2, grads->w2, grads->b2);
  MatD d_h1 = conv1d_backward_input(params.conv2, d_z2, acts.h1.rows);
  for (size_t i = 0; i < d_z1.data.size(); ++i)
    d_z1.data[i] += gelu_d1(acts.z1.data[i]) * d_h1.data[i];
  conv1d_backward_params(params.conv1, rows, d_z1, grads->w1, grads->b1);
  return penalty;
}

void generator_backward(const GeneratorParams& params, const GenActs& acts, const MatD& dprobs,
                        GenGrads* grads) {
  MatD dz = softmax_backward(acts.probs, dprobs);
  conv1d_backward_params(params.conv, acts.dropped_in, dz, grads->w, grads->b);
}

MatD smoothness_backward(const MatD& probs) {
  MatD d(probs.rows, probs.cols);
  for (int t = 0; t + 1 < probs.rows; ++t) {
    for (int c = 0; c < probs.cols; ++c) {
      double diff = probs.at(t, c) - probs.at(t + 1, c);
      d.at(t, c) += 2.0 * diff;
      d.at(t + 1, c) -= 2.0 * diff;
    }
  }
  return d;
}

MatD diversity_backward(const MatD& probs) {
  int t_len = probs.rows, o = probs.cols;
  std::vector<double> q(size_t(o), 0.0);
  for (int t = 0; t < t_len; ++t)
    for (int c = 0; c < o; ++c) q[size_t(c)] += probs.at(t, c);
  for (auto& v : q) v /= double(t_len);
  MatD d(t_len, o);
  for (int t = 0; t < t_len; ++t)
    for (int c = 0; c < o; ++c)
      d.at(t, c) = (std::log(std::max(q[size_t(c)], 1e-300)) + 1.0) / double(t_len);
  return d;
}

GenLossParts gen_objective_with_grads(const GeneratorParams& gen,
                                      const DiscriminatorParams& disc, const MatD& segments,
                                      const GanConfig& config, uint64_t drop_seed,
                                      uint64_t collapse_seed, GenGrads* grads) {
  GenActs acts = generator_forward_acts(gen, segments, true, drop_seed);
  int num_phones = gen.num_phones();

  for (int t = 0; t < acts.probs.rows; ++t) {
    double sum = 0.0;
    for (int c = 0; c < acts.probs.cols; ++c) sum += acts.probs.at(t, c);
    if (std::abs(sum - 1.0) > 1e-6)
      throw DivergenceError("generator softmax row is no longer a distribution");
  }

  PosteriorSequence post;
  post.rows = acts.probs;
  post.source_segments.resize(size_t(post.rows.rows));
  for (int r = 0; r < post.rows.rows; ++r) post.source_segments[size_t(r)] = r;

  GenLossParts parts;
  parts.smoothness = loss_smoothness(post);
  {
    std::vector<PosteriorSequence> single;
    single.push_back(post);
    parts.diversity = loss_diversity(single);
  }

  PosteriorSequence fake = collapse(post, collapse_seed);
  DiscActs facts = discriminator_forward_acts(disc, fake.rows);
  double s = facts.score;
  parts.adversarial = config.minimax_gen_loss ? log_sigmoid(-s, config.logit_clamp)
                                              : -log_sigmoid(s, config.logit_clamp);
  parts.total =
      parts.adversarial + config.gamma_sp * parts.smoothness + config.eta_pd * parts.diversity;

  if (grads) {
    double ds = config.minimax_gen_loss ? -d_log_sigmoid(-s, config.logit_clamp)
                                        : -d_log_sigmoid(s, config.logit_clamp);
    MatD dcollapsed = discriminator_backward(disc, fake.rows, facts, ds, nullptr);
    MatD dprobs(acts.probs.rows, acts.probs.cols);
    for (int r = 0; r < fake.rows.rows; ++r) {
      int src = fake.source_segments[size_t(r)];
      for (int c = 0; c < num_phones; ++c) dprobs.at(src, c) += dcollapsed.at(r, c);
    }
    MatD dsp = smoothness_backward(acts.probs);
    MatD dpd = diversity_backward(acts.probs);
    for (size_t j = 0; j < dprobs.data.size(); ++j)
      dprobs.data[j] += config.gamma_sp * dsp.data[j] + config.eta_pd * dpd.data[j];
    generator_backward(gen, acts, dprobs, grads);
  }
  return parts;
}

DiscLossParts disc_objective_with_grads(const DiscriminatorParams& disc, const MatD& real,
                                        const MatD& fake, double interp_u,
                                        const GanConfig& config, DiscGrads* grads) {
  DiscLossParts parts;
  DiscActs racts = discriminator_forward_acts(disc, real);
  DiscActs facts = discriminator_forward_acts(disc, fake);
  parts.adversarial = -log_sigmoid(racts.score, config.logit_clamp) -
                      log_sigmoid(-facts.score, config.logit_clamp);
  if (grads) {
    discriminator_backward(disc, real, racts,
                           -d_log_sigmoid(racts.score, config.logit_clamp), grads);
    discriminator_backward(disc, fake, facts,
                           d_log_sigmoid(-facts.score, config.logit_clamp), grads);
  }

  int m = std::min(real.rows, fake.rows);
  MatD mixed(m, real.cols);
  for (int t = 0; t < m; ++t)
    for (int c = 0; c < real.cols; ++c)
      mixed.at(t, c) = interp_u * real.at(t, c) + (1.0 - interp_u) * fake.at(t, c);
  if (grads) {
    DiscGrads gp_grads;
    gp_grads.init(disc);
    parts.gradient_penalty = gradient_penalty_backward(disc, mixed, &gp_grads);
    grads->add_scaled(gp_grads, config.lambda_gp);
  } else {
    parts.gradient_penalty = gradient_penalty_backward(disc, mixed, nullptr);
  }
  parts.total = parts.adversarial + config.lambda_gp * parts.gradient_penalty;
  return parts;
}

}  // namespace detail

PosteriorSequence generator_forward(const GeneratorParams& params, const SegmentSequence& segments,
                                    bool train_mode, uint64_t seed) {
  auto acts = detail::generator_forward_acts(params, segments.reps, train_mode, seed);
  PosteriorSequence out;
  out.utterance_id = segments.utterance_id;
  out.rows = std::move(acts.probs);
  out.source_segments.resize(size_t(out.rows.rows));
  for (int i = 0; i < out.rows.rows; ++i) out.source_segments[size_t(i)] = i;
  return out;
}

PosteriorSequence collapse(const PosteriorSequence& posteriors, uint64_t seed) {
  Rng rng(seed);
  PosteriorSequence out;
  out.utterance_id = posteriors.utterance_id;
  int t_len = posteriors.rows.rows, o = posteriors.rows.cols;
  if (t_len == 0) return out;

  std::vector<std::pair<int, int>> runs;  // [start, end)
  int start = 0;
  int prev = argmax_row(posteriors.rows.row(0), o);
  for (int t = 1; t < t_len; ++t) {
    int a = argmax_row(posteriors.rows.row(t), o);
    if (a != prev) {
      runs.emplace_back(start, t);
      start = t;
      prev = a;
    }
  }
  runs.emplace_back(start, t_len);

  out.rows = MatD(int(runs.size()), o);
  out.source_segments.resize(runs.size());
  for (size_t r = 0; r < runs.size(); ++r) {
    auto [b, e] = runs[r];
    int pick = b + (e - b > 1 ? rng.uniform_int(e - b) : 0);
    out.source_segments[r] = posteriors.source_segments[size_t(pick)];
    std::copy(posteriors.rows.row(pick), posteriors.rows.row(pick) + o, out.rows.row(int(r)));
  }
  return out;
}

DiscOutput discriminator_forward(const DiscriminatorParams& params, const MatD& rows) {
  auto acts = detail::discriminator_forward_acts(params, rows);
  DiscOutput out;
  out.score = acts.score;
  out.logits.resize(size_t(acts.z3.rows));
  for (int t = 0; t < acts.z3.rows; ++t) out.logits[size_t(t)] = acts.z3.at(t, 0);
  return out;
}

MatD one_hot_rows(const PhonemeSequence& phones, int num_phones) {
  MatD rows(int(phones.phones.size()), num_phones);
  for (size_t i = 0; i < phones.phones.size(); ++i) {
    int p = phones.phones[i];
    UASR_REQUIRE(p >= 0 && p < num_phones, "one_hot_rows: phone index out of range");
    rows.at(int(i), p) = 1.0;
  }
  return rows;
}

AdvLoss loss_adversarial(const DiscriminatorParams& disc, const std::vector<MatD>& real,
                         const std::vector<MatD>& fake, const GanConfig& config) {
  UASR_REQUIRE(!real.empty() && !fake.empty(), "loss_adversarial: empty batch");
  AdvLoss out;
  for (const auto& r : real) {
    double s = detail::discriminator_forward_acts(disc, r).score;
    out.disc_loss += -log_sigmoid(s, config.logit_clamp) / double(real.size());
  }
  for (const auto& f : fake) {
    double s = detail::discriminator_forward_acts(disc, f).score;
    out.disc_loss += -log_sigmoid(-s, config.logit_clamp) / double(fake.size());
    out.gen_loss += (config.minimax_gen_loss ? log_sigmoid(-s, config.logit_clamp)
                                             : -log_sigmoid(s, config.logit_clamp)) /
                    double(fake.size());
  }
  return out;
}

double loss_gradient_penalty(const DiscriminatorParams& disc, const std::vector<MatD>& real,
                             const std::vector<MatD>& fake, uint64_t seed) {
  UASR_REQUIRE(!real.empty() && !fake.empty(), "loss_gradient_penalty: empty batch");
  Rng rng(seed);
  size_t n = std::min(real.size(), fake.size());
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    int m = std::min(real[i].rows, fake[i].rows);
    MatD mixed(m, real[i].cols);
    for (int t = 0; t < m; ++t)
      for (int c = 0; c < real[i].cols; ++c)
        mixed.at(t, c) = u * real[i].at(t, c) + (1.0 - u) * fake[i].at(t, c);
    total += detail::gradient_penalty_backward(disc, mixed, nullptr);
  }
  return total / double(n);
}

double loss_smoothness(const PosteriorSequence& posteriors) {
  double total = 0.0;
  for (int t = 0; t + 1 < posteriors.rows.rows; ++t)
    for (int c = 0; c < posteriors.rows.cols; ++c) {
      double diff = posteriors.rows.at(t, c) - posteriors.rows.at(t + 1, c);
      total += diff * diff;
    }
  return total;
}

double loss_diversity(const std::vector<PosteriorSequence>& batch) {
  UASR_REQUIRE(!batch.empty(), "loss_diversity: empty batch");
  double total = 0.0;
  for (const auto& p : batch) {
    int t_len = p.rows.rows, o = p.rows.cols;
    std::vector<double> q(size_t(o), 0.0);
    for (int t = 0; t < t_len; ++t)
      for (int c = 0; c < o; ++c) q[size_t(c)] += p.rows.at(t, c);
    double h = 0.0;
    for (auto& v : q) {
      v /= double(t_len);
      if (v > 0) h -= v * std::log(v);
    }
    total += -h;
  }
  return total / double(batch.size());
}

PhonemeSequence viterbi_transcribe(const GeneratorParams& params,
                                   const SegmentSequence& segments) {
  auto acts = detail::generator_forward_acts(params, segments.reps, false, 0);
  PhonemeSequence out;
  out.utterance_id = segments.utterance_id;
  int prev = -1;
  for (int t = 0; t < acts.probs.rows; ++t) {
    int a = argmax_row(acts.probs.row(t), acts.probs.cols);
    if (a != prev) out.phones.push_back(a);
    prev = a;
  }
  return out;
}

namespace {

void save_conv(std::ostream& os, const Conv1d& c) {
  write_pod<int32_t>(os, c.in_ch);
  write_pod<int32_t>(os, c.out_ch);
  write_pod<int32_t>(os, c.kernel);
  write_pod<int32_t>(os, c.pad_left);
  write_pod<int32_t>(os, c.pad_right);
  write_vec<double>(os, c.w);
  write_vec<double>(os, c.b);
}

Conv1d load_conv(std::istream& is) {
  Conv1d c;
  c.in_ch = read_pod<int32_t>(is);
  c.out_ch = read_pod<int32_t>(is);
  c.kernel = read_pod<int32_t>(is);
  c.pad_left = read_pod<int32_t>(is);
  c.pad_right = read_pod<int32_t>(is);
  c.w = read_vec<double>(is);
  c.b = read_vec<double>(is);
  return c;
}

void save_adam(std::ostream& os, const Adam& a) {
  write_pod<double>(os, a.lr);
  write_pod<double>(os, a.beta1);
  write_pod<double>(os, a.beta2);
  write_pod<double>(os, a.eps);
  write_pod<double>(os, a.weight_decay);
  write_pod<int64_t>(os, a.t);
  write_vec<double>(os, a.m);
  write_vec<double>(os, a.v);
}

Adam load_adam(std::istream& is) {
  Adam a;
  a.lr = read_pod<double>(is);
  a.beta1 = read_pod<double>(is);
  a.beta2 = read_pod<double>(is);
  a.eps = read_pod<double>(is);
  a.weight_decay = read_pod<double>(is);
  a.t = read_pod<int64_t>(is);
  a.m = read_vec<double>(is);
  a.v = read_vec<double>(is);
  return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kCkptMagic, kCkptVersion);
  write_pod<int64_t>(os, checkpoint.step);
  save_conv(os, checkpoint.generator.conv);
  write_pod<double>(os, checkpoint.generator.dropout_p);
  save_conv(os, checkpoint.discriminator.conv1);
  save_conv(os, checkpoint.discriminator.conv2);
  save_conv(os, checkpoint.discriminator.conv3);
  save_adam(os, checkpoint.gen_opt);
  save_adam(os, checkpoint.disc_opt);
  write_string(os, checkpoint.rng_state);
  write_pod<double>(os, checkpoint.metric.nll);
  write_pod<double>(os, checkpoint.metric.usage);
  write_pod<double>(os, checkpoint.metric.adjusted);
  write_pod<double>(os, checkpoint.metric.total_logprob);
  write_pod<uint8_t>(os, checkpoint.metric.valid ? 1 : 0);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kCkptMagic, "checkpoint");
  Checkpoint c;
  c.step = read_pod<int64_t>(is);
  c.generator.conv = load_conv(is);
  c.generator.dropout_p = read_pod<double>(is);
  c.discriminator.conv1 = load_conv(is);
  c.discriminator.conv2 = load_conv(is);
  c.discriminator.conv3 = load_conv(is);
  c.gen_opt = load_adam(is);
  c.disc_opt = load_adam(is);
  c.rng_state = read_string(is);
  c.metric.nll = read_pod<double>(is);
  c.metric.usage = read_pod<double>(is);
  c.metric.adjusted = read_pod<double>(is);
  c.metric.total_logprob = read_pod<double>(is);
  c.metric.valid = read_pod<uint8_t>(is) != 0;
  return c;
}

namespace {

struct FlatDisc {
  // concatenated views for the optimizer
  static std::vector<double> pack(const DiscriminatorParams& d) {
    std::vector<double> out;
    for (const auto* v : {&d.conv1.w, &d.conv1.b, &d.conv2.w, &d.conv2.b, &d.conv3.w, &d.conv3.b})
      out.insert(out.end(), v->begin(), v->end());
    return out;
  }
  static void unpack(const std::vector<double>& flat, DiscriminatorParams& d) {
    size_t off = 0;
    for (auto* v : {&d.conv1.w, &d.conv1.b, &d.conv2.w, &d.conv2.b, &d.conv3.w, &d.conv3.b}) {
      std::copy(flat.begin() + long(off), flat.begin() + long(off + v->size()), v->begin());
      off += v->size();
    }
  }
  static std::vector<double> pack_grads(const detail::DiscGrads& g) {
    std::vector<double> out;
    for (const auto* v : {&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3})
      out.insert(out.end(), v->begin(), v->end());
    return out;
  }
};

MetricSnapshot metric_snapshot(const GeneratorParams& gen,
                               const std::vector<SegmentSequence>& dev, const NGramLm& lm,
                               const PhonemeInventory& inventory) {
  MetricSnapshot snap;
  std::vector<PhonemeSequence> transcripts;
  transcripts.reserve(dev.size());
  for (const auto& s : dev) transcripts.push_back(viterbi_transcribe(gen, s));
  try {
    CandidateReport r = evaluate_candidate("snapshot", transcripts, lm, inventory);
    snap.nll = r.nll;
    snap.usage = r.usage;
    snap.adjusted = r.usage > 0 ? r.adjusted_nll() : 0.0;
    snap.total_logprob = r.total_logprob;
    snap.valid = r.usage > 0;
  } catch (const Error&) {
    snap.valid = false;
  }
  return snap;
}

}  // namespace

TrainResult train_gan(const GanConfig& config, const std::vector<SegmentSequence>& audio,
                      const std::vector<PhonemeSequence>& text, const NGramLm& lm,
                      const PhonemeInventory& inventory,
                      const std::vector<SegmentSequence>* dev_audio,
                      const Checkpoint* resume_from) {
  UASR_REQUIRE(!audio.empty() && !text.empty(), "train_gan: empty corpus");
  int num_phones = inventory.size();
  int seg_dim = audio.front().dim();
  for (const auto& s : audio)
    UASR_REQUIRE(s.dim() == seg_dim && s.num_segments() >= 1, "train_gan: bad segment sequence");
  for (const auto& t : text)
    UASR_REQUIRE(!t.phones.empty(), "train_gan: empty text line");

  const std::vector<SegmentSequence>& dev = dev_audio ? *dev_audio : audio;

  GeneratorParams gen;
  DiscriminatorParams disc;
  Adam gen_opt, disc_opt;
  Rng rng;
  long start_step = 0;

  if (resume_from) {
    gen = resume_from->generator;
    disc = resume_from->discriminator;
    gen_opt = resume_from->gen_opt;
    disc_opt = resume_from->disc_opt;
    rng.load_state(resume_from->rng_state);
    start_step = resume_from->step;
  } else {
    gen = init_generator(seg_dim, num_phones, config, config.seed);
    disc = init_discriminator(num_phones, config, config.seed);
    gen_opt.lr = config.lr_gen;
    gen_opt.beta1 = config.adam_beta1;
    gen_opt.beta2 = config.adam_beta2;
    gen_opt.weight_decay = 0.0;  // the generator does not use weight decay
    gen_opt.init(gen.conv.param_count());
    disc_opt.lr = config.lr_disc;
    disc_opt.beta1 = config.adam_beta1;
    disc_opt.beta2 = config.adam_beta2;
    disc_opt.weight_decay = config.weight_decay_disc;
    disc_opt.init(disc.param_count());
    rng.reseed(derive_seed(config.seed, 0x747261696e));
  }

  log_info("gan: generator %zu params, discriminator %zu params (receptive field %d)",
           gen.param_count(), disc.param_count(), disc.receptive_field());

  TrainResult result;
  auto emit_checkpoint = [&](long step) {
    Checkpoint c;
    c.step = step;
    c.generator = gen;
    c.discriminator = disc;
    c.gen_opt = gen_opt;
    c.disc_opt = disc_opt;
    c.rng_state = rng.save_state();
    c.metric = metric_snapshot(gen, dev, lm, inventory);
    result.checkpoints.push_back(std::move(c));
  };

  if (!resume_from) emit_checkpoint(0);

  const int batch = config.batch_size;
  const size_t chunk = 8;
  const double log_o = std::log(double(num_phones));

  for (long step = start_step; step < config.total_steps; ++step) {
    bool disc_step = (step % 2 == 0);

    // all sampling happens on the master stream before the parallel region
    std::vector<int> audio_idx(static_cast<size_t>(batch));
    for (auto& i : audio_idx) i = rng.uniform_int(int(audio.size()));
    std::vector<int> text_idx;
    if (disc_step) {
      text_idx.resize(static_cast<size_t>(batch));
      for (auto& i : text_idx) i = rng.uniform_int(int(text.size()));
    }
    std::vector<uint64_t> drop_seeds(static_cast<size_t>(batch)), collapse_seeds(static_cast<size_t>(batch));
    std::vector<double> gp_u(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      drop_seeds[size_t(i)] = rng.next_u64();
      collapse_seeds[size_t(i)] = rng.next_u64();
      if (disc_step) gp_u[size_t(i)] = rng.uniform();
    }

    size_t num_chunks = (size_t(batch) + chunk - 1) / chunk;
    std::vector<double> c_disc(num_chunks, 0.0), c_gen(num_chunks, 0.0), c_gp(num_chunks, 0.0),
        c_sp(num_chunks, 0.0), c_pd(num_chunks, 0.0);

    if (disc_step) {
      std::vector<detail::DiscGrads> c_grads(num_chunks);
      parallel_chunks(size_t(batch), chunk, [&](size_t ci, size_t b, size_t e) {
        auto& grads = c_grads[ci];
        grads.init(disc);
        for (size_t i = b; i < e; ++i) {
          MatD real = one_hot_rows(text[size_t(text_idx[i])], num_phones);
          const auto& segs = audio[size_t(audio_idx[i])];
          auto acts = detail::generator_forward_acts(gen, segs.reps, true, drop_seeds[i]);
          PosteriorSequence post;
          post.rows = std::move(acts.probs);
          post.source_segments.resize(size_t(post.rows.rows));
          for (int r = 0; r < post.rows.rows; ++r) post.source_segments[size_t(r)] = r;
          PosteriorSequence fake = collapse(post, collapse_seeds[i]);

          auto parts =
              detail::disc_objective_with_grads(disc, real, fake.rows, gp_u[i], config, &grads);
          c_disc[ci] += parts.adversarial;
          c_gp[ci] += parts.gradient_penalty;
        }
      });

      detail::DiscGrads total;
      total.init(disc);
      double disc_loss = 0.0, gp_loss = 0.0;
      for (size_t ci = 0; ci < num_chunks; ++ci) {
        total.add_scaled(c_grads[ci], 1.0);
        disc_loss += c_disc[ci];
        gp_loss += c_gp[ci];
      }
      disc_loss /= batch;
      gp_loss /= batch;
      check_finite(disc_loss, step, "disc_loss");
      check_finite(gp_loss, step, "L_gp");
      if (gp_loss < 0) throw DivergenceError(format_msg("L_gp < 0 at step %ld", step));

      std::vector<double> flat = FlatDisc::pack(disc);
      std::vector<double> gflat = FlatDisc::pack_grads(total);
      for (auto& g : gflat) g /= batch;
      disc_opt.update(flat, gflat);
      FlatDisc::unpack(flat, disc);

      result.log.push_back({step, 'd', disc_loss, 0.0, gp_loss, 0.0, 0.0});
    } else {
      std::vector<detail::GenGrads> c_grads(num_chunks);
      parallel_chunks(size_t(batch), chunk, [&](size_t ci, size_t b, size_t e) {
        auto& grads = c_grads[ci];
        grads.init(gen);
        for (size_t i = b; i < e; ++i) {
          const auto& segs = audio[size_t(audio_idx[i])];
          auto parts = detail::gen_objective_with_grads(gen, disc, segs.reps, config,
                                                        drop_seeds[i], collapse_seeds[i], &grads);
          c_gen[ci] += parts.adversarial;
          c_sp[ci] += parts.smoothness;
          c_pd[ci] += parts.diversity;
        }
      });

      detail::GenGrads total;
      total.init(gen);
      double gen_loss = 0.0, sp_loss = 0.0, pd_loss = 0.0;
      for (size_t ci = 0; ci < num_chunks; ++ci) {
        total.add_scaled(c_grads[ci], 1.0);
        gen_loss += c_gen[ci];
        sp_loss += c_sp[ci];
        pd_loss += c_pd[ci];
      }
      gen_loss /= batch;
      sp_loss /= batch;
      pd_loss /= batch;
      check_finite(gen_loss, step, "gen_loss");
      check_finite(sp_loss, step, "L_sp");
      check_finite(pd_loss, step, "L_pd");
      if (sp_loss < 0) throw DivergenceError(format_msg("L_sp < 0 at step %ld", step));
      if (pd_loss < -log_o - 1e-9 || pd_loss > 1e-9)
        throw DivergenceError(format_msg("L_pd outside [-log|O|, 0] at step %ld", step));

      std::vector<double> flat = gen.conv.w;
      flat.insert(flat.end(), gen.conv.b.begin(), gen.conv.b.end());
      std::vector<double> gflat = total.w;
      gflat.insert(gflat.end(), total.b.begin(), total.b.end());
      for (auto& g : gflat) g /= batch;
      gen_opt.update(flat, gflat);
      std::copy(flat.begin(), flat.begin() + long(gen.conv.w.size()), gen.conv.w.begin());
      std::copy(flat.begin() + long(gen.conv.w.size()), flat.end(), gen.conv.b.begin());

      result.log.push_back({step, 'g', 0.0, gen_loss, 0.0, sp_loss, pd_loss});
    }

    if ((step + 1) % config.checkpoint_interval == 0 || step + 1 == config.total_steps)
      emit_checkpoint(step + 1);
  }
  return result;
}

}  // namespace uasr
