#include "uasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uasr/io.hpp"
#include "uasr/parallel.hpp"

namespace uasr {

namespace {

constexpr char kMagic[8] = {'U', 'A', 'S', 'R', 'C', 'T', 'C', '1'};
constexpr uint32_t kVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

std::vector<int> ctc_collapse(const std::vector<int>& alignment, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int a : alignment) {
    if (a != prev && a != blank) out.push_back(a);
    prev = a;
  }
  return out;
}

CtcLossResult ctc_loss(const MatD& log_emissions, const std::vector<int>& target, int blank) {
  UASR_REQUIRE(!target.empty(), "ctc_loss: empty target");
  int t_len = log_emissions.rows;
  int v = log_emissions.cols;
  for (int y : target)
    UASR_REQUIRE(y >= 0 && y < v && y != blank, "ctc_loss: target symbol out of range");

  // blank-interleaved extended target
  int u = int(target.size());
  int n = 2 * u + 1;
  std::vector<int> ext(size_t(n), blank);
  for (int i = 0; i < u; ++i) ext[size_t(2 * i + 1)] = target[size_t(i)];

  // feasibility: T >= U + number of repeated adjacent pairs
  int repeats = 0;
  for (int i = 1; i < u; ++i)
    if (target[size_t(i)] == target[size_t(i) - 1]) ++repeats;
  if (t_len < u + repeats)
    throw Error(format_msg("ctc_loss: target needs at least %d frames, got %d", u + repeats,
                           t_len));

  auto allow_skip = [&](int s) {
    // diagonal transition s-2 -> s is legal when s is a label that differs
    // from the label two positions back
    return s >= 2 && ext[size_t(s)] != blank && ext[size_t(s)] != ext[size_t(s) - 2];
  };

  std::vector<std::vector<double>> alpha(size_t(t_len), std::vector<double>(size_t(n), kNegInf));
  alpha[0][0] = log_emissions.at(0, blank);
  if (n > 1) alpha[0][1] = log_emissions.at(0, ext[1]);
  for (int t = 1; t < t_len; ++t) {
    for (int s = 0; s < n; ++s) {
      double acc = alpha[size_t(t) - 1][size_t(s)];
      if (s >= 1) acc = logaddexp(acc, alpha[size_t(t) - 1][size_t(s) - 1]);
      if (allow_skip(s)) acc = logaddexp(acc, alpha[size_t(t) - 1][size_t(s) - 2]);
      alpha[size_t(t)][size_t(s)] = acc + log_emissions.at(t, ext[size_t(s)]);
    }
  }
  double log_p = logaddexp(alpha[size_t(t_len) - 1][size_t(n) - 1],
                           n > 1 ? alpha[size_t(t_len) - 1][size_t(n) - 2] : kNegInf);
  if (log_p == kNegInf) throw Error("ctc_loss: no feasible alignment");

  std::vector<std::vector<double>> beta(size_t(t_len), std::vector<double>(size_t(n), kNegInf));
  beta[size_t(t_len) - 1][size_t(n) - 1] = 0.0;
  if (n > 1) beta[size_t(t_len) - 1][size_t(n) - 2] = 0.0;
  for (int t = t_len - 2; t >= 0; --t) {
    for (int s = n - 1; s >= 0; --s) {
      double acc = beta[size_t(t) + 1][size_t(s)] + log_emissions.at(t + 1, ext[size_t(s)]);
      if (s + 1 < n)
        acc = logaddexp(acc,
                        beta[size_t(t) + 1][size_t(s) + 1] + log_emissions.at(t + 1, ext[size_t(s) + 1]));
      if (s + 2 < n && allow_skip(s + 2))
        acc = logaddexp(acc,
                        beta[size_t(t) + 1][size_t(s) + 2] + log_emissions.at(t + 1, ext[size_t(s) + 2]));
      beta[size_t(t)][size_t(s)] = acc;
    }
  }

  CtcLossResult result;
  result.loss = -log_p;
  result.grad = MatD(t_len, v);
  // d(-log p)/d log_emissions[t][k] = -sum_{s: ext[s]=k} exp(alpha+beta-log p)
  for (int t = 0; t < t_len; ++t) {
    for (int s = 0; s < n; ++s) {
      double g = alpha[size_t(t)][size_t(s)] + beta[size_t(t)][size_t(s)] - log_p;
      if (g > -60.0) result.grad.at(t, ext[size_t(s)]) -= std::exp(g);
    }
  }
  return result;
}

MatD ctc_forward(const CtcModel& model, const FeatureSequence& features) {
  MatD input = to_double(features.frames);
  MatD z1 = conv1d_forward(model.conv1, input);
  MatD h1 = z1;
  for (auto& x : h1.data) x = gelu(x);
  MatD z2 = conv1d_forward(model.conv2, h1);
  // row-wise log softmax
  for (int t = 0; t < z2.rows; ++t) {
    double* row = z2.row(t);
    double mx = row[0];
    for (int c = 1; c < z2.cols; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (int c = 0; c < z2.cols; ++c) total += std::exp(row[c] - mx);
    double lse = mx + std::log(total);
    for (int c = 0; c < z2.cols; ++c) row[c] -= lse;
  }
  return z2;
}

namespace {

struct CtcGrads {
  std::vector<double> w1, b1, w2, b2;
  void init(const CtcModel& m) {
    w1.assign(m.conv1.w.size(), 0.0);
    b1.assign(m.conv1.b.size(), 0.0);
    w2.assign(m.conv2.w.size(), 0.0);
    b2.assign(m.conv2.b.size(), 0.0);
  }
  void add(const CtcGrads& o) {
    for (size_t i = 0; i < w1.size(); ++i) w1[i] += o.w1[i];
    for (size_t i = 0; i < b1.size(); ++i) b1[i] += o.b1[i];
    for (size_t i = 0; i < w2.size(); ++i) w2[i] += o.w2[i];
    for (size_t i = 0; i < b2.size(); ++i) b2[i] += o.b2[i];
  }
};

double ctc_utterance_backward(const CtcModel& model, const FeatureSequence& features,
                              const std::vector<int>& target, CtcGrads* grads) {
  MatD input = to_double(features.frames);
  MatD z1 = conv1d_forward(model.conv1, input);
  MatD h1 = z1;
  for (auto& x : h1.data) x = gelu(x);
  MatD z2 = conv1d_forward(model.conv2, h1);

  int t_len = z2.rows, v = z2.cols;
  MatD logp(t_len, v);
  MatD softmax(t_len, v);
  for (int t = 0; t < t_len; ++t) {
    const double* row = z2.row(t);
    double mx = row[0];
    for (int c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (int c = 0; c < v; ++c) total += std::exp(row[c] - mx);
    double lse = mx + std::log(total);
    for (int c = 0; c < v; ++c) {
      logp.at(t, c) = row[c] - lse;
      softmax.at(t, c) = std::exp(row[c] - lse);
    }
  }

  CtcLossResult loss = ctc_loss(logp, target, model.blank);
  if (!grads) return loss.loss;

  // through log-softmax: dz = dlogp - softmax * rowsum(dlogp)
  MatD dz2(t_len, v);
  for (int t = 0; t < t_len; ++t) {
    double rowsum = 0.0;
    for (int c = 0; c < v; ++c) rowsum += loss.grad.at(t, c);
    for (int c = 0; c < v; ++c)
      dz2.at(t, c) = loss.grad.at(t, c) - softmax.at(t, c) * rowsum;
  }

  CtcGrads local;
  local.init(model);
  conv1d_backward_params(model.conv2, h1, dz2, local.w2, local.b2);
  MatD dh1 = conv1d_backward_input(model.conv2, dz2, h1.rows);
  MatD dz1 = dh1;
  for (size_t i = 0; i < dz1.data.size(); ++i) dz1.data[i] *= gelu_d1(z1.data[i]);
  conv1d_backward_params(model.conv1, input, dz1, local.w1, local.b1);
  grads->add(local);
  return loss.loss;
}

}  // namespace

CtcModel train_ctc(const std::vector<FeatureSequence>& features,
                   const std::vector<PhonemeSequence>& labels, const PhonemeInventory& inventory,
                   const CtcConfig& config, std::vector<double>* loss_history) {
  UASR_REQUIRE(features.size() == labels.size(), "train_ctc: label/feature count mismatch");
  UASR_REQUIRE(!features.empty(), "train_ctc: empty corpus");

  CtcModel model;
  int v = inventory.size() + 1;  // + blank
  model.blank = inventory.size();
  model.conv1 = Conv1d::make_same(features.front().dim(), config.hidden_dim, config.kernel);
  model.conv2 = Conv1d::make_same(config.hidden_dim, v, config.kernel);
  Rng init_rng(derive_seed(config.seed, 0x637463));
  model.conv1.init_uniform(init_rng);
  model.conv2.init_uniform(init_rng);

  // keep only feasible utterances
  std::vector<size_t> usable;
  for (size_t u = 0; u < features.size(); ++u) {
    const auto& target = labels[u].phones;
    if (target.empty()) {
      log_warn("train_ctc: empty label for %s, skipped", features[u].utterance_id.c_str());
      continue;
    }
    int repeats = 0;
    for (size_t i = 1; i < target.size(); ++i)
      if (target[i] == target[i - 1]) ++repeats;
    if (int(target.size()) + repeats > features[u].num_frames()) {
      log_warn("train_ctc: infeasible label for %s, skipped", features[u].utterance_id.c_str());
      continue;
    }
    usable.push_back(u);
  }
  UASR_REQUIRE(!usable.empty(), "train_ctc: no feasible utterance");

  Adam opt;
  opt.lr = config.lr;
  opt.beta1 = config.adam_beta1;
  opt.beta2 = config.adam_beta2;
  size_t pcount = model.conv1.w.size() + model.conv1.b.size() + model.conv2.w.size() +
                  model.conv2.b.size();
  opt.init(pcount);
  Rng rng(derive_seed(config.seed, 0x637463747261696e));

  auto pack = [&](std::vector<double>& flat) {
    flat.clear();
    flat.insert(flat.end(), model.conv1.w.begin(), model.conv1.w.end());
    flat.insert(flat.end(), model.conv1.b.begin(), model.conv1.b.end());
    flat.insert(flat.end(), model.conv2.w.begin(), model.conv2.w.end());
    flat.insert(flat.end(), model.conv2.b.begin(), model.conv2.b.end());
  };
  auto unpack = [&](const std::vector<double>& flat) {
    size_t off = 0;
    for (auto* vec : {&model.conv1.w, &model.conv1.b, &model.conv2.w, &model.conv2.b}) {
      std::copy(flat.begin() + long(off), flat.begin() + long(off + vec->size()), vec->begin());
      off += vec->size();
    }
  };

  const size_t chunk = 4;
  for (long step = 0; step < config.total_steps; ++step) {
    int batch = std::min<int>(config.batch_size, int(usable.size()));
    std::vector<size_t> idx(static_cast<size_t>(batch));
    for (auto& i : idx) i = usable[size_t(rng.uniform_int(int(usable.size())))];

    size_t num_chunks = (size_t(batch) + chunk - 1) / chunk;
    std::vector<CtcGrads> c_grads(num_chunks);
    std::vector<double> c_loss(num_chunks, 0.0);
    parallel_chunks(size_t(batch), chunk, [&](size_t ci, size_t b, size_t e) {
      c_grads[ci].init(model);
      for (size_t i = b; i < e; ++i)
        c_loss[ci] +=
            ctc_utterance_backward(model, features[idx[i]], labels[idx[i]].phones, &c_grads[ci]);
    });

    CtcGrads total;
    total.init(model);
    double loss = 0.0;
    for (size_t ci = 0; ci < num_chunks; ++ci) {
      total.add(c_grads[ci]);
      loss += c_loss[ci];
    }
    loss /= batch;
    if (!std::isfinite(loss))
      throw DivergenceError(format_msg("train_ctc: non-finite loss at step %ld", step));
    if (loss_history) loss_history->push_back(loss);

    std::vector<double> flat, gflat;
    pack(flat);
    gflat.insert(gflat.end(), total.w1.begin(), total.w1.end());
    gflat.insert(gflat.end(), total.b1.begin(), total.b1.end());
    gflat.insert(gflat.end(), total.w2.begin(), total.w2.end());
    gflat.insert(gflat.end(), total.b2.begin(), total.b2.end());
    for (auto& g : gflat) g /= batch;
    opt.update(flat, gflat);
    unpack(flat);
  }
  return model;
}

PhonemeSequence ctc_greedy_decode(const CtcModel& model, const FeatureSequence& features) {
  MatD logp = ctc_forward(model, features);
  std::vector<int> alignment;
  for (int t = 0; t < logp.rows; ++t) {
    int best = 0;
    for (int c = 1; c < logp.cols; ++c)
      if (logp.at(t, c) > logp.at(t, best)) best = c;
    alignment.push_back(best);
  }
  PhonemeSequence out;
  out.utterance_id = features.utterance_id;
  out.phones = ctc_collapse(alignment, model.blank);
  return out;
}

void save_ctc(const CtcModel& model, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kMagic, kVersion);
  write_pod<int32_t>(os, model.blank);
  for (const auto* conv : {&model.conv1, &model.conv2}) {
    write_pod<int32_t>(os, conv->in_ch);
    write_pod<int32_t>(os, conv->out_ch);
    write_pod<int32_t>(os, conv->kernel);
    write_pod<int32_t>(os, conv->pad_left);
    write_pod<int32_t>(os, conv->pad_right);
    write_vec<double>(os, conv->w);
    write_vec<double>(os, conv->b);
  }
}

CtcModel load_ctc(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kMagic, "ctc");
  CtcModel model;
  model.blank = read_pod<int32_t>(is);
  for (auto* conv : {&model.conv1, &model.conv2}) {
    conv->in_ch = read_pod<int32_t>(is);
    conv->out_ch = read_pod<int32_t>(is);
    conv->kernel = read_pod<int32_t>(is);
    conv->pad_left = read_pod<int32_t>(is);
    conv->pad_right = read_pod<int32_t>(is);
    conv->w = read_vec<double>(is);
    conv->b = read_vec<double>(is);
  }
  return model;
}

}  // namespace uasr
