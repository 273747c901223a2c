#include "uasr/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uasr/io.hpp"

namespace uasr {

namespace {

constexpr char kMagic[8] = {'U', 'A', 'S', 'R', 'H', 'M', 'M', '1'};
constexpr uint32_t kVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// chain of state indices for a label sequence
std::vector<int> build_chain(const HmmModel& model, const PhonemeSequence& phones) {
  std::vector<int> chain;
  for (int p : phones.phones)
    for (int s = 0; s < model.config.states_per_phoneme; ++s)
      chain.push_back(model.state_index(p, s));
  return chain;
}

struct Lattice {
  // alpha[t][k]: log prob of being in chain position k at frame t
  std::vector<std::vector<double>> alpha, beta;
  double total = kNegInf;
};

Lattice forward_backward(const HmmModel& model, const FeatureSequence& features,
                         const std::vector<int>& chain, bool with_beta) {
  int t_len = features.num_frames();
  int n = int(chain.size());
  Lattice lat;
  lat.alpha.assign(size_t(t_len), std::vector<double>(size_t(n), kNegInf));
  if (t_len < n) return lat;

  std::vector<std::vector<double>> emit(static_cast<size_t>(t_len), std::vector<double>(static_cast<size_t>(n)));
  for (int t = 0; t < t_len; ++t)
    for (int k = 0; k < n; ++k)
      emit[size_t(t)][size_t(k)] = model.emission_loglik(chain[size_t(k)], features.frames.row(t));

  lat.alpha[0][0] = emit[0][0];
  for (int t = 1; t < t_len; ++t) {
    for (int k = 0; k < n; ++k) {
      const HmmState& st = model.states[size_t(chain[size_t(k)])];
      double stay = lat.alpha[size_t(t) - 1][size_t(k)] + std::log(st.self_loop);
      double enter = kNegInf;
      if (k > 0) {
        const HmmState& prev = model.states[size_t(chain[size_t(k) - 1])];
        enter = lat.alpha[size_t(t) - 1][size_t(k) - 1] + std::log(prev.forward);
      }
      lat.alpha[size_t(t)][size_t(k)] = logaddexp(stay, enter) + emit[size_t(t)][size_t(k)];
    }
  }
  lat.total = lat.alpha[size_t(t_len) - 1][size_t(n) - 1];

  if (with_beta) {
    lat.beta.assign(size_t(t_len), std::vector<double>(size_t(n), kNegInf));
    lat.beta[size_t(t_len) - 1][size_t(n) - 1] = 0.0;
    for (int t = t_len - 2; t >= 0; --t) {
      for (int k = n - 1; k >= 0; --k) {
        const HmmState& st = model.states[size_t(chain[size_t(k)])];
        double stay = std::log(st.self_loop) + emit[size_t(t) + 1][size_t(k)] +
                      lat.beta[size_t(t) + 1][size_t(k)];
        double leave = kNegInf;
        if (k + 1 < n)
          leave = std::log(st.forward) + emit[size_t(t) + 1][size_t(k) + 1] +
                  lat.beta[size_t(t) + 1][size_t(k) + 1];
        lat.beta[size_t(t)][size_t(k)] = logaddexp(stay, leave);
      }
    }
  }
  return lat;
}

}  // namespace

double HmmModel::emission_loglik(int state, const float* frame) const {
  const HmmState& st = states[size_t(state)];
  double acc = kNegInf;
  for (size_t c = 0; c < st.weights.size(); ++c) {
    double lp = std::log(st.weights[c]);
    for (int j = 0; j < dim; ++j) {
      double var = st.vars.at(int(c), j);
      double diff = double(frame[j]) - st.means.at(int(c), j);
      lp += -0.5 * (std::log(2.0 * M_PI * var) + diff * diff / var);
    }
    acc = logaddexp(acc, lp);
  }
  return acc;
}

double HmmModel::phone_loglik(int phone, const float* frame) const {
  double acc = kNegInf;
  for (int s = 0; s < config.states_per_phoneme; ++s)
    acc = logaddexp(acc, emission_loglik(state_index(phone, s), frame));
  return acc - std::log(double(config.states_per_phoneme));
}

HmmModel train_hmm(const std::vector<FeatureSequence>& features,
                   const std::vector<PhonemeSequence>& pseudo_labels,
                   const PhonemeInventory& inventory, const HmmConfig& config) {
  UASR_REQUIRE(features.size() == pseudo_labels.size(), "train_hmm: label/feature count mismatch");
  UASR_REQUIRE(!features.empty(), "train_hmm: empty corpus");

  HmmModel model;
  model.config = config;
  model.num_phones = inventory.size();
  model.dim = features.front().dim();

  // flat start from global statistics
  std::vector<double> gmean(size_t(model.dim), 0.0), gvar(size_t(model.dim), 0.0);
  size_t n = 0;
  for (const auto& f : features) {
    for (int t = 0; t < f.num_frames(); ++t) {
      const float* row = f.frames.row(t);
      for (int j = 0; j < model.dim; ++j) {
        gmean[size_t(j)] += row[j];
        gvar[size_t(j)] += double(row[j]) * row[j];
      }
    }
    n += size_t(f.num_frames());
  }
  for (int j = 0; j < model.dim; ++j) {
    gmean[size_t(j)] /= double(n);
    gvar[size_t(j)] = std::max(gvar[size_t(j)] / double(n) - gmean[size_t(j)] * gmean[size_t(j)],
                               config.var_floor);
  }

  int num_states = model.num_phones * config.states_per_phoneme;
  for (int s = 0; s < num_states; ++s) {
    HmmState st;
    st.means = MatD(config.num_components, model.dim);
    st.vars = MatD(config.num_components, model.dim);
    st.weights.assign(size_t(config.num_components), 1.0 / config.num_components);
    for (int c = 0; c < config.num_components; ++c) {
      double offset = config.num_components == 1 ? 0.0 : (c == 0 ? -0.3 : 0.3);
      for (int j = 0; j < model.dim; ++j) {
        st.means.at(c, j) = gmean[size_t(j)] + offset * std::sqrt(gvar[size_t(j)]);
        st.vars.at(c, j) = gvar[size_t(j)];
      }
    }
    st.self_loop = config.self_loop_init;
    st.forward = 1.0 - config.self_loop_init;
    model.states.push_back(std::move(st));
  }

  // usable utterances: label chain fits into the frame count
  std::vector<size_t> usable;
  for (size_t u = 0; u < features.size(); ++u) {
    if (pseudo_labels[u].phones.empty()) {
      log_warn("train_hmm: empty label for %s, skipped", features[u].utterance_id.c_str());
      continue;
    }
    size_t chain_len = pseudo_labels[u].phones.size() * size_t(config.states_per_phoneme);
    if (chain_len > size_t(features[u].num_frames())) {
      log_warn("train_hmm: label longer than frames for %s, skipped",
               features[u].utterance_id.c_str());
      continue;
    }
    for (int p : pseudo_labels[u].phones)
      UASR_REQUIRE(p >= 0 && p < model.num_phones, "train_hmm: label phone outside inventory");
    usable.push_back(u);
  }
  UASR_REQUIRE(!usable.empty(), "train_hmm: no usable utterance");

  for (int iter = 0; iter < config.iterations; ++iter) {
    // accumulators per state
    int comps = config.num_components;
    std::vector<double> occ(size_t(num_states) * comps, 0.0);
    std::vector<double> mean_acc(size_t(num_states) * comps * model.dim, 0.0);
    std::vector<double> var_acc(size_t(num_states) * comps * model.dim, 0.0);
    std::vector<double> self_acc(size_t(num_states), 0.0), fwd_acc(size_t(num_states), 0.0);
    double total_loglik = 0.0;

    for (size_t u : usable) {
      const auto& f = features[u];
      std::vector<int> chain = build_chain(model, pseudo_labels[u]);
      Lattice lat = forward_backward(model, f, chain, true);
      if (lat.total == kNegInf) continue;
      total_loglik += lat.total;
      int t_len = f.num_frames(), nstates = int(chain.size());

      for (int t = 0; t < t_len; ++t) {
        const float* row = f.frames.row(t);
        for (int k = 0; k < nstates; ++k) {
          double g = lat.alpha[size_t(t)][size_t(k)] + lat.beta[size_t(t)][size_t(k)] - lat.total;
          if (g < -30.0) continue;
          double gamma = std::exp(g);
          int state = chain[size_t(k)];
          const HmmState& st = model.states[size_t(state)];
          // component responsibilities within the state
          double denom = kNegInf;
          std::vector<double> comp_lp(static_cast<size_t>(comps));
          for (int c = 0; c < comps; ++c) {
            double lp = std::log(st.weights[size_t(c)]);
            for (int j = 0; j < model.dim; ++j) {
              double var = st.vars.at(c, j);
              double diff = double(row[j]) - st.means.at(c, j);
              lp += -0.5 * (std::log(2.0 * M_PI * var) + diff * diff / var);
            }
            comp_lp[size_t(c)] = lp;
            denom = logaddexp(denom, lp);
          }
          for (int c = 0; c < comps; ++c) {
            double r = gamma * std::exp(comp_lp[size_t(c)] - denom);
            size_t base = (size_t(state) * comps + size_t(c));
            occ[base] += r;
            for (int j = 0; j < model.dim; ++j) {
              mean_acc[base * model.dim + size_t(j)] += r * row[j];
              var_acc[base * model.dim + size_t(j)] += r * double(row[j]) * row[j];
            }
          }
        }
        // transition statistics
        if (t + 1 < t_len) {
          for (int k = 0; k < nstates; ++k) {
            int state = chain[size_t(k)];
            const HmmState& st = model.states[size_t(state)];
            double e_self = model.emission_loglik(state, f.frames.row(t + 1));
            double xi_self = lat.alpha[size_t(t)][size_t(k)] + std::log(st.self_loop) + e_self +
                             lat.beta[size_t(t) + 1][size_t(k)] - lat.total;
            if (xi_self > -30.0) self_acc[size_t(state)] += std::exp(xi_self);
            if (k + 1 < nstates) {
              double e_next =
                  model.emission_loglik(chain[size_t(k) + 1], f.frames.row(t + 1));
              double xi_fwd = lat.alpha[size_t(t)][size_t(k)] + std::log(st.forward) + e_next +
                              lat.beta[size_t(t) + 1][size_t(k) + 1] - lat.total;
              if (xi_fwd > -30.0) fwd_acc[size_t(state)] += std::exp(xi_fwd);
            }
          }
        }
      }
    }
    model.train_loglik_history.push_back(total_loglik);

    // M-step
    for (int s = 0; s < num_states; ++s) {
      double state_occ = 0.0;
      for (int c = 0; c < comps; ++c) state_occ += occ[size_t(s) * comps + size_t(c)];
      if (state_occ < 1e-8) continue;  // unseen state keeps its parameters
      HmmState& st = model.states[size_t(s)];
      for (int c = 0; c < comps; ++c) {
        size_t base = size_t(s) * comps + size_t(c);
        double o = occ[base];
        if (o < 1e-8) continue;
        st.weights[size_t(c)] = o / state_occ;
        for (int j = 0; j < model.dim; ++j) {
          double mean = mean_acc[base * model.dim + size_t(j)] / o;
          double var = var_acc[base * model.dim + size_t(j)] / o - mean * mean;
          st.means.at(c, j) = mean;
          st.vars.at(c, j) = std::max(var, config.var_floor);
        }
      }
      double trans = self_acc[size_t(s)] + fwd_acc[size_t(s)];
      if (trans > 1e-8) {
        st.self_loop = std::clamp(self_acc[size_t(s)] / trans, 1e-4, 1.0 - 1e-4);
        st.forward = 1.0 - st.self_loop;
      }
    }
  }
  return model;
}

double hmm_total_logprob(const HmmModel& model, const FeatureSequence& features,
                         const PhonemeSequence& phones) {
  UASR_REQUIRE(!phones.phones.empty(), "hmm_total_logprob: empty phone sequence");
  std::vector<int> chain = build_chain(model, phones);
  return forward_backward(model, features, chain, false).total;
}

Alignment forced_align(const HmmModel& model, const FeatureSequence& features,
                       const PhonemeSequence& phones) {
  UASR_REQUIRE(!phones.phones.empty(), "forced_align: empty phone sequence");
  std::vector<int> chain = build_chain(model, phones);
  int t_len = features.num_frames();
  int n = int(chain.size());
  if (t_len < n) throw Error("forced_align: fewer frames than chain states");

  std::vector<std::vector<double>> delta(size_t(t_len), std::vector<double>(size_t(n), kNegInf));
  std::vector<std::vector<char>> from_self(size_t(t_len), std::vector<char>(size_t(n), 1));
  delta[0][0] = model.emission_loglik(chain[0], features.frames.row(0));
  for (int t = 1; t < t_len; ++t) {
    for (int k = 0; k < n; ++k) {
      const HmmState& st = model.states[size_t(chain[size_t(k)])];
      double stay = delta[size_t(t) - 1][size_t(k)] + std::log(st.self_loop);
      double enter = kNegInf;
      if (k > 0) {
        const HmmState& prev = model.states[size_t(chain[size_t(k) - 1])];
        enter = delta[size_t(t) - 1][size_t(k) - 1] + std::log(prev.forward);
      }
      // ties prefer the self predecessor: the forward transition into this
      // state then happened as early as possible
      bool self_wins = stay >= enter;
      delta[size_t(t)][size_t(k)] =
          (self_wins ? stay : enter) +
          model.emission_loglik(chain[size_t(k)], features.frames.row(t));
      from_self[size_t(t)][size_t(k)] = self_wins ? 1 : 0;
    }
  }

  Alignment alignment;
  alignment.loglik = delta[size_t(t_len) - 1][size_t(n) - 1];
  if (alignment.loglik == kNegInf) throw Error("forced_align: no feasible alignment");
  alignment.chain_states.assign(size_t(t_len), 0);
  int k = n - 1;
  for (int t = t_len - 1; t >= 0; --t) {
    alignment.chain_states[size_t(t)] = k;
    if (t > 0 && !from_self[size_t(t)][size_t(k)]) --k;
  }
  return alignment;
}

std::vector<PhonemeSequence> hmm_relabel(const HmmModel& model,
                                         const std::vector<FeatureSequence>& features,
                                         const DecoderContext& decoder,
                                         const PhonemeInventory& inventory,
                                         const DecodeConfig& decode_config) {
  std::vector<PhonemeSequence> out;
  for (const auto& f : features) {
    if (f.num_frames() == 0) {
      log_warn("hmm_relabel: empty utterance %s skipped", f.utterance_id.c_str());
      continue;
    }
    MatD loglik(f.num_frames(), model.num_phones);
    for (int t = 0; t < f.num_frames(); ++t) {
      double mx = kNegInf;
      for (int p = 0; p < model.num_phones; ++p) {
        loglik.at(t, p) = model.phone_loglik(p, f.frames.row(t));
        mx = std::max(mx, loglik.at(t, p));
      }
      // per-frame shift keeps magnitudes sane and cannot change the argmax
      for (int p = 0; p < model.num_phones; ++p) loglik.at(t, p) -= mx;
    }
    EmissionSequence em =
        build_emissions_from_loglik(f.utterance_id, loglik, decode_config, inventory.sil_index);
    DecodeResult r = decode_beam(em, decoder, decode_config);
    PhonemeSequence seq = r.phones;
    seq.utterance_id = f.utterance_id;
    out.push_back(std::move(seq));
  }
  return out;
}

void save_hmm(const HmmModel& model, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kMagic, kVersion);
  write_pod<int32_t>(os, model.config.states_per_phoneme);
  write_pod<int32_t>(os, model.config.num_components);
  write_pod<int32_t>(os, model.config.iterations);
  write_pod<double>(os, model.config.var_floor);
  write_pod<double>(os, model.config.self_loop_init);
  write_pod<int32_t>(os, model.num_phones);
  write_pod<int32_t>(os, model.dim);
  write_pod<uint64_t>(os, model.states.size());
  for (const auto& st : model.states) {
    write_vec<double>(os, st.means.data);
    write_vec<double>(os, st.vars.data);
    write_vec<double>(os, st.weights);
    write_pod<double>(os, st.self_loop);
    write_pod<double>(os, st.forward);
  }
}

HmmModel load_hmm(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kMagic, "hmm");
  HmmModel model;
  model.config.states_per_phoneme = read_pod<int32_t>(is);
  model.config.num_components = read_pod<int32_t>(is);
  model.config.iterations = read_pod<int32_t>(is);
  model.config.var_floor = read_pod<double>(is);
  model.config.self_loop_init = read_pod<double>(is);
  model.num_phones = read_pod<int32_t>(is);
  model.dim = read_pod<int32_t>(is);
  uint64_t ns = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < ns; ++i) {
    HmmState st;
    auto means = read_vec<double>(is);
    auto vars = read_vec<double>(is);
    st.weights = read_vec<double>(is);
    st.means = MatD(model.config.num_components, model.dim);
    st.means.data = means;
    st.vars = MatD(model.config.num_components, model.dim);
    st.vars.data = vars;
    st.self_loop = read_pod<double>(is);
    st.forward = read_pod<double>(is);
    model.states.push_back(std::move(st));
  }
  return model;
}

}  // namespace uasr
