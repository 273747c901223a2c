#include "uasr/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "uasr/evalmetrics.hpp"

namespace uasr {

void validate_decode_config(const DecodeConfig& config) {
  if (config.beam_size < 1) throw ConfigError("decode.beam_size < 1");
  if (config.acoustic_scale < 0.0 || config.acoustic_scale > 8.0)
    throw ConfigError("decode.acoustic_scale outside [0, 8]");
  if (config.blank_bonus < -3.0 || config.blank_bonus > 8.0)
    throw ConfigError("decode.blank_bonus outside [-3, 8]");
}

EmissionSequence build_emissions(const PosteriorSequence& posteriors, const DecodeConfig& config,
                                 int blank_index) {
  EmissionSequence out;
  out.utterance_id = posteriors.utterance_id;
  out.blank = blank_index;
  out.blank_bonus = config.blank_bonus;
  int t_len = posteriors.rows.rows, v = posteriors.rows.cols;
  UASR_REQUIRE(t_len >= 1, "build_emissions: empty posteriors");

  auto argmax = [&](int t) {
    int best = 0;
    for (int c = 1; c < v; ++c)
      if (posteriors.rows.at(t, c) > posteriors.rows.at(t, best)) best = c;
    return best;
  };

  std::vector<std::pair<int, int>> runs;
  int start = 0, prev = argmax(0);
  for (int t = 1; t < t_len; ++t) {
    int a = argmax(t);
    if (a != prev) {
      runs.emplace_back(start, t);
      start = t;
      prev = a;
    }
  }
  runs.emplace_back(start, t_len);

  out.rows = MatD(int(runs.size()), v);
  for (size_t r = 0; r < runs.size(); ++r) {
    auto [b, e] = runs[r];
    for (int c = 0; c < v; ++c) {
      double avg = 0.0;
      for (int t = b; t < e; ++t) avg += posteriors.rows.at(t, c);
      avg /= double(e - b);
      out.rows.at(int(r), c) = config.acoustic_scale * std::log(std::max(avg, 1e-300));
    }
    out.rows.at(int(r), blank_index) += config.blank_bonus;
  }
  return out;
}

EmissionSequence build_emissions_from_loglik(const std::string& utterance_id, const MatD& loglik,
                                             const DecodeConfig& config, int blank_index) {
  EmissionSequence out;
  out.utterance_id = utterance_id;
  out.blank = blank_index;
  out.blank_bonus = config.blank_bonus;
  out.rows = loglik;
  for (auto& v : out.rows.data) v *= config.acoustic_scale;
  for (int t = 0; t < out.rows.rows; ++t) out.rows.at(t, blank_index) += config.blank_bonus;
  return out;
}

Lexicon make_phoneme_lexicon(const PhonemeInventory& inventory) {
  Lexicon lex;
  for (int i = 0; i < inventory.size(); ++i)
    if (inventory.is_scorable(i)) lex.entries[inventory.symbol(i)] = {inventory.symbol(i)};
  return lex;
}

DecoderContext build_decoder(const Lexicon& lexicon, const PhonemeInventory& inventory,
                             const NGramLm& lm) {
  DecoderContext ctx;
  ctx.lm = &lm;
  ctx.nodes.push_back({});
  for (const auto& [word, pron] : lexicon.entries) {
    UASR_REQUIRE(!pron.empty(), "lexicon entry with empty pronunciation: " + word);
    int lm_id = lm.symbol_id(word);
    if (lm_id < 0) throw Error("decode: lexicon word not in LM vocabulary: " + word);
    std::vector<int> phones;
    for (const auto& p : pron) {
      int idx = inventory.index_of(p);
      if (idx < 0) throw Error("decode: pronunciation phone outside inventory: " + p);
      if (idx == inventory.sil_index || idx == inventory.blank_index)
        throw Error("decode: pronunciation may not contain the blank symbol: " + word);
      phones.push_back(idx);
    }
    int word_id = int(ctx.word_names.size());
    ctx.word_names.push_back(word);
    ctx.word_phones.push_back(phones);
    ctx.word_lm_ids.push_back(lm_id);

    int node = 0;
    for (int p : phones) {
      int child = -1;
      for (auto [sym, next] : ctx.nodes[size_t(node)].edges)
        if (sym == p) child = next;
      if (child < 0) {
        child = int(ctx.nodes.size());
        ctx.nodes[size_t(node)].edges.emplace_back(p, child);
        ctx.nodes.push_back({});
      }
      node = child;
    }
    ctx.nodes[size_t(node)].words.push_back(word_id);
  }
  // deterministic order: edges by phone id, words lexicographic
  for (auto& node : ctx.nodes) {
    std::sort(node.edges.begin(), node.edges.end());
    std::sort(node.words.begin(), node.words.end(),
              [&](int a, int b) { return ctx.word_names[size_t(a)] < ctx.word_names[size_t(b)]; });
  }
  return ctx;
}

namespace {

struct Token {
  double acoustic = 0.0, lm = 0.0, bonus = 0.0;
  std::vector<int> words;

  double total() const { return acoustic + lm + bonus; }
};

struct TokenKey {
  int node;
  int last;  // -1 for blank
  std::vector<int> lm_state;

  bool operator<(const TokenKey& o) const {
    if (node != o.node) return node < o.node;
    if (last != o.last) return last < o.last;
    return lm_state < o.lm_state;
  }
};

// lexicographic comparison of word-name sequences, for deterministic ties
bool words_less(const DecoderContext& ctx, const std::vector<int>& a, const std::vector<int>& b) {
  size_t n = std::min(a.size(), b.size());
  for (size_t i = 0; i < n; ++i) {
    const auto& wa = ctx.word_names[size_t(a[i])];
    const auto& wb = ctx.word_names[size_t(b[i])];
    if (wa != wb) return wa < wb;
  }
  return a.size() < b.size();
}

using Beam = std::map<TokenKey, Token>;

void offer(const DecoderContext& ctx, Beam& beam, const TokenKey& key, Token&& token) {
  auto it = beam.find(key);
  if (it == beam.end()) {
    beam.emplace(key, std::move(token));
    return;
  }
  double a = token.total(), b = it->second.total();
  if (a > b || (a == b && words_less(ctx, token.words, it->second.words)))
    it->second = std::move(token);
}

std::vector<int> advance_lm_state(const std::vector<int>& state, int lm_id) {
  std::vector<int> out(state.begin() + 1, state.end());
  out.push_back(lm_id);
  return out;
}

// word-completion epsilon transitions; chains are impossible since the root
// carries no words
void complete_words(const DecoderContext& ctx, Beam& beam, double alpha) {
  std::vector<std::pair<TokenKey, Token>> additions;
  for (const auto& [key, token] : beam) {
    const auto& words = ctx.nodes[size_t(key.node)].words;
    for (int w : words) {
      Token next = token;
      std::span<const int> state(key.lm_state.data(), key.lm_state.size());
      next.lm += alpha * ctx.lm->logprob(state, ctx.word_lm_ids[size_t(w)]);
      next.words.push_back(w);
      TokenKey nk{0, key.last, advance_lm_state(key.lm_state, ctx.word_lm_ids[size_t(w)])};
      additions.emplace_back(std::move(nk), std::move(next));
    }
  }
  for (auto& [key, token] : additions) offer(ctx, beam, key, std::move(token));
}

void prune(const DecoderContext& ctx, Beam& beam, int beam_size) {
  if (int(beam.size()) <= beam_size) return;
  std::vector<const std::pair<const TokenKey, Token>*> items;
  items.reserve(beam.size());
  for (const auto& kv : beam) items.push_back(&kv);
  std::stable_sort(items.begin(), items.end(), [&](const auto* a, const auto* b) {
    if (a->second.total() != b->second.total()) return a->second.total() > b->second.total();
    return words_less(ctx, a->second.words, b->second.words);
  });
  Beam kept;
  bool kept_root = false;
  for (int i = 0; i < beam_size; ++i) {
    kept.emplace(items[size_t(i)]->first, items[size_t(i)]->second);
    kept_root = kept_root || items[size_t(i)]->first.node == 0;
  }
  // a completable hypothesis must survive pruning or the final step could
  // strand the whole beam mid-word
  if (!kept_root) {
    for (size_t i = size_t(beam_size); i < items.size(); ++i) {
      if (items[i]->first.node == 0) {
        kept.emplace(items[i]->first, items[i]->second);
        break;
      }
    }
  }
  beam = std::move(kept);
}

}  // namespace

DecodeResult decode_beam(const EmissionSequence& emissions, const DecoderContext& context,
                         const DecodeConfig& config) {
  validate_decode_config(config);
  UASR_REQUIRE(emissions.rows.rows >= 1, "decode_beam: empty emissions");
  const NGramLm& lm = *context.lm;
  double alpha = config.lm_weight_alpha;
  double nu = emissions.blank_bonus;

  Beam beam;
  {
    TokenKey start{0, -1, std::vector<int>(size_t(lm.order) - 1, lm.bos_id())};
    beam.emplace(std::move(start), Token{});
  }

  for (int t = 0; t < emissions.rows.rows; ++t) {
    const double* row = emissions.rows.row(t);
    Beam next;
    for (const auto& [key, token] : beam) {
      // blank step (the bonus is part of the stored blank score)
      {
        Token nt = token;
        nt.acoustic += row[emissions.blank] - nu;
        nt.bonus += nu;
        offer(context, next, TokenKey{key.node, -1, key.lm_state}, std::move(nt));
      }
      // repeat of the last emitted phone, no trie movement
      if (key.last >= 0) {
        Token nt = token;
        nt.acoustic += row[key.last];
        offer(context, next, key, std::move(nt));
      }
      // advance along trie edges; a repeated symbol needs a blank in between
      for (auto [phone, child] : context.nodes[size_t(key.node)].edges) {
        if (key.last >= 0 && phone == key.last) continue;
        Token nt = token;
        nt.acoustic += row[phone];
        offer(context, next, TokenKey{child, phone, key.lm_state}, std::move(nt));
      }
    }
    complete_words(context, next, alpha);
    prune(context, next, config.beam_size);
    beam = std::move(next);
    if (beam.empty()) throw Error("decode_beam: beam emptied, increase beam_size");
  }

  // final tokens must sit at the root with every word completed
  const Token* best = nullptr;
  double best_total = 0.0;
  std::vector<Token> finals;
  for (const auto& [key, token] : beam) {
    if (key.node != 0) continue;
    Token ft = token;
    std::span<const int> state(key.lm_state.data(), key.lm_state.size());
    ft.lm += alpha * lm.logprob(state, lm.eos_id());
    finals.push_back(std::move(ft));
  }
  if (finals.empty()) throw Error("decode_beam: no complete hypothesis, increase beam_size");
  for (const auto& token : finals) {
    if (!best || token.total() > best_total ||
        (token.total() == best_total && words_less(context, token.words, best->words))) {
      best = &token;
      best_total = token.total();
    }
  }

  DecodeResult result;
  result.acoustic_score = best->acoustic;
  result.lm_score = best->lm;
  result.bonus_score = best->bonus;
  result.total_score = best->total();
  result.phones.utterance_id = emissions.utterance_id;
  for (int w : best->words) {
    result.words.push_back(context.word_names[size_t(w)]);
    for (int p : context.word_phones[size_t(w)]) result.phones.phones.push_back(p);
  }
  return result;
}

DecodeResult decode_beam(const EmissionSequence& emissions, const Lexicon& lexicon,
                         const PhonemeInventory& inventory, const NGramLm& lm,
                         const DecodeConfig& config) {
  DecoderContext ctx = build_decoder(lexicon, inventory, lm);
  return decode_beam(emissions, ctx, config);
}

TuneOutcome tune_decode(const std::vector<TuneCandidate>& candidates,
                        const std::vector<PhonemeSequence>& dev_viterbi, const NGramLm& lm,
                        const PhonemeInventory& inventory, double mu) {
  UASR_REQUIRE(!candidates.empty(), "tune_decode: empty candidate grid");

  // inventory -> lm ids for entropy scoring of decoded phone strings
  std::vector<int> lm_id(size_t(inventory.size()), -1);
  for (int i = 0; i < inventory.size(); ++i)
    if (inventory.is_scorable(i)) lm_id[size_t(i)] = lm.symbol_id(inventory.symbol(i));

  TuneOutcome outcome;
  double best = 0.0;
  for (const auto& cand : candidates) {
    UASR_REQUIRE(cand.decoded.size() == dev_viterbi.size(),
                 "tune_decode: candidate decode count mismatch");
    double objective = 0.0;
    for (size_t j = 0; j < dev_viterbi.size(); ++j) {
      std::vector<int> decoded_ids;
      for (int p : cand.decoded[j].phones.phones) {
        if (lm_id[size_t(p)] < 0)
          throw Error("tune_decode: decoded phone not scorable: " + inventory.symbol(p));
        decoded_ids.push_back(lm_id[size_t(p)]);
      }
      std::vector<int> viterbi_ids;
      for (int p : dev_viterbi[j].phones)
        if (inventory.is_scorable(p)) viterbi_ids.push_back(p);

      // trivial outputs cannot buy their way in with artificially low entropy
      double entropy =
          decoded_ids.empty() ? lm.train_entropy : mean_entropy(lm, decoded_ids);
      entropy = std::max(entropy, lm.train_entropy);

      std::vector<int> decoded_inv;
      for (int p : cand.decoded[j].phones.phones) decoded_inv.push_back(p);
      double ed = edit_distance(viterbi_ids, decoded_inv).rate();
      objective += entropy * std::max(ed, mu);
    }
    outcome.objectives.push_back(objective);
    if (outcome.objectives.size() == 1 || objective < best) {
      best = objective;
      outcome.best = cand.config;
    }
  }
  return outcome;
}

double tune_lm_weight_supervised(const std::vector<EmissionSequence>& dev_emissions,
                                 const std::vector<std::vector<std::string>>& references,
                                 const DecoderContext& context, const DecodeConfig& base,
                                 const std::vector<double>& alpha_grid) {
  UASR_REQUIRE(!alpha_grid.empty(), "tune_lm_weight_supervised: empty grid");
  UASR_REQUIRE(!dev_emissions.empty() && dev_emissions.size() == references.size(),
               "tune_lm_weight_supervised: dev set mismatch");
  double best_alpha = alpha_grid.front();
  long best_errors = -1;
  for (double alpha : alpha_grid) {
    DecodeConfig config = base;
    config.lm_weight_alpha = alpha;
    long errors = 0;
    for (size_t j = 0; j < dev_emissions.size(); ++j) {
      DecodeResult r = decode_beam(dev_emissions[j], context, config);
      errors += edit_distance(references[j], r.words).total_errors();
    }
    if (best_errors < 0 || errors < best_errors ||
        (errors == best_errors && alpha < best_alpha)) {
      best_errors = errors;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

std::vector<std::pair<double, double>> decode_tuning_grid() {
  std::vector<std::pair<double, double>> grid;
  for (int s = 0; s <= 8; ++s)
    for (int nu = -3; nu <= 8; ++nu) grid.emplace_back(double(s), double(nu));
  return grid;
}

std::vector<std::pair<double, double>> decode_refinement_grid(double best_scale, double best_nu) {
  std::vector<std::pair<double, double>> grid;
  for (double ds = -0.5; ds <= 0.5; ds += 0.5)
    for (double dn = -0.5; dn <= 0.5; dn += 0.5) {
      double s = std::clamp(best_scale + ds, 0.0, 8.0);
      double nu = std::clamp(best_nu + dn, -3.0, 8.0);
      grid.emplace_back(s, nu);
    }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

}  // namespace uasr
