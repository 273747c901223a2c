#include "uasr/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uasr/io.hpp"

namespace uasr {

namespace {

constexpr char kMagic[8] = {'U', 'A', 'S', 'R', 'N', 'G', 'L', 'M'};
constexpr uint32_t kVersion = 1;

using Gram = std::vector<int>;
using CountMap = std::map<Gram, long>;

struct Discounts {
  double d1 = 0, d2 = 0, d3 = 0;
  double of(long c) const { return c == 1 ? d1 : (c == 2 ? d2 : d3); }
};

// Modified Kneser-Ney discounts where the count-of-counts support them, a
// single absolute discount where they do not. Returns whether the order has
// at least 3 distinct count values; too few at a predictive order sends the
// whole model to the add-k fallback.
bool estimate_discounts(const CountMap& counts, Discounts& out) {
  long n1 = 0, n2 = 0, n3 = 0, n4 = 0;
  std::set<long> distinct;
  for (const auto& [g, c] : counts) {
    distinct.insert(c);
    if (c == 1) ++n1;
    else if (c == 2) ++n2;
    else if (c == 3) ++n3;
    else if (c == 4) ++n4;
  }
  out.d1 = out.d2 = out.d3 = 0.75;
  if (n1 > 0 && n2 > 0) {
    double y = double(n1) / (double(n1) + 2.0 * n2);
    out.d1 = out.d2 = out.d3 = y;
    if (n3 > 0 && n4 > 0) {
      Discounts mod;
      mod.d1 = 1.0 - 2.0 * y * double(n2) / double(n1);
      mod.d2 = 2.0 - 3.0 * y * double(n3) / double(n2);
      mod.d3 = 3.0 - 4.0 * y * double(n4) / double(n3);
      if (mod.d1 > 0 && mod.d1 < 1 && mod.d2 > 0 && mod.d2 < 2 && mod.d3 > 0 && mod.d3 < 3)
        out = mod;
    }
  }
  return distinct.size() >= 3;
}

}  // namespace

int NGramLm::symbol_id(const std::string& symbol) const {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), symbol);
  if (it != vocab.end() && *it == symbol) return int(it - vocab.begin());
  return -1;
}

double NGramLm::logprob(std::span<const int> context, int word) const {
  size_t len = std::min(context.size(), size_t(order - 1));
  double backoff_acc = 0.0;
  for (size_t l = len;; --l) {
    Gram key(context.end() - long(l), context.end());
    key.push_back(word);
    auto it = table.find(key);
    if (it != table.end() && it->second.logp != kNoProb)
      return backoff_acc + it->second.logp;
    if (l == 0) break;
    Gram ctx(context.end() - long(l), context.end());
    auto cit = table.find(ctx);
    if (cit != table.end()) backoff_acc += cit->second.bow;
  }
  throw Error("ngram: token id " + std::to_string(word) + " is not a model event");
}

std::vector<double> NGramLm::conditional(std::span<const int> context) const {
  std::vector<double> probs(static_cast<size_t>(num_events()));
  for (int w = 0; w < num_events(); ++w) probs[size_t(w)] = std::exp(logprob(context, w));
  return probs;
}

double NGramLm::entropy(std::span<const int> context) const {
  double h = 0.0;
  for (double p : conditional(context))
    if (p > 0) h -= p * std::log(p);
  return h;
}

NGramLm train_ngram(const std::vector<std::vector<std::string>>& corpus, int order,
                    long prune_min_count) {
  UASR_REQUIRE(order >= 1, "train_ngram: order < 1");
  UASR_REQUIRE(!corpus.empty(), "train_ngram: empty corpus");

  NGramLm lm;
  lm.order = order;
  lm.prune_min_count = prune_min_count;

  {
    std::set<std::string> symbols;
    for (const auto& sent : corpus)
      for (const auto& tok : sent) symbols.insert(tok);
    lm.vocab.assign(symbols.begin(), symbols.end());
  }
  const int eos = lm.eos_id(), bos = lm.bos_id();
  const int num_events = lm.num_events();

  // raw k-gram counts over BOS-padded sentences; windows never end on BOS
  std::vector<CountMap> raw(size_t(order) + 1);
  std::vector<std::vector<int>> id_corpus;
  for (const auto& sent : corpus) {
    std::vector<int> padded(size_t(order) - 1, bos);
    for (const auto& tok : sent) padded.push_back(lm.symbol_id(tok));
    padded.push_back(eos);
    id_corpus.push_back(padded);
    for (size_t p = size_t(order) - 1; p < padded.size(); ++p)
      for (int k = 1; k <= order; ++k) {
        if (p + 1 < size_t(k)) continue;
        Gram g(padded.begin() + long(p + 1 - size_t(k)), padded.begin() + long(p + 1));
        raw[size_t(k)][g] += 1;
      }
  }

  // effective counts: raw at the top order, continuation counts below
  // (grams starting with BOS keep raw counts since nothing precedes BOS)
  std::vector<CountMap> eff(size_t(order) + 1);
  eff[size_t(order)] = raw[size_t(order)];
  for (int k = order - 1; k >= 1; --k) {
    for (const auto& [g, c] : raw[size_t(k) + 1]) {
      Gram suffix(g.begin() + 1, g.end());
      eff[size_t(k)][suffix] += 1;
    }
    for (const auto& [g, c] : raw[size_t(k)])
      if (g.front() == bos) eff[size_t(k)][g] = c;
  }

  // the distinct-count gate applies to predictive orders; the unigram level
  // saturates its continuation counts on small vocabularies and its discount
  // barely matters, so it only gates pure unigram models
  std::vector<Discounts> discounts(size_t(order) + 1);
  bool kn_ok = true;
  for (int k = 1; k <= order; ++k) {
    bool enough = estimate_discounts(eff[size_t(k)], discounts[size_t(k)]);
    if (k >= 2 || order == 1) kn_ok = kn_ok && enough;
  }
  lm.used_add_k_fallback = !kn_ok;
  if (!kn_ok) eff = raw;  // plain add-k smooths raw counts at every order

  // context totals and per-context pruned mass at the top order
  auto context_of = [](const Gram& g) { return Gram(g.begin(), g.end() - 1); };

  // probabilities assembled bottom-up; lower-order values kept for interpolation
  std::map<Gram, double> prev_prob;  // gram -> p (linear)
  const double uniform = 1.0 / double(num_events);

  for (int k = 1; k <= order; ++k) {
    const CountMap& counts = eff[size_t(k)];
    bool top = (k == order);
    long prune = top ? prune_min_count : 0;

    std::map<Gram, double> totals;        // context -> sum of counts
    std::map<Gram, double> reserved;      // context -> discount/pruned mass
    for (const auto& [g, c] : counts) {
      Gram ctx = context_of(g);
      totals[ctx] += double(c);
      if (c <= prune)
        reserved[ctx] += double(c);
      else if (kn_ok)
        reserved[ctx] += discounts[size_t(k)].of(c);
    }
    std::map<Gram, double> cur_prob;
    for (const auto& [g, c] : counts) {
      if (c <= prune) continue;
      Gram ctx = context_of(g);
      double total = totals[ctx];
      double lower = 1.0;
      if (k > 1) {
        Gram sub(g.begin() + 1, g.end());
        auto it = prev_prob.find(sub);
        lower = it != prev_prob.end() ? it->second : uniform;
      } else {
        lower = uniform;
      }
      double p;
      if (kn_ok) {
        double lambda = reserved[ctx];
        p = std::max(double(c) - discounts[size_t(k)].of(c), 0.0) / total + lambda / total * lower;
      } else {
        double lambda = lm.add_k * num_events + reserved[ctx];
        p = (double(c) + lambda * lower) / (total + lm.add_k * num_events);
      }
      cur_prob[g] = p;
    }

    if (k == 1) {
      // every event gets a unigram entry so in-vocab tokens never score -inf
      double total = 0.0;
      for (const auto& [g, c] : counts) total += double(c);
      double lambda =
          kn_ok ? reserved[Gram{}] : lm.add_k * num_events + reserved[Gram{}];
      double denom = kn_ok ? total : total + lm.add_k * num_events;
      for (int w = 0; w < num_events; ++w) {
        Gram g{w};
        if (cur_prob.count(g)) continue;
        cur_prob[g] = lambda / denom * uniform;
      }
    }

    for (const auto& [g, p] : cur_prob) {
      lm.table[g].logp = std::log(p);
    }
    // backoff weights live on the context gram
    for (const auto& [ctx, total] : totals) {
      double bow;
      if (kn_ok) {
        bow = reserved[ctx] / total;
      } else {
        bow = (lm.add_k * num_events + reserved[ctx]) / (total + lm.add_k * num_events);
      }
      if (ctx.empty()) continue;  // empty context backs off nowhere
      auto& e = lm.table[ctx];
      e.bow = std::log(bow);
    }
    prev_prob = std::move(cur_prob);
  }

  // mean conditional entropy over the training corpus (decode tuning floor)
  double ent_acc = 0.0;
  long positions = 0;
  for (const auto& padded : id_corpus) {
    for (size_t p = size_t(order) - 1; p + 1 < padded.size(); ++p) {
      std::span<const int> ctx(padded.data() + (p - (size_t(order) - 1)), size_t(order) - 1);
      ent_acc += lm.entropy(ctx);
      ++positions;
    }
  }
  lm.train_entropy = positions ? ent_acc / double(positions) : 0.0;
  return lm;
}

namespace {

std::vector<int> pad_context(const NGramLm& lm, const std::vector<int>& tokens) {
  std::vector<int> padded(size_t(lm.order) - 1, lm.bos_id());
  padded.insert(padded.end(), tokens.begin(), tokens.end());
  return padded;
}

}  // namespace

std::vector<double> score(const NGramLm& lm, const std::vector<int>& tokens) {
  for (int t : tokens)
    if (t < 0 || t >= lm.vocab_size())
      throw Error("score: token id out of vocabulary: " + std::to_string(t));
  std::vector<int> padded = pad_context(lm, tokens);
  std::vector<double> out;
  out.reserve(tokens.size());
  size_t ctx_len = size_t(lm.order) - 1;
  for (size_t i = 0; i < tokens.size(); ++i) {
    std::span<const int> ctx(padded.data() + i, ctx_len);
    out.push_back(lm.logprob(ctx, tokens[i]));
  }
  return out;
}

std::vector<double> score_symbols(const NGramLm& lm, const std::vector<std::string>& tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    int id = lm.symbol_id(t);
    if (id < 0) throw Error("score: out-of-vocabulary token \"" + t + "\"");
    ids.push_back(id);
  }
  return score(lm, ids);
}

double mean_entropy(const NGramLm& lm, const std::vector<int>& tokens) {
  UASR_REQUIRE(!tokens.empty(), "mean_entropy: empty sequence");
  for (int t : tokens)
    if (t < 0 || t >= lm.vocab_size())
      throw Error("mean_entropy: token id out of vocabulary: " + std::to_string(t));
  std::vector<int> padded = pad_context(lm, tokens);
  size_t ctx_len = size_t(lm.order) - 1;
  double acc = 0.0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    std::span<const int> ctx(padded.data() + i, ctx_len);
    acc += lm.entropy(ctx);
  }
  return acc / double(tokens.size());
}

void save_ngram(const NGramLm& lm, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_magic(os, kMagic, kVersion);
  write_pod<int32_t>(os, lm.order);
  write_pod<int64_t>(os, lm.prune_min_count);
  write_pod<uint8_t>(os, lm.used_add_k_fallback ? 1 : 0);
  write_pod<double>(os, lm.add_k);
  write_pod<double>(os, lm.train_entropy);
  uint64_t vocab_hash = 0xcbf29ce484222325ULL;
  for (const auto& s : lm.vocab) vocab_hash = fnv1a_str(s, fnv1a_str("\x1f", vocab_hash));
  write_pod<uint64_t>(os, vocab_hash);
  write_pod<uint64_t>(os, lm.vocab.size());
  for (const auto& s : lm.vocab) write_string(os, s);
  write_pod<uint64_t>(os, lm.table.size());
  for (const auto& [g, e] : lm.table) {
    write_pod<uint8_t>(os, uint8_t(g.size()));
    for (int id : g) write_pod<int32_t>(os, id);
    write_pod<double>(os, e.logp);
    write_pod<double>(os, e.bow);
  }
}

NGramLm load_ngram(const std::filesystem::path& path) {
  auto is = open_in(path);
  read_magic(is, kMagic, "ngram");
  NGramLm lm;
  lm.order = read_pod<int32_t>(is);
  lm.prune_min_count = read_pod<int64_t>(is);
  lm.used_add_k_fallback = read_pod<uint8_t>(is) != 0;
  lm.add_k = read_pod<double>(is);
  lm.train_entropy = read_pod<double>(is);
  read_pod<uint64_t>(is);  // vocab hash, informational
  uint64_t nv = read_pod<uint64_t>(is);
  lm.vocab.resize(nv);
  for (auto& s : lm.vocab) s = read_string(is);
  uint64_t ne = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < ne; ++i) {
    uint8_t len = read_pod<uint8_t>(is);
    std::vector<int> g(len);
    for (auto& id : g) id = read_pod<int32_t>(is);
    NGramLm::Entry e;
    e.logp = read_pod<double>(is);
    e.bow = read_pod<double>(is);
    lm.table[g] = e;
  }
  return lm;
}

void export_arpa(const NGramLm& lm, const std::filesystem::path& path) {
  auto os = open_out(path, false);
  auto name = [&](int id) -> std::string {
    if (id == lm.eos_id()) return "</s>";
    if (id == lm.bos_id()) return "<s>";
    return lm.vocab[size_t(id)];
  };
  std::vector<long> counts(size_t(lm.order) + 1, 0);
  for (const auto& [g, e] : lm.table) counts[g.size()] += 1;
  os << "\\data\\\n";
  for (int k = 1; k <= lm.order; ++k) os << "ngram " << k << "=" << counts[size_t(k)] << "\n";
  constexpr double kLn10 = 2.302585092994046;
  for (int k = 1; k <= lm.order; ++k) {
    os << "\n\\" << k << "-grams:\n";
    for (const auto& [g, e] : lm.table) {
      if (int(g.size()) != k) continue;
      double lp10 = e.logp == NGramLm::kNoProb ? -99.0 : e.logp / kLn10;
      std::vector<std::string> words;
      for (int id : g) words.push_back(name(id));
      os << lp10 << "\t" << join(words, " ");
      if (e.bow != 0.0) os << "\t" << e.bow / kLn10;
      os << "\n";
    }
  }
  os << "\n\\end\\\n";
}

}  // namespace uasr
