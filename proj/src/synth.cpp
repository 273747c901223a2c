#include "uasr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uasr/evalmetrics.hpp"
#include "uasr/rng.hpp"

namespace uasr {

namespace {

std::vector<double> sample_unit_scaled(Rng& rng, int d, double scale) {
  std::vector<double> v(static_cast<size_t>(d));
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x = x / norm * scale;
  return v;
}

// bigram word grammar with per-row random transition weights
struct WordGrammar {
  int num_words;
  std::vector<double> start;               // num_words
  std::vector<std::vector<double>> trans;  // num_words x num_words

  WordGrammar(int n, Rng& rng) : num_words(n), start(size_t(n)), trans(size_t(n)) {
    auto sample_dist = [&](std::vector<double>& p) {
      p.resize(size_t(num_words));
      double total = 0.0;
      for (auto& v : p) {
        v = -std::log(std::max(rng.uniform(), 1e-12));
        total += v;
      }
      for (auto& v : p) v /= total;
    };
    sample_dist(start);
    for (auto& row : trans) sample_dist(row);
  }

  int sample(const std::vector<double>& p, Rng& rng) const {
    double u = rng.uniform(), acc = 0.0;
    for (int i = 0; i < num_words; ++i) {
      acc += p[size_t(i)];
      if (u < acc) return i;
    }
    return num_words - 1;
  }

  std::vector<int> sentence(const SyntheticSpec& spec, Rng& rng) const {
    int len = spec.min_words_per_sentence +
              rng.uniform_int(spec.max_words_per_sentence - spec.min_words_per_sentence + 1);
    std::vector<int> words;
    int w = sample(start, rng);
    words.push_back(w);
    for (int i = 1; i < len; ++i) {
      w = sample(trans[size_t(w)], rng);
      words.push_back(w);
    }
    return words;
  }
};

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, int n_utterances, bool matched) {
  UASR_REQUIRE(spec.num_phones >= 2 && spec.num_words >= 2, "generate_synthetic: degenerate spec");
  UASR_REQUIRE(spec.mean_margin > 0, "generate_synthetic: zero-margin means rejected");
  Rng rng(derive_seed(spec.seed, 0x73796e7468));

  SyntheticCorpus corpus;
  corpus.inventory.symbols.push_back(kSilSymbol);
  corpus.inventory.sil_index = 0;
  for (int p = 0; p < spec.num_phones; ++p)
    corpus.inventory.symbols.push_back("p" + std::to_string(p));

  // emission means separated pairwise by at least the margin
  int total_symbols = corpus.inventory.size();
  corpus.phone_means = MatD(total_symbols, spec.feature_dim);
  double radius = spec.mean_margin * std::sqrt(double(total_symbols));
  for (int p = 0; p < total_symbols; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      auto v = sample_unit_scaled(rng, spec.feature_dim, radius * (0.5 + 0.5 * rng.uniform()));
      placed = true;
      for (int q = 0; q < p && placed; ++q) {
        double d2 = 0.0;
        for (int c = 0; c < spec.feature_dim; ++c) {
          double diff = v[size_t(c)] - corpus.phone_means.at(q, c);
          d2 += diff * diff;
        }
        if (std::sqrt(d2) < spec.mean_margin) placed = false;
      }
      if (placed)
        for (int c = 0; c < spec.feature_dim; ++c) corpus.phone_means.at(p, c) = v[size_t(c)];
    }
    if (!placed)
      throw Error("generate_synthetic: cannot place emission means at the requested margin");
  }

  // random pronunciations, all distinct
  std::set<std::vector<std::string>> seen_prons;
  for (int w = 0; w < spec.num_words; ++w) {
    std::vector<std::string> pron;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      pron.clear();
      int len = spec.min_word_len + rng.uniform_int(spec.max_word_len - spec.min_word_len + 1);
      for (int i = 0; i < len; ++i) {
        // adjacent repeats inside a word would be indistinguishable from a
        // single longer phone in the features
        std::string next;
        do {
          next = corpus.inventory.symbol(1 + rng.uniform_int(spec.num_phones));
        } while (!pron.empty() && pron.back() == next);
        pron.push_back(next);
      }
      if (seen_prons.insert(pron).second) break;
      pron.clear();
    }
    if (pron.empty()) throw Error("generate_synthetic: cannot build a distinct lexicon");
    corpus.lexicon.entries["w" + std::to_string(w)] = pron;
  }

  WordGrammar grammar(spec.num_words, rng);
  auto word_name = [](int w) { return "w" + std::to_string(w); };

  auto emit_utterance = [&](const std::vector<int>& words, int index) {
    FeatureSequence feat;
    feat.utterance_id = "synth" + std::to_string(index);
    PhonemeSequence ref;
    ref.utterance_id = feat.utterance_id;
    std::vector<int> labels;
    std::vector<std::vector<double>> rows;

    auto emit_phone = [&](int phone, int frames) {
      // adjacent equal phones extend one run of frames; the reference merges
      // them since nothing in the features separates them
      if (ref.phones.empty() || ref.phones.back() != phone) ref.phones.push_back(phone);
      for (int f = 0; f < frames; ++f) {
        std::vector<double> row(static_cast<size_t>(spec.feature_dim));
        for (int c = 0; c < spec.feature_dim; ++c)
          row[size_t(c)] = corpus.phone_means.at(phone, c) + spec.noise_level * rng.normal();
        rows.push_back(std::move(row));
        labels.push_back(phone);
      }
    };
    auto sil_frames = [&]() {
      return spec.min_sil_frames + rng.uniform_int(spec.max_sil_frames - spec.min_sil_frames + 1);
    };
    auto phone_frames = [&]() {
      return spec.min_frames_per_phone +
             rng.uniform_int(spec.max_frames_per_phone - spec.min_frames_per_phone + 1);
    };

    if (spec.silence_at_edges) emit_phone(0, sil_frames());
    for (size_t wi = 0; wi < words.size(); ++wi) {
      if (wi > 0 && rng.uniform() < spec.silence_prob_interior) emit_phone(0, sil_frames());
      for (const auto& sym : corpus.lexicon.entries[word_name(words[wi])])
        emit_phone(corpus.inventory.index_of(sym), phone_frames());
    }
    if (spec.silence_at_edges) emit_phone(0, sil_frames());

    feat.frames = MatF(int(rows.size()), spec.feature_dim);
    for (size_t t = 0; t < rows.size(); ++t)
      for (int c = 0; c < spec.feature_dim; ++c)
        feat.frames.at(int(t), c) = float(rows[t][size_t(c)]);

    std::vector<int> boundaries;
    for (size_t t = 1; t < labels.size(); ++t)
      if (labels[t] != labels[t - 1]) boundaries.push_back(int(t));

    corpus.features.push_back(std::move(feat));
    corpus.references.push_back(std::move(ref));
    corpus.frame_labels.push_back(std::move(labels));
    corpus.gold_boundaries.push_back(std::move(boundaries));
  };

  std::vector<std::vector<int>> audio_sentences;
  for (int u = 0; u < n_utterances; ++u) {
    auto words = grammar.sentence(spec, rng);
    audio_sentences.push_back(words);
    emit_utterance(words, u);
    std::vector<std::string> names;
    for (int w : words) names.push_back(word_name(w));
    corpus.ref_words.push_back(names);
  }

  if (matched) {
    corpus.text_corpus = corpus.ref_words;
    for (size_t i = corpus.text_corpus.size(); i > 1; --i)
      std::swap(corpus.text_corpus[i - 1], corpus.text_corpus[size_t(rng.uniform_int(int(i)))]);
  } else {
    std::set<std::vector<int>> used(audio_sentences.begin(), audio_sentences.end());
    while (int(corpus.text_corpus.size()) < n_utterances) {
      auto words = grammar.sentence(spec, rng);
      if (used.count(words)) continue;
      std::vector<std::string> names;
      for (int w : words) names.push_back(word_name(w));
      corpus.text_corpus.push_back(names);
    }
  }
  return corpus;
}

ProbeResult linear_probe(const SyntheticCorpus& corpus, int iterations, double lr) {
  UASR_REQUIRE(!corpus.features.empty(), "linear_probe: empty corpus");
  int d = corpus.features.front().dim();
  int classes = corpus.inventory.size();

  // multinomial logistic regression, full-batch gradient descent
  std::vector<double> w(size_t(classes) * (d + 1), 0.0);  // [class][dim+bias]
  size_t n = 0;
  for (const auto& f : corpus.features) n += size_t(f.num_frames());

  std::vector<double> logits(static_cast<size_t>(classes)), probs(static_cast<size_t>(classes));
  std::vector<double> grad(w.size());
  for (int iter = 0; iter < iterations; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (size_t u = 0; u < corpus.features.size(); ++u) {
      const auto& f = corpus.features[u];
      for (int t = 0; t < f.num_frames(); ++t) {
        const float* row = f.frames.row(t);
        int label = corpus.frame_labels[u][size_t(t)];
        double mx = -1e300;
        for (int c = 0; c < classes; ++c) {
          double z = w[size_t(c) * (d + 1) + size_t(d)];
          for (int j = 0; j < d; ++j) z += w[size_t(c) * (d + 1) + size_t(j)] * row[j];
          logits[size_t(c)] = z;
          mx = std::max(mx, z);
        }
        double total = 0.0;
        for (int c = 0; c < classes; ++c) {
          probs[size_t(c)] = std::exp(logits[size_t(c)] - mx);
          total += probs[size_t(c)];
        }
        for (int c = 0; c < classes; ++c) {
          double g = probs[size_t(c)] / total - (c == label ? 1.0 : 0.0);
          double* gw = grad.data() + size_t(c) * (d + 1);
          for (int j = 0; j < d; ++j) gw[j] += g * row[j];
          gw[d] += g;
        }
      }
    }
    for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i] / double(n);
  }

  ProbeResult result;
  long correct = 0;
  std::vector<ErrorReport> reports;
  for (size_t u = 0; u < corpus.features.size(); ++u) {
    const auto& f = corpus.features[u];
    std::vector<int> pred_frames;
    for (int t = 0; t < f.num_frames(); ++t) {
      const float* row = f.frames.row(t);
      int best = 0;
      double best_z = -1e300;
      for (int c = 0; c < classes; ++c) {
        double z = w[size_t(c) * (d + 1) + size_t(d)];
        for (int j = 0; j < d; ++j) z += w[size_t(c) * (d + 1) + size_t(j)] * row[j];
        if (z > best_z) {
          best_z = z;
          best = c;
        }
      }
      pred_frames.push_back(best);
      if (best == corpus.frame_labels[u][size_t(t)]) ++correct;
    }
    // collapse runs, strip SIL, compare against the SIL-stripped reference
    std::vector<int> hyp;
    int prev = -1;
    for (int p : pred_frames) {
      if (p != prev && p != corpus.inventory.sil_index) hyp.push_back(p);
      prev = p;
    }
    std::vector<int> ref;
    for (int p : corpus.references[u].phones)
      if (p != corpus.inventory.sil_index) ref.push_back(p);
    reports.push_back(edit_distance(ref, hyp));
  }
  result.frame_accuracy = double(correct) / double(n);
  result.per = accumulate(reports).rate();
  return result;
}

}  // namespace uasr
