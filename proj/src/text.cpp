#include "uasr/text.hpp"

#include <algorithm>

#include "uasr/io.hpp"
#include "uasr/rng.hpp"

namespace uasr {

int PhonemeInventory::index_of(const std::string& symbol) const {
  for (int i = 0; i < size(); ++i)
    if (symbols[size_t(i)] == symbol) return i;
  return -1;
}

int PhonemeInventory::num_scorable() const {
  int n = size();
  if (sil_index >= 0) --n;
  if (blank_index >= 0) --n;
  return n;
}

PhonemeInventory PhonemeInventory::with_blank() const {
  if (blank_index >= 0) return *this;
  PhonemeInventory out = *this;
  out.blank_index = out.size();
  out.symbols.push_back(kBlankSymbol);
  return out;
}

PhonemeInventory build_inventory(const std::vector<std::vector<std::string>>& corpus,
                                 long min_count) {
  UASR_REQUIRE(!corpus.empty(), "build_inventory: empty corpus");
  std::map<std::string, long> counts;
  for (const auto& sent : corpus)
    for (const auto& p : sent)
      if (p != kSilSymbol && p != kBlankSymbol) counts[p] += 1;

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [sym, cnt] : counts)
    if (cnt >= min_count) kept.emplace_back(sym, cnt);
  if (kept.empty()) throw Error("build_inventory: no phoneme survives min_count pruning");

  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  PhonemeInventory inv;
  inv.symbols.push_back(kSilSymbol);
  inv.sil_index = 0;
  for (const auto& [sym, cnt] : kept) inv.symbols.push_back(sym);
  return inv;
}

PhonemizeResult phonemize(const std::vector<std::string>& sentence, const Lexicon& lexicon,
                          const PhonemeInventory& inventory, OovPolicy policy) {
  UASR_REQUIRE(!sentence.empty(), "phonemize: empty sentence");
  PhonemizeResult out;
  for (const auto& word : sentence) {
    auto it = lexicon.entries.find(word);
    bool ok = it != lexicon.entries.end();
    std::vector<int> pron;
    if (ok) {
      for (const auto& p : it->second) {
        int idx = inventory.index_of(p);
        if (idx < 0) {
          ok = false;  // pronunciation uses a pruned phoneme
          break;
        }
        pron.push_back(idx);
      }
    }
    if (!ok) {
      switch (policy) {
        case OovPolicy::kError:
          throw Error("phonemize: unknown word \"" + word + "\"");
        case OovPolicy::kSkipSentence:
          out.skipped = true;
          out.phones.phones.clear();
          out.word_boundaries.clear();
          return out;
        case OovPolicy::kDropWord:
          out.dropped_words += 1;
          continue;
      }
    }
    if (!out.phones.phones.empty()) out.word_boundaries.push_back(int(out.phones.phones.size()));
    out.phones.phones.insert(out.phones.phones.end(), pron.begin(), pron.end());
  }
  return out;
}

PhonemeSequence insert_silence(const PhonemeSequence& phones,
                               const std::vector<int>& word_boundaries, double rate,
                               uint64_t seed) {
  UASR_REQUIRE(rate >= 0.0 && rate <= 1.0, "insert_silence: rate outside [0,1]");
  Rng rng(seed);
  PhonemeSequence out;
  out.utterance_id = phones.utterance_id;
  out.phones.push_back(0);  // SIL is index 0 by construction
  size_t b = 0;
  for (size_t i = 0; i < phones.phones.size(); ++i) {
    if (b < word_boundaries.size() && int(i) == word_boundaries[b]) {
      ++b;
      if (rng.bernoulli(rate)) out.phones.push_back(0);
    }
    out.phones.push_back(phones.phones[i]);
  }
  out.phones.push_back(0);
  return out;
}

std::vector<std::string> to_symbols(const PhonemeSequence& seq, const PhonemeInventory& inv) {
  std::vector<std::string> out;
  out.reserve(seq.phones.size());
  for (int p : seq.phones) out.push_back(inv.symbol(p));
  return out;
}

PhonemeSequence to_indices(const std::vector<std::string>& symbols, const PhonemeInventory& inv,
                           const std::string& utterance_id) {
  PhonemeSequence out;
  out.utterance_id = utterance_id;
  for (const auto& s : symbols) {
    int idx = inv.index_of(s);
    if (idx < 0) throw Error("symbol not in inventory: " + s);
    out.phones.push_back(idx);
  }
  return out;
}

PhonemeSequence strip_sil(const PhonemeSequence& seq, const PhonemeInventory& inv) {
  PhonemeSequence out;
  out.utterance_id = seq.utterance_id;
  for (int p : seq.phones)
    if (p != inv.sil_index && p != inv.blank_index) out.phones.push_back(p);
  return out;
}

Lexicon read_lexicon(const std::filesystem::path& path) {
  Lexicon lex;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw Error("bad lexicon line: " + line);
    lex.entries[cols[0]] = split_ws(cols[1]);
  }
  return lex;
}

void write_lexicon(const Lexicon& lexicon, const std::filesystem::path& path) {
  auto os = open_out(path, false);
  for (const auto& [word, pron] : lexicon.entries) os << word << "\t" << join(pron, " ") << "\n";
}

void write_inventory(const PhonemeInventory& inv, const std::filesystem::path& path) {
  auto os = open_out(path, false);
  for (const auto& s : inv.symbols) os << s << "\n";
}

PhonemeInventory read_inventory(const std::filesystem::path& path) {
  PhonemeInventory inv;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    if (line == kSilSymbol) inv.sil_index = inv.size();
    if (line == kBlankSymbol) inv.blank_index = inv.size();
    inv.symbols.push_back(line);
  }
  UASR_REQUIRE(inv.sil_index >= 0, "inventory file lacks SIL");
  return inv;
}

void write_phone_corpus(const std::vector<PhonemeSequence>& corpus, const PhonemeInventory& inv,
                        const std::filesystem::path& path, bool with_ids) {
  auto os = open_out(path, false);
  for (const auto& seq : corpus) {
    if (with_ids) os << seq.utterance_id << "\t";
    os << join(to_symbols(seq, inv), " ") << "\n";
  }
}

std::vector<PhonemeSequence> read_phone_corpus(const std::filesystem::path& path,
                                               const PhonemeInventory& inv, bool with_ids) {
  std::vector<PhonemeSequence> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    std::string id, body = line;
    if (with_ids) {
      auto cols = split(line, '\t');
      if (cols.size() != 2) throw Error("bad phone corpus line: " + line);
      id = cols[0];
      body = cols[1];
    }
    out.push_back(to_indices(split_ws(body), inv, id));
  }
  return out;
}

}  // namespace uasr
