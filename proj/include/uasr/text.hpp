#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

inline const std::string kSilSymbol = "SIL";
inline const std::string kBlankSymbol = "<eps>";

struct PhonemeInventory {
  std::vector<std::string> symbols;
  int sil_index = -1;
  int blank_index = -1;  // set only when a CTC alphabet is in play

  int size() const { return int(symbols.size()); }
  int index_of(const std::string& symbol) const;
  const std::string& symbol(int index) const { return symbols.at(size_t(index)); }
  bool is_scorable(int index) const { return index != sil_index && index != blank_index; }
  // phonemes excluding SIL and the blank
  int num_scorable() const;

  // returns a copy with a blank appended (or this inventory if present)
  PhonemeInventory with_blank() const;
};

struct Lexicon {
  // word -> pronunciation, one per word
  std::map<std::string, std::vector<std::string>> entries;
};

struct PhonemeSequence {
  std::string utterance_id;
  std::vector<int> phones;

  bool empty() const { return phones.empty(); }
  size_t size() const { return phones.size(); }
};

enum class OovPolicy { kSkipSentence, kDropWord, kError };

struct PhonemizeResult {
  PhonemeSequence phones;
  std::vector<int> word_boundaries;  // interior positions in phones where a new word starts
  bool skipped = false;              // sentence dropped under skip-sentence policy
  int dropped_words = 0;
};

// Inventories keep SIL at index 0 and order the remaining phonemes by
// descending corpus count, ties lexicographic. Symbols with count < min_count
// are pruned.
PhonemeInventory build_inventory(const std::vector<std::vector<std::string>>& corpus,
                                 long min_count);

PhonemizeResult phonemize(const std::vector<std::string>& sentence, const Lexicon& lexicon,
                          const PhonemeInventory& inventory, OovPolicy policy);

// SIL at both ends unconditionally; interior word boundaries get SIL
// independently with the given probability.
PhonemeSequence insert_silence(const PhonemeSequence& phones,
                               const std::vector<int>& word_boundaries, double rate,
                               uint64_t seed);

std::vector<std::string> to_symbols(const PhonemeSequence& seq, const PhonemeInventory& inv);
PhonemeSequence to_indices(const std::vector<std::string>& symbols, const PhonemeInventory& inv,
                           const std::string& utterance_id = "");

PhonemeSequence strip_sil(const PhonemeSequence& seq, const PhonemeInventory& inv);

// Lexicon file: "word<TAB>space-separated phonemes".
Lexicon read_lexicon(const std::filesystem::path& path);
void write_lexicon(const Lexicon& lexicon, const std::filesystem::path& path);

// Inventory file: one symbol per line; index = line number.
void write_inventory(const PhonemeInventory& inv, const std::filesystem::path& path);
PhonemeInventory read_inventory(const std::filesystem::path& path);

// Phone text file: one utterance per line, space-separated symbols, with an
// optional leading "id<TAB>" column.
void write_phone_corpus(const std::vector<PhonemeSequence>& corpus, const PhonemeInventory& inv,
                        const std::filesystem::path& path, bool with_ids = false);
std::vector<PhonemeSequence> read_phone_corpus(const std::filesystem::path& path,
                                               const PhonemeInventory& inv, bool with_ids = false);

}  // namespace uasr
