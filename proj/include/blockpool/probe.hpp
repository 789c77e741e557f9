#pragma once

// Word-pair similarity probe: pair sets built from a lexicon, split by
// training exposure, scored as z-scores of cosine similarity against a
// random-pair baseline.

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "blockpool/rng.hpp"

namespace blockpool {

class Model;
class SubwordVocab;

// Unit-cost edit distance over UTF-8 code points (bytes for invalid input).
std::size_t levenshtein(std::string_view a, std::string_view b);

struct LexiconEntry {
  std::string lemma;
  std::set<std::string> synonyms;
};

// Lines: word<TAB>lemma<TAB>comma-separated synonyms. Synonym relations are
// made symmetric on load; a synonym with no line of its own becomes an entry
// that is its own lemma.
class Lexicon {
 public:
  static Lexicon parse(const std::string& text);
  static Lexicon load(const std::string& path);

  const std::map<std::string, LexiconEntry>& entries() const { return entries_; }
  const LexiconEntry* find(const std::string& word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, LexiconEntry> entries_;
};

enum class PairKind { kGrammatical, kCloseSpell, kFarSpell, kFarSynonym };
enum class Exposure { kSeen, kHalfSeen, kUnseen };

constexpr std::array<PairKind, 4> kPairKinds = {PairKind::kGrammatical, PairKind::kCloseSpell,
                                                PairKind::kFarSpell, PairKind::kFarSynonym};
constexpr std::array<Exposure, 3> kExposures = {Exposure::kSeen, Exposure::kHalfSeen,
                                                Exposure::kUnseen};

std::string pair_kind_name(PairKind k);
std::string exposure_name(Exposure e);

struct WordPair {
  std::string a, b;
  std::size_t distance = 0;
};

struct PairSet {
  PairKind kind = PairKind::kGrammatical;
  Exposure exposure = Exposure::kSeen;
  std::vector<WordPair> pairs;
  std::size_t candidates = 0;  // before the cap
};

// Lexicon words with at least one synonym; with a vocabulary, only words that
// encode (with their leading word-marker space) to a single token.
std::vector<std::string> eligible_words(const Lexicon& lexicon, const SubwordVocab* vocab);

// Words of a corpus: whitespace-separated, ASCII punctuation stripped from
// both ends.
std::set<std::string> corpus_words(const std::vector<std::string>& corpus);

// Grammatical: distinct words sharing a lemma. Close spell: distance 1,
// different lemmas. Far spell: each word with a partner at the largest
// distance among eligible words. Far synonym: each word with its synonym at
// the largest distance. Ties are sampled; each kind is split by how many of
// its two words occur in train_words and capped per split.
std::vector<PairSet> build_pair_sets(const Lexicon& lexicon, const std::vector<std::string>& eligible,
                                     const std::set<std::string>& train_words, Rng& rng,
                                     std::size_t cap = 2000);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct ProbeBaseline {
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

struct ZCell {
  PairKind kind = PairKind::kGrammatical;
  Exposure exposure = Exposure::kSeen;
  std::size_t n = 0;
  double mean_z = 0.0;
  double ci = 0.0;  // half width of the 95% normal-approximation interval
};

struct ProbeReport {
  ProbeBaseline baseline;
  std::vector<ZCell> cells;
  const ZCell& cell(PairKind k, Exposure e) const;
  std::string to_tsv() const;
};

// Cached word vectors of one model.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(const Model& model) : model_(model) {}
  const std::vector<double>& get(const std::string& word);
  double similarity(const std::string& a, const std::string& b);

 private:
  const Model& model_;
  std::map<std::string, std::vector<double>> cache_;
};

// n uniformly random pairs of distinct eligible words. Throws NumericError
// when the similarities have zero spread.
ProbeBaseline random_pair_baseline(EmbeddingCache& cache, const std::vector<std::string>& eligible,
                                   std::size_t n, std::uint64_t seed);

double z_score(double cos, const ProbeBaseline& baseline);

ProbeReport z_scores(EmbeddingCache& cache, const std::vector<PairSet>& sets,
                     const ProbeBaseline& baseline);

}  // namespace blockpool
