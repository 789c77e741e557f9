#include "blockpool/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <tuple>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/model.hpp"
#include "blockpool/segmenter.hpp"
#include "blockpool/subword_vocab.hpp"

namespace blockpool {
namespace {

std::vector<std::uint32_t> code_points(std::string_view s) {
  std::vector<std::uint32_t> out;
  const std::string str(s);
  if (!is_valid_utf8(str)) {
    for (unsigned char c : s) out.push_back(c);
    return out;
  }
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    const std::size_t len = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    std::uint32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(cp);
    i += len;
  }
  return out;
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2F) || (u >= 0x3A && u <= 0x40) || (u >= 0x5B && u <= 0x60) ||
         (u >= 0x7B && u <= 0x7E);
}

// Picks one of the partners at the largest distance from `word`.
const std::string* farthest(const std::string& word, const std::vector<const std::string*>& pool,
                            Rng& rng, std::size_t& distance) {
  std::vector<const std::string*> best;
  distance = 0;
  for (const std::string* other : pool) {
    if (*other == word) continue;
    const std::size_t d = levenshtein(word, *other);
    if (d > distance) {
      distance = d;
      best.clear();
    }
    if (d == distance) best.push_back(other);
  }
  if (best.empty()) return nullptr;
  return best[rng.below(best.size())];
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto x = code_points(a), y = code_points(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

Lexicon Lexicon::parse(const std::string& text) {
  Lexicon lex;
  std::size_t line_no = 0;
  for (const std::string& raw : split_lines(text)) {
    ++line_no;
    if (trim(raw).empty() || raw[0] == '#') continue;
    const auto fields = split(raw, '\t');
    if (fields.size() < 2 || fields.size() > 3) {
      throw ParseError("expected word<TAB>lemma<TAB>synonyms", line_no);
    }
    const std::string word = trim(fields[0]);
    const std::string lemma = trim(fields[1]);
    if (word.empty() || lemma.empty()) throw ParseError("empty word or lemma", line_no);
    LexiconEntry entry;
    entry.lemma = lemma;
    if (fields.size() == 3) {
      for (const std::string& s : split(fields[2], ',')) {
        const std::string syn = trim(s);
        if (!syn.empty() && syn != word) entry.synonyms.insert(syn);
      }
    }
    if (!lex.entries_.emplace(word, std::move(entry)).second) {
      throw ParseError("duplicate word '" + word + "'", line_no);
    }
  }
  std::vector<std::pair<std::string, std::string>> links;
  for (const auto& [word, entry] : lex.entries_) {
    for (const std::string& syn : entry.synonyms) links.emplace_back(syn, word);
  }
  for (const auto& [syn, word] : links) {
    auto it = lex.entries_.find(syn);
    if (it == lex.entries_.end()) it = lex.entries_.emplace(syn, LexiconEntry{syn, {}}).first;
    it->second.synonyms.insert(word);
  }
  return lex;
}

Lexicon Lexicon::load(const std::string& path) { return parse(read_file(path)); }

const LexiconEntry* Lexicon::find(const std::string& word) const {
  const auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

std::string pair_kind_name(PairKind k) {
  switch (k) {
    case PairKind::kGrammatical: return "grammatical";
    case PairKind::kCloseSpell: return "close_spell";
    case PairKind::kFarSpell: return "far_spell";
    case PairKind::kFarSynonym: return "far_synonym";
  }
  return "?";
}

std::string exposure_name(Exposure e) {
  switch (e) {
    case Exposure::kSeen: return "seen";
    case Exposure::kHalfSeen: return "half_seen";
    case Exposure::kUnseen: return "unseen";
  }
  return "?";
}

std::vector<std::string> eligible_words(const Lexicon& lexicon, const SubwordVocab* vocab) {
  std::vector<std::string> out;
  for (const auto& [word, entry] : lexicon.entries()) {
    if (entry.synonyms.empty()) continue;
    if (vocab != nullptr) {
      const std::string text = vocab->word_marker() ? " " + word : word;
      if (tokenize_ids(*vocab, text).size() != 1) continue;
    }
    out.push_back(word);
  }
  return out;
}

std::set<std::string> corpus_words(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const std::string& line : corpus) {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      std::size_t lo = i, hi = j;
      while (lo < hi && is_ascii_punct(line[lo])) ++lo;
      while (hi > lo && is_ascii_punct(line[hi - 1])) --hi;
      if (hi > lo) words.insert(line.substr(lo, hi - lo));
      i = j;
    }
  }
  return words;
}

std::vector<PairSet> build_pair_sets(const Lexicon& lexicon, const std::vector<std::string>& eligible,
                                     const std::set<std::string>& train_words, Rng& rng,
                                     std::size_t cap) {
  if (eligible.empty()) throw DataError("probe: no eligible words");
  std::vector<std::string> words = eligible;
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  const std::set<std::string> eligible_set(words.begin(), words.end());
  std::vector<const std::string*> pool;
  for (const std::string& w : words) pool.push_back(&w);
  auto lemma_of = [&](const std::string& w) {
    const LexiconEntry* e = lexicon.find(w);
    return e == nullptr ? w : e->lemma;
  };

  std::map<PairKind, std::set<std::pair<std::string, std::string>>> candidates;
  std::map<std::pair<std::string, std::string>, std::size_t> distance;
  auto add = [&](PairKind kind, const std::string& a, const std::string& b, std::size_t d) {
    auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    distance[key] = d;
    candidates[kind].insert(std::move(key));
  };

  std::vector<std::size_t> lengths;
  std::vector<std::string> lemmas;
  for (const std::string& w : words) {
    lengths.push_back(code_points(w).size());
    lemmas.push_back(lemma_of(w));
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (std::size_t j = i + 1; j < words.size(); ++j) {
      const bool same_lemma = lemmas[i] == lemmas[j];
      if (same_lemma) add(PairKind::kGrammatical, words[i], words[j], levenshtein(words[i], words[j]));
      const std::size_t li = lengths[i], lj = lengths[j];
      if (!same_lemma && (li > lj ? li - lj : lj - li) <= 1 && levenshtein(words[i], words[j]) == 1) {
        add(PairKind::kCloseSpell, words[i], words[j], 1);
      }
    }
  }
  for (const std::string& w : words) {
    std::size_t d = 0;
    if (const std::string* partner = farthest(w, pool, rng, d)) add(PairKind::kFarSpell, w, *partner, d);
    std::vector<const std::string*> synonyms;
    if (const LexiconEntry* entry = lexicon.find(w)) {
      for (const std::string& s : entry->synonyms) {
        if (eligible_set.count(s)) synonyms.push_back(&*eligible_set.find(s));
      }
    }
    if (const std::string* partner = farthest(w, synonyms, rng, d)) {
      add(PairKind::kFarSynonym, w, *partner, d);
    }
  }

  std::vector<PairSet> sets;
  for (PairKind kind : kPairKinds) {
    std::map<Exposure, std::vector<WordPair>> split_pairs;
    for (const auto& key : candidates[kind]) {
      const int seen = static_cast<int>(train_words.count(key.first) + train_words.count(key.second));
      const Exposure e = seen == 2 ? Exposure::kSeen : seen == 1 ? Exposure::kHalfSeen : Exposure::kUnseen;
      split_pairs[e].push_back({key.first, key.second, distance[key]});
    }
    for (Exposure e : kExposures) {
      PairSet set;
      set.kind = kind;
      set.exposure = e;
      set.pairs = std::move(split_pairs[e]);
      set.candidates = set.pairs.size();
      if (set.pairs.size() > cap) {
        rng.shuffle(set.pairs);
        set.pairs.resize(cap);
        std::sort(set.pairs.begin(), set.pairs.end(), [](const WordPair& x, const WordPair& y) {
          return std::tie(x.a, x.b) < std::tie(y.a, y.b);
        });
      }
      sets.push_back(std::move(set));
    }
  }
  return sets;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

const std::vector<double>& EmbeddingCache::get(const std::string& word) {
  auto it = cache_.find(word);
  if (it == cache_.end()) it = cache_.emplace(word, model_.word_embedding(word)).first;
  return it->second;
}

double EmbeddingCache::similarity(const std::string& a, const std::string& b) {
  return cosine(get(a), get(b));
}

ProbeBaseline random_pair_baseline(EmbeddingCache& cache, const std::vector<std::string>& eligible,
                                   std::size_t n, std::uint64_t seed) {
  if (eligible.size() < 2) throw DataError("probe baseline needs at least two eligible words");
  if (n < 2) throw ArgumentError("probe baseline needs at least two pairs");
  Rng rng(seed);
  std::vector<double> sims(n);
  for (double& s : sims) {
    const std::size_t i = rng.below(eligible.size());
    std::size_t j = rng.below(eligible.size() - 1);
    if (j >= i) ++j;
    s = cache.similarity(eligible[i], eligible[j]);
  }
  ProbeBaseline b;
  b.n = n;
  b.seed = seed;
  for (double s : sims) b.mu += s;
  b.mu /= static_cast<double>(n);
  double var = 0.0;
  for (double s : sims) var += (s - b.mu) * (s - b.mu);
  b.sigma = std::sqrt(var / static_cast<double>(n));
  if (!(b.sigma > 0.0)) throw NumericError("degenerate probe baseline: similarities have zero spread");
  return b;
}

double z_score(double cos, const ProbeBaseline& baseline) {
  if (!(baseline.sigma > 0.0)) throw NumericError("degenerate probe baseline: sigma is 0");
  return (cos - baseline.mu) / baseline.sigma;
}

ProbeReport z_scores(EmbeddingCache& cache, const std::vector<PairSet>& sets,
                     const ProbeBaseline& baseline) {
  ProbeReport report;
  report.baseline = baseline;
  for (const PairSet& set : sets) {
    ZCell cell;
    cell.kind = set.kind;
    cell.exposure = set.exposure;
    cell.n = set.pairs.size();
    std::vector<double> z;
    for (const WordPair& p : set.pairs) z.push_back(z_score(cache.similarity(p.a, p.b), baseline));
    if (!z.empty()) {
      for (double v : z) cell.mean_z += v;
      cell.mean_z /= static_cast<double>(z.size());
    }
    if (z.size() > 1) {
      double var = 0.0;
      for (double v : z) var += (v - cell.mean_z) * (v - cell.mean_z);
      const double sd = std::sqrt(var / static_cast<double>(z.size() - 1));
      cell.ci = 1.96 * sd / std::sqrt(static_cast<double>(z.size()));
    }
    report.cells.push_back(cell);
  }
  return report;
}

const ZCell& ProbeReport::cell(PairKind k, Exposure e) const {
  for (const ZCell& c : cells) {
    if (c.kind == k && c.exposure == e) return c;
  }
  throw StateError("probe report has no cell " + pair_kind_name(k) + "/" + exposure_name(e));
}

std::string ProbeReport::to_tsv() const {
  std::string out = "kind\texposure\tn\tmean_z\tci95\n";
  for (const ZCell& c : cells) {
    out += pair_kind_name(c.kind) + "\t" + exposure_name(c.exposure) + "\t" + std::to_string(c.n) +
           "\t" + fmt(c.mean_z) + "\t" + fmt(c.ci) + "\n";
  }
  out += "# baseline\tmu=" + fmt(baseline.mu) + "\tsigma=" + fmt(baseline.sigma) +
         "\tn=" + std::to_string(baseline.n) + "\tseed=" + std::to_string(baseline.seed) + "\n";
  return out;
}

}  // namespace blockpool
