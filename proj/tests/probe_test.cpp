#include "blockpool/probe.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "blockpool/error.hpp"
#include "blockpool/model.hpp"
#include "blockpool/training.hpp"

namespace blockpool {
namespace {

std::size_t naive_levenshtein(const std::u32string& a, const std::u32string& b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  const std::u32string ra = a.substr(1), rb = b.substr(1);
  if (a[0] == b[0]) return naive_levenshtein(ra, rb);
  return 1 + std::min({naive_levenshtein(ra, b), naive_levenshtein(a, rb), naive_levenshtein(ra, rb)});
}

std::string random_word(Rng& rng, std::size_t max_len) {
  std::string w;
  for (std::size_t i = 0, n = rng.below(max_len + 1); i < n; ++i) w.push_back(static_cast<char>('a' + rng.below(3)));
  return w;
}

TEST(LevenshteinTest, Examples) {
  EXPECT_EQ(levenshtein("pour", "tour"), 1u);
  EXPECT_EQ(levenshtein("abc", "abc"), 0u);
  EXPECT_EQ(levenshtein("", "abc"), 3u);
  EXPECT_EQ(levenshtein("kitten", "sitting"), 3u);
  // Code points, not bytes.
  EXPECT_EQ(levenshtein("café", "cafe"), 1u);
}

TEST(LevenshteinTest, MatchesRecursiveReference) {
  Rng rng(1);
  for (int i = 0; i < 300; ++i) {
    const std::string a = random_word(rng, 6), b = random_word(rng, 6);
    const std::u32string ua(a.begin(), a.end()), ub(b.begin(), b.end());
    EXPECT_EQ(levenshtein(a, b), naive_levenshtein(ua, ub)) << a << " " << b;
  }
}

TEST(LevenshteinTest, SymmetricAndTriangle) {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    const std::string a = random_word(rng, 8), b = random_word(rng, 8), c = random_word(rng, 8);
    EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
    EXPECT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
  }
}

const char* kLexicon =
    "# word\tlemma\tsynonyms\n"
    "take\ttake\tgrab,seize\n"
    "takes\ttake\tgrabs\n"
    "took\ttake\tgrabbed\n"
    "pour\tpour\tspill\n"
    "tour\ttour\ttrip,journey\n"
    "trip\ttrip\tjourney\n"
    "house\thouse\thome\n"
    "mouse\tmouse\n";

TEST(LexiconTest, SynonymsAreSymmetric) {
  const Lexicon lex = Lexicon::parse(kLexicon);
  ASSERT_NE(lex.find("grab"), nullptr);
  EXPECT_EQ(lex.find("grab")->lemma, "grab");
  EXPECT_TRUE(lex.find("grab")->synonyms.count("take"));
  EXPECT_TRUE(lex.find("journey")->synonyms.count("tour"));
  EXPECT_TRUE(lex.find("journey")->synonyms.count("trip"));
  EXPECT_TRUE(lex.find("trip")->synonyms.count("tour"));
  for (const auto& [w, e] : lex.entries()) {
    for (const auto& s : e.synonyms) EXPECT_TRUE(lex.find(s)->synonyms.count(w)) << w << "/" << s;
  }
  EXPECT_THROW(Lexicon::parse("a\tb\n a\tb\n"), ParseError);
  EXPECT_THROW(Lexicon::parse("lonely\n"), ParseError);
}

TEST(PairSetTest, KindsObeyTheirConstraints) {
  const Lexicon lex = Lexicon::parse(kLexicon);
  const auto eligible = eligible_words(lex, nullptr);
  EXPECT_EQ(std::count(eligible.begin(), eligible.end(), "mouse"), 0);  // no synonyms
  Rng rng(3);
  const auto sets = build_pair_sets(lex, eligible, {"take", "takes", "pour"}, rng);
  ASSERT_EQ(sets.size(), 12u);
  bool saw_take_takes = false, saw_pour_tour = false;
  for (const PairSet& s : sets) {
    for (const WordPair& p : s.pairs) {
      EXPECT_EQ(p.distance, levenshtein(p.a, p.b));
      const int seen = (p.a == "take" || p.a == "takes" || p.a == "pour") + (p.b == "take" || p.b == "takes" || p.b == "pour");
      EXPECT_EQ(s.exposure, seen == 2 ? Exposure::kSeen : seen == 1 ? Exposure::kHalfSeen : Exposure::kUnseen);
      switch (s.kind) {
        case PairKind::kGrammatical:
          EXPECT_EQ(lex.find(p.a)->lemma, lex.find(p.b)->lemma);
          saw_take_takes |= p.a == "take" && p.b == "takes";
          break;
        case PairKind::kCloseSpell:
          EXPECT_EQ(p.distance, 1u);
          saw_pour_tour |= p.a == "pour" && p.b == "tour";
          break;
        case PairKind::kFarSpell: {
          std::size_t best = 0;
          for (const auto& w : eligible) best = std::max(best, levenshtein(p.a, w));
          std::size_t best_b = 0;
          for (const auto& w : eligible) best_b = std::max(best_b, levenshtein(p.b, w));
          EXPECT_TRUE(p.distance == best || p.distance == best_b);
          break;
        }
        case PairKind::kFarSynonym:
          EXPECT_TRUE(lex.find(p.a)->synonyms.count(p.b));
          break;
      }
    }
  }
  EXPECT_TRUE(saw_take_takes);
  EXPECT_TRUE(saw_pour_tour);
}

TEST(PairSetTest, GrammaticalNeedsASharedLemma) {
  const Lexicon lex = Lexicon::parse("take\ttake\tgrab\ntakes\ttakes\tgrabs\n");
  Rng rng(4);
  const auto sets = build_pair_sets(lex, eligible_words(lex, nullptr), {}, rng);
  for (const PairSet& s : sets) {
    if (s.kind != PairKind::kGrammatical) continue;
    for (const WordPair& p : s.pairs) EXPECT_FALSE(p.a == "take" && p.b == "takes");
  }
}

TEST(PairSetTest, SplitsPartitionEachKind) {
  std::string text;
  Rng rng(5);
  for (int i = 0; i < 120; ++i) {
    const std::string w = "w" + std::to_string(i);
    text += w + "\t" + "l" + std::to_string(i / 3) + "\t" + "s" + std::to_string(i) + "\n";
  }
  const Lexicon lex = Lexicon::parse(text);
  const auto eligible = eligible_words(lex, nullptr);
  std::set<std::string> train;
  for (const auto& w : eligible) {
    if (rng.below(2) == 0) train.insert(w);
  }
  Rng a(6);
  const auto sets = build_pair_sets(lex, eligible, train, a);
  for (PairKind k : kPairKinds) {
    std::set<std::pair<std::string, std::string>> all;
    std::size_t total = 0;
    for (const PairSet& s : sets) {
      if (s.kind != k) continue;
      total += s.pairs.size();
      for (const WordPair& p : s.pairs) all.insert({p.a, p.b});
    }
    EXPECT_EQ(all.size(), total) << pair_kind_name(k);
  }
}

TEST(PairSetTest, CapSamplesExactlyAndReproducibly) {
  // Lemma groups of 100, 8, 7 and 2 words: 4950 + 28 + 21 + 1 = 5000
  // grammatical pairs.
  std::string text;
  std::vector<std::string> eligible;
  int i = 0;
  for (const int group : {100, 8, 7, 2}) {
    for (int j = 0; j < group; ++j, ++i) {
      const std::string w = "g" + std::to_string(i);
      text += w + "\tlemma" + std::to_string(group) + "\tsyn" + w + "\n";
      eligible.push_back(w);
    }
  }
  const Lexicon lex = Lexicon::parse(text);
  Rng r1(7), r2(7), r3(8);
  const auto s1 = build_pair_sets(lex, eligible, {}, r1, 2000);
  const auto s2 = build_pair_sets(lex, eligible, {}, r2, 2000);
  const auto s3 = build_pair_sets(lex, eligible, {}, r3, 2000);
  bool checked = false;
  for (std::size_t k = 0; k < s1.size(); ++k) {
    if (s1[k].kind != PairKind::kGrammatical || s1[k].exposure != Exposure::kUnseen) continue;
    checked = true;
    EXPECT_EQ(s1[k].candidates, 5000u);
    ASSERT_EQ(s1[k].pairs.size(), 2000u);
    ASSERT_EQ(s2[k].pairs.size(), 2000u);
    bool differs = false;
    for (std::size_t j = 0; j < 2000; ++j) {
      EXPECT_EQ(s1[k].pairs[j].a, s2[k].pairs[j].a);
      EXPECT_EQ(s1[k].pairs[j].b, s2[k].pairs[j].b);
      differs |= s1[k].pairs[j].a != s3[k].pairs[j].a || s1[k].pairs[j].b != s3[k].pairs[j].b;
    }
    EXPECT_TRUE(differs);
  }
  EXPECT_TRUE(checked);
}

TEST(PairSetTest, EmptyEligibleIsDataError) {
  Rng rng(1);
  EXPECT_THROW(build_pair_sets(Lexicon::parse(kLexicon), {}, {}, rng), DataError);
}

TEST(ZScoreTest, Arithmetic) {
  ProbeBaseline b;
  b.mu = 0.01;
  b.sigma = 0.08;
  EXPECT_NEAR(z_score(0.09, b), 1.0, 1e-12);
  EXPECT_EQ(z_score(0.01, b), 0.0);
  b.sigma = 0.0;
  EXPECT_THROW(z_score(0.5, b), NumericError);
}

TEST(CorpusWordsTest, StripsPunctuation) {
  const auto w = corpus_words({"Hello, world!", "(take) takes..."});
  EXPECT_EQ(w, (std::set<std::string>{"Hello", "world", "take", "takes"}));
}

std::vector<std::string> train_corpus() {
  return {"the cat takes the mat", "a dog took a log", "we tour the house", "they pour the tea",
          "the cat takes a trip", "a house and a home", "the dog grabs the mat"};
}

VariantSpec probe_spec(VariantName v, std::shared_ptr<const SubwordVocab> vocab) {
  VariantSpec s;
  s.name = v;
  s.model = tiny_preset();
  s.model.d_model = 16;
  s.model.n_heads = 2;
  s.model.d_ff = 24;
  s.down.d_char = 8;
  s.up.d_slice = 4;
  s.up.d_char_embed = 6;
  s.up.lstm_hidden = 12;
  s.up.lmax_bytes = 12;
  s.vocab = std::move(vocab);
  return s;
}

TEST(EmbeddingTest, SelfCosineIsOne) {
  const Model m(probe_spec(VariantName::kFixed, nullptr), 3);
  EmbeddingCache cache(m);
  for (const char* w : {"take", "journey", "a"}) EXPECT_NEAR(cache.similarity(w, w), 1.0, 1e-9);
}

TEST(EmbeddingTest, BaselineZScoresAreStandardized) {
  const Lexicon lex = Lexicon::parse(kLexicon);
  const Model m(probe_spec(VariantName::kSdd, std::make_shared<const SubwordVocab>(train_bpe(train_corpus(), 300, 6))), 4);
  EmbeddingCache cache(m);
  const auto eligible = eligible_words(lex, nullptr);
  const ProbeBaseline b = random_pair_baseline(cache, eligible, 2000, 9);
  EXPECT_GT(b.sigma, 0.0);
  // Re-draw the same pairs and standardize them.
  Rng rng(9);
  double sum = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < b.n; ++k) {
    const std::size_t i = rng.below(eligible.size());
    std::size_t j = rng.below(eligible.size() - 1);
    if (j >= i) ++j;
    const double z = z_score(cache.similarity(eligible[i], eligible[j]), b);
    sum += z;
    sq += z * z;
  }
  const double mean = sum / static_cast<double>(b.n);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(b.n) - mean * mean), 1.0, 0.05);
}

TEST(EmbeddingTest, UnseenSubwordKeepsItsInitialRow) {
  std::vector<std::string> vocab_corpus = train_corpus();
  vocab_corpus.push_back("journey journey journey");
  const auto vocab = std::make_shared<const SubwordVocab>(train_bpe(vocab_corpus, 300, 8));
  ASSERT_EQ(tokenize_ids(*vocab, " journey").size(), 1u);
  Model m(probe_spec(VariantName::kSubword, vocab), 5);
  const std::vector<double> before = m.word_embedding("journey");
  const std::vector<double> seen_before = m.word_embedding("cat");

  ParallelCorpus data;
  data.src = train_corpus();
  data.tgt = train_corpus();
  const Dataset ds = build_translation_dataset(m, data, data);
  TrainConfig cfg = desk_train_preset();
  cfg.batch_size = 4;
  cfg.grad_accum = 1;
  cfg.warmup_steps = 1;
  cfg.max_steps = 5;
  cfg.eval_every = 5;
  cfg.eval_metric = EvalMetric::kLoss;
  MetricsLog log;
  train_model(m, ds, cfg, log);
  EXPECT_EQ(m.word_embedding("journey"), before);
  EXPECT_NE(m.word_embedding("cat"), seen_before);
}

TEST(ReportTest, TsvHasEveryCell) {
  ProbeReport r;
  r.baseline = {0.01, 0.08, 100, 1};
  for (PairKind k : kPairKinds) {
    for (Exposure e : kExposures) r.cells.push_back({k, e, 3, 0.5, 0.1});
  }
  const std::string tsv = r.to_tsv();
  EXPECT_EQ(tsv.rfind("kind\texposure\tn\tmean_z\tci95\n", 0), 0u);
  EXPECT_NE(tsv.find("far_synonym\tunseen\t3\t0.5000\t0.1000\n"), std::string::npos);
  EXPECT_EQ(r.cell(PairKind::kCloseSpell, Exposure::kHalfSeen).n, 3u);
}

}  // namespace
}  // namespace blockpool
