#include "blockpool/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "blockpool/error.hpp"
#include "blockpool/rng.hpp"

namespace blockpool {
namespace {

// Independent n-gram oracle: for every hypothesis n-gram position, count how
// many identical n-grams exist in each side and clip by brute force.
double oracle_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double m[4] = {0, 0, 0, 0}, t[4] = {0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = bleu_tokenize(hyps[s]);
    const auto g = bleu_tokenize(refs[s]);
    c += static_cast<double>(h.size());
    r += static_cast<double>(g.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      if (h.size() < n) continue;
      std::vector<std::vector<std::string>> hg, rg;
      for (std::size_t i = 0; i + n <= h.size(); ++i) hg.emplace_back(h.begin() + i, h.begin() + i + n);
      for (std::size_t i = 0; i + n <= g.size(); ++i) rg.emplace_back(g.begin() + i, g.begin() + i + n);
      t[n - 1] += static_cast<double>(hg.size());
      std::vector<bool> used(rg.size(), false);
      for (const auto& x : hg) {
        for (std::size_t k = 0; k < rg.size(); ++k) {
          if (!used[k] && rg[k] == x) {
            used[k] = true;
            m[n - 1] += 1;
            break;
          }
        }
      }
    }
  }
  if (c == 0 || m[0] == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < 4; ++n) log_sum += std::log(m[n] == 0 ? 1.0 / (t[n] + 1) : m[n] / t[n]);
  const double bp = c > r ? 1.0 : std::exp(1 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4);
}

TEST(BleuTest, TokenizerSplitsPunctuation) {
  EXPECT_EQ(bleu_tokenize("Hello, world!  it's"),
            (std::vector<std::string>{"Hello", ",", "world", "!", "it", "'", "s"}));
  EXPECT_EQ(bleu_tokenize("café-crème"), (std::vector<std::string>{"café", "-", "crème"}));
  EXPECT_TRUE(bleu_tokenize("   ").empty());
}

TEST(BleuTest, IdenticalCorporaScore100) {
  const std::vector<std::string> c = {"the cat sat on the mat", "a", "hello , world", "x y"};
  EXPECT_DOUBLE_EQ(corpus_bleu(c, c).score, 100.0);
}

TEST(BleuTest, HandWorkedTwoSentenceExample) {
  const std::vector<std::string> hyp = {"the cat sat on the mat", "a dog runs"};
  const std::vector<std::string> ref = {"the cat is on the mat", "a dog runs fast"};
  const BleuScore b = corpus_bleu(hyp, ref);
  EXPECT_EQ(b.matches, (std::array<std::size_t, 4>{8, 5, 2, 0}));
  EXPECT_EQ(b.totals, (std::array<std::size_t, 4>{9, 7, 5, 3}));
  EXPECT_EQ(b.hyp_length, 9u);
  EXPECT_EQ(b.ref_length, 10u);
  // 100 * exp(1 - 10/9) * (8/9 * 5/7 * 2/5 * 1/4)^(1/4)
  EXPECT_NEAR(b.score, 44.91846617388952, 1e-4);
  EXPECT_NEAR(b.score, oracle_bleu(hyp, ref), 1e-4);
}

TEST(BleuTest, MatchesOracleOnRandomCorpora) {
  Rng rng(3);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", ",", "."};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> hyp, ref;
    for (int s = 0; s < 5; ++s) {
      std::string h, r;
      for (std::size_t i = 0, n = 1 + rng.below(9); i < n; ++i) h += words[rng.below(words.size())] + " ";
      for (std::size_t i = 0, n = 1 + rng.below(9); i < n; ++i) r += words[rng.below(words.size())] + " ";
      hyp.push_back(h);
      ref.push_back(r);
    }
    EXPECT_NEAR(corpus_bleu(hyp, ref).score, oracle_bleu(hyp, ref), 1e-9);
  }
}

TEST(BleuTest, SentenceOrderDoesNotMatter) {
  std::vector<std::string> hyp = {"the cat sat on the mat", "a dog runs", "one two three four five"};
  std::vector<std::string> ref = {"the cat is on the mat", "a dog runs fast", "one two three five four"};
  const double base = corpus_bleu(hyp, ref).score;
  std::vector<std::size_t> order = {0, 1, 2};
  while (std::next_permutation(order.begin(), order.end())) {
    std::vector<std::string> h, r;
    for (std::size_t i : order) {
      h.push_back(hyp[i]);
      r.push_back(ref[i]);
    }
    EXPECT_DOUBLE_EQ(corpus_bleu(h, r).score, base);
  }
}

TEST(BleuTest, NoFourGramOverlapOnALongCorpusIsSmallButPositive) {
  Rng rng(8);
  std::vector<std::string> hyp, ref;
  for (int s = 0; s < 200; ++s) {
    std::string h, r;
    for (int i = 0; i < 20; ++i) {
      h += "w" + std::to_string(rng.below(50)) + " ";
      r += "w" + std::to_string(rng.below(50)) + " ";
    }
    hyp.push_back(h);
    ref.push_back(r);
  }
  const BleuScore b = corpus_bleu(hyp, ref);
  ASSERT_EQ(b.matches[3], 0u);
  EXPECT_GT(b.score, 0.0);
  EXPECT_LT(b.score, 5.0);
}

TEST(BleuTest, ZeroUnigramOverlapOrEmptyHypothesisIsZero) {
  EXPECT_EQ(corpus_bleu({"x y z"}, {"a b c"}).score, 0.0);
  EXPECT_EQ(corpus_bleu({""}, {"a b c"}).score, 0.0);
  EXPECT_THROW(corpus_bleu({"a"}, {"a", "b"}), DataError);
}

TEST(BleuTest, ShortHypothesisIsPenalized) {
  const BleuScore b = corpus_bleu({"a b c d"}, {"a b c d e f g h"});
  EXPECT_NEAR(b.brevity_penalty, std::exp(1.0 - 2.0), 1e-12);
  EXPECT_NEAR(b.score, 100.0 * std::exp(-1.0), 1e-9);
}

TEST(AccuracyTest, CountsMatches) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<std::string>{"a", "b", "c", "d"},
                            std::vector<std::string>{"a", "x", "c", "y"}),
                   0.5);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<std::int64_t>{1, 2, 3}, std::vector<std::int64_t>{1, 2, 3}), 1.0);
  EXPECT_THROW(accuracy(std::vector<std::string>{"a"}, std::vector<std::string>{}), DataError);
  EXPECT_THROW(accuracy(std::vector<std::string>{}, std::vector<std::string>{}), DataError);
  EXPECT_DOUBLE_EQ(exact_match({"a b", "c"}, {"a b", "c d"}), 0.5);
}

TEST(AblationTest, PublishedAveragesGiveTheDeltas) {
  const AblationDeltas d =
      ablation_report({{"fixed", 16.56}, {"buffered_fixed", 19.46}, {"wdd", 18.58}, {"sdd", 19.98}});
  EXPECT_NEAR(d.position, 2.90, 1e-9);
  EXPECT_NEAR(d.length, 1.40, 1e-9);
  EXPECT_NEAR(d.morpheme, 0.52, 1e-9);
}

TEST(AblationTest, EqualScoresGiveZeroAndAliasIsAccepted) {
  const AblationDeltas d = ablation_report({{"fixed", 7}, {"buffixed", 7}, {"wdd", 7}, {"sdd", 7}});
  EXPECT_EQ(d.position, 0.0);
  EXPECT_EQ(d.length, 0.0);
  EXPECT_EQ(d.morpheme, 0.0);
}

TEST(AblationTest, RandomScoresMatchSubtraction) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double f = rng.uniform() * 40, b = rng.uniform() * 40, w = rng.uniform() * 40, s = rng.uniform() * 40;
    const AblationDeltas d = ablation_report({{"fixed", f}, {"buffered_fixed", b}, {"wdd", w}, {"sdd", s}});
    EXPECT_EQ(d.position, b - f);
    EXPECT_EQ(d.length, s - w);
    EXPECT_EQ(d.morpheme, s - b);
  }
}

TEST(AblationTest, MissingVariantIsNamed) {
  try {
    ablation_report({{"fixed", 1}, {"buffered_fixed", 2}, {"sdd", 3}});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'wdd'"), std::string::npos);
  }
}

TEST(AblationTest, ResultsTsvParsing) {
  const auto m = parse_results_tsv("# scores\nfixed\t16.56\n\nsdd\t19.98\n");
  EXPECT_EQ(m.size(), 2u);
  EXPECT_DOUBLE_EQ(m.at("sdd"), 19.98);
  EXPECT_THROW(parse_results_tsv("fixed\tabc\n"), ParseError);
  EXPECT_THROW(parse_results_tsv("fixed\n"), ParseError);
}

}  // namespace
}  // namespace blockpool
