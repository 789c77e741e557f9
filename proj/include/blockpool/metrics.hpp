#pragma once

// Corpus BLEU, accuracy and the segmentation-consistency ablation deltas.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace blockpool {

// BLEU tokenization: split on ASCII whitespace, then every ASCII punctuation
// character becomes a token of its own. Other bytes (including all non-ASCII
// text) stay inside their word.
std::vector<std::string> bleu_tokenize(std::string_view text);

struct BleuScore {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};  // smoothed, 0..1
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus-level BLEU-4 with one reference per sentence. Clipped n-gram matches
// are summed over the corpus; for n >= 2 a zero match count is smoothed to
// 1 / (totals + 1). A zero unigram match count gives 0.
BleuScore corpus_bleu(const std::vector<std::string>& hypotheses,
                      const std::vector<std::string>& references);

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& labels);
double accuracy(const std::vector<std::int64_t>& predictions, const std::vector<std::int64_t>& labels);

// Fraction of hypotheses identical to their reference.
double exact_match(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

struct AblationDeltas {
  double position = 0.0;  // buffered_fixed - fixed
  double length = 0.0;    // sdd - wdd
  double morpheme = 0.0;  // sdd - buffered_fixed
};

// Needs fixed, buffered_fixed, wdd and sdd; throws DataError naming a
// missing one.
AblationDeltas ablation_report(const std::map<std::string, double>& scores);

// `variant<TAB>score` lines; `#` comments and blank lines are skipped.
std::map<std::string, double> parse_results_tsv(std::string_view text);

std::string ablation_tsv(const AblationDeltas& d);
std::string bleu_tsv(const BleuScore& b);

}  // namespace blockpool
