#include "blockpool/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"

namespace blockpool {
namespace {

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2F) || (u >= 0x3A && u <= 0x40) || (u >= 0x5B && u <= 0x60) ||
         (u >= 0x7B && u <= 0x7E);
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void check_counts(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                    std::to_string(b) + " references");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return tokens;
}

BleuScore corpus_bleu(const std::vector<std::string>& hypotheses,
                      const std::vector<std::string>& references) {
  check_counts(hypotheses.size(), references.size(), "bleu");
  BleuScore out;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = bleu_tokenize(hypotheses[s]);
    const auto ref = bleu_tokenize(references[s]);
    out.hyp_length += hyp.size();
    out.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts h = count_ngrams(hyp, n);
      const NgramCounts r = count_ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        out.totals[n - 1] += count;
        const auto it = r.find(gram);
        if (it != r.end()) out.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (out.hyp_length == 0 || out.matches[0] == 0) {
    for (std::size_t n = 0; n < 4; ++n) {
      out.precisions[n] = out.totals[n] == 0 ? 0.0
                                             : static_cast<double>(out.matches[n]) /
                                                   static_cast<double>(out.totals[n]);
    }
    if (out.hyp_length > 0) {
      out.brevity_penalty = std::min(1.0, std::exp(1.0 - static_cast<double>(out.ref_length) /
                                                             static_cast<double>(out.hyp_length)));
    }
    return out;
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double m = static_cast<double>(out.matches[n]);
    const double t = static_cast<double>(out.totals[n]);
    out.precisions[n] = out.matches[n] == 0 ? 1.0 / (t + 1.0) : m / t;
    log_sum += std::log(out.precisions[n]);
  }
  const double c = static_cast<double>(out.hyp_length);
  const double r = static_cast<double>(out.ref_length);
  out.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);
  out.score = 100.0 * out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& labels) {
  check_counts(predictions.size(), labels.size(), "accuracy");
  if (labels.empty()) throw DataError("accuracy: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const std::vector<std::int64_t>& predictions, const std::vector<std::int64_t>& labels) {
  check_counts(predictions.size(), labels.size(), "accuracy");
  if (labels.empty()) throw DataError("accuracy: no examples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double exact_match(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  return accuracy(hypotheses, references);
}

AblationDeltas ablation_report(const std::map<std::string, double>& scores) {
  std::map<std::string, double> named = scores;
  if (!named.count("buffered_fixed") && named.count("buffixed")) {
    named["buffered_fixed"] = named["buffixed"];
  }
  auto get = [&](const std::string& name) {
    const auto it = named.find(name);
    if (it == named.end()) throw DataError("ablation: missing variant '" + name + "'");
    return it->second;
  };
  const double fixed = get("fixed"), buf = get("buffered_fixed");
  const double wdd = get("wdd"), sdd = get("sdd");
  return {buf - fixed, sdd - wdd, sdd - buf};
}

std::map<std::string, double> parse_results_tsv(std::string_view text) {
  std::map<std::string, double> out;
  std::size_t line_no = 0;
  for (const std::string& raw : split_lines(std::string(text))) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) throw ParseError("expected variant<TAB>score", line_no);
    try {
      std::size_t used = 0;
      const double v = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
      if (!out.emplace(trim(fields[0]), v).second) {
        throw ParseError("duplicate variant '" + fields[0] + "'", line_no);
      }
    } catch (const std::logic_error&) {
      throw ParseError("bad score '" + fields[1] + "'", line_no);
    }
  }
  return out;
}

std::string ablation_tsv(const AblationDeltas& d) {
  return "position\t" + fmt(d.position) + "\nlength\t" + fmt(d.length) + "\nmorpheme\t" +
         fmt(d.morpheme) + "\n";
}

std::string bleu_tsv(const BleuScore& b) {
  std::string out = "bleu\t" + fmt(b.score) + "\n";
  for (std::size_t n = 0; n < 4; ++n) {
    out += "p" + std::to_string(n + 1) + "\t" + fmt(b.precisions[n]) + "\n";
  }
  out += "brevity_penalty\t" + fmt(b.brevity_penalty) + "\n";
  out += "hyp_length\t" + std::to_string(b.hyp_length) + "\n";
  out += "ref_length\t" + std::to_string(b.ref_length) + "\n";
  return out;
}

}  // namespace blockpool
