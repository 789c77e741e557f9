#include "blockpool/segmenter.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "blockpool/error.hpp"
#include "blockpool/subword_vocab.hpp"

namespace blockpool {
namespace {

bool is_space_char(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Length of the valid UTF-8 sequence starting at i, or 0 if invalid.
std::size_t utf8_sequence_length(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return 1;
  std::size_t len;
  std::uint32_t cp;
  if (b0 >= 0xC2 && b0 <= 0xDF) {
    len = 2;
    cp = b0 & 0x1F;
  } else if (b0 >= 0xE0 && b0 <= 0xEF) {
    len = 3;
    cp = b0 & 0x0F;
  } else if (b0 >= 0xF0 && b0 <= 0xF4) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (std::size_t j = 1; j < len; ++j) {
    const auto b = static_cast<unsigned char>(s[i + j]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (len == 3 && (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF))) return 0;
  if (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) return 0;
  return len;
}

void push_special_blocks(const ByteSeq& seq, std::size_t& i, Segmentation& seg) {
  while (i < seq.size() && !is_byte(seq[i])) {
    seg.lengths.push_back(1);
    ++i;
  }
}

std::string bytes_of(const ByteSeq& seq, std::size_t begin, std::size_t end) {
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(static_cast<char>(seq[i]));
  return out;
}

}  // namespace

std::string method_name(SegMethod method) {
  switch (method) {
    case SegMethod::kFixed: return "fixed";
    case SegMethod::kBufferedFixed: return "buffered_fixed";
    case SegMethod::kWdd: return "wdd";
    case SegMethod::kSdd: return "sdd";
  }
  return "?";
}

SegMethod parse_method(std::string_view name) {
  if (name == "fixed") return SegMethod::kFixed;
  if (name == "buffered_fixed" || name == "buffixed") return SegMethod::kBufferedFixed;
  if (name == "wdd") return SegMethod::kWdd;
  if (name == "sdd") return SegMethod::kSdd;
  throw ArgumentError("unknown segmentation method '" + std::string(name) + "'");
}

std::size_t Segmentation::total() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

std::vector<std::size_t> Segmentation::offsets() const {
  std::vector<std::size_t> out(lengths.size() + 1, 0);
  for (std::size_t b = 0; b < lengths.size(); ++b) out[b + 1] = out[b] + lengths[b];
  return out;
}

bool is_valid_utf8(std::string_view text) {
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t len = utf8_sequence_length(text, i);
    if (len == 0) return false;
    i += len;
  }
  return true;
}

void validate_utf8(std::string_view text) {
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t len = utf8_sequence_length(text, i);
    if (len == 0) {
      throw EncodingError("invalid UTF-8 at byte offset " + std::to_string(i));
    }
    i += len;
  }
}

std::string repair_utf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  for (std::size_t i = 0; i < bytes.size();) {
    const std::size_t len = utf8_sequence_length(bytes, i);
    if (len == 0) {
      out += "\xEF\xBF\xBD";
      ++i;
    } else {
      out.append(bytes.substr(i, len));
      i += len;
    }
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    if (is_space_char(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(ch);
  }
  return out;
}

ByteSeq encode_text(std::string_view text, bool add_bos_eos) {
  validate_utf8(text);
  ByteSeq seq;
  seq.reserve(text.size() + 2);
  if (add_bos_eos) seq.push_back(kBos);
  for (char ch : text) seq.push_back(static_cast<unsigned char>(ch));
  if (add_bos_eos) seq.push_back(kEos);
  return seq;
}

std::vector<std::string_view> split_word_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    while (i < text.size() && text[i] != ' ') ++i;
    chunks.push_back(text.substr(start, i - start));
    start = i;
  }
  return chunks;
}

Segmentation segment_fixed(const ByteSeq& seq, std::size_t k) {
  if (k == 0) throw ArgumentError("segment_fixed: k must be positive");
  if (seq.empty()) throw ArgumentError("segment_fixed: empty sequence");
  Segmentation seg;
  seg.method = SegMethod::kFixed;
  seg.k = k;
  seg.lmax = k;
  const std::size_t full = seq.size() / k;
  seg.lengths.assign(full, k);
  if (seq.size() % k != 0) seg.lengths.push_back(seq.size() % k);
  return seg;
}

PaddedSequence segment_buffered_fixed(std::string_view text, std::size_t k, bool add_eos) {
  if (k == 0) throw ArgumentError("segment_buffered_fixed: k must be positive");
  validate_utf8(text);
  const std::string normalized = normalize_whitespace(text);
  PaddedSequence out;
  out.segmentation.method = SegMethod::kBufferedFixed;
  out.segmentation.k = k;
  out.segmentation.lmax = k;

  std::vector<std::string_view> words;
  for (std::size_t i = 0; i < normalized.size();) {
    const std::size_t end = std::min(normalized.find(' ', i), normalized.size());
    words.push_back(std::string_view(normalized).substr(i, end - i));
    i = end + 1;
  }
  auto pad_to_block = [&] {
    while (out.seq.size() % k != 0) out.seq.push_back(' ');
  };
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (char ch : words[w]) out.seq.push_back(static_cast<unsigned char>(ch));
    const bool last = w + 1 == words.size();
    out.seq.push_back(last && add_eos ? kEos : Symbol{' '});
    pad_to_block();
  }
  if (words.empty() && add_eos) {
    out.seq.push_back(kEos);
    pad_to_block();
  }
  out.segmentation.lengths.assign(out.seq.size() / k, k);
  return out;
}

Segmentation segment_wdd(const ByteSeq& seq) {
  Segmentation seg;
  seg.method = SegMethod::kWdd;
  std::size_t i = 0;
  push_special_blocks(seq, i, seg);
  while (i < seq.size()) {
    const std::size_t start = i;
    while (i < seq.size() && seq[i] == ' ') ++i;
    while (i < seq.size() && is_byte(seq[i]) && seq[i] != ' ') ++i;
    seg.lengths.push_back(i - start);
    push_special_blocks(seq, i, seg);
  }
  seg.lmax = seg.lengths.empty() ? 0 : *std::max_element(seg.lengths.begin(), seg.lengths.end());
  return seg;
}

Segmentation segment_sdd(const ByteSeq& seq, const SubwordVocab& vocab) {
  if (!vocab.trained()) throw StateError("segment_sdd: vocabulary is not trained");
  Segmentation seg;
  seg.method = SegMethod::kSdd;
  seg.lmax = vocab.lmax();
  std::size_t i = 0;
  push_special_blocks(seq, i, seg);
  while (i < seq.size()) {
    const std::size_t start = i;
    while (i < seq.size() && is_byte(seq[i])) ++i;
    for (std::int32_t id : tokenize_ids(vocab, bytes_of(seq, start, i))) {
      seg.lengths.push_back(vocab.piece(id).size());
    }
    push_special_blocks(seq, i, seg);
  }
  return seg;
}

std::string detokenize(const ByteSeq& seq, const Segmentation& segmentation, bool lossy) {
  if (segmentation.total() != seq.size()) {
    throw DimensionError("detokenize: segmentation covers " +
                         std::to_string(segmentation.total()) + " symbols, sequence has " +
                         std::to_string(seq.size()));
  }
  std::string bytes;
  bytes.reserve(seq.size());
  for (Symbol s : seq) {
    if (is_byte(s)) bytes.push_back(static_cast<char>(s));
  }
  if (segmentation.method == SegMethod::kBufferedFixed) {
    std::string collapsed;
    for (char ch : bytes) {
      if (ch == ' ' && (collapsed.empty() || collapsed.back() == ' ')) continue;
      collapsed.push_back(ch);
    }
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    bytes = std::move(collapsed);
  }
  if (!is_valid_utf8(bytes)) {
    if (!lossy) validate_utf8(bytes);
    return repair_utf8(bytes);
  }
  return bytes;
}

PaddedSequence segment_text(std::string_view text, const SegmenterConfig& config,
                            bool add_eos) {
  if (config.method == SegMethod::kBufferedFixed) {
    return segment_buffered_fixed(text, config.k, add_eos);
  }
  PaddedSequence out;
  out.seq = encode_text(text, false);
  if (add_eos) out.seq.push_back(kEos);
  if (out.seq.empty()) {
    out.segmentation.method = config.method;
    out.segmentation.k = config.k;
    return out;
  }
  switch (config.method) {
    case SegMethod::kFixed:
      out.segmentation = segment_fixed(out.seq, config.k);
      break;
    case SegMethod::kWdd:
      out.segmentation = segment_wdd(out.seq);
      break;
    case SegMethod::kSdd:
      if (config.vocab == nullptr) throw ConfigError("sdd segmentation needs a vocabulary");
      out.segmentation = segment_sdd(out.seq, *config.vocab);
      break;
    case SegMethod::kBufferedFixed:
      break;
  }
  return out;
}

std::string ConsistencyReport::to_tsv() const {
  std::ostringstream os;
  os << "summary\tmethod\t" << method_name(method) << '\n';
  os << "summary\tblocks\t" << total_blocks << '\n';
  os << "summary\tmean_block_length\t" << mean_block_length << '\n';
  os << "summary\tmax_block_length\t" << max_block_length << '\n';
  std::size_t multi = 0;
  for (const auto& [word, n] : variants) multi += n > 1;
  os << "summary\trepeated_word_types\t" << variants.size() << '\n';
  os << "summary\tinconsistent_word_types\t" << multi << '\n';
  for (const auto& [len, n] : length_histogram) os << "histogram\t" << len << '\t' << n << '\n';
  for (const auto& [word, n] : variants) os << "variants\t" << word << '\t' << n << '\n';
  return os.str();
}

ConsistencyReport consistency_report(const std::vector<std::string>& corpus,
                                     const SegmenterConfig& config) {
  ConsistencyReport report;
  report.method = config.method;
  std::map<std::string, std::set<std::string>> seen_variants;
  std::map<std::string, std::size_t> occurrences;
  std::size_t total_length = 0;
  std::size_t sentences = 0;

  for (const std::string& line : corpus) {
    const std::string text = normalize_whitespace(line);
    if (text.empty()) continue;
    ++sentences;
    const PaddedSequence ps = segment_text(text, config, false);
    const auto offsets = ps.segmentation.offsets();
    for (std::size_t len : ps.segmentation.lengths) {
      ++report.length_histogram[len];
      total_length += len;
      report.max_block_length = std::max(report.max_block_length, len);
    }
    report.total_blocks += ps.segmentation.size();

    const ByteSeq& seq = ps.seq;
    std::size_t block = 0;
    for (std::size_t i = 0; i < seq.size();) {
      if (seq[i] == ' ') {
        ++i;
        continue;
      }
      const std::size_t start = i;
      while (i < seq.size() && seq[i] != ' ') ++i;
      while (offsets[block + 1] <= start) ++block;
      std::size_t before = 0;
      for (std::size_t j = offsets[block]; j < start; ++j) before += seq[j] != ' ';
      std::string key = std::to_string(before) + "|";
      for (std::size_t b = block + 1; offsets[b] < i; ++b) {
        key += std::to_string(offsets[b] - start) + ",";
      }
      const std::string word = bytes_of(seq, start, i);
      seen_variants[word].insert(key);
      ++occurrences[word];
    }
  }
  if (sentences == 0) throw ArgumentError("consistency_report: empty corpus");
  for (const auto& [word, keys] : seen_variants) {
    if (occurrences[word] >= 2) report.variants[word] = keys.size();
  }
  report.mean_block_length = static_cast<double>(total_length) / report.total_blocks;
  return report;
}

}  // namespace blockpool
