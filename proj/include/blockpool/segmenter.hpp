#pragma once

// Byte sequences with special symbols, the four block segmentation methods
// and corpus-level diagnostics of how consistently words land in blocks.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace blockpool {

class SubwordVocab;

using Symbol = std::int32_t;
using ByteSeq = std::vector<Symbol>;

inline constexpr Symbol kPad = 256;
inline constexpr Symbol kBos = 257;
inline constexpr Symbol kEos = 258;
inline constexpr Symbol kEow = 259;
inline constexpr Symbol kReservedSymbol = 260;
// Output vocabulary of the byte-level models: bytes plus the specials.
inline constexpr std::size_t kSymbolCount = 261;

inline bool is_byte(Symbol s) { return s >= 0 && s < 256; }

enum class SegMethod { kFixed, kBufferedFixed, kWdd, kSdd };

// "fixed", "buffered_fixed", "wdd", "sdd". Parsing also accepts "buffixed".
std::string method_name(SegMethod method);
SegMethod parse_method(std::string_view name);

struct Segmentation {
  std::vector<std::size_t> lengths;
  SegMethod method = SegMethod::kFixed;
  std::size_t k = 0;
  std::size_t lmax = 0;

  std::size_t total() const;
  std::size_t size() const { return lengths.size(); }
  // Offsets of block starts plus the total: size()+1 entries.
  std::vector<std::size_t> offsets() const;
};

bool is_valid_utf8(std::string_view text);
// Throws EncodingError naming the byte offset of the first bad sequence.
void validate_utf8(std::string_view text);
// Replaces each invalid sequence with U+FFFD.
std::string repair_utf8(std::string_view bytes);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

ByteSeq encode_text(std::string_view text, bool add_bos_eos);

// Splits into word chunks with each space attached to the start of the
// following word. Used by WDD and as the BPE pre-tokenizer.
std::vector<std::string_view> split_word_chunks(std::string_view text);

Segmentation segment_fixed(const ByteSeq& seq, std::size_t k);

struct PaddedSequence {
  ByteSeq seq;
  Segmentation segmentation;
};

// Word-aligned fixed blocks. With add_eos, EOS takes the place of the final
// word's separator space.
PaddedSequence segment_buffered_fixed(std::string_view text, std::size_t k,
                                      bool add_eos = false);

Segmentation segment_wdd(const ByteSeq& seq);
Segmentation segment_sdd(const ByteSeq& seq, const SubwordVocab& vocab);

// Strips specials; for buffered_fixed also the alignment spaces. Invalid UTF-8
// throws EncodingError unless lossy is set.
std::string detokenize(const ByteSeq& seq, const Segmentation& segmentation,
                       bool lossy = false);

struct SegmenterConfig {
  SegMethod method = SegMethod::kSdd;
  std::size_t k = 4;
  const SubwordVocab* vocab = nullptr;
};

// Segments normalized text per config. Encoder-side sequences end in EOS;
// buffered_fixed returns its padded sequence.
PaddedSequence segment_text(std::string_view text, const SegmenterConfig& config,
                            bool add_eos);

struct ConsistencyReport {
  SegMethod method = SegMethod::kFixed;
  // Word types seen at least twice, mapped to their number of distinct
  // (non-space bytes before the word in its block, internal cut offsets)
  // variants.
  std::map<std::string, std::size_t> variants;
  std::map<std::size_t, std::size_t> length_histogram;
  std::size_t total_blocks = 0;
  std::size_t max_block_length = 0;
  double mean_block_length = 0.0;

  // Rows of "section\tkey\tvalue".
  std::string to_tsv() const;
};

ConsistencyReport consistency_report(const std::vector<std::string>& corpus,
                                     const SegmenterConfig& config);

}  // namespace blockpool
