#pragma once

// Byte-level BPE with a cap on piece length in bytes, plus the grid tuner
// that picks a vocabulary by its average bytes-per-token on a corpus.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace blockpool {

struct CorpusStats {
  std::size_t total_bytes = 0;
  std::size_t total_tokens = 0;
  double avg_factor = 0.0;
};

class SubwordVocab {
 public:
  SubwordVocab() = default;

  // Byte-only vocabulary (256 pieces).
  static SubwordVocab bytes_only(std::size_t lmax, bool word_marker = true);

  bool trained() const { return !pieces_.empty(); }
  std::size_t size() const { return pieces_.size(); }
  std::size_t lmax() const { return lmax_; }
  bool word_marker() const { return word_marker_; }
  std::size_t merge_count() const { return merges_.size(); }

  const std::string& piece(std::size_t id) const { return pieces_.at(id); }
  const std::vector<std::string>& pieces() const { return pieces_; }
  // -1 when absent.
  std::int64_t id_of(std::string_view piece) const;

  // Merge i joins (left, right) into piece 256 + i.
  std::pair<std::int32_t, std::int32_t> merge(std::size_t i) const { return merges_.at(i); }

  // Registers the next merge. Throws if either id is unknown, the result is
  // longer than lmax or already present.
  void add_merge(std::int32_t left, std::int32_t right);

  // Copy keeping only the first `size` pieces.
  SubwordVocab truncated(std::size_t size) const;

  // Piece ids for one pre-tokenized chunk, replaying merges in rank order.
  std::vector<std::int32_t> encode_chunk(std::string_view chunk) const;

  bool operator==(const SubwordVocab& other) const;

 private:
  std::vector<std::string> pieces_;
  std::vector<std::pair<std::int32_t, std::int32_t>> merges_;
  std::unordered_map<std::uint64_t, std::int32_t> merge_rank_;
  std::unordered_map<std::string, std::int32_t> piece_ids_;
  std::size_t lmax_ = 0;
  bool word_marker_ = true;
};

// Pre-tokenizer: word chunks with leading spaces when word_marker is set,
// otherwise words and single spaces as separate chunks.
std::vector<std::string_view> pretokenize(std::string_view text, bool word_marker);

SubwordVocab train_bpe(const std::vector<std::string>& corpus, std::size_t size,
                       std::size_t lmax, bool word_marker = true);

std::vector<std::string> tokenize(const SubwordVocab& vocab, std::string_view text);
std::vector<std::int32_t> tokenize_ids(const SubwordVocab& vocab, std::string_view text);

CorpusStats avg_downsampling_factor(const SubwordVocab& vocab,
                                    const std::vector<std::string>& corpus);

struct TuneEntry {
  std::size_t size = 0;   // requested
  std::size_t lmax = 0;
  std::size_t actual_size = 0;
  CorpusStats stats;
};

struct TuneResult {
  SubwordVocab vocab;
  CorpusStats stats;
  std::vector<TuneEntry> grid;
  std::size_t best = 0;  // index into grid
};

// Evaluates every (size, lmax) point; ties on |factor - target| go to the
// smaller size, then the smaller lmax. `threads` <= 1 runs serially.
TuneResult tune_vocab(const std::vector<std::string>& corpus, double target_factor,
                      std::vector<std::size_t> size_grid,
                      std::vector<std::size_t> lmax_grid, std::size_t threads = 1);

void save_vocab(const SubwordVocab& vocab, const std::string& path);
SubwordVocab load_vocab(const std::string& path);
std::string serialize_vocab(const SubwordVocab& vocab);
SubwordVocab parse_vocab(std::string_view text);

}  // namespace blockpool
