#include "blockpool/subword_vocab.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <thread>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/segmenter.hpp"

namespace blockpool {
namespace {

constexpr const char* kVocabMagic = "blockpool-vocab";
constexpr int kVocabVersion = 1;

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

std::int32_t key_left(std::uint64_t key) { return static_cast<std::int32_t>(key >> 32); }
std::int32_t key_right(std::uint64_t key) {
  return static_cast<std::int32_t>(key & 0xFFFFFFFFu);
}

std::string escape_piece(const std::string& piece) {
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (char ch : piece) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '\\') {
      out += "\\\\";
    } else if (c > 0x20 && c < 0x7F) {
      out.push_back(ch);
    } else {
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string unescape_piece(const std::string& text, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '\\') {
      out.push_back(text[i]);
      continue;
    }
    if (i + 1 < text.size() && text[i + 1] == '\\') {
      out.push_back('\\');
      ++i;
    } else if (i + 3 < text.size() && text[i + 1] == 'x' && hex_value(text[i + 2]) >= 0 &&
               hex_value(text[i + 3]) >= 0) {
      out.push_back(static_cast<char>(hex_value(text[i + 2]) * 16 + hex_value(text[i + 3])));
      i += 3;
    } else {
      throw ParseError("bad escape in piece '" + text + "'", line);
    }
  }
  return out;
}

// Unique chunks of a corpus with their frequencies, in sorted order.
std::vector<std::pair<std::string, std::int64_t>> chunk_counts(
    const std::vector<std::string>& corpus, bool word_marker) {
  std::unordered_map<std::string, std::int64_t> counts;
  for (const std::string& line : corpus) {
    for (std::string_view chunk : pretokenize(line, word_marker)) {
      ++counts[std::string(chunk)];
    }
  }
  std::vector<std::pair<std::string, std::int64_t>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end());
  return out;
}

CorpusStats stats_from_counts(const SubwordVocab& vocab,
                              const std::vector<std::pair<std::string, std::int64_t>>& counts) {
  CorpusStats stats;
  for (const auto& [chunk, n] : counts) {
    stats.total_bytes += chunk.size() * n;
    stats.total_tokens += vocab.encode_chunk(chunk).size() * n;
  }
  if (stats.total_tokens == 0) throw ArgumentError("corpus statistics: empty corpus");
  stats.avg_factor = static_cast<double>(stats.total_bytes) / stats.total_tokens;
  return stats;
}

}  // namespace

SubwordVocab SubwordVocab::bytes_only(std::size_t lmax, bool word_marker) {
  if (lmax == 0) throw ArgumentError("vocabulary lmax must be positive");
  SubwordVocab v;
  v.lmax_ = lmax;
  v.word_marker_ = word_marker;
  for (int b = 0; b < 256; ++b) {
    v.pieces_.emplace_back(1, static_cast<char>(b));
    v.piece_ids_.emplace(v.pieces_.back(), b);
  }
  return v;
}

std::int64_t SubwordVocab::id_of(std::string_view piece) const {
  const auto it = piece_ids_.find(std::string(piece));
  return it == piece_ids_.end() ? -1 : it->second;
}

void SubwordVocab::add_merge(std::int32_t left, std::int32_t right) {
  const auto n = static_cast<std::int32_t>(pieces_.size());
  if (left < 0 || right < 0 || left >= n || right >= n) {
    throw ArgumentError("add_merge: unknown piece id");
  }
  std::string joined = pieces_[left] + pieces_[right];
  if (joined.size() > lmax_) throw ArgumentError("add_merge: piece longer than lmax");
  if (piece_ids_.count(joined)) throw ArgumentError("add_merge: duplicate piece");
  merge_rank_.emplace(pair_key(left, right), static_cast<std::int32_t>(merges_.size()));
  merges_.emplace_back(left, right);
  piece_ids_.emplace(joined, n);
  pieces_.push_back(std::move(joined));
}

SubwordVocab SubwordVocab::truncated(std::size_t size) const {
  SubwordVocab v = bytes_only(lmax_, word_marker_);
  const std::size_t keep = std::min(merges_.size(), size > 256 ? size - 256 : 0);
  for (std::size_t i = 0; i < keep; ++i) v.add_merge(merges_[i].first, merges_[i].second);
  return v;
}

std::vector<std::int32_t> SubwordVocab::encode_chunk(std::string_view chunk) const {
  std::vector<std::int32_t> ids;
  ids.reserve(chunk.size());
  for (char ch : chunk) ids.push_back(static_cast<unsigned char>(ch));
  while (ids.size() > 1) {
    std::int32_t best_rank = -1;
    std::uint64_t best_key = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto it = merge_rank_.find(pair_key(ids[i], ids[i + 1]));
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
        best_key = it->first;
      }
    }
    if (best_rank < 0) break;
    const std::int32_t merged = 256 + best_rank;
    std::size_t out = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && pair_key(ids[i], ids[i + 1]) == best_key) {
        ids[out++] = merged;
        ++i;
      } else {
        ids[out++] = ids[i];
      }
    }
    ids.resize(out);
  }
  return ids;
}

bool SubwordVocab::operator==(const SubwordVocab& other) const {
  return pieces_ == other.pieces_ && merges_ == other.merges_ && lmax_ == other.lmax_ &&
         word_marker_ == other.word_marker_;
}

std::vector<std::string_view> pretokenize(std::string_view text, bool word_marker) {
  if (word_marker) return split_word_chunks(text);
  std::vector<std::string_view> chunks;
  for (std::size_t i = 0; i < text.size();) {
    std::size_t j = i + 1;
    if (text[i] != ' ') {
      while (j < text.size() && text[j] != ' ') ++j;
    }
    chunks.push_back(text.substr(i, j - i));
    i = j;
  }
  return chunks;
}

SubwordVocab train_bpe(const std::vector<std::string>& corpus, std::size_t size,
                       std::size_t lmax, bool word_marker) {
  if (size < 256) throw ArgumentError("train_bpe: size must be at least 256");
  if (lmax == 0) throw ArgumentError("train_bpe: lmax must be positive");
  const auto counts = chunk_counts(corpus, word_marker);
  if (counts.empty()) throw ArgumentError("train_bpe: empty corpus");

  SubwordVocab vocab = SubwordVocab::bytes_only(lmax, word_marker);
  std::vector<std::vector<std::int32_t>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [chunk, n] : counts) {
    std::vector<std::int32_t> ids;
    for (char ch : chunk) ids.push_back(static_cast<unsigned char>(ch));
    words.push_back(std::move(ids));
    freq.push_back(n);
  }

  std::vector<std::size_t> piece_len(256, 1);
  auto legal = [&](std::uint64_t key) {
    return piece_len[key_left(key)] + piece_len[key_right(key)] <= lmax;
  };
  std::unordered_map<std::uint64_t, std::int64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  for (std::uint32_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
      const auto key = pair_key(words[w][i], words[w][i + 1]);
      if (!legal(key)) continue;
      pair_count[key] += freq[w];
      where[key].push_back(w);
    }
  }

  // Highest count first, then the lexicographically smallest (left, right).
  using Entry = std::pair<std::int64_t, std::uint64_t>;
  auto worse = [&](const Entry& a, const Entry& b) {
    if (a.first != b.first) return a.first < b.first;
    const auto& al = vocab.piece(key_left(a.second));
    const auto& bl = vocab.piece(key_left(b.second));
    if (al != bl) return al > bl;
    return vocab.piece(key_right(a.second)) > vocab.piece(key_right(b.second));
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [key, n] : pair_count) heap.emplace(n, key);

  while (vocab.size() < size && !heap.empty()) {
    const auto [n, key] = heap.top();
    heap.pop();
    const auto it = pair_count.find(key);
    if (it == pair_count.end() || it->second != n || n <= 0) continue;

    const std::int32_t left = key_left(key), right = key_right(key);
    const auto merged = static_cast<std::int32_t>(vocab.size());
    vocab.add_merge(left, right);
    piece_len.push_back(piece_len[left] + piece_len[right]);

    std::vector<std::uint32_t> affected = std::move(where[key]);
    where.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    std::vector<std::uint64_t> touched;
    for (std::uint32_t w : affected) {
      auto& ids = words[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < ids.size() && !present; ++i) {
        present = pair_key(ids[i], ids[i + 1]) == key;
      }
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto k = pair_key(ids[i], ids[i + 1]);
        if (!legal(k)) continue;
        pair_count[k] -= freq[w];
        touched.push_back(k);
      }
      std::size_t out = 0;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          ids[out++] = merged;
          ++i;
        } else {
          ids[out++] = ids[i];
        }
      }
      ids.resize(out);
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto k = pair_key(ids[i], ids[i + 1]);
        if (!legal(k)) continue;
        pair_count[k] += freq[w];
        where[k].push_back(w);
        touched.push_back(k);
      }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (std::uint64_t k : touched) {
      const std::int64_t c = pair_count[k];
      if (c > 0) {
        heap.emplace(c, k);
      } else {
        pair_count.erase(k);
      }
    }
  }
  return vocab;
}

std::vector<std::int32_t> tokenize_ids(const SubwordVocab& vocab, std::string_view text) {
  if (!vocab.trained()) throw StateError("tokenize: vocabulary is not trained");
  std::vector<std::int32_t> out;
  for (std::string_view chunk : pretokenize(text, vocab.word_marker())) {
    const auto ids = vocab.encode_chunk(chunk);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<std::string> tokenize(const SubwordVocab& vocab, std::string_view text) {
  std::vector<std::string> pieces;
  for (std::int32_t id : tokenize_ids(vocab, text)) pieces.push_back(vocab.piece(id));
  return pieces;
}

CorpusStats avg_downsampling_factor(const SubwordVocab& vocab,
                                    const std::vector<std::string>& corpus) {
  if (!vocab.trained()) throw StateError("avg_downsampling_factor: vocabulary is not trained");
  return stats_from_counts(vocab, chunk_counts(corpus, vocab.word_marker()));
}

TuneResult tune_vocab(const std::vector<std::string>& corpus, double target_factor,
                      std::vector<std::size_t> size_grid, std::vector<std::size_t> lmax_grid,
                      std::size_t threads) {
  if (size_grid.empty() || lmax_grid.empty()) throw ArgumentError("tune_vocab: empty grid");
  if (!(target_factor >= 1.0)) throw ArgumentError("tune_vocab: target factor must be >= 1");
  std::sort(size_grid.begin(), size_grid.end());
  size_grid.erase(std::unique(size_grid.begin(), size_grid.end()), size_grid.end());
  std::sort(lmax_grid.begin(), lmax_grid.end());
  lmax_grid.erase(std::unique(lmax_grid.begin(), lmax_grid.end()), lmax_grid.end());
  if (size_grid.front() < 256) throw ArgumentError("tune_vocab: sizes must be at least 256");

  const auto counts = chunk_counts(corpus, true);
  if (counts.empty()) throw ArgumentError("tune_vocab: empty corpus");

  // Greedy BPE is sequential, so a vocabulary of size s is the s-piece
  // prefix of any larger one trained on the same corpus and lmax.
  std::vector<SubwordVocab> largest(lmax_grid.size());
  std::vector<std::vector<TuneEntry>> rows(lmax_grid.size());
  auto run = [&](std::size_t li) {
    largest[li] = train_bpe(corpus, size_grid.back(), lmax_grid[li], true);
    for (std::size_t size : size_grid) {
      const SubwordVocab v = largest[li].truncated(size);
      rows[li].push_back({size, lmax_grid[li], v.size(), stats_from_counts(v, counts)});
    }
  };
  if (threads <= 1) {
    for (std::size_t li = 0; li < lmax_grid.size(); ++li) run(li);
  } else {
    std::vector<std::thread> pool;
    std::size_t next = 0;
    while (next < lmax_grid.size()) {
      pool.clear();
      for (std::size_t t = 0; t < threads && next < lmax_grid.size(); ++t) pool.emplace_back(run, next++);
      for (auto& th : pool) th.join();
    }
  }

  TuneResult result;
  for (std::size_t si = 0; si < size_grid.size(); ++si) {
    for (std::size_t li = 0; li < lmax_grid.size(); ++li) result.grid.push_back(rows[li][si]);
  }
  for (std::size_t i = 1; i < result.grid.size(); ++i) {
    const double d = std::abs(result.grid[i].stats.avg_factor - target_factor);
    const double best = std::abs(result.grid[result.best].stats.avg_factor - target_factor);
    if (d < best) result.best = i;
  }
  const TuneEntry& chosen = result.grid[result.best];
  const auto li = static_cast<std::size_t>(
      std::find(lmax_grid.begin(), lmax_grid.end(), chosen.lmax) - lmax_grid.begin());
  result.vocab = largest[li].truncated(chosen.size);
  result.stats = chosen.stats;
  return result;
}

std::string serialize_vocab(const SubwordVocab& vocab) {
  if (!vocab.trained()) throw StateError("save_vocab: vocabulary is not trained");
  std::ostringstream os;
  os << kVocabMagic << ' ' << kVocabVersion << '\n';
  os << "size " << vocab.size() << '\n';
  os << "lmax " << vocab.lmax() << '\n';
  os << "word_marker " << (vocab.word_marker() ? 1 : 0) << '\n';
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    const std::size_t split = id < 256 ? 0 : vocab.piece(vocab.merge(id - 256).first).size();
    os << id << '\t' << escape_piece(vocab.piece(id)) << '\t' << split << '\n';
  }
  return os.str();
}

SubwordVocab parse_vocab(std::string_view text) {
  const auto lines = split_lines(std::string(text));
  auto header_value = [&](std::size_t index, const std::string& key) -> std::size_t {
    if (index >= lines.size()) throw ParseError("missing header field '" + key + "'", index + 1);
    const auto parts = split(lines[index], ' ');
    if (parts.size() != 2 || parts[0] != key) {
      throw ParseError("expected '" + key + " <value>'", index + 1);
    }
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(parts[1], &pos);
      if (pos != parts[1].size()) throw std::invalid_argument("trailing");
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ParseError("bad number '" + parts[1] + "'", index + 1);
    }
  };
  if (lines.empty() || lines[0] != std::string(kVocabMagic) + " " + std::to_string(kVocabVersion)) {
    throw ParseError("not a version " + std::to_string(kVocabVersion) + " vocabulary file", 1);
  }
  const std::size_t size = header_value(1, "size");
  const std::size_t lmax = header_value(2, "lmax");
  const std::size_t marker = header_value(3, "word_marker");
  if (lmax == 0) throw ParseError("lmax must be positive", 3);
  if (marker > 1) throw ParseError("word_marker must be 0 or 1", 4);
  if (size < 256) throw ParseError("size must be at least 256", 2);
  if (lines.size() != 4 + size) {
    throw ParseError("expected " + std::to_string(size) + " pieces, found " +
                         std::to_string(lines.size() - 4),
                     lines.size());
  }
  SubwordVocab vocab = SubwordVocab::bytes_only(lmax, marker == 1);
  for (std::size_t id = 0; id < size; ++id) {
    const std::size_t line_no = id + 5;
    const auto fields = split(lines[id + 4], '\t');
    if (fields.size() != 3) throw ParseError("expected 3 tab-separated fields", line_no);
    if (fields[0] != std::to_string(id)) throw ParseError("rank out of order", line_no);
    const std::string piece = unescape_piece(fields[1], line_no);
    std::size_t split_at = 0;
    try {
      split_at = std::stoull(fields[2]);
    } catch (const std::exception&) {
      throw ParseError("bad split offset", line_no);
    }
    if (id < 256) {
      if (piece.size() != 1 || static_cast<unsigned char>(piece[0]) != id || split_at != 0) {
        throw ParseError("byte piece " + std::to_string(id) + " does not match its rank", line_no);
      }
      continue;
    }
    if (vocab.id_of(piece) >= 0) throw ParseError("duplicate piece '" + fields[1] + "'", line_no);
    if (piece.size() > lmax) throw ParseError("piece longer than lmax", line_no);
    if (split_at == 0 || split_at >= piece.size()) throw ParseError("bad split offset", line_no);
    const auto left = vocab.id_of(piece.substr(0, split_at));
    const auto right = vocab.id_of(piece.substr(split_at));
    if (left < 0 || right < 0) throw ParseError("merge parts not defined earlier", line_no);
    vocab.add_merge(static_cast<std::int32_t>(left), static_cast<std::int32_t>(right));
  }
  return vocab;
}

void save_vocab(const SubwordVocab& vocab, const std::string& path) {
  write_file(path, serialize_vocab(vocab));
}

SubwordVocab load_vocab(const std::string& path) { return parse_vocab(read_file(path)); }

}  // namespace blockpool
