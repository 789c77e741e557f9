#pragma once

// `section.key = value` run configuration files and their resolution into
// model and training settings.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blockpool/model.hpp"
#include "blockpool/training.hpp"

namespace blockpool {

// Ordered key/value pairs. Lines are `key = value`; `#` starts a comment.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  // `key=value`; replaces an existing value.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted `key = value` lines.
  std::string to_text() const;

  // Directory relative paths are resolved against ("" = working directory).
  std::string base_dir;

 private:
  std::map<std::string, std::string> values_;
};

struct DataPaths {
  std::string train_src, train_tgt, valid_src, valid_tgt;
  // Classification: `label<TAB>text` files.
  std::string train, valid;
  std::string vocab;
};

struct ResolvedRun {
  std::uint64_t seed = 0;
  VariantSpec spec;
  TrainConfig train;
  DataPaths data;
  std::size_t vocab_size = 0;  // train a vocabulary when no vocab path is given
  std::size_t vocab_lmax = 0;
  std::string output_dir;
};

// Every key this resolver understands, with its default ("" = required or
// unset).
const std::vector<std::pair<std::string, std::string>>& known_config_keys();

// Throws ConfigError for unknown keys, a missing seed, or malformed values.
// Vocabulary loading is left to the caller (see `data.vocab`).
ResolvedRun resolve_run(const RunConfig& config);

// Model-side keys of a variant (no data or training keys), as stored in
// checkpoints.
RunConfig spec_to_config(const VariantSpec& spec);
// Inverse of spec_to_config; the vocabulary is supplied separately.
VariantSpec spec_from_config(const RunConfig& config, std::shared_ptr<const SubwordVocab> vocab);

}  // namespace blockpool
