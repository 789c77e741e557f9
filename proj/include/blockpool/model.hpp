#pragma once

// The comparable systems: subword and char baselines, the four downsampled
// byte models, the two-step subword model and the encoder-only classifier.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockpool/downsampler.hpp"
#include "blockpool/nn.hpp"
#include "blockpool/segmenter.hpp"
#include "blockpool/subword_vocab.hpp"
#include "blockpool/transformer.hpp"
#include "blockpool/upsampler.hpp"

namespace blockpool {

enum class VariantName { kSubword, kChar, kFixed, kBufferedFixed, kWdd, kSdd, kTwoStepSubword };
enum class Task { kTranslation, kClassification };

std::string variant_name(VariantName v);
VariantName parse_variant(const std::string& name);
std::string task_name(Task t);
Task parse_task(const std::string& name);

bool is_downsampled(VariantName v);
bool uses_subwords(VariantName v);

struct VariantSpec {
  VariantName name = VariantName::kSdd;
  Task task = Task::kTranslation;
  ModelConfig model = tiny_preset();
  DownsampleConfig down;
  UpsampleConfig up;
  std::shared_ptr<const SubwordVocab> vocab;
  std::vector<std::string> labels;

  // Throws ConfigError on inconsistent combinations.
  void validate() const;
  SegmenterConfig segmenter() const;
};

// One prepared sentence (pair). Symbols are bytes/specials for byte models
// and subword ids for subword models.
struct Example {
  std::vector<std::int64_t> src_symbols;
  std::vector<std::size_t> src_blocks;
  std::size_t src_pad_blocks = 0;
  std::vector<std::int64_t> dec_symbols;
  std::vector<std::size_t> dec_blocks;
  // Target block b is predicted from decoder position b.
  std::vector<std::vector<std::int64_t>> target_blocks;
  std::int64_t label = -1;
};

struct ForwardOutput {
  Tensor logits;
  std::vector<std::int64_t> targets;
  std::int64_t ignore_index = -1;
  // Targets that contribute to the loss.
  std::size_t counted_targets() const;
};

struct TranslationResult {
  std::string text;
  // Generated blocks in order. For the variable upsampler the terminating
  // block is kept even when empty.
  std::vector<std::vector<std::int64_t>> blocks;
  bool truncated = false;
  bool invalid_utf8 = false;
  bool empty_block_stop = false;
  std::size_t cap_terminations = 0;
};

class Model {
 public:
  Model(VariantSpec spec, std::uint64_t seed);

  const VariantSpec& spec() const { return spec_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  std::size_t output_vocab() const { return output_vocab_; }
  const SpecialIds& ids() const { return ids_; }

  Example prepare(const std::string& source, const std::string& target) const;
  // Teacher forcing with explicit target blocks (e.g. generated ones).
  Example prepare_with_blocks(const std::string& source,
                              const std::vector<std::vector<std::int64_t>>& blocks) const;
  Example prepare_classification(const std::string& text, std::int64_t label) const;

  ForwardOutput forward(std::span<const Example* const> batch, Rng* dropout_rng = nullptr) const;
  // Loss positions an example contributes (PAD targets excluded).
  std::size_t target_count(const Example& ex) const;
  // Cross-entropy of the output, divided by `normalizer` when given.
  Tensor loss(const ForwardOutput& out, std::optional<double> normalizer = std::nullopt) const;

  // Pieces of the forward pass, exposed for checks.
  Tensor encoder_inputs(std::span<const Example* const> batch) const;
  Tensor encode(std::span<const Example* const> batch) const;
  Tensor decoder_hiddens(std::span<const Example* const> batch, Rng* dropout_rng = nullptr) const;
  BlockLayout source_layout(std::span<const Example* const> batch) const;

  TranslationResult translate(const std::string& source, std::size_t max_blocks) const;
  std::vector<double> classify(const std::string& text) const;
  Tensor classify_logits(std::span<const Example* const> batch) const;

  // Representation fed to the Transformer for a word in isolation (with the
  // word-marker space), mean-pooled over its blocks.
  std::vector<double> word_embedding(const std::string& word) const;

  const CharDownsampler* encoder_downsampler() const;
  const TwoStepUpsampler* upsampler() const;
  const TransformerStack& transformer() const { return transformer_; }

 private:
  std::vector<std::int64_t> subword_ids(const std::string& text) const;
  void prepare_source(const std::string& source, Example& ex) const;
  void prepare_target_blocks(const std::vector<std::vector<std::int64_t>>& blocks,
                             Example& ex) const;
  Tensor embed_side(const RaggedInput& input, bool decoder) const;
  std::vector<std::int64_t> allowed_outputs() const;

  VariantSpec spec_;
  ParameterSet params_;
  SpecialIds ids_{};
  std::size_t input_vocab_ = 0;
  std::size_t output_vocab_ = 0;

  std::optional<CharDownsampler> enc_down_, dec_down_;
  Tensor src_embed_, tgt_embed_;
  TransformerStack transformer_;
  std::optional<TwoStepUpsampler> upsampler_;
  LinearLayer output_;
  LinearLayer classifier_;
};

}  // namespace blockpool
