#pragma once

// Two-step decoding: each block-level hidden conditions an LSTM that emits
// the bytes of the next block one step at a time.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "blockpool/nn.hpp"
#include "blockpool/tensor.hpp"

namespace blockpool {

enum class UpsampleVariant { kFixed, kVariable, kOneToOne };
enum class Conditioning { kSlice, kRepeat };

std::string upsample_variant_name(UpsampleVariant v);
std::string conditioning_name(Conditioning c);
Conditioning parse_conditioning(const std::string& name);

struct UpsampleConfig {
  UpsampleVariant variant = UpsampleVariant::kVariable;
  std::size_t d_slice = 64;
  std::size_t lmax_bytes = 6;
  std::size_t k = 4;
  Conditioning conditioning = Conditioning::kSlice;
  std::size_t d_char_embed = 64;
  std::size_t lstm_hidden = 0;  // 0 means d_model

  // Steps a block may take: lmax_bytes + 1, k, or 1.
  std::size_t max_steps() const;
  // Output width of the conditioning projection.
  std::size_t projection_width() const;
};

struct SpecialIds {
  std::int64_t pad, bos, eos, eow;
};

// Flattened upsampler steps of a batch, sentence after sentence.
struct StepPlan {
  std::vector<std::size_t> hidden_row;
  std::vector<std::size_t> step_index;
  std::vector<std::int64_t> inputs;
  std::vector<std::int64_t> targets;
  std::vector<std::size_t> sentence_offsets{0};
  std::vector<std::size_t> steps_per_block;

  std::size_t steps() const { return targets.size(); }
};

// Adds one sentence whose target block b is conditioned by hidden row
// first_row + b. Variable: previous-byte inputs starting from BOS, targets are
// the bytes then EOW (EOS after the last block). Fixed: k steps fed the byte
// at the same position of the previous block, targets after EOS are PAD.
// One-to-one: each block is a single token.
void append_sentence_steps(StepPlan& plan, const std::vector<std::vector<std::int64_t>>& blocks,
                           const UpsampleConfig& config, const SpecialIds& ids,
                           std::size_t first_row);

enum class Termination { kEow, kEos, kCap };
std::string termination_name(Termination t);

struct GeneratedBlock {
  std::vector<std::int64_t> symbols;
  Termination terminated_by = Termination::kEow;
};

class TwoStepUpsampler {
 public:
  TwoStepUpsampler() = default;
  // vocab: symbol count for both the input embeddings and the output layer.
  TwoStepUpsampler(const UpsampleConfig& config, std::size_t d_model, std::size_t vocab,
                   ParameterSet& params, Rng& rng);

  const UpsampleConfig& config() const { return config_; }

  Tensor project_conditioning(const Tensor& hidden) const;
  // Conditioning vector of every planned step [steps × d_slice].
  Tensor step_conditioning(const Tensor& hidden, const StepPlan& plan) const;
  Tensor train_logits(const Tensor& hidden, const StepPlan& plan) const;

  struct State {
    std::vector<double> h, c;
  };
  State initial_state() const;

  // Logits of one step given the projected conditioning row of its block.
  std::vector<double> step_logits(const Tensor& projected_row, std::size_t step,
                                  std::int64_t prev, State& state) const;

  // Greedy generation of the block conditioned by hidden_row [1 × d_model].
  // `allowed` lists the symbols that may be emitted; prev_block feeds the
  // fixed variant.
  GeneratedBlock generate_block(const Tensor& hidden_row, State& state,
                                const std::vector<std::int64_t>& prev_block,
                                const SpecialIds& ids,
                                const std::vector<std::int64_t>& allowed) const;

 private:
  UpsampleConfig config_;
  std::size_t hidden_ = 0;
  LinearLayer projection_;
  Tensor char_table_;
  Tensor wx_, wh_, bias_;
  LinearLayer output_;
};

}  // namespace blockpool
