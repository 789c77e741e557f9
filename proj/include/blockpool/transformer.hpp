#pragma once

// Pre-norm Transformer encoder/decoder over block sequences of several
// sentences laid end to end, with sinusoidal positions.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "blockpool/nn.hpp"
#include "blockpool/tensor.hpp"

namespace blockpool {

struct ModelConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t n_enc_layers = 6;
  std::size_t n_dec_layers = 6;
  std::size_t d_ff = 2048;
  double dropout = 0.1;
  std::size_t max_positions = 2048;

  void validate() const;
};

ModelConfig base_preset();
ModelConfig tiny_preset();

// Row ranges of each sentence; `valid` (optional) marks PAD rows with 0.
struct BlockLayout {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint8_t> valid;

  std::size_t sentences() const { return offsets.size() - 1; }
  std::size_t rows() const { return offsets.back(); }
};

// allow[i][j] == (j <= i).
std::vector<std::vector<bool>> build_block_causal_mask(std::size_t num_blocks);

AttentionMask encoder_self_mask(const BlockLayout& layout);
AttentionMask decoder_self_mask(const BlockLayout& layout);
AttentionMask cross_mask(const BlockLayout& queries, const BlockLayout& keys);

// Dense [rows × rows] view of an attention mask, for inspection and tests.
std::vector<std::vector<bool>> dense_mask(const AttentionMask& mask, std::size_t keys);

// x + PE(position within sentence). Throws LengthError past max_positions.
Tensor add_positions(const Tensor& x, const BlockLayout& layout, std::size_t max_positions);

class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(const ModelConfig& config, ParameterSet& params, Rng& rng,
                   bool with_decoder = true);

  Tensor encode(const Tensor& x, const BlockLayout& layout, Rng* dropout_rng = nullptr) const;
  Tensor decode(const Tensor& y, const BlockLayout& layout, const Tensor& memory,
                const BlockLayout& memory_layout, Rng* dropout_rng = nullptr) const;

  const ModelConfig& config() const { return config_; }

 private:
  struct SelfAttention {
    LayerNormParams norm;
    LinearLayer qkv, out;
  };
  struct CrossAttention {
    LayerNormParams norm;
    LinearLayer q, kv, out;
  };
  struct FeedForward {
    LayerNormParams norm;
    LinearLayer up, down;
  };
  struct EncoderLayer {
    SelfAttention self;
    FeedForward ff;
  };
  struct DecoderLayer {
    SelfAttention self;
    CrossAttention cross;
    FeedForward ff;
  };

  SelfAttention make_self(ParameterSet& params, const std::string& name, Rng& rng) const;
  FeedForward make_ff(ParameterSet& params, const std::string& name, Rng& rng) const;
  Tensor self_block(const SelfAttention& a, const Tensor& x, const AttentionMask& mask,
                    Rng* rng) const;
  Tensor ff_block(const FeedForward& f, const Tensor& x, Rng* rng) const;

  ModelConfig config_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNormParams enc_final_, dec_final_;
};

}  // namespace blockpool
