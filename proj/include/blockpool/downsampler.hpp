#pragma once

// Byte embeddings -> convolution stack -> per-block max pooling. The decoder
// mode masks convolution taps so no position sees a later block.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blockpool/nn.hpp"
#include "blockpool/tensor.hpp"

namespace blockpool {

struct ConvLayerSpec {
  std::size_t width = 3;
  std::size_t channels = 0;  // 0 means d_model
};

struct DownsampleConfig {
  std::size_t k = 4;
  std::size_t d_char = 64;
  std::vector<ConvLayerSpec> conv{{3, 0}, {3, 0}};
};

enum class DownsampleMode { kEncoder, kDecoder };

// Several sentences laid end to end. Each sentence contributes its symbols and
// block lengths; trailing PAD blocks (one PAD symbol each) may follow and are
// marked invalid.
struct RaggedInput {
  std::vector<std::int64_t> symbols;
  std::vector<std::size_t> block_lengths;
  std::vector<std::size_t> symbol_offsets{0};
  std::vector<std::size_t> block_offsets{0};
  std::vector<std::uint8_t> block_valid;
  std::vector<std::size_t> real_symbol_end;  // per sentence, before padding

  std::size_t sentences() const { return symbol_offsets.size() - 1; }
  std::size_t blocks() const { return block_lengths.size(); }

  void add_sentence(std::span<const std::int64_t> symbols, std::span<const std::size_t> lengths,
                    std::size_t pad_blocks = 0);
};

// Encoder taps: the sentence's real symbols. Decoder taps: the sentence start
// up to the end of the position's own block. PAD positions see only
// themselves.
Intervals encoder_conv_intervals(const RaggedInput& input);
Intervals block_causal_intervals(const RaggedInput& input);

// Block-causal convolution of one sentence with "same" padding.
Tensor block_causal_conv(const Tensor& x, std::span<const std::size_t> lengths,
                         const Tensor& weight, const Tensor& bias, std::size_t width);

class CharDownsampler {
 public:
  CharDownsampler() = default;
  CharDownsampler(const DownsampleConfig& config, std::size_t d_model, DownsampleMode mode,
                  ParameterSet& params, const std::string& prefix, Rng& rng);

  Tensor embed(std::span<const std::int64_t> symbols) const;
  Tensor conv_stack(const Tensor& embedded, const Intervals& allowed) const;
  // [blocks × d_model]
  Tensor forward(const RaggedInput& input) const;
  // Pools precomputed byte embeddings [symbols × d_char].
  Tensor downsample(const Tensor& embedded, const RaggedInput& input) const;

  DownsampleMode mode() const { return mode_; }
  const Tensor& embedding_table() const { return table_; }

 private:
  struct ConvLayer {
    std::size_t width = 3;
    Tensor w, b;
    LayerNormParams norm;
    bool residual = false;
  };

  DownsampleMode mode_ = DownsampleMode::kEncoder;
  Tensor table_;
  std::vector<ConvLayer> layers_;
};

}  // namespace blockpool
