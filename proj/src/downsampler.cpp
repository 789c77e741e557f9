#include "blockpool/downsampler.hpp"

#include "blockpool/error.hpp"
#include "blockpool/segmenter.hpp"

namespace blockpool {

void RaggedInput::add_sentence(std::span<const std::int64_t> syms,
                               std::span<const std::size_t> lengths, std::size_t pad_blocks) {
  std::size_t total = 0;
  for (std::size_t len : lengths) {
    if (len == 0) throw ArgumentError("RaggedInput: zero-length block");
    total += len;
  }
  if (total != syms.size()) {
    throw DimensionError("RaggedInput: blocks cover " + std::to_string(total) + " symbols, got " +
                         std::to_string(syms.size()));
  }
  symbols.insert(symbols.end(), syms.begin(), syms.end());
  block_lengths.insert(block_lengths.end(), lengths.begin(), lengths.end());
  block_valid.insert(block_valid.end(), lengths.size(), 1);
  real_symbol_end.push_back(symbols.size());
  for (std::size_t p = 0; p < pad_blocks; ++p) {
    symbols.push_back(kPad);
    block_lengths.push_back(1);
    block_valid.push_back(0);
  }
  symbol_offsets.push_back(symbols.size());
  block_offsets.push_back(block_lengths.size());
}

namespace {

Intervals make_intervals(const RaggedInput& input, bool block_causal) {
  Intervals iv;
  iv.lo.resize(input.symbols.size());
  iv.hi.resize(input.symbols.size());
  std::size_t block = 0;
  std::size_t block_end = 0;
  std::size_t pos = 0;
  for (std::size_t s = 0; s < input.sentences(); ++s) {
    const std::size_t start = input.symbol_offsets[s];
    const std::size_t real_end = input.real_symbol_end[s];
    for (; pos < input.symbol_offsets[s + 1]; ++pos) {
      while (block_end <= pos) block_end += input.block_lengths[block++];
      if (pos >= real_end) {
        iv.lo[pos] = pos;
        iv.hi[pos] = pos + 1;
      } else {
        iv.lo[pos] = start;
        iv.hi[pos] = block_causal ? block_end : real_end;
      }
    }
  }
  return iv;
}

}  // namespace

Intervals encoder_conv_intervals(const RaggedInput& input) { return make_intervals(input, false); }

Intervals block_causal_intervals(const RaggedInput& input) { return make_intervals(input, true); }

Tensor block_causal_conv(const Tensor& x, std::span<const std::size_t> lengths,
                         const Tensor& weight, const Tensor& bias, std::size_t width) {
  RaggedInput layout;
  std::vector<std::int64_t> dummy(x.rows(), 0);
  layout.add_sentence(dummy, lengths);
  return conv1d(x, weight, bias, width, ConvPadding::kSame, block_causal_intervals(layout));
}

CharDownsampler::CharDownsampler(const DownsampleConfig& config, std::size_t d_model,
                                 DownsampleMode mode, ParameterSet& params,
                                 const std::string& prefix, Rng& rng)
    : mode_(mode) {
  if (config.conv.empty()) throw ConfigError("downsampler needs at least one conv layer");
  table_ = init_embedding(params, prefix + ".embed", kSymbolCount, config.d_char, rng);
  std::size_t in = config.d_char;
  for (std::size_t l = 0; l < config.conv.size(); ++l) {
    const ConvLayerSpec& spec = config.conv[l];
    const std::size_t out = spec.channels == 0 ? d_model : spec.channels;
    if (spec.width == 0 || spec.width % 2 == 0) {
      throw ConfigError("downsampler conv widths must be odd, got " + std::to_string(spec.width));
    }
    if (l + 1 == config.conv.size() && out != d_model) {
      throw ConfigError("last downsampler conv layer must have d_model channels");
    }
    const std::string name = prefix + ".conv" + std::to_string(l);
    ConvLayer layer;
    layer.width = spec.width;
    layer.w = init_weight(params, name + ".w", spec.width * in, out, rng);
    layer.b = init_zeros(params, name + ".b", {out});
    layer.norm = LayerNormParams(params, name + ".norm", out);
    layer.residual = in == out;
    layers_.push_back(layer);
    in = out;
  }
}

Tensor CharDownsampler::embed(std::span<const std::int64_t> symbols) const {
  return embedding_lookup(table_, symbols);
}

Tensor CharDownsampler::conv_stack(const Tensor& embedded, const Intervals& allowed) const {
  Tensor x = embedded;
  for (const ConvLayer& layer : layers_) {
    Tensor y = relu(conv1d(x, layer.w, layer.b, layer.width, ConvPadding::kSame, allowed));
    if (layer.residual) y = add(y, x);
    x = layer.norm(y);
  }
  return x;
}

Tensor CharDownsampler::downsample(const Tensor& embedded, const RaggedInput& input) const {
  if (embedded.rows() != input.symbols.size()) {
    throw DimensionError("downsample: " + shape_str(embedded.shape()) + " embeddings for " +
                         std::to_string(input.symbols.size()) + " symbols");
  }
  const Intervals allowed = mode_ == DownsampleMode::kDecoder ? block_causal_intervals(input)
                                                              : encoder_conv_intervals(input);
  return segment_max_pool(conv_stack(embedded, allowed), input.block_lengths);
}

Tensor CharDownsampler::forward(const RaggedInput& input) const {
  return downsample(embed(input.symbols), input);
}

}  // namespace blockpool
