#include "blockpool/transformer.hpp"

#include "blockpool/error.hpp"

namespace blockpool {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0) throw ConfigError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_positions == 0) throw ConfigError("max_positions must be positive");
}

ModelConfig base_preset() { return ModelConfig{}; }

ModelConfig tiny_preset() {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 64;
  c.dropout = 0.0;
  return c;
}

std::vector<std::vector<bool>> build_block_causal_mask(std::size_t num_blocks) {
  std::vector<std::vector<bool>> allow(num_blocks, std::vector<bool>(num_blocks, false));
  for (std::size_t i = 0; i < num_blocks; ++i) {
    for (std::size_t j = 0; j <= i; ++j) allow[i][j] = true;
  }
  return allow;
}

AttentionMask encoder_self_mask(const BlockLayout& layout) {
  AttentionMask mask;
  mask.key_valid = layout.valid;
  for (std::size_t s = 0; s < layout.sentences(); ++s) {
    for (std::size_t i = layout.offsets[s]; i < layout.offsets[s + 1]; ++i) {
      mask.keys.lo.push_back(layout.offsets[s]);
      mask.keys.hi.push_back(layout.offsets[s + 1]);
    }
  }
  return mask;
}

AttentionMask decoder_self_mask(const BlockLayout& layout) {
  AttentionMask mask;
  mask.key_valid = layout.valid;
  for (std::size_t s = 0; s < layout.sentences(); ++s) {
    for (std::size_t i = layout.offsets[s]; i < layout.offsets[s + 1]; ++i) {
      mask.keys.lo.push_back(layout.offsets[s]);
      mask.keys.hi.push_back(i + 1);
    }
  }
  return mask;
}

AttentionMask cross_mask(const BlockLayout& queries, const BlockLayout& keys) {
  if (queries.sentences() != keys.sentences()) {
    throw DimensionError("cross attention: " + std::to_string(queries.sentences()) +
                         " target sentences vs " + std::to_string(keys.sentences()) +
                         " source sentences");
  }
  AttentionMask mask;
  mask.key_valid = keys.valid;
  for (std::size_t s = 0; s < queries.sentences(); ++s) {
    for (std::size_t i = queries.offsets[s]; i < queries.offsets[s + 1]; ++i) {
      mask.keys.lo.push_back(keys.offsets[s]);
      mask.keys.hi.push_back(keys.offsets[s + 1]);
    }
  }
  return mask;
}

std::vector<std::vector<bool>> dense_mask(const AttentionMask& mask, std::size_t keys) {
  std::vector<std::vector<bool>> out(mask.keys.lo.size(), std::vector<bool>(keys, false));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = mask.keys.lo[i]; j < mask.keys.hi[i]; ++j) {
      out[i][j] = mask.key_valid.empty() || mask.key_valid[j] != 0;
    }
  }
  return out;
}

Tensor add_positions(const Tensor& x, const BlockLayout& layout, std::size_t max_positions) {
  if (x.rows() != layout.rows()) {
    throw DimensionError("add_positions: " + shape_str(x.shape()) + " rows vs layout of " +
                         std::to_string(layout.rows()));
  }
  const std::size_t d = x.cols();
  std::vector<double> pe(x.rows() * d);
  for (std::size_t s = 0; s < layout.sentences(); ++s) {
    const std::size_t n = layout.offsets[s + 1] - layout.offsets[s];
    if (n > max_positions) {
      throw LengthError("sequence of " + std::to_string(n) + " blocks exceeds max_positions " +
                        std::to_string(max_positions));
    }
    for (std::size_t p = 0; p < n; ++p) sinusoid_row(p, d, pe.data() + (layout.offsets[s] + p) * d);
  }
  return add(x, Tensor::from(x.shape(), std::move(pe)));
}

TransformerStack::SelfAttention TransformerStack::make_self(ParameterSet& params,
                                                            const std::string& name,
                                                            Rng& rng) const {
  const std::size_t d = config_.d_model;
  return {LayerNormParams(params, name + ".norm", d), LinearLayer(params, name + ".qkv", d, 3 * d, rng),
          LinearLayer(params, name + ".out", d, d, rng)};
}

TransformerStack::FeedForward TransformerStack::make_ff(ParameterSet& params,
                                                        const std::string& name, Rng& rng) const {
  const std::size_t d = config_.d_model;
  return {LayerNormParams(params, name + ".norm", d),
          LinearLayer(params, name + ".up", d, config_.d_ff, rng),
          LinearLayer(params, name + ".down", config_.d_ff, d, rng)};
}

TransformerStack::TransformerStack(const ModelConfig& config, ParameterSet& params, Rng& rng,
                                   bool with_decoder)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  for (std::size_t l = 0; l < config_.n_enc_layers; ++l) {
    const std::string name = "encoder.layer" + std::to_string(l);
    encoder_.push_back({make_self(params, name + ".self", rng), make_ff(params, name + ".ff", rng)});
  }
  if (config_.n_enc_layers > 0) enc_final_ = LayerNormParams(params, "encoder.final_norm", d);
  if (!with_decoder) return;
  for (std::size_t l = 0; l < config_.n_dec_layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.self = make_self(params, name + ".self", rng);
    layer.cross = {LayerNormParams(params, name + ".cross.norm", d),
                   LinearLayer(params, name + ".cross.q", d, d, rng),
                   LinearLayer(params, name + ".cross.kv", d, 2 * d, rng),
                   LinearLayer(params, name + ".cross.out", d, d, rng)};
    layer.ff = make_ff(params, name + ".ff", rng);
    decoder_.push_back(std::move(layer));
  }
  if (config_.n_dec_layers > 0) dec_final_ = LayerNormParams(params, "decoder.final_norm", d);
}

Tensor TransformerStack::self_block(const SelfAttention& a, const Tensor& x,
                                    const AttentionMask& mask, Rng* rng) const {
  const std::size_t d = config_.d_model;
  const Tensor qkv = a.qkv(a.norm(x));
  const Tensor att = attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, 2 * d),
                               slice_cols(qkv, 2 * d, 3 * d), config_.n_heads, mask);
  return add(x, maybe_dropout(a.out(att), config_.dropout, rng));
}

Tensor TransformerStack::ff_block(const FeedForward& f, const Tensor& x, Rng* rng) const {
  const Tensor h = f.down(relu(f.up(f.norm(x))));
  return add(x, maybe_dropout(h, config_.dropout, rng));
}

Tensor TransformerStack::encode(const Tensor& x, const BlockLayout& layout, Rng* rng) const {
  if (x.cols() != config_.d_model) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " vs d_model " +
                         std::to_string(config_.d_model));
  }
  Tensor h = maybe_dropout(add_positions(x, layout, config_.max_positions), config_.dropout, rng);
  if (encoder_.empty()) return h;
  const AttentionMask mask = encoder_self_mask(layout);
  for (const EncoderLayer& layer : encoder_) {
    h = self_block(layer.self, h, mask, rng);
    h = ff_block(layer.ff, h, rng);
  }
  return enc_final_(h);
}

Tensor TransformerStack::decode(const Tensor& y, const BlockLayout& layout, const Tensor& memory,
                                const BlockLayout& memory_layout, Rng* rng) const {
  if (y.cols() != config_.d_model) {
    throw DimensionError("decode: input " + shape_str(y.shape()) + " vs d_model " +
                         std::to_string(config_.d_model));
  }
  const std::size_t d = config_.d_model;
  Tensor h = maybe_dropout(add_positions(y, layout, config_.max_positions), config_.dropout, rng);
  if (decoder_.empty()) return h;
  const AttentionMask self_mask = decoder_self_mask(layout);
  const AttentionMask xmask = cross_mask(layout, memory_layout);
  for (const DecoderLayer& layer : decoder_) {
    h = self_block(layer.self, h, self_mask, rng);
    const Tensor q = layer.cross.q(layer.cross.norm(h));
    const Tensor kv = layer.cross.kv(memory);
    const Tensor att = attention(q, slice_cols(kv, 0, d), slice_cols(kv, d, 2 * d),
                                 config_.n_heads, xmask);
    h = add(h, maybe_dropout(layer.cross.out(att), config_.dropout, rng));
    h = ff_block(layer.ff, h, rng);
  }
  return dec_final_(h);
}

}  // namespace blockpool
