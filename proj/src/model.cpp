#include "blockpool/model.hpp"

#include <algorithm>

#include "blockpool/error.hpp"

namespace blockpool {
namespace {

constexpr std::pair<VariantName, const char*> kVariantNames[] = {
    {VariantName::kSubword, "subword"},
    {VariantName::kChar, "char"},
    {VariantName::kFixed, "fixed"},
    {VariantName::kBufferedFixed, "buffered_fixed"},
    {VariantName::kWdd, "wdd"},
    {VariantName::kSdd, "sdd"},
    {VariantName::kTwoStepSubword, "two_step_subword"},
};

std::vector<std::vector<std::int64_t>> split_blocks(const ByteSeq& seq,
                                                    const std::vector<std::size_t>& lengths) {
  std::vector<std::vector<std::int64_t>> blocks;
  std::size_t pos = 0;
  for (std::size_t len : lengths) {
    blocks.emplace_back(seq.begin() + static_cast<std::ptrdiff_t>(pos),
                        seq.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return blocks;
}

RaggedInput source_input(std::span<const Example* const> batch) {
  RaggedInput in;
  for (const Example* ex : batch) in.add_sentence(ex->src_symbols, ex->src_blocks, ex->src_pad_blocks);
  return in;
}

RaggedInput decoder_input(std::span<const Example* const> batch) {
  RaggedInput in;
  for (const Example* ex : batch) in.add_sentence(ex->dec_symbols, ex->dec_blocks);
  return in;
}

BlockLayout layout_of(const RaggedInput& in) {
  BlockLayout layout;
  layout.offsets = in.block_offsets;
  for (std::uint8_t v : in.block_valid) {
    if (v == 0) {
      layout.valid = in.block_valid;
      break;
    }
  }
  return layout;
}

}  // namespace

std::string variant_name(VariantName v) {
  for (const auto& [name, text] : kVariantNames) {
    if (name == v) return text;
  }
  return "?";
}

VariantName parse_variant(const std::string& name) {
  for (const auto& [v, text] : kVariantNames) {
    if (name == text) return v;
  }
  if (name == "buffixed") return VariantName::kBufferedFixed;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string task_name(Task t) { return t == Task::kTranslation ? "translation" : "classification"; }

Task parse_task(const std::string& name) {
  if (name == "translation") return Task::kTranslation;
  if (name == "classification") return Task::kClassification;
  throw ConfigError("unknown task '" + name + "'");
}

bool is_downsampled(VariantName v) {
  return v == VariantName::kFixed || v == VariantName::kBufferedFixed || v == VariantName::kWdd ||
         v == VariantName::kSdd;
}

bool uses_subwords(VariantName v) {
  return v == VariantName::kSubword || v == VariantName::kTwoStepSubword;
}

void VariantSpec::validate() const {
  model.validate();
  if ((uses_subwords(name) || name == VariantName::kSdd) && !vocab) {
    throw ConfigError("variant " + variant_name(name) + " needs a subword vocabulary");
  }
  if (vocab && !vocab->trained()) throw ConfigError("subword vocabulary is not trained");
  if (is_downsampled(name) && down.k == 0) throw ConfigError("downsampler k must be positive");
  if (task == Task::kClassification && labels.size() < 2) {
    throw ConfigError("classification needs at least two labels");
  }
  if (task == Task::kTranslation && name == VariantName::kSdd && up.lmax_bytes < vocab->lmax()) {
    throw ConfigError("upsampler lmax_bytes " + std::to_string(up.lmax_bytes) +
                      " is below the vocabulary lmax " + std::to_string(vocab->lmax()));
  }
}

SegmenterConfig VariantSpec::segmenter() const {
  SegmenterConfig c;
  c.k = down.k;
  c.vocab = vocab.get();
  switch (name) {
    case VariantName::kFixed: c.method = SegMethod::kFixed; break;
    case VariantName::kBufferedFixed: c.method = SegMethod::kBufferedFixed; break;
    case VariantName::kWdd: c.method = SegMethod::kWdd; break;
    default: c.method = SegMethod::kSdd; break;
  }
  return c;
}

std::size_t ForwardOutput::counted_targets() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [&](std::int64_t t) { return t >= 0 && t != ignore_index; }));
}

Model::Model(VariantSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t d = spec_.model.d_model;
  if (uses_subwords(spec_.name)) {
    const auto v = static_cast<std::int64_t>(spec_.vocab->size());
    ids_ = {v, v + 1, v + 2, -1};
    input_vocab_ = output_vocab_ = spec_.vocab->size() + 3;
  } else {
    ids_ = {kPad, kBos, kEos, kEow};
    input_vocab_ = output_vocab_ = kSymbolCount;
  }
  switch (spec_.name) {
    case VariantName::kFixed:
    case VariantName::kBufferedFixed:
      spec_.up.variant = UpsampleVariant::kFixed;
      break;
    case VariantName::kTwoStepSubword:
      spec_.up.variant = UpsampleVariant::kOneToOne;
      break;
    default:
      spec_.up.variant = UpsampleVariant::kVariable;
      break;
  }
  spec_.up.k = spec_.down.k;

  // Separate streams so each component's initialization is independent of
  // which other components the variant has.
  Rng root(seed);
  Rng enc_rng = root.fork(), dec_rng = root.fork(), core_rng = root.fork(), head_rng = root.fork();
  const bool translation = spec_.task == Task::kTranslation;
  if (is_downsampled(spec_.name)) {
    enc_down_.emplace(spec_.down, d, DownsampleMode::kEncoder, params_, "enc_down", enc_rng);
    if (translation) {
      dec_down_.emplace(spec_.down, d, DownsampleMode::kDecoder, params_, "dec_down", dec_rng);
    }
  } else {
    src_embed_ = init_embedding(params_, "src_embed", input_vocab_, d, enc_rng);
    if (translation) tgt_embed_ = init_embedding(params_, "tgt_embed", input_vocab_, d, dec_rng);
  }
  transformer_ = TransformerStack(spec_.model, params_, core_rng, translation);
  if (!translation) {
    classifier_ = LinearLayer(params_, "classifier", d, spec_.labels.size(), head_rng);
  } else if (is_downsampled(spec_.name) || spec_.name == VariantName::kTwoStepSubword) {
    upsampler_.emplace(spec_.up, d, output_vocab_, params_, head_rng);
  } else {
    output_ = LinearLayer(params_, "output", d, output_vocab_, head_rng);
  }
}

const CharDownsampler* Model::encoder_downsampler() const {
  return enc_down_ ? &*enc_down_ : nullptr;
}

const TwoStepUpsampler* Model::upsampler() const { return upsampler_ ? &*upsampler_ : nullptr; }

std::vector<std::int64_t> Model::subword_ids(const std::string& text) const {
  const auto ids = tokenize_ids(*spec_.vocab, text);
  return {ids.begin(), ids.end()};
}

void Model::prepare_source(const std::string& source, Example& ex) const {
  if (is_downsampled(spec_.name)) {
    const PaddedSequence ps = segment_text(source, spec_.segmenter(), true);
    ex.src_symbols.assign(ps.seq.begin(), ps.seq.end());
    ex.src_blocks = ps.segmentation.lengths;
    return;
  }
  if (uses_subwords(spec_.name)) {
    ex.src_symbols = subword_ids(source);
  } else {
    const ByteSeq bytes = encode_text(source, false);
    ex.src_symbols.assign(bytes.begin(), bytes.end());
  }
  ex.src_symbols.push_back(ids_.eos);
  ex.src_blocks.assign(ex.src_symbols.size(), 1);
}

void Model::prepare_target_blocks(const std::vector<std::vector<std::int64_t>>& blocks,
                                  Example& ex) const {
  if (blocks.empty()) throw ArgumentError("target needs at least one block");
  const bool fixed = spec_.name == VariantName::kFixed || spec_.name == VariantName::kBufferedFixed;
  const std::size_t bos_len = fixed ? spec_.down.k : 1;
  ex.dec_symbols.assign(bos_len, ids_.bos);
  ex.dec_blocks.assign(1, bos_len);
  const bool variable = upsampler_ && upsampler_->config().variant == UpsampleVariant::kVariable;
  for (const auto& block : blocks) {
    if (variable && block.size() > spec_.up.lmax_bytes) {
      throw SegmentationError("block of " + std::to_string(block.size()) + " bytes exceeds lmax_bytes " +
                              std::to_string(spec_.up.lmax_bytes));
    }
  }
  for (std::size_t b = 0; b + 1 < blocks.size(); ++b) {
    if (blocks[b].empty()) throw ArgumentError("only the final target block may be empty");
    ex.dec_symbols.insert(ex.dec_symbols.end(), blocks[b].begin(), blocks[b].end());
    ex.dec_blocks.push_back(blocks[b].size());
  }
  ex.target_blocks = blocks;
}

Example Model::prepare(const std::string& source, const std::string& target) const {
  if (spec_.task != Task::kTranslation) throw StateError("prepare: model is a classifier");
  std::vector<std::vector<std::int64_t>> blocks;
  switch (spec_.name) {
    case VariantName::kWdd:
    case VariantName::kSdd: {
      const PaddedSequence ps = segment_text(target, spec_.segmenter(), false);
      blocks = split_blocks(ps.seq, ps.segmentation.lengths);
      if (blocks.empty()) blocks.emplace_back();
      break;
    }
    case VariantName::kFixed:
    case VariantName::kBufferedFixed: {
      const PaddedSequence ps = segment_text(target, spec_.segmenter(), true);
      blocks = split_blocks(ps.seq, ps.segmentation.lengths);
      break;
    }
    case VariantName::kChar: {
      for (Symbol s : encode_text(target, false)) blocks.push_back({s});
      blocks.push_back({ids_.eos});
      break;
    }
    case VariantName::kSubword:
    case VariantName::kTwoStepSubword: {
      for (std::int64_t id : subword_ids(target)) blocks.push_back({id});
      blocks.push_back({ids_.eos});
      break;
    }
  }
  return prepare_with_blocks(source, blocks);
}

Example Model::prepare_with_blocks(const std::string& source,
                                   const std::vector<std::vector<std::int64_t>>& blocks) const {
  Example ex;
  prepare_source(source, ex);
  prepare_target_blocks(blocks, ex);
  return ex;
}

Example Model::prepare_classification(const std::string& text, std::int64_t label) const {
  if (label < -1 || label >= static_cast<std::int64_t>(spec_.labels.size())) {
    throw DataError("label index " + std::to_string(label) + " outside the label map");
  }
  Example ex;
  prepare_source(text, ex);
  ex.label = label;
  return ex;
}

Tensor Model::embed_side(const RaggedInput& input, bool decoder) const {
  if (is_downsampled(spec_.name)) return decoder ? dec_down_->forward(input) : enc_down_->forward(input);
  return embedding_lookup(decoder ? tgt_embed_ : src_embed_, input.symbols);
}

BlockLayout Model::source_layout(std::span<const Example* const> batch) const {
  return layout_of(source_input(batch));
}

Tensor Model::encoder_inputs(std::span<const Example* const> batch) const {
  return embed_side(source_input(batch), false);
}

Tensor Model::encode(std::span<const Example* const> batch) const {
  const RaggedInput src = source_input(batch);
  return transformer_.encode(embed_side(src, false), layout_of(src));
}

Tensor Model::decoder_hiddens(std::span<const Example* const> batch, Rng* rng) const {
  if (spec_.task != Task::kTranslation) throw StateError("decoder_hiddens: model is a classifier");
  const RaggedInput src = source_input(batch);
  const BlockLayout src_layout = layout_of(src);
  const Tensor memory = transformer_.encode(embed_side(src, false), src_layout, rng);
  const RaggedInput dec = decoder_input(batch);
  return transformer_.decode(embed_side(dec, true), layout_of(dec), memory, src_layout, rng);
}

Tensor Model::classify_logits(std::span<const Example* const> batch) const {
  const RaggedInput src = source_input(batch);
  const BlockLayout layout = layout_of(src);
  const Tensor memory = transformer_.encode(embed_side(src, false), layout);
  std::vector<std::int64_t> rows;
  std::vector<std::size_t> groups{0};
  for (std::size_t s = 0; s < layout.sentences(); ++s) {
    for (std::size_t r = layout.offsets[s]; r < layout.offsets[s + 1]; ++r) {
      if (layout.valid.empty() || layout.valid[r]) rows.push_back(static_cast<std::int64_t>(r));
    }
    groups.push_back(rows.size());
  }
  return classifier_(mean_row_groups(gather_rows(memory, rows), groups));
}

ForwardOutput Model::forward(std::span<const Example* const> batch, Rng* rng) const {
  if (batch.empty()) throw ArgumentError("forward: empty batch");
  ForwardOutput out;
  if (spec_.task == Task::kClassification) {
    out.logits = classify_logits(batch);
    for (const Example* ex : batch) out.targets.push_back(ex->label);
    return out;
  }
  out.ignore_index = ids_.pad;
  const Tensor hidden = decoder_hiddens(batch, rng);
  if (upsampler_) {
    StepPlan plan;
    std::size_t row = 0;
    for (const Example* ex : batch) {
      append_sentence_steps(plan, ex->target_blocks, upsampler_->config(), ids_, row);
      row += ex->dec_blocks.size();
    }
    out.logits = upsampler_->train_logits(hidden, plan);
    out.targets = std::move(plan.targets);
  } else {
    out.logits = output_(hidden);
    for (const Example* ex : batch) {
      for (const auto& block : ex->target_blocks) out.targets.push_back(block.at(0));
    }
  }
  return out;
}

std::size_t Model::target_count(const Example& ex) const {
  if (spec_.task == Task::kClassification) return 1;
  if (!upsampler_) return ex.target_blocks.size();
  StepPlan plan;
  append_sentence_steps(plan, ex.target_blocks, upsampler_->config(), ids_, 0);
  return static_cast<std::size_t>(
      std::count_if(plan.targets.begin(), plan.targets.end(), [&](std::int64_t t) { return t != ids_.pad; }));
}

Tensor Model::loss(const ForwardOutput& out, std::optional<double> normalizer) const {
  if (spec_.task == Task::kClassification) {
    return cross_entropy(out.logits, out.targets, std::nullopt, normalizer);
  }
  return cross_entropy(out.logits, out.targets, ids_.pad, normalizer);
}

std::vector<std::int64_t> Model::allowed_outputs() const {
  std::vector<std::int64_t> allowed;
  if (uses_subwords(spec_.name)) {
    for (std::size_t i = 0; i < spec_.vocab->size(); ++i) allowed.push_back(static_cast<std::int64_t>(i));
  } else {
    for (std::int64_t b = 0; b < 256; ++b) allowed.push_back(b);
    if (upsampler_ && upsampler_->config().variant == UpsampleVariant::kVariable) {
      allowed.push_back(kEow);
    }
  }
  allowed.push_back(ids_.eos);
  return allowed;
}

TranslationResult Model::translate(const std::string& source, std::size_t max_blocks) const {
  if (spec_.task != Task::kTranslation) throw StateError("translate: model is a classifier");
  NoGradGuard no_grad;
  Example ex;
  prepare_source(source, ex);
  const Example* one[] = {&ex};
  const RaggedInput src = source_input(one);
  const BlockLayout src_layout = layout_of(src);
  const Tensor memory = transformer_.encode(embed_side(src, false), src_layout);
  const std::vector<std::int64_t> allowed = allowed_outputs();

  TranslationResult result;
  TwoStepUpsampler::State state;
  if (upsampler_) state = upsampler_->initial_state();
  bool done = false;
  for (std::size_t m = 0; m < max_blocks && !done; ++m) {
    auto prefix = result.blocks;
    prefix.emplace_back();
    prepare_target_blocks(prefix, ex);
    const RaggedInput dec = decoder_input(one);
    const Tensor hidden =
        transformer_.decode(embed_side(dec, true), layout_of(dec), memory, src_layout);
    const Tensor row = slice_rows(hidden, m, m + 1);
    if (upsampler_) {
      static const std::vector<std::int64_t> kNone;
      const GeneratedBlock block = upsampler_->generate_block(
          row, state, result.blocks.empty() ? kNone : result.blocks.back(), ids_, allowed);
      const bool variable = upsampler_->config().variant == UpsampleVariant::kVariable;
      if (block.terminated_by == Termination::kCap && variable) {
        ++result.cap_terminations;
      }
      if (block.terminated_by == Termination::kEos) {
        if (variable || !block.symbols.empty()) result.blocks.push_back(block.symbols);
        done = true;
      } else if (block.symbols.empty()) {
        result.blocks.push_back(block.symbols);
        result.empty_block_stop = true;
        done = true;
      } else {
        result.blocks.push_back(block.symbols);
      }
    } else {
      const Tensor logits = output_(row);
      std::int64_t best = allowed.front();
      for (std::int64_t s : allowed) {
        if (logits.at(s) > logits.at(best)) best = s;
      }
      if (best == ids_.eos) {
        done = true;
      } else {
        result.blocks.push_back({best});
      }
    }
  }
  result.truncated = !done;

  std::string bytes;
  for (const auto& block : result.blocks) {
    for (std::int64_t s : block) {
      if (uses_subwords(spec_.name)) {
        bytes += spec_.vocab->piece(static_cast<std::size_t>(s));
      } else if (s < 256) {
        bytes.push_back(static_cast<char>(s));
      }
    }
  }
  if (spec_.name == VariantName::kBufferedFixed) bytes = normalize_whitespace(bytes);
  result.invalid_utf8 = !is_valid_utf8(bytes);
  result.text = result.invalid_utf8 ? repair_utf8(bytes) : bytes;
  return result;
}

std::vector<double> Model::classify(const std::string& text) const {
  if (spec_.task != Task::kClassification) throw ConfigError("classify: model has no label head");
  NoGradGuard no_grad;
  const Example ex = prepare_classification(text, -1);
  const Example* one[] = {&ex};
  const Tensor probs = softmax_rows(classify_logits(one));
  return {probs.values().begin(), probs.values().end()};
}

std::vector<double> Model::word_embedding(const std::string& word) const {
  NoGradGuard no_grad;
  const std::string text = " " + word;
  Tensor rows;
  if (is_downsampled(spec_.name)) {
    const PaddedSequence ps = segment_text(text, spec_.segmenter(), false);
    RaggedInput in;
    const std::vector<std::int64_t> syms(ps.seq.begin(), ps.seq.end());
    in.add_sentence(syms, ps.segmentation.lengths);
    rows = enc_down_->forward(in);
  } else if (uses_subwords(spec_.name)) {
    const auto ids = subword_ids(text);
    if (ids.size() != 1) throw StateError("word '" + word + "' is not a single subword token");
    rows = embedding_lookup(src_embed_, ids);
  } else {
    const ByteSeq bytes = encode_text(text, false);
    rows = embedding_lookup(src_embed_, std::vector<std::int64_t>(bytes.begin(), bytes.end()));
  }
  const std::size_t groups[] = {0, rows.rows()};
  const Tensor pooled = mean_row_groups(rows, groups);
  return {pooled.values().begin(), pooled.values().end()};
}

}  // namespace blockpool
