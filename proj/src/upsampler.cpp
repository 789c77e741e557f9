#include "blockpool/upsampler.hpp"

#include <algorithm>

#include "blockpool/error.hpp"

namespace blockpool {

std::string upsample_variant_name(UpsampleVariant v) {
  switch (v) {
    case UpsampleVariant::kFixed: return "fixed";
    case UpsampleVariant::kVariable: return "variable";
    case UpsampleVariant::kOneToOne: return "one_to_one";
  }
  return "?";
}

std::string conditioning_name(Conditioning c) {
  return c == Conditioning::kSlice ? "slice" : "repeat";
}

Conditioning parse_conditioning(const std::string& name) {
  if (name == "slice") return Conditioning::kSlice;
  if (name == "repeat") return Conditioning::kRepeat;
  throw ConfigError("unknown conditioning '" + name + "' (expected slice or repeat)");
}

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::kEow: return "eow";
    case Termination::kEos: return "eos";
    case Termination::kCap: return "cap";
  }
  return "?";
}

std::size_t UpsampleConfig::max_steps() const {
  switch (variant) {
    case UpsampleVariant::kFixed: return k;
    case UpsampleVariant::kVariable: return lmax_bytes + 1;
    case UpsampleVariant::kOneToOne: return 1;
  }
  return 1;
}

std::size_t UpsampleConfig::projection_width() const {
  return conditioning == Conditioning::kSlice ? max_steps() * d_slice : d_slice;
}

void append_sentence_steps(StepPlan& plan, const std::vector<std::vector<std::int64_t>>& blocks,
                           const UpsampleConfig& config, const SpecialIds& ids,
                           std::size_t first_row) {
  auto push = [&](std::size_t row, std::size_t t, std::int64_t in, std::int64_t target) {
    plan.hidden_row.push_back(row);
    plan.step_index.push_back(t);
    plan.inputs.push_back(in);
    plan.targets.push_back(target);
  };
  bool seen_eos = false;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    const std::size_t row = first_row + b;
    switch (config.variant) {
      case UpsampleVariant::kVariable: {
        if (block.size() > config.lmax_bytes) {
          throw SegmentationError("block of " + std::to_string(block.size()) +
                                  " bytes exceeds lmax_bytes " +
                                  std::to_string(config.lmax_bytes));
        }
        const std::int64_t term = b + 1 == blocks.size() ? ids.eos : ids.eow;
        for (std::size_t t = 0; t <= block.size(); ++t) {
          push(row, t, t == 0 ? ids.bos : block[t - 1], t < block.size() ? block[t] : term);
        }
        plan.steps_per_block.push_back(block.size() + 1);
        break;
      }
      case UpsampleVariant::kFixed: {
        if (block.size() > config.k) {
          throw SegmentationError("block of " + std::to_string(block.size()) +
                                  " symbols exceeds k " + std::to_string(config.k));
        }
        for (std::size_t t = 0; t < config.k; ++t) {
          std::int64_t in = ids.bos;
          if (b > 0) in = t < blocks[b - 1].size() ? blocks[b - 1][t] : ids.pad;
          std::int64_t target = t < block.size() && !seen_eos ? block[t] : ids.pad;
          if (target == ids.eos) seen_eos = true;
          push(row, t, in, target);
        }
        plan.steps_per_block.push_back(config.k);
        break;
      }
      case UpsampleVariant::kOneToOne: {
        if (block.size() != 1) {
          throw SegmentationError("one_to_one upsampling needs single-token blocks");
        }
        push(row, 0, b == 0 ? ids.bos : blocks[b - 1][0], block[0]);
        plan.steps_per_block.push_back(1);
        break;
      }
    }
  }
  plan.sentence_offsets.push_back(plan.targets.size());
}

TwoStepUpsampler::TwoStepUpsampler(const UpsampleConfig& config, std::size_t d_model,
                                   std::size_t vocab, ParameterSet& params, Rng& rng)
    : config_(config) {
  if (config_.d_slice == 0 || config_.d_char_embed == 0) {
    throw ConfigError("upsampler d_slice and d_char_embed must be positive");
  }
  if (config_.variant == UpsampleVariant::kVariable && config_.lmax_bytes == 0) {
    throw ConfigError("upsampler lmax_bytes must be positive");
  }
  if (config_.variant == UpsampleVariant::kFixed && config_.k == 0) {
    throw ConfigError("upsampler k must be positive");
  }
  hidden_ = config_.lstm_hidden == 0 ? d_model : config_.lstm_hidden;
  projection_ = LinearLayer(params, "upsampler.projection", d_model, config_.projection_width(), rng);
  char_table_ = init_embedding(params, "upsampler.char_embed", vocab, config_.d_char_embed, rng);
  wx_ = init_weight(params, "upsampler.lstm.wx", config_.d_slice + config_.d_char_embed,
                    4 * hidden_, rng);
  wh_ = init_weight(params, "upsampler.lstm.wh", hidden_, 4 * hidden_, rng);
  std::vector<double> b(4 * hidden_, 0.0);
  std::fill(b.begin() + hidden_, b.begin() + 2 * hidden_, 1.0);  // forget gate
  bias_ = params.add("upsampler.lstm.bias", Tensor::from({4 * hidden_}, std::move(b)));
  output_ = LinearLayer(params, "upsampler.output", hidden_, vocab, rng);
}

Tensor TwoStepUpsampler::project_conditioning(const Tensor& hidden) const {
  return projection_(hidden);
}

Tensor TwoStepUpsampler::step_conditioning(const Tensor& hidden, const StepPlan& plan) const {
  const Tensor projected = project_conditioning(hidden);
  std::vector<std::int64_t> index(plan.steps());
  if (config_.conditioning == Conditioning::kRepeat) {
    for (std::size_t s = 0; s < index.size(); ++s) index[s] = static_cast<std::int64_t>(plan.hidden_row[s]);
    return gather_rows(projected, index);
  }
  const std::size_t max_steps = config_.max_steps();
  for (std::size_t s = 0; s < index.size(); ++s) {
    if (plan.step_index[s] >= max_steps) {
      throw StateError("step index " + std::to_string(plan.step_index[s]) +
                       " beyond conditioning slices " + std::to_string(max_steps));
    }
    index[s] = static_cast<std::int64_t>(plan.hidden_row[s] * max_steps + plan.step_index[s]);
  }
  const Tensor slices = reshape(projected, {projected.rows() * max_steps, config_.d_slice});
  return gather_rows(slices, index);
}

Tensor TwoStepUpsampler::train_logits(const Tensor& hidden, const StepPlan& plan) const {
  if (plan.steps() == 0) throw ArgumentError("train_logits: empty step plan");
  for (std::size_t row : plan.hidden_row) {
    if (row >= hidden.rows()) {
      throw DimensionError("step plan refers to hidden row " + std::to_string(row) + " of " +
                           shape_str(hidden.shape()));
    }
  }
  const Tensor parts[] = {step_conditioning(hidden, plan),
                          embedding_lookup(char_table_, plan.inputs)};
  const Tensor xproj = linear(concat_cols(parts), wx_, bias_);

  const std::size_t batch = plan.sentence_offsets.size() - 1;
  std::size_t steps = 0;
  for (std::size_t s = 0; s < batch; ++s) {
    steps = std::max(steps, plan.sentence_offsets[s + 1] - plan.sentence_offsets[s]);
  }
  Tensor states;
  if (batch == 1) {
    states = lstm_sequence(xproj, wh_, steps, 1);
  } else {
    // Time-major layout; sentences that have ended read zero rows.
    std::vector<std::int64_t> to_time(steps * batch, -1);
    std::vector<std::int64_t> back(plan.steps());
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t i = plan.sentence_offsets[s]; i < plan.sentence_offsets[s + 1]; ++i) {
        const std::size_t t = i - plan.sentence_offsets[s];
        to_time[t * batch + s] = static_cast<std::int64_t>(i);
        back[i] = static_cast<std::int64_t>(t * batch + s);
      }
    }
    states = gather_rows(lstm_sequence(gather_rows(xproj, to_time), wh_, steps, batch), back);
  }
  return output_(states);
}

TwoStepUpsampler::State TwoStepUpsampler::initial_state() const {
  return {std::vector<double>(hidden_, 0.0), std::vector<double>(hidden_, 0.0)};
}

std::vector<double> TwoStepUpsampler::step_logits(const Tensor& projected_row, std::size_t step,
                                                  std::int64_t prev, State& state) const {
  Tensor cond = projected_row;
  if (config_.conditioning == Conditioning::kSlice) {
    if (step >= config_.max_steps()) throw StateError("step beyond conditioning slices");
    cond = slice_cols(projected_row, step * config_.d_slice, (step + 1) * config_.d_slice);
  }
  const std::int64_t ids[] = {prev};
  const Tensor parts[] = {cond, embedding_lookup(char_table_, ids)};
  const Tensor xproj = linear(concat_cols(parts), wx_, bias_);
  lstm_step_values(xproj.values(), wh_, state.h, state.c);
  const Tensor logits = output_(Tensor::from({1, hidden_}, state.h));
  return {logits.values().begin(), logits.values().end()};
}

GeneratedBlock TwoStepUpsampler::generate_block(const Tensor& hidden_row, State& state,
                                                const std::vector<std::int64_t>& prev_block,
                                                const SpecialIds& ids,
                                                const std::vector<std::int64_t>& allowed) const {
  NoGradGuard no_grad;
  const Tensor projected = project_conditioning(hidden_row);
  auto pick = [&](const std::vector<double>& logits) {
    std::int64_t best = allowed.front();
    for (std::int64_t s : allowed) {
      if (logits[s] > logits[best]) best = s;
    }
    return best;
  };
  GeneratedBlock out;
  switch (config_.variant) {
    case UpsampleVariant::kVariable: {
      std::int64_t prev = ids.bos;
      for (std::size_t t = 0;; ++t) {
        const std::int64_t s = pick(step_logits(projected, t, prev, state));
        if (s == ids.eow || s == ids.eos) {
          out.terminated_by = s == ids.eos ? Termination::kEos : Termination::kEow;
          return out;
        }
        if (t == config_.lmax_bytes) {
          out.terminated_by = Termination::kCap;
          return out;
        }
        out.symbols.push_back(s);
        prev = s;
      }
    }
    case UpsampleVariant::kFixed: {
      for (std::size_t t = 0; t < config_.k; ++t) {
        std::int64_t prev = ids.bos;
        if (!prev_block.empty()) prev = t < prev_block.size() ? prev_block[t] : ids.pad;
        const std::int64_t s = pick(step_logits(projected, t, prev, state));
        if (s == ids.eos) {
          out.terminated_by = Termination::kEos;
          return out;
        }
        out.symbols.push_back(s);
      }
      out.terminated_by = Termination::kCap;
      return out;
    }
    case UpsampleVariant::kOneToOne: {
      const std::int64_t prev = prev_block.empty() ? ids.bos : prev_block.front();
      const std::int64_t s = pick(step_logits(projected, 0, prev, state));
      if (s == ids.eos) {
        out.terminated_by = Termination::kEos;
      } else {
        out.symbols.push_back(s);
      }
      return out;
    }
  }
  return out;
}

}  // namespace blockpool
