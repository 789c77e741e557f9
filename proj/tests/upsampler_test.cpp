#include "blockpool/upsampler.hpp"

#include <gtest/gtest.h>

#include "blockpool/error.hpp"
#include "blockpool/gradcheck.hpp"
#include "blockpool/segmenter.hpp"

namespace blockpool {
namespace {

constexpr SpecialIds kIds{kPad, kBos, kEos, kEow};
constexpr std::size_t kDModel = 12;

using Blocks = std::vector<std::vector<std::int64_t>>;

UpsampleConfig small_config(UpsampleVariant variant) {
  UpsampleConfig c;
  c.variant = variant;
  c.d_slice = 5;
  c.lmax_bytes = 4;
  c.k = 4;
  c.d_char_embed = 6;
  c.lstm_hidden = 10;
  return c;
}

Blocks random_blocks(Rng& rng, std::size_t n, std::size_t max_len) {
  Blocks out(n);
  for (auto& b : out) {
    const std::size_t len = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < len; ++i) b.push_back(static_cast<std::int64_t>(rng.below(256)));
  }
  return out;
}

StepPlan plan_of(const Blocks& blocks, const UpsampleConfig& cfg) {
  StepPlan plan;
  append_sentence_steps(plan, blocks, cfg, kIds, 0);
  return plan;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto v = t.values();
  return {v.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

std::vector<std::int64_t> all_symbols() {
  std::vector<std::int64_t> s;
  for (std::int64_t i = 0; i < kSymbolCount; ++i) s.push_back(i);
  return s;
}

TEST(UpsamplerTest, VariableStepsAreBlockLengthPlusOne) {
  const auto cfg = small_config(UpsampleVariant::kVariable);
  const StepPlan plan = plan_of({{'a', 'b', 'c'}, {'d', 'e'}}, cfg);
  EXPECT_EQ(plan.steps_per_block, (std::vector<std::size_t>{4, 3}));
  EXPECT_EQ(plan.inputs, (std::vector<std::int64_t>{kBos, 'a', 'b', 'c', kBos, 'd', 'e'}));
  EXPECT_EQ(plan.targets, (std::vector<std::int64_t>{'a', 'b', 'c', kEow, 'd', 'e', kEos}));
  EXPECT_EQ(plan.hidden_row, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(plan.step_index, (std::vector<std::size_t>{0, 1, 2, 3, 0, 1, 2}));
}

TEST(UpsamplerTest, FixedStepsAreK) {
  const auto cfg = small_config(UpsampleVariant::kFixed);
  const StepPlan plan = plan_of({{'a', 'b', 'c', 'd'}, {'e', kEos, kPad, kPad}}, cfg);
  EXPECT_EQ(plan.steps_per_block, (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(plan.inputs, (std::vector<std::int64_t>{kBos, kBos, kBos, kBos, 'a', 'b', 'c', 'd'}));
  EXPECT_EQ(plan.targets, (std::vector<std::int64_t>{'a', 'b', 'c', 'd', 'e', kEos, kPad, kPad}));
}

TEST(UpsamplerTest, StepCountLawHoldsOnRandomBlocks) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Blocks blocks = random_blocks(rng, 1 + rng.below(6), 4);
    std::size_t expected = 0;
    for (const auto& b : blocks) expected += b.size() + 1;
    EXPECT_EQ(plan_of(blocks, small_config(UpsampleVariant::kVariable)).steps(), expected);
    EXPECT_EQ(plan_of(blocks, small_config(UpsampleVariant::kFixed)).steps(), 4 * blocks.size());
  }
}

TEST(UpsamplerTest, OverlongBlockIsSegmentationError) {
  EXPECT_THROW(plan_of({{1, 2, 3, 4, 5}}, small_config(UpsampleVariant::kVariable)),
               SegmentationError);
  EXPECT_THROW(plan_of({{1, 2, 3, 4, 5}}, small_config(UpsampleVariant::kFixed)), SegmentationError);
}

TEST(UpsamplerTest, ProjectionWidths) {
  UpsampleConfig c;
  c.variant = UpsampleVariant::kVariable;
  c.lmax_bytes = 6;
  c.d_slice = 64;
  EXPECT_EQ(c.projection_width(), 448u);
  c.variant = UpsampleVariant::kFixed;
  c.k = 4;
  EXPECT_EQ(c.projection_width(), 256u);
  c.conditioning = Conditioning::kRepeat;
  EXPECT_EQ(c.projection_width(), 64u);
}

TEST(UpsamplerTest, RepeatModeGivesEveryStepTheSameConditioning) {
  Rng rng(2);
  auto cfg = small_config(UpsampleVariant::kVariable);
  cfg.conditioning = Conditioning::kRepeat;
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  const Tensor hidden = Tensor::normal(rng, {2, kDModel}, 1.0);
  const StepPlan plan = plan_of({{1, 2, 3}, {4}}, cfg);
  const Tensor cond = up.step_conditioning(hidden, plan);
  for (std::size_t s = 1; s < 4; ++s) EXPECT_EQ(row(cond, s), row(cond, 0));
  EXPECT_EQ(row(cond, 5), row(cond, 4));
  EXPECT_NE(row(cond, 4), row(cond, 0));
}

TEST(UpsamplerTest, SliceModeGivesEachStepItsOwnSlice) {
  Rng rng(3);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  const Tensor hidden = Tensor::normal(rng, {1, kDModel}, 1.0);
  const Tensor projected = up.project_conditioning(hidden);
  const Tensor cond = up.step_conditioning(hidden, plan_of({{1, 2}}, cfg));
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(row(cond, t), row(slice_cols(projected, t * cfg.d_slice, (t + 1) * cfg.d_slice), 0));
  }
}

TEST(UpsamplerTest, VariableLogitsIgnoreLaterGoldBytes) {
  Rng rng(4);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  for (int trial = 0; trial < 4; ++trial) {
    const Blocks blocks = random_blocks(rng, 4, 4);
    const Tensor hidden = Tensor::normal(rng, {blocks.size(), kDModel}, 1.0);
    const StepPlan plan = plan_of(blocks, cfg);
    const Tensor base = up.train_logits(hidden, plan);
    std::size_t first_step = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      for (std::size_t j = 0; j < blocks[b].size(); ++j) {
        // Perturb byte j of block b and every byte of later blocks.
        Blocks perturbed = blocks;
        perturbed[b][j] = (perturbed[b][j] + 1 + static_cast<std::int64_t>(rng.below(200))) % 256;
        for (std::size_t c = b + 1; c < blocks.size(); ++c) {
          for (auto& s : perturbed[c]) s = static_cast<std::int64_t>(rng.below(256));
        }
        const Tensor out = up.train_logits(hidden, plan_of(perturbed, cfg));
        // Step t of block b reads byte t-1, so steps <= j are unaffected.
        for (std::size_t s = 0; s <= first_step + j; ++s) EXPECT_EQ(row(out, s), row(base, s));
        EXPECT_NE(row(out, first_step + j + 1), row(base, first_step + j + 1));
      }
      first_step += blocks[b].size() + 1;
    }
  }
}

TEST(UpsamplerTest, FixedLogitsIgnoreTheirOwnBlock) {
  Rng rng(5);
  const auto cfg = small_config(UpsampleVariant::kFixed);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  Blocks blocks(5);
  for (auto& b : blocks) {
    for (std::size_t i = 0; i < cfg.k; ++i) b.push_back(static_cast<std::int64_t>(rng.below(256)));
  }
  const Tensor hidden = Tensor::normal(rng, {blocks.size(), kDModel}, 1.0);
  const Tensor base = up.train_logits(hidden, plan_of(blocks, cfg));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    Blocks perturbed = blocks;
    for (std::size_t c = b; c < blocks.size(); ++c) {
      for (auto& s : perturbed[c]) s = (s + 17) % 256;
    }
    const Tensor out = up.train_logits(hidden, plan_of(perturbed, cfg));
    // Every step of block b, in particular the last one whose four preceding
    // gold characters are exactly block b.
    for (std::size_t t = 0; t < cfg.k; ++t) {
      EXPECT_EQ(row(out, b * cfg.k + t), row(base, b * cfg.k + t)) << b << "," << t;
    }
  }
}

TEST(UpsamplerTest, BatchedPlanMatchesSingleSentences) {
  Rng rng(6);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  const Blocks a = random_blocks(rng, 3, 4), b = random_blocks(rng, 2, 4);
  const Tensor ha = Tensor::normal(rng, {3, kDModel}, 1.0), hb = Tensor::normal(rng, {2, kDModel}, 1.0);
  const Tensor hs[] = {ha, hb};
  StepPlan plan;
  append_sentence_steps(plan, a, cfg, kIds, 0);
  append_sentence_steps(plan, b, cfg, kIds, 3);
  const Tensor both = up.train_logits(concat_rows(hs), plan);
  const Tensor la = up.train_logits(ha, plan_of(a, cfg));
  const Tensor lb = up.train_logits(hb, plan_of(b, cfg));
  for (std::size_t s = 0; s < la.rows(); ++s) EXPECT_EQ(row(both, s), row(la, s));
  for (std::size_t s = 0; s < lb.rows(); ++s) EXPECT_EQ(row(both, la.rows() + s), row(lb, s));
}

TEST(UpsamplerTest, PassesGradientCheck) {
  Rng rng(7);
  auto cfg = small_config(UpsampleVariant::kVariable);
  cfg.lstm_hidden = 4;
  cfg.d_slice = 3;
  cfg.d_char_embed = 3;
  ParameterSet params;
  const TwoStepUpsampler up(cfg, 6, kSymbolCount, params, rng);
  Tensor hidden = Tensor::normal(rng, {2, 6}, 1.0, true);
  const StepPlan plan = plan_of({{65, 66}, {67}}, cfg);
  NamedTensors all = params.items();
  all.emplace_back("hidden", hidden);
  GradCheckOptions opt;
  opt.max_coords_per_tensor = 30;
  const auto r = check_gradients(all, [&] {
    return cross_entropy(up.train_logits(hidden, plan), plan.targets);
  }, opt);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(UpsamplerTest, ModelFavoringEowEmitsEmptyBlock) {
  Rng rng(8);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  params.get("upsampler.output.b").mutable_values()[kEow] = 1e3;
  auto state = up.initial_state();
  const GeneratedBlock block =
      up.generate_block(Tensor::normal(rng, {1, kDModel}, 1.0), state, {}, kIds, all_symbols());
  EXPECT_TRUE(block.symbols.empty());
  EXPECT_EQ(block.terminated_by, Termination::kEow);
}

TEST(UpsamplerTest, ModelFavoringOneByteHitsTheCap) {
  Rng rng(9);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  params.get("upsampler.output.b").mutable_values()['x'] = 1e3;
  auto state = up.initial_state();
  const GeneratedBlock block =
      up.generate_block(Tensor::normal(rng, {1, kDModel}, 1.0), state, {}, kIds, all_symbols());
  EXPECT_EQ(block.symbols, std::vector<std::int64_t>(cfg.lmax_bytes, 'x'));
  EXPECT_EQ(block.terminated_by, Termination::kCap);
}

TEST(UpsamplerTest, FixedVariantEmitsKBytes) {
  Rng rng(10);
  const auto cfg = small_config(UpsampleVariant::kFixed);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  std::vector<std::int64_t> bytes;
  for (std::int64_t b = 0; b < 256; ++b) bytes.push_back(b);
  auto state = up.initial_state();
  std::vector<std::int64_t> prev;
  for (int i = 0; i < 5; ++i) {
    const GeneratedBlock block =
        up.generate_block(Tensor::normal(rng, {1, kDModel}, 1.0), state, prev, kIds, bytes);
    EXPECT_EQ(block.symbols.size(), cfg.k);
    prev = block.symbols;
  }
}

TEST(UpsamplerTest, TeacherForcingReproducesGreedyDecisions) {
  Rng rng(11);
  const auto cfg = small_config(UpsampleVariant::kVariable);
  ParameterSet params;
  const TwoStepUpsampler up(cfg, kDModel, kSymbolCount, params, rng);
  // Lean toward short words so all three terminations show up.
  auto bias = params.get("upsampler.output.b").mutable_values();
  bias[kEow] = 1.5;
  bias[kEos] = 0.5;
  std::vector<std::int64_t> allowed;
  for (std::int64_t b = 'a'; b <= 'h'; ++b) allowed.push_back(b);
  allowed.push_back(kEow);
  allowed.push_back(kEos);

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor hidden = Tensor::normal(rng, {6, kDModel}, 2.0);
    auto state = up.initial_state();
    Blocks blocks;
    std::vector<std::int64_t> decisions;  // -1 where a cap step chose a byte
    for (std::size_t b = 0; b < hidden.rows(); ++b) {
      const GeneratedBlock g = up.generate_block(slice_rows(hidden, b, b + 1), state, {}, kIds, allowed);
      decisions.insert(decisions.end(), g.symbols.begin(), g.symbols.end());
      decisions.push_back(g.terminated_by == Termination::kEow   ? kEow
                          : g.terminated_by == Termination::kEos ? kEos
                                                                 : -1);
      blocks.push_back(g.symbols);
      if (g.terminated_by == Termination::kEos) break;
    }
    const Tensor logits = up.train_logits(slice_rows(hidden, 0, blocks.size()), plan_of(blocks, cfg));
    ASSERT_EQ(logits.rows(), decisions.size());
    for (std::size_t s = 0; s < decisions.size(); ++s) {
      if (decisions[s] < 0) continue;
      std::int64_t best = allowed.front();
      for (std::int64_t a : allowed) {
        if (logits.at(s, a) > logits.at(s, best)) best = a;
      }
      EXPECT_EQ(best, decisions[s]) << "trial " << trial << " step " << s;
    }
  }
}

TEST(UpsamplerTest, ConditioningParsing) {
  EXPECT_EQ(parse_conditioning("slice"), Conditioning::kSlice);
  EXPECT_EQ(parse_conditioning("repeat"), Conditioning::kRepeat);
  EXPECT_THROW(parse_conditioning("tile"), ConfigError);
}

}  // namespace
}  // namespace blockpool
