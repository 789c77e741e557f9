#include "blockpool/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "blockpool/error.hpp"
#include "test_util.hpp"

namespace blockpool {
namespace {

const std::vector<std::string>& corpus() {
  static const std::vector<std::string> c = [] {
    Rng rng(99);
    auto out = testing::random_corpus(rng, 60);
    out.push_back("the cat sat on the mat");
    out.push_back("the dog sat on the log");
    return out;
  }();
  return c;
}

std::shared_ptr<const SubwordVocab> small_vocab() {
  static const auto v = std::make_shared<const SubwordVocab>(train_bpe(corpus(), 320, 6));
  return v;
}

VariantSpec tiny_spec(VariantName name, Task task = Task::kTranslation) {
  VariantSpec s;
  s.name = name;
  s.task = task;
  s.model = tiny_preset();
  s.model.d_model = 16;
  s.model.n_heads = 2;
  s.model.d_ff = 24;
  s.down.d_char = 8;
  s.up.d_slice = 4;
  s.up.d_char_embed = 6;
  s.up.lstm_hidden = 12;
  s.up.lmax_bytes = 12;
  if (uses_subwords(name) || name == VariantName::kSdd) s.vocab = small_vocab();
  if (task == Task::kClassification) s.labels = {"neg", "pos"};
  return s;
}

constexpr VariantName kTranslationVariants[] = {
    VariantName::kSubword, VariantName::kChar, VariantName::kFixed,         VariantName::kBufferedFixed,
    VariantName::kWdd,     VariantName::kSdd,  VariantName::kTwoStepSubword};

bool has_prefix(const ParameterSet& params, const std::string& prefix) {
  for (const auto& [name, t] : params.items()) {
    if (name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const auto v = t.values();
  return {v.begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols())};
}

TEST(ModelTest, WiringPerVariant) {
  const Model chr(tiny_spec(VariantName::kChar), 1);
  EXPECT_FALSE(has_prefix(chr.params(), "enc_down"));
  EXPECT_FALSE(has_prefix(chr.params(), "dec_down"));
  EXPECT_FALSE(has_prefix(chr.params(), "upsampler"));
  EXPECT_TRUE(has_prefix(chr.params(), "output"));
  EXPECT_EQ(chr.encoder_downsampler(), nullptr);
  EXPECT_EQ(chr.upsampler(), nullptr);

  const Model sub(tiny_spec(VariantName::kSubword), 1);
  EXPECT_FALSE(has_prefix(sub.params(), "upsampler"));
  EXPECT_EQ(sub.output_vocab(), small_vocab()->size() + 3);

  const Model two(tiny_spec(VariantName::kTwoStepSubword), 1);
  ASSERT_NE(two.upsampler(), nullptr);
  EXPECT_EQ(two.upsampler()->config().variant, UpsampleVariant::kOneToOne);

  for (VariantName v : {VariantName::kFixed, VariantName::kBufferedFixed, VariantName::kWdd,
                        VariantName::kSdd}) {
    const Model m(tiny_spec(v), 1);
    EXPECT_TRUE(has_prefix(m.params(), "enc_down")) << variant_name(v);
    EXPECT_TRUE(has_prefix(m.params(), "dec_down")) << variant_name(v);
    ASSERT_NE(m.upsampler(), nullptr);
    const bool fixed = v == VariantName::kFixed || v == VariantName::kBufferedFixed;
    EXPECT_EQ(m.upsampler()->config().variant,
              fixed ? UpsampleVariant::kFixed : UpsampleVariant::kVariable);
    EXPECT_FALSE(has_prefix(m.params(), "output"));
  }
}

TEST(ModelTest, TransformerCoreIsIdenticalAcrossVariants) {
  auto core = [](const Model& m) {
    std::map<std::string, Shape> shapes;
    for (const auto& [name, t] : m.params().items()) {
      if (name.rfind("encoder.", 0) == 0 || name.rfind("decoder.", 0) == 0) shapes[name] = t.shape();
    }
    return shapes;
  };
  const auto reference = core(Model(tiny_spec(VariantName::kSdd), 1));
  EXPECT_FALSE(reference.empty());
  for (VariantName v : kTranslationVariants) {
    EXPECT_EQ(core(Model(tiny_spec(v), 1)), reference) << variant_name(v);
  }
}

TEST(ModelTest, SddFeedsOneBlockPerSubwordPlusEos) {
  const Model m(tiny_spec(VariantName::kSdd), 3);
  const std::string text = "the cat sat on the log";
  const Example ex = m.prepare(text, "the mat");
  const std::size_t tokens = tokenize_ids(*small_vocab(), text).size();
  EXPECT_EQ(ex.src_blocks.size(), tokens + 1);
  const Example* one[] = {&ex};
  EXPECT_EQ(m.encoder_inputs(one).rows(), tokens + 1);
}

TEST(ModelTest, SddWithUnitBlocksIsPerByteConvFeatures) {
  VariantSpec spec = tiny_spec(VariantName::kSdd);
  spec.vocab = std::make_shared<const SubwordVocab>(SubwordVocab::bytes_only(1));
  const Model sdd(spec, 4);
  const Model chr(tiny_spec(VariantName::kChar), 4);
  const std::string text = "h\xC3\xA9llo world";
  const Example es = sdd.prepare(text, "x");
  const Example ec = chr.prepare(text, "x");
  EXPECT_EQ(es.src_symbols, ec.src_symbols);
  EXPECT_EQ(es.src_blocks, ec.src_blocks);

  const Example* one[] = {&es};
  const Tensor pooled = sdd.encoder_inputs(one);
  RaggedInput in;
  in.add_sentence(es.src_symbols, es.src_blocks);
  const CharDownsampler* down = sdd.encoder_downsampler();
  const Tensor per_byte = down->conv_stack(down->embed(in.symbols), encoder_conv_intervals(in));
  ASSERT_EQ(pooled.shape(), per_byte.shape());
  for (std::size_t i = 0; i < pooled.numel(); ++i) EXPECT_EQ(pooled.at(i), per_byte.at(i));
}

TEST(ModelTest, InconsistentSpecsAreConfigErrors) {
  VariantSpec sdd = tiny_spec(VariantName::kSdd);
  sdd.vocab.reset();
  EXPECT_THROW(Model(sdd, 1), ConfigError);
  VariantSpec sub = tiny_spec(VariantName::kSubword);
  sub.vocab.reset();
  EXPECT_THROW(Model(sub, 1), ConfigError);
  VariantSpec short_cap = tiny_spec(VariantName::kSdd);
  short_cap.up.lmax_bytes = 2;
  EXPECT_THROW(Model(short_cap, 1), ConfigError);
  VariantSpec cls = tiny_spec(VariantName::kWdd, Task::kClassification);
  cls.labels = {"only"};
  EXPECT_THROW(Model(cls, 1), ConfigError);
  EXPECT_THROW(parse_variant("bytes"), ConfigError);
  EXPECT_EQ(parse_variant("buffered_fixed"), VariantName::kBufferedFixed);
}

TEST(ModelTest, LossReachesEveryParameter) {
  for (VariantName v : kTranslationVariants) {
    Model m(tiny_spec(v), 5);
    const Example a = m.prepare("the cat sat", "the dog sat on it");
    const Example b = m.prepare("a\xE2\x82\xAC b", "");
    const Example* batch[] = {&a, &b};
    const Tensor loss = m.loss(m.forward(batch));
    EXPECT_TRUE(std::isfinite(loss.item())) << variant_name(v);
    m.params().zero_grad();
    backward(loss);
    for (const auto& [name, t] : m.params().items()) {
      double norm = 0.0;
      for (double g : t.grad()) norm += g * g;
      EXPECT_GT(norm, 0.0) << variant_name(v) << " " << name;
    }
  }
}

TEST(ModelTest, BatchedForwardMatchesSingleSentences) {
  for (VariantName v : kTranslationVariants) {
    const Model m(tiny_spec(v), 6);
    const Example a = m.prepare("the cat sat on the mat", "the dog");
    const Example b = m.prepare("hi", "a longer target sentence here");
    const Example* both[] = {&a, &b};
    const Example* only_a[] = {&a};
    const Example* only_b[] = {&b};
    const ForwardOutput fb = m.forward(both);
    const ForwardOutput fa = m.forward(only_a), fo = m.forward(only_b);
    ASSERT_EQ(fb.logits.rows(), fa.logits.rows() + fo.logits.rows()) << variant_name(v);
    for (std::size_t r = 0; r < fa.logits.rows(); ++r) {
      const auto x = row(fb.logits, r), y = row(fa.logits, r);
      for (std::size_t c = 0; c < x.size(); ++c) EXPECT_NEAR(x[c], y[c], 1e-9) << variant_name(v);
    }
    for (std::size_t r = 0; r < fo.logits.rows(); ++r) {
      const auto x = row(fb.logits, fa.logits.rows() + r), y = row(fo.logits, r);
      for (std::size_t c = 0; c < x.size(); ++c) EXPECT_NEAR(x[c], y[c], 1e-9) << variant_name(v);
    }
  }
}

TEST(ModelTest, DecoderHiddensIgnoreLaterTargetBlocks) {
  for (VariantName v : {VariantName::kFixed, VariantName::kWdd, VariantName::kSdd}) {
    const Model m(tiny_spec(v), 7);
    const Example base = m.prepare("source words", "one two three four");
    const Example* one[] = {&base};
    const Tensor h = m.decoder_hiddens(one);
    for (std::size_t b = 1; b < base.target_blocks.size(); ++b) {
      auto blocks = base.target_blocks;
      for (std::size_t c = b; c < blocks.size(); ++c) {
        for (auto& s : blocks[c]) s = s < 256 ? (s + 7) % 256 : s;
      }
      const Example changed = m.prepare_with_blocks("source words", blocks);
      const Example* other[] = {&changed};
      const Tensor h2 = m.decoder_hiddens(other);
      // Decoder position p reads target blocks < p.
      for (std::size_t r = 0; r <= b; ++r) EXPECT_EQ(row(h2, r), row(h, r)) << variant_name(v);
    }
  }
}

std::vector<std::int64_t> allowed_for(const Model& m) {
  std::vector<std::int64_t> allowed;
  if (uses_subwords(m.spec().name)) {
    for (std::size_t i = 0; i < small_vocab()->size(); ++i) allowed.push_back(static_cast<std::int64_t>(i));
  } else {
    for (std::int64_t b = 0; b < 256; ++b) allowed.push_back(b);
    if (m.upsampler() && m.upsampler()->config().variant == UpsampleVariant::kVariable) {
      allowed.push_back(kEow);
    }
  }
  allowed.push_back(m.ids().eos);
  return allowed;
}

TEST(ModelTest, TeacherForcingReproducesGreedyTranslation) {
  for (VariantName v : kTranslationVariants) {
    VariantSpec spec = tiny_spec(v);
    spec.up.lmax_bytes = 6;
    Model m(spec, 8);
    // Bias toward terminating so translations finish within the block budget.
    if (m.upsampler() && m.upsampler()->config().variant == UpsampleVariant::kVariable) {
      m.params().get("upsampler.output.b").mutable_values()[kEow] = 2.0;
      m.params().get("upsampler.output.b").mutable_values()[kEos] = 1.0;
    }
    for (const std::string src : {"the cat", "a b c d e", ""}) {
      const TranslationResult tr = m.translate(src, 6);
      const bool variable =
          m.upsampler() && m.upsampler()->config().variant == UpsampleVariant::kVariable;
      const bool fixed = m.upsampler() && m.upsampler()->config().variant == UpsampleVariant::kFixed;
      auto blocks = tr.blocks;
      std::vector<std::int64_t> decisions;
      if (variable) {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
          decisions.insert(decisions.end(), blocks[b].begin(), blocks[b].end());
          const bool last = b + 1 == blocks.size();
          std::int64_t term = kEow;
          if (last && !tr.truncated && !tr.empty_block_stop) term = kEos;
          // A full-length block may have been cut by the cap.
          decisions.push_back(blocks[b].size() == spec.up.lmax_bytes ? -1 : term);
        }
      } else if (fixed) {
        for (const auto& b : blocks) decisions.insert(decisions.end(), b.begin(), b.end());
        if (!tr.truncated) {
          if (blocks.empty() || blocks.back().size() == spec.down.k) blocks.emplace_back();
          blocks.back().push_back(kEos);
          decisions.push_back(kEos);
        }
      } else {
        for (const auto& b : blocks) decisions.push_back(b[0]);
        if (!tr.truncated) {
          blocks.push_back({m.ids().eos});
          decisions.push_back(m.ids().eos);
        }
      }
      if (blocks.empty()) continue;
      const Example ex = m.prepare_with_blocks(src, blocks);
      const Example* one[] = {&ex};
      const ForwardOutput out = m.forward(one);
      const auto allowed = allowed_for(m);
      std::size_t s = 0;
      for (std::size_t r = 0; r < out.logits.rows() && s < decisions.size(); ++r) {
        if (fixed && out.targets[r] == m.ids().pad) continue;
        const std::int64_t want = decisions[s++];
        if (want < 0) continue;
        std::int64_t best = allowed.front();
        for (std::int64_t a : allowed) {
          if (out.logits.at(r, a) > out.logits.at(r, best)) best = a;
        }
        EXPECT_EQ(best, want) << variant_name(v) << " '" << src << "' step " << r;
      }
      EXPECT_EQ(s, decisions.size()) << variant_name(v);
    }
  }
}

TEST(ModelTest, TranslationRespectsCaps) {
  for (VariantName v : {VariantName::kWdd, VariantName::kSdd}) {
    const Model m(tiny_spec(v), 9);
    const TranslationResult tr = m.translate("some source text", 5);
    EXPECT_LE(tr.blocks.size(), 5u);
    for (const auto& b : tr.blocks) EXPECT_LE(b.size(), m.spec().up.lmax_bytes);
    EXPECT_TRUE(is_valid_utf8(tr.text));
  }
  const Model fixed(tiny_spec(VariantName::kFixed), 9);
  const TranslationResult tr = fixed.translate("", 3);
  for (const auto& b : tr.blocks) EXPECT_LE(b.size(), 4u);
}

TEST(ModelTest, ClassifierOutputsADistributionUnaffectedByPadding) {
  for (VariantName v : {VariantName::kChar, VariantName::kWdd, VariantName::kSdd, VariantName::kSubword}) {
    const Model m(tiny_spec(v, Task::kClassification), 10);
    EXPECT_FALSE(has_prefix(m.params(), "decoder"));
    EXPECT_FALSE(has_prefix(m.params(), "dec_down"));
    const auto probs = m.classify("the cat sat on the mat");
    ASSERT_EQ(probs.size(), 2u);
    EXPECT_NEAR(probs[0] + probs[1], 1.0, 1e-9);

    Example plain = m.prepare_classification("the cat sat", 1);
    Example padded = plain;
    padded.src_pad_blocks = 4;
    const Example* a[] = {&plain};
    const Example* b[] = {&padded};
    const Tensor la = m.classify_logits(a), lb = m.classify_logits(b);
    for (std::size_t i = 0; i < la.numel(); ++i) EXPECT_NEAR(la.at(i), lb.at(i), 1e-12) << variant_name(v);
  }
  const Model m(tiny_spec(VariantName::kWdd, Task::kClassification), 10);
  EXPECT_THROW(m.prepare_classification("x", 2), DataError);
  EXPECT_THROW(m.translate("x", 2), StateError);
  const Model t(tiny_spec(VariantName::kWdd), 10);
  EXPECT_THROW(t.classify("x"), ConfigError);
}

TEST(ModelTest, WordEmbeddingHasModelWidth) {
  for (VariantName v : {VariantName::kChar, VariantName::kFixed, VariantName::kWdd, VariantName::kSdd}) {
    const Model m(tiny_spec(v), 11);
    const auto e = m.word_embedding("cat");
    EXPECT_EQ(e.size(), 16u);
    EXPECT_NE(e, m.word_embedding("dog"));
  }
}

TEST(ModelTest, SameSeedSameParameters) {
  const Model a(tiny_spec(VariantName::kSdd), 12), b(tiny_spec(VariantName::kSdd), 12);
  const Model c(tiny_spec(VariantName::kSdd), 13);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& ta = a.params().items()[i].second;
    const auto& tb = b.params().items()[i].second;
    const auto& tc = c.params().items()[i].second;
    for (std::size_t j = 0; j < ta.numel(); ++j) {
      EXPECT_EQ(ta.at(j), tb.at(j));
      differs = differs || ta.at(j) != tc.at(j);
    }
  }
  EXPECT_TRUE(differs);
}

}  // namespace
}  // namespace blockpool
