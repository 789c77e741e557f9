#include "blockpool/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <utility>
#include <filesystem>
#include <limits>

#include "blockpool/checkpoint.hpp"
#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/run_config.hpp"

namespace blockpool {
namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("blockpool_training_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

VariantSpec small_spec(VariantName v) {
  VariantSpec s;
  s.name = v;
  s.model = tiny_preset();
  s.model.d_model = 16;
  s.model.n_heads = 2;
  s.model.d_ff = 24;
  s.down.d_char = 8;
  s.up.d_slice = 4;
  s.up.d_char_embed = 6;
  s.up.lstm_hidden = 12;
  s.up.lmax_bytes = 12;
  if (uses_subwords(v) || v == VariantName::kSdd) {
    static const auto vocab = std::make_shared<const SubwordVocab>(
        train_bpe({"the cat sat", "a dog ran", "the dog sat on a mat"}, 280, 5));
    s.vocab = vocab;
  }
  return s;
}

ParallelCorpus tiny_corpus() {
  ParallelCorpus c;
  c.src = {"the cat", "a dog", "the mat", "a cat sat", "dog ran", "the dog", "cat", "sat on"};
  c.tgt = {"le chat", "un chien", "le tapis", "un chat", "chien", "le chien", "chat", "sur"};
  return c;
}

TEST(ScheduleTest, WarmupThenLinearDecay) {
  TrainConfig c;
  c.lr = 1e-3;
  c.warmup_steps = 10;
  c.max_steps = 110;
  EXPECT_EQ(learning_rate(c, 0), 0.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 5), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 10), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 60), 5e-4);
  EXPECT_EQ(learning_rate(c, 110), 0.0);
  for (std::size_t s = 1; s < 110; ++s) {
    if (s < 10) EXPECT_LT(learning_rate(c, s - 1), learning_rate(c, s));
    if (s > 10) EXPECT_GT(learning_rate(c, s - 1), learning_rate(c, s));
  }
}

TEST(EarlyStoppingTest, PatienceOneStopsAfterTwoValidations) {
  EarlyStopping e(1, true);
  EXPECT_TRUE(e.observe(5.0));
  EXPECT_FALSE(e.should_stop());
  EXPECT_FALSE(e.observe(5.0));
  EXPECT_TRUE(e.should_stop());
  EXPECT_EQ(e.observations(), 2u);

  EarlyStopping loss(2, false);
  EXPECT_TRUE(loss.observe(3.0));
  EXPECT_TRUE(loss.observe(2.0));
  EXPECT_FALSE(loss.observe(2.5));
  EXPECT_FALSE(loss.should_stop());
  EXPECT_TRUE(loss.observe(1.0));
  EXPECT_DOUBLE_EQ(loss.best(), 1.0);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  c.batch_size = 10;
  c.grad_accum = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.grad_accum = 5;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.micro_batch(), 2u);
  EXPECT_THROW(parse_eval_metric("rouge"), ConfigError);
}

TEST(AdamWTest, FirstStepMovesEachCoordinateByLr) {
  ParameterSet params;
  Tensor p = params.add("p", Tensor::from({3}, {1.0, -2.0, 0.5}, true));
  p.grad()[0] = 4.0;
  p.grad()[1] = -0.25;
  p.grad()[2] = 0.0;
  TrainConfig c;
  AdamW opt(params, c);
  opt.step(0.1);
  EXPECT_NEAR(p.at(0), 0.9, 1e-8);
  EXPECT_NEAR(p.at(1), -1.9, 1e-8);
  EXPECT_EQ(p.at(2), 0.5);
  EXPECT_EQ(opt.steps(), 1u);
  for (double g : p.grad()) EXPECT_EQ(g, 0.0);
}

TEST(AdamWTest, ZeroGradientLeavesParameterUnchanged) {
  ParameterSet params;
  Tensor p = params.add("p", Tensor::from({2}, {1.0, 2.0}, true));
  TrainConfig c;
  AdamW opt(params, c);
  for (int i = 0; i < 3; ++i) opt.step(0.1);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), 2.0);
}

TEST(GradAccumTest, MicroBatchesMatchOneBatch) {
  for (VariantName v : {VariantName::kSdd, VariantName::kFixed, VariantName::kSubword}) {
    Model a(small_spec(v), 3), b(small_spec(v), 3);
    const Dataset ds = build_translation_dataset(a, tiny_corpus(), {});
    std::vector<const Example*> batch;
    for (const Example& ex : ds.train) batch.push_back(&ex);
    const double la = accumulate_gradients(a, batch, 1, nullptr);
    const double lb = accumulate_gradients(b, batch, 4, nullptr);
    EXPECT_NEAR(la, lb, 1e-12);
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      const Tensor ga = a.params().items()[i].second, gb = b.params().items()[i].second;
      for (std::size_t j = 0; j < ga.numel(); ++j) {
        ASSERT_NEAR(std::as_const(ga).grad()[j], std::as_const(gb).grad()[j], 1e-9)
            << variant_name(v) << " " << a.params().items()[i].first;
      }
    }
  }
}

TEST(DataTest, LineCountMismatchNamesBothCounts) {
  const std::string dir = temp_dir("mismatch");
  write_file(dir + "/a.txt", "one\ntwo\nthree\n");
  write_file(dir + "/b.txt", "uno\ndos\n");
  try {
    load_parallel(dir + "/a.txt", dir + "/b.txt");
    FAIL();
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("3"), std::string::npos);
    EXPECT_NE(what.find("2"), std::string::npos);
  }
}

TEST(DataTest, LabeledCorpus) {
  const LabeledCorpus c = parse_labeled("pos\tgreat film\nneg\tawful\n\npos\tfine\n");
  EXPECT_EQ(c.size(), 3u);
  EXPECT_EQ(label_set(c), (std::vector<std::string>{"neg", "pos"}));
  EXPECT_THROW(parse_labeled("no tab here\n"), DataError);
}

TEST(DataTest, UnrepresentablePairsAreSkipped) {
  VariantSpec s = small_spec(VariantName::kWdd);
  s.up.lmax_bytes = 4;
  const Model m(s, 1);
  ParallelCorpus c;
  c.src = {"a b", "x y"};
  c.tgt = {"ok ok", "extraordinary"};
  const Dataset ds = build_translation_dataset(m, c, c);
  EXPECT_EQ(ds.train.size(), 1u);
  EXPECT_EQ(ds.valid.size(), 1u);
  EXPECT_EQ(ds.skipped, 2u);
  EXPECT_EQ(ds.valid_tgt, std::vector<std::string>{"ok ok"});
}

TEST(TrainTest, NonFiniteLossAbortsWithStep) {
  Model m(small_spec(VariantName::kChar), 2);
  const Dataset ds = build_translation_dataset(m, tiny_corpus(), tiny_corpus());
  m.params().get("output.b").mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c = desk_train_preset();
  c.batch_size = 4;
  c.grad_accum = 1;
  c.max_steps = 3;
  c.eval_every = 3;
  MetricsLog log;
  try {
    train_model(m, ds, c, log);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(TrainTest, LossDecreasesAndLogIsWritten) {
  Model m(small_spec(VariantName::kSdd), 4);
  const Dataset ds = build_translation_dataset(m, tiny_corpus(), tiny_corpus());
  TrainConfig c = desk_train_preset();
  c.batch_size = 8;
  c.grad_accum = 2;
  c.lr = 3e-3;
  c.warmup_steps = 5;
  c.max_steps = 60;
  c.eval_every = 20;
  c.log_every = 10;
  c.eval_metric = EvalMetric::kLoss;
  const double before = mean_loss(m, ds.valid);
  MetricsLog log;
  std::size_t bests = 0;
  TrainHooks hooks;
  hooks.on_best = [&](const Model&, std::size_t) { ++bests; };
  const TrainResult r = train_model(m, ds, c, log, hooks);
  EXPECT_EQ(r.steps, 60u);
  EXPECT_EQ(r.validations, 3u);
  EXPECT_GE(bests, 1u);
  const double after = mean_loss(m, ds.valid);
  EXPECT_LT(after, before * 0.7);
  EXPECT_NEAR(after, r.best_metric, 1e-12);
  const std::string tsv = log.to_tsv();
  EXPECT_EQ(tsv.rfind("step\tsplit\tmetric\tvalue\n", 0), 0u);
  EXPECT_NE(tsv.find("\tvalid\tloss\t"), std::string::npos);
}

TEST(TrainTest, EarlyStoppingRestoresBestParameters) {
  Model m(small_spec(VariantName::kChar), 5);
  const Dataset ds = build_translation_dataset(m, tiny_corpus(), tiny_corpus());
  TrainConfig c = desk_train_preset();
  c.batch_size = 4;
  c.grad_accum = 1;
  c.max_steps = 50;
  c.eval_every = 5;
  c.patience = 1;
  MetricsLog log;
  std::vector<double> at_best;
  TrainHooks hooks;
  // First validation is the best; the second never improves.
  hooks.validate = [](const Model&, std::size_t step) { return step == 5 ? 1.0 : 0.5; };
  hooks.on_best = [&](const Model& model, std::size_t) {
    const auto v = model.params().items()[0].second.values();
    at_best.assign(v.begin(), v.end());
  };
  const TrainResult r = train_model(m, ds, c, log, hooks);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.validations, 2u);
  EXPECT_EQ(r.steps, 10u);
  EXPECT_EQ(r.best_step, 5u);
  const auto v = m.params().items()[0].second.values();
  EXPECT_EQ(std::vector<double>(v.begin(), v.end()), at_best);
}

TEST(TrainTest, SameSeedSameLog) {
  auto run = [] {
    Model m(small_spec(VariantName::kFixed), 6);
    const Dataset ds = build_translation_dataset(m, tiny_corpus(), tiny_corpus());
    TrainConfig c = desk_train_preset();
    c.batch_size = 4;
    c.grad_accum = 2;
    c.max_steps = 12;
    c.eval_every = 6;
    c.log_every = 2;
    c.eval_metric = EvalMetric::kAccuracy;
    c.seed = 17;
    MetricsLog log;
    train_model(m, ds, c, log);
    return log.to_tsv() + serialize_checkpoint(m);
  };
  EXPECT_EQ(run(), run());
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const std::string dir = temp_dir("roundtrip");
  for (VariantName v : {VariantName::kSdd, VariantName::kBufferedFixed, VariantName::kTwoStepSubword}) {
    VariantSpec s = small_spec(v);
    const Model m(s, 8);
    const std::string path = dir + "/" + variant_name(v) + ".ckpt";
    save_checkpoint(m, path);
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded->spec().name, v);
    ASSERT_EQ(loaded->params().size(), m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      const auto a = m.params().items()[i].second.values();
      const auto b = loaded->params().items()[i].second.values();
      ASSERT_EQ(a.size(), b.size());
      EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    }
    EXPECT_EQ(serialize_checkpoint(*loaded), serialize_checkpoint(m));
    EXPECT_EQ(loaded->translate("the cat", 4).text, m.translate("the cat", 4).text);
    EXPECT_FALSE(fs::exists(path + ".tmp"));
  }
}

TEST(CheckpointTest, CorruptionIsDetected) {
  const Model m(small_spec(VariantName::kFixed), 9);
  const std::string bytes = serialize_checkpoint(m);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 5)), CheckpointError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 30)), CheckpointError);
  std::string wrong_version = bytes;
  wrong_version.replace(wrong_version.find(" 1\n"), 3, " 7\n");
  EXPECT_THROW(parse_checkpoint(wrong_version), CheckpointError);
  EXPECT_THROW(parse_checkpoint("hello"), CheckpointError);

  // Different width: the shapes no longer agree.
  VariantSpec wide = small_spec(VariantName::kFixed);
  wide.model.d_model = 32;
  const std::string dir = temp_dir("corrupt");
  save_checkpoint(Model(wide, 1), dir + "/wide.ckpt");
  Model target(small_spec(VariantName::kFixed), 1);
  EXPECT_THROW(load_checkpoint_into(target, dir + "/wide.ckpt"), CheckpointError);
}

TEST(CheckpointTest, VariantGuard) {
  const std::string dir = temp_dir("guard");
  save_checkpoint(Model(small_spec(VariantName::kWdd), 1), dir + "/wdd.ckpt");
  Model fixed(small_spec(VariantName::kFixed), 1);
  try {
    load_checkpoint_into(fixed, dir + "/wdd.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("wdd"), std::string::npos);
  }
  Model wdd(small_spec(VariantName::kWdd), 2);
  EXPECT_NO_THROW(load_checkpoint_into(wdd, dir + "/wdd.ckpt"));
}

TEST(RunConfigTest, ParseAndResolve) {
  const RunConfig c = RunConfig::parse(
      "# comment\nseed = 7\nvariant = buffixed\nmodel.d_model = 24\nmodel.n_heads=2\n"
      "downsampler.conv = 5:0, 3:12\ntrain.batch_size = 16 # trailing\ntrain.grad_accum = 4\n");
  const ResolvedRun r = resolve_run(c);
  EXPECT_EQ(r.seed, 7u);
  EXPECT_EQ(r.spec.name, VariantName::kBufferedFixed);
  EXPECT_EQ(r.spec.model.d_model, 24u);
  ASSERT_EQ(r.spec.down.conv.size(), 2u);
  EXPECT_EQ(r.spec.down.conv[0].width, 5u);
  EXPECT_EQ(r.spec.down.conv[1].channels, 12u);
  EXPECT_EQ(r.train.batch_size, 16u);
  EXPECT_EQ(r.train.seed, 7u);
}

TEST(RunConfigTest, Errors) {
  EXPECT_THROW(RunConfig::parse("seed = 1\nseed = 2\n"), ParseError);
  EXPECT_THROW(RunConfig::parse("just words\n"), ParseError);
  EXPECT_THROW(resolve_run(RunConfig::parse("variant = sdd\n")), ConfigError);
  EXPECT_THROW(resolve_run(RunConfig::parse("seed = 1\nmodel.colour = red\n")), ConfigError);
  EXPECT_THROW(resolve_run(RunConfig::parse("seed = 1\ntrain.lr = fast\n")), ConfigError);
  RunConfig c = RunConfig::parse("seed = 1\n");
  EXPECT_THROW(c.apply_override("nokey"), ConfigError);
  c.apply_override("train.max_steps=5");
  EXPECT_EQ(resolve_run(c).train.max_steps, 5u);
}

TEST(RunConfigTest, RelativePathsFollowTheConfigFile) {
  const std::string dir = temp_dir("paths");
  write_file(dir + "/run.cfg", "seed = 1\ndata.train_src = data/a.txt\noutput.dir = out\n");
  const ResolvedRun r = resolve_run(RunConfig::load(dir + "/run.cfg"));
  EXPECT_EQ(r.data.train_src, (fs::path(dir) / "data/a.txt").string());
  EXPECT_EQ(r.output_dir, (fs::path(dir) / "out").string());
}

TEST(RunConfigTest, SpecRoundTrip) {
  VariantSpec s = small_spec(VariantName::kSdd);
  s.up.conditioning = Conditioning::kRepeat;
  s.down.conv = {{5, 0}, {3, 7}};
  const VariantSpec back = spec_from_config(RunConfig::parse(spec_to_config(s).to_text()), s.vocab);
  EXPECT_EQ(spec_to_config(back).to_text(), spec_to_config(s).to_text());
}

}  // namespace
}  // namespace blockpool
