// blockpool: vocabulary, segmentation, training, decoding, evaluation, probing
// and self checks from one command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "blockpool/checkpoint.hpp"
#include "blockpool/checks.hpp"
#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/kernels.hpp"
#include "blockpool/metrics.hpp"
#include "blockpool/probe.hpp"
#include "blockpool/run_config.hpp"
#include "blockpool/segmenter.hpp"
#include "blockpool/subword_vocab.hpp"
#include "blockpool/training.hpp"

namespace bp = blockpool;
namespace fs = std::filesystem;

namespace {

// BLOCKPOOL_THREADS caps worker threads; 0 or unset runs single-threaded.
std::size_t worker_threads() {
  const char* env = std::getenv("BLOCKPOOL_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 0) throw bp::UsageError(std::string("BLOCKPOOL_THREADS: bad value '") + env + "'");
  if (n == 0) return 1;
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min<std::size_t>(static_cast<std::size_t>(n), hw);
}

std::vector<std::size_t> parse_grid(const std::string& flag, const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& part : bp::split(text, ',')) {
    const std::string p = bp::trim(part);
    if (p.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(p, &used);
      if (used != p.size()) throw std::invalid_argument(p);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::logic_error&) {
      throw bp::UsageError(flag + ": bad value '" + p + "'");
    }
  }
  if (out.empty()) throw bp::UsageError(flag + ": empty grid");
  return out;
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    bp::write_file(out_path, text);
  }
}

// ---------------------------------------------------------------- vocab

struct VocabTrainArgs {
  std::string input, out;
  std::size_t size = 8000, max_len = 8;
  bool no_marker = false;
};

int run_vocab_train(const VocabTrainArgs& a) {
  const auto corpus = bp::read_lines(a.input);
  const bp::SubwordVocab v = bp::train_bpe(corpus, a.size, a.max_len, !a.no_marker);
  bp::save_vocab(v, a.out);
  const bp::CorpusStats s = bp::avg_downsampling_factor(v, corpus);
  std::cout << "size\tlmax\ttokens\tbytes\tavg_factor\n"
            << v.size() << "\t" << v.lmax() << "\t" << s.total_tokens << "\t" << s.total_bytes << "\t"
            << fmt(s.avg_factor) << "\n";
  return 0;
}

struct VocabTuneArgs {
  std::string input, out, size_grid = "2000,4000,8000,16000", lmax_grid = "4,5,6,7,8";
  double target = 4.0;
};

int run_vocab_tune(const VocabTuneArgs& a) {
  const auto corpus = bp::read_lines(a.input);
  const bp::TuneResult r = bp::tune_vocab(corpus, a.target, parse_grid("--size-grid", a.size_grid),
                                          parse_grid("--lmax-grid", a.lmax_grid), worker_threads());
  bp::save_vocab(r.vocab, a.out);
  std::cout << "size\tlmax\tactual_size\tavg_factor\tchosen\n";
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    const bp::TuneEntry& e = r.grid[i];
    std::cout << e.size << "\t" << e.lmax << "\t" << e.actual_size << "\t" << fmt(e.stats.avg_factor) << "\t"
              << (i == r.best ? "*" : "") << "\n";
  }
  return 0;
}

// -------------------------------------------------------------- segment

struct SegmentArgs {
  std::string method = "sdd", vocab, input, out;
  std::size_t k = 4;
};

bp::SegmenterConfig segmenter_config(const SegmentArgs& a, std::unique_ptr<bp::SubwordVocab>& holder) {
  if (a.input.empty()) throw bp::UsageError("--input is required");
  bp::SegmenterConfig c;
  c.method = bp::parse_method(a.method);
  c.k = a.k;
  if (c.method == bp::SegMethod::kSdd) {
    if (a.vocab.empty()) throw bp::UsageError("--vocab is required for the sdd method");
    holder = std::make_unique<bp::SubwordVocab>(bp::load_vocab(a.vocab));
    c.vocab = holder.get();
  }
  return c;
}

int run_segment(const SegmentArgs& a) {
  std::unique_ptr<bp::SubwordVocab> vocab;
  const bp::SegmenterConfig c = segmenter_config(a, vocab);
  std::string out;
  for (const std::string& line : bp::read_lines(a.input)) {
    const bp::PaddedSequence ps = bp::segment_text(bp::normalize_whitespace(line), c, false);
    std::string row;
    for (std::size_t len : ps.segmentation.lengths) row += (row.empty() ? "" : " ") + std::to_string(len);
    out += row + "\n";
  }
  emit(out, a.out);
  return 0;
}

int run_segment_report(const SegmentArgs& a) {
  std::unique_ptr<bp::SubwordVocab> vocab;
  const bp::SegmenterConfig c = segmenter_config(a, vocab);
  std::vector<std::string> corpus;
  for (const std::string& line : bp::read_lines(a.input)) corpus.push_back(bp::normalize_whitespace(line));
  emit(bp::consistency_report(corpus, c).to_tsv(), a.out);
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
  bp::RunConfig config = bp::RunConfig::load(a.config);
  for (const std::string& o : a.overrides) config.apply_override(o);
  bp::ResolvedRun run = bp::resolve_run(config);
  const bool classification = run.spec.task == bp::Task::kClassification;

  fs::create_directories(run.output_dir);
  const std::string resolved = config.to_text();
  bp::write_file(run.output_dir + "/config.resolved", resolved);
  std::cerr << "# resolved config\n" << resolved;

  bp::ParallelCorpus train_pairs, valid_pairs;
  bp::LabeledCorpus train_labeled, valid_labeled;
  std::vector<std::string> vocab_corpus;
  if (classification) {
    if (run.data.train.empty() || run.data.valid.empty()) {
      throw bp::ConfigError("classification needs data.train and data.valid");
    }
    train_labeled = bp::load_labeled(run.data.train);
    valid_labeled = bp::load_labeled(run.data.valid);
    for (auto& t : train_labeled.texts) t = bp::normalize_whitespace(t);
    for (auto& t : valid_labeled.texts) t = bp::normalize_whitespace(t);
    if (run.spec.labels.empty()) run.spec.labels = bp::label_set(train_labeled);
    vocab_corpus = train_labeled.texts;
  } else {
    if (run.data.train_src.empty() || run.data.train_tgt.empty() || run.data.valid_src.empty() ||
        run.data.valid_tgt.empty()) {
      throw bp::ConfigError("translation needs data.train_src, data.train_tgt, data.valid_src and data.valid_tgt");
    }
    train_pairs = bp::load_parallel(run.data.train_src, run.data.train_tgt);
    valid_pairs = bp::load_parallel(run.data.valid_src, run.data.valid_tgt);
    for (auto* c : {&train_pairs, &valid_pairs}) {
      for (auto& s : c->src) s = bp::normalize_whitespace(s);
      for (auto& s : c->tgt) s = bp::normalize_whitespace(s);
    }
    vocab_corpus = train_pairs.src;
    vocab_corpus.insert(vocab_corpus.end(), train_pairs.tgt.begin(), train_pairs.tgt.end());
  }

  if (bp::uses_subwords(run.spec.name) || run.spec.name == bp::VariantName::kSdd) {
    if (!run.data.vocab.empty()) {
      run.spec.vocab = std::make_shared<const bp::SubwordVocab>(bp::load_vocab(run.data.vocab));
    } else {
      if (run.vocab_size == 0 || run.vocab_lmax == 0) {
        throw bp::ConfigError("variant " + bp::variant_name(run.spec.name) +
                              " needs data.vocab or vocab.size and vocab.lmax");
      }
      run.spec.vocab = std::make_shared<const bp::SubwordVocab>(
          bp::train_bpe(vocab_corpus, run.vocab_size, run.vocab_lmax));
    }
    bp::save_vocab(*run.spec.vocab, run.output_dir + "/vocab.txt");
  }

  bp::Model model(run.spec, run.seed);
  const bp::Dataset data = classification
                               ? bp::build_classification_dataset(model, train_labeled, valid_labeled)
                               : bp::build_translation_dataset(model, train_pairs, valid_pairs);
  std::cerr << "# " << bp::variant_name(run.spec.name) << ": " << model.params().scalar_count()
            << " parameters, " << data.train.size() << " train / " << data.valid.size() << " valid examples";
  if (data.skipped > 0) std::cerr << ", " << data.skipped << " pairs skipped";
  std::cerr << "\n";

  const std::string ckpt = run.output_dir + "/model.ckpt";
  bp::MetricsLog log;
  bp::TrainHooks hooks;
  hooks.on_best = [&](const bp::Model& m, std::size_t step) {
    bp::save_checkpoint(m, ckpt);
    std::cerr << "# step " << step << ": new best, checkpoint written\n";
  };
  const bp::TrainResult r = bp::train_model(model, data, run.train, log, hooks);
  log.write(run.output_dir + "/metrics.tsv");
  std::cout << "steps\tvalidations\tbest_step\tbest_" << bp::eval_metric_name(run.train.eval_metric)
            << "\tstopped_early\n"
            << r.steps << "\t" << r.validations << "\t" << r.best_step << "\t" << fmt(r.best_metric) << "\t"
            << (r.stopped_early ? "yes" : "no") << "\n";
  return 0;
}

// ------------------------------------------------------ translate/classify

struct TranslateArgs {
  std::string ckpt, input, out;
  std::size_t max_blocks = 256;
};

int run_translate(const TranslateArgs& a) {
  const auto model = bp::load_checkpoint(a.ckpt);
  std::string out;
  std::size_t truncated = 0, repaired = 0;
  for (const std::string& line : bp::read_lines(a.input)) {
    const bp::TranslationResult r = model->translate(bp::normalize_whitespace(line), a.max_blocks);
    truncated += r.truncated ? 1 : 0;
    repaired += r.invalid_utf8 ? 1 : 0;
    out += r.text + "\n";
  }
  emit(out, a.out);
  if (truncated > 0) std::cerr << "# " << truncated << " translations hit --max-blocks\n";
  if (repaired > 0) std::cerr << "# " << repaired << " translations had invalid UTF-8 repaired\n";
  return 0;
}

struct ClassifyArgs {
  std::string ckpt, input, out;
};

int run_classify(const ClassifyArgs& a) {
  const auto model = bp::load_checkpoint(a.ckpt);
  const auto& labels = model->spec().labels;
  std::string out;
  for (const std::string& line : bp::read_lines(a.input)) {
    const std::vector<double> p = model->classify(bp::normalize_whitespace(line));
    const std::size_t best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    out += labels.at(best) + "\t" + fmt(p[best]) + "\n";
  }
  emit(out, a.out);
  return 0;
}

// ------------------------------------------------------------- evaluate

int run_eval_bleu(const std::string& hyp, const std::string& ref) {
  std::cout << bp::bleu_tsv(bp::corpus_bleu(bp::read_lines(hyp), bp::read_lines(ref)));
  return 0;
}

// Predictions may carry a trailing `\tprobability` column (classify output).
std::vector<std::string> first_column(const std::vector<std::string>& lines) {
  std::vector<std::string> out;
  for (const std::string& l : lines) out.push_back(l.substr(0, l.find('\t')));
  return out;
}

int run_eval_accuracy(const std::string& pred, const std::string& gold) {
  const double acc = bp::accuracy(first_column(bp::read_lines(pred)), first_column(bp::read_lines(gold)));
  std::cout << "accuracy\t" << fmt(acc) << "\n";
  return 0;
}

int run_eval_ablation(const std::string& results) {
  std::cout << bp::ablation_tsv(bp::ablation_report(bp::parse_results_tsv(bp::read_file(results))));
  return 0;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string ckpt, lexicon, train_corpus, vocab, out;
  std::size_t baseline_n = 10000, cap = 2000;
  std::uint64_t seed = 0;
};

int run_probe(const ProbeArgs& a) {
  const auto model = bp::load_checkpoint(a.ckpt);
  const bp::Lexicon lex = bp::Lexicon::load(a.lexicon);
  std::shared_ptr<const bp::SubwordVocab> vocab = model->spec().vocab;
  if (!a.vocab.empty()) vocab = std::make_shared<const bp::SubwordVocab>(bp::load_vocab(a.vocab));
  const auto eligible = bp::eligible_words(lex, vocab.get());
  const auto train_words = bp::corpus_words(bp::read_lines(a.train_corpus));
  bp::Rng rng(a.seed);
  const auto sets = bp::build_pair_sets(lex, eligible, train_words, rng, a.cap);
  bp::EmbeddingCache cache(*model);
  const bp::ProbeBaseline base = bp::random_pair_baseline(cache, eligible, a.baseline_n, a.seed);
  std::cerr << "# " << eligible.size() << " eligible words\n";
  emit(bp::z_scores(cache, sets, base).to_tsv(), a.out);
  return 0;
}

// ---------------------------------------------------------------- check

int report(const std::string& name, const bp::CheckResult& r) {
  std::cout << (r.passed ? "PASS" : "FAIL") << "\t" << name << "\t" << r.detail << "\n";
  return r.passed ? 0 : 1;
}

int run_check_grad(const std::string& preset, const std::string& variant, std::uint64_t seed) {
  bp::Model m(bp::check_spec(bp::parse_variant(variant), preset), seed);
  return report("grad", bp::check_grad(m));
}

int run_check_leak(const std::string& preset, const std::string& variant, std::uint64_t seed) {
  const bp::Model m(bp::check_spec(bp::parse_variant(variant), preset), seed);
  return report("leak " + variant, bp::check_leak(m));
}

bool is_usage_error(const std::exception& e) {
  return dynamic_cast<const bp::UsageError*>(&e) != nullptr ||
         dynamic_cast<const bp::ConfigError*>(&e) != nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blockpool: byte-level translation models with pooled blocks"};
  app.require_subcommand(1);
  std::string simd;
  app.add_option("--simd", simd, "kernel variant: auto, scalar, avx2, neon (default: BLOCKPOOL_SIMD or auto)");

  std::function<int()> action;

  // vocab
  auto* vocab = app.add_subcommand("vocab", "train or tune a byte-level BPE vocabulary");
  vocab->require_subcommand(1);
  VocabTrainArgs vt;
  auto* vtrain = vocab->add_subcommand("train", "train a vocabulary of a given size");
  vtrain->add_option("--input", vt.input, "one sentence per line")->required()->check(CLI::ExistingFile);
  vtrain->add_option("--size", vt.size, "number of pieces, including the 256 bytes")->capture_default_str();
  vtrain->add_option("--max-len", vt.max_len, "longest piece in bytes")->capture_default_str();
  vtrain->add_option("--out", vt.out, "vocabulary file to write")->required();
  vtrain->add_flag("--no-word-marker", vt.no_marker, "do not attach spaces to the following word");
  vtrain->callback([&] { action = [&] { return run_vocab_train(vt); }; });

  VocabTuneArgs vn;
  auto* vtune = vocab->add_subcommand("tune", "pick size and max length closest to a downsampling factor");
  vtune->add_option("--input", vn.input, "one sentence per line")->required()->check(CLI::ExistingFile);
  vtune->add_option("--target", vn.target, "average bytes per token")->capture_default_str();
  vtune->add_option("--size-grid", vn.size_grid, "comma-separated sizes")->capture_default_str();
  vtune->add_option("--lmax-grid", vn.lmax_grid, "comma-separated max lengths")->capture_default_str();
  vtune->add_option("--out", vn.out, "vocabulary file to write")->required();
  vtune->callback([&] { action = [&] { return run_vocab_tune(vn); }; });

  // segment
  SegmentArgs sa, sr;
  auto* segment = app.add_subcommand("segment", "block lengths per sentence, or a consistency report");
  auto add_segment_opts = [](CLI::App* c, SegmentArgs& sa) {
    c->add_option("--method", sa.method, "fixed, buffixed, wdd or sdd")
        ->capture_default_str()
        ->check(CLI::IsMember({"fixed", "buffixed", "buffered_fixed", "wdd", "sdd"}));
    c->add_option("--k", sa.k, "block size of the fixed methods")->capture_default_str();
    c->add_option("--vocab", sa.vocab, "vocabulary for sdd")->check(CLI::ExistingFile);
    c->add_option("--input", sa.input, "one sentence per line (required)")->check(CLI::ExistingFile);
    c->add_option("--out", sa.out, "output file (default: stdout)");
  };
  add_segment_opts(segment, sa);
  segment->require_subcommand(0, 1);
  auto* seg_report = segment->add_subcommand("report", "segmentation consistency report (TSV)");
  add_segment_opts(seg_report, sr);
  seg_report->callback([&] { action = [&] { return run_segment_report(sr); }; });
  segment->callback([&] {
    if (!action) action = [&] { return run_segment(sa); };
  });

  // train
  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model from a run configuration");
  train->add_option("--config", ta.config, "key = value configuration file")->required()->check(CLI::ExistingFile);
  train->add_option("--override", ta.overrides, "key=value, repeatable");
  train->callback([&] { action = [&] { return run_train(ta); }; });

  // translate
  TranslateArgs tr;
  auto* translate = app.add_subcommand("translate", "greedy translation of each input line");
  translate->add_option("--ckpt", tr.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--input", tr.input, "one sentence per line")->required()->check(CLI::ExistingFile);
  translate->add_option("--out", tr.out, "output file (default: stdout)");
  translate->add_option("--max-blocks", tr.max_blocks, "block budget per sentence")->capture_default_str();
  translate->callback([&] { action = [&] { return run_translate(tr); }; });

  // classify
  ClassifyArgs ca;
  auto* classify = app.add_subcommand("classify", "label and probability for each input line");
  classify->add_option("--ckpt", ca.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  classify->add_option("--input", ca.input, "one text per line")->required()->check(CLI::ExistingFile);
  classify->add_option("--out", ca.out, "output file (default: stdout)");
  classify->callback([&] { action = [&] { return run_classify(ca); }; });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "BLEU, accuracy and ablation deltas");
  evaluate->require_subcommand(1);
  std::string hyp, ref, pred, gold, results;
  auto* ebleu = evaluate->add_subcommand("bleu", "corpus BLEU-4");
  ebleu->add_option("--hyp", hyp, "hypotheses, one per line")->required()->check(CLI::ExistingFile);
  ebleu->add_option("--ref", ref, "references, one per line")->required()->check(CLI::ExistingFile);
  ebleu->callback([&] { action = [&] { return run_eval_bleu(hyp, ref); }; });
  auto* eacc = evaluate->add_subcommand("accuracy", "fraction of matching lines");
  eacc->add_option("--pred", pred, "predicted labels")->required()->check(CLI::ExistingFile);
  eacc->add_option("--gold", gold, "gold labels")->required()->check(CLI::ExistingFile);
  eacc->callback([&] { action = [&] { return run_eval_accuracy(pred, gold); }; });
  auto* eabl = evaluate->add_subcommand("ablation", "position, length and morpheme deltas");
  eabl->add_option("--results", results, "variant<TAB>score lines")->required()->check(CLI::ExistingFile);
  eabl->callback([&] { action = [&] { return run_eval_ablation(results); }; });

  // probe
  ProbeArgs pa;
  auto* probe = app.add_subcommand("probe", "word-pair similarity z-scores");
  probe->add_option("--ckpt", pa.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--lexicon", pa.lexicon, "word<TAB>lemma<TAB>synonyms")->required()->check(CLI::ExistingFile);
  probe->add_option("--train-corpus", pa.train_corpus, "text the model was trained on")
      ->required()
      ->check(CLI::ExistingFile);
  probe->add_option("--vocab", pa.vocab, "vocabulary for the single-token filter (default: the model's)")
      ->check(CLI::ExistingFile);
  probe->add_option("--baseline-n", pa.baseline_n, "random pairs in the baseline")->capture_default_str();
  probe->add_option("--cap", pa.cap, "pairs per set")->capture_default_str();
  probe->add_option("--seed", pa.seed, "sampling seed")->capture_default_str();
  probe->add_option("--out", pa.out, "output file (default: stdout)");
  probe->callback([&] { action = [&] { return run_probe(pa); }; });

  // check
  auto* check = app.add_subcommand("check", "built-in self checks");
  check->require_subcommand(1);
  std::string preset = "tiny", grad_variant = "sdd", leak_variant = "sdd";
  std::uint64_t check_seed = 1;
  auto* cgrad = check->add_subcommand("grad", "finite-difference check of the whole model");
  cgrad->add_option("--preset", preset, "tiny or base")->capture_default_str();
  cgrad->add_option("--variant", grad_variant, "model variant")->capture_default_str();
  cgrad->add_option("--seed", check_seed, "initialization seed")->capture_default_str();
  cgrad->callback([&] { action = [&] { return run_check_grad(preset, grad_variant, check_seed); }; });
  auto* cleak = check->add_subcommand("leak", "earlier logits ignore later target bytes");
  cleak->add_option("--preset", preset, "tiny or base")->capture_default_str();
  cleak->add_option("--variant", leak_variant, "model variant")->capture_default_str();
  cleak->add_option("--seed", check_seed, "initialization seed")->capture_default_str();
  cleak->callback([&] { action = [&] { return run_check_leak(preset, leak_variant, check_seed); }; });
  auto* cmask = check->add_subcommand("mask", "attention mask construction");
  cmask->callback([&] { action = [] { return report("mask", bp::check_mask()); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!simd.empty() && !bp::kernels::select(simd)) {
      throw bp::UsageError("--simd: variant '" + simd + "' is not available");
    }
    return action ? action() : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? 2 : 1;
  }
}
