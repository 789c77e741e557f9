#include "blockpool/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "blockpool/error.hpp"
#include "blockpool/io.hpp"
#include "blockpool/metrics.hpp"

namespace blockpool {
namespace {

template <typename Fn>
void for_micro_batches(const std::vector<Example>& examples, std::size_t micro_batch, Fn&& fn) {
  const std::size_t step = std::max<std::size_t>(micro_batch, 1);
  std::vector<const Example*> ptrs;
  for (std::size_t i = 0; i < examples.size(); i += step) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(examples.size(), i + step); ++j) ptrs.push_back(&examples[j]);
    fn(std::span<const Example* const>(ptrs));
  }
}

std::vector<std::vector<double>> snapshot(const ParameterSet& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : params.items()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void restore(ParameterSet& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    Tensor t = params.items()[i].second;
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
  }
}

}  // namespace

std::string eval_metric_name(EvalMetric m) {
  switch (m) {
    case EvalMetric::kBleu: return "bleu";
    case EvalMetric::kAccuracy: return "accuracy";
    case EvalMetric::kLoss: return "loss";
  }
  return "?";
}

EvalMetric parse_eval_metric(const std::string& name) {
  if (name == "bleu") return EvalMetric::kBleu;
  if (name == "accuracy") return EvalMetric::kAccuracy;
  if (name == "loss") return EvalMetric::kLoss;
  throw ConfigError("unknown eval metric '" + name + "' (expected bleu, accuracy or loss)");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || grad_accum == 0) throw ConfigError("batch_size and grad_accum must be positive");
  if (batch_size % grad_accum != 0) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " is not divisible by grad_accum " +
                      std::to_string(grad_accum));
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (max_steps == 0) throw ConfigError("max_steps must be positive");
  if (eval_every == 0 || log_every == 0) throw ConfigError("eval_every and log_every must be positive");
}

TrainConfig paper_train_preset() { return TrainConfig{}; }

TrainConfig desk_train_preset() {
  TrainConfig c;
  c.batch_size = 32;
  c.grad_accum = 1;
  c.lr = 1e-3;
  c.warmup_steps = 200;
  c.max_steps = 2000;
  c.eval_every = 200;
  return c;
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.max_steps) return cfg.warmup_steps >= cfg.max_steps ? cfg.lr : 0.0;
  return cfg.lr * static_cast<double>(cfg.max_steps - step) /
         static_cast<double>(cfg.max_steps - cfg.warmup_steps);
}

AdamW::AdamW(ParameterSet& params, const TrainConfig& cfg)
    : params_(params),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {
  for (const auto& [name, t] : params_.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.items().size(); ++i) {
    Tensor p = params_.items()[i].second;
    auto values = p.mutable_values();
    const bool has_grad = p.has_grad();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      values[j] -= lr * (update + weight_decay_ * values[j]);
    }
  }
  params_.zero_grad();
}

bool EarlyStopping::observe(double metric) {
  ++observations_;
  const bool improved =
      observations_ == 1 || (higher_is_better_ ? metric > best_ : metric < best_);
  if (improved) {
    best_ = metric;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return improved;
}

void MetricsLog::add(std::size_t step, const std::string& split, const std::string& metric,
                     double value) {
  records_.push_back({step, split, metric, value});
}

std::string MetricsLog::to_tsv() const {
  std::string out = "step\tsplit\tmetric\tvalue\n";
  char buf[64];
  for (const MetricRecord& r : records_) {
    std::snprintf(buf, sizeof buf, "%.9g", r.value);
    out += std::to_string(r.step) + "\t" + r.split + "\t" + r.metric + "\t" + buf + "\n";
  }
  return out;
}

void MetricsLog::write(const std::string& path) const { write_file(path, to_tsv()); }

ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path) {
  ParallelCorpus c;
  c.src = read_lines(src_path);
  c.tgt = read_lines(tgt_path);
  if (c.src.size() != c.tgt.size()) {
    throw DataError("line count mismatch: " + src_path + " has " + std::to_string(c.src.size()) +
                    " lines, " + tgt_path + " has " + std::to_string(c.tgt.size()));
  }
  return c;
}

LabeledCorpus parse_labeled(const std::string& text) {
  LabeledCorpus c;
  std::size_t line_no = 0;
  for (const std::string& line : split_lines(text)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError("line " + std::to_string(line_no) + ": expected label<TAB>text");
    }
    c.labels.push_back(line.substr(0, tab));
    c.texts.push_back(line.substr(tab + 1));
  }
  return c;
}

LabeledCorpus load_labeled(const std::string& path) { return parse_labeled(read_file(path)); }

std::vector<std::string> label_set(const LabeledCorpus& corpus) {
  const std::set<std::string> s(corpus.labels.begin(), corpus.labels.end());
  return {s.begin(), s.end()};
}

Dataset build_translation_dataset(const Model& model, const ParallelCorpus& train,
                                  const ParallelCorpus& valid) {
  Dataset d;
  auto add = [&](const ParallelCorpus& c, std::vector<Example>& out, bool keep_text) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      try {
        out.push_back(model.prepare(c.src[i], c.tgt[i]));
      } catch (const SegmentationError&) {
        ++d.skipped;
        continue;
      } catch (const EncodingError&) {
        ++d.skipped;
        continue;
      }
      if (keep_text) {
        d.valid_src.push_back(c.src[i]);
        d.valid_tgt.push_back(c.tgt[i]);
      }
    }
  };
  add(train, d.train, false);
  add(valid, d.valid, true);
  return d;
}

Dataset build_classification_dataset(const Model& model, const LabeledCorpus& train,
                                     const LabeledCorpus& valid) {
  const auto& labels = model.spec().labels;
  auto index_of = [&](const std::string& label) {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) throw DataError("label '" + label + "' is not in the label map");
    return static_cast<std::int64_t>(it - labels.begin());
  };
  Dataset d;
  for (std::size_t i = 0; i < train.size(); ++i) {
    d.train.push_back(model.prepare_classification(train.texts[i], index_of(train.labels[i])));
  }
  for (std::size_t i = 0; i < valid.size(); ++i) {
    d.valid.push_back(model.prepare_classification(valid.texts[i], index_of(valid.labels[i])));
  }
  return d;
}

std::vector<std::string> translate_all(const Model& model, const std::vector<std::string>& sources,
                                       std::size_t max_blocks) {
  std::vector<std::string> out;
  out.reserve(sources.size());
  for (const std::string& s : sources) out.push_back(model.translate(s, max_blocks).text);
  return out;
}

double teacher_forced_accuracy(const Model& model, const std::vector<Example>& examples,
                               std::size_t micro_batch) {
  NoGradGuard no_grad;
  std::size_t hits = 0, total = 0;
  for_micro_batches(examples, micro_batch, [&](std::span<const Example* const> batch) {
    const ForwardOutput out = model.forward(batch);
    for (std::size_t r = 0; r < out.targets.size(); ++r) {
      const std::int64_t t = out.targets[r];
      if (t < 0 || t == out.ignore_index) continue;
      ++total;
      hits += static_cast<std::int64_t>(argmax_row(out.logits, r)) == t ? 1 : 0;
    }
  });
  if (total == 0) throw DataError("teacher_forced_accuracy: no target positions");
  return static_cast<double>(hits) / static_cast<double>(total);
}

double mean_loss(const Model& model, const std::vector<Example>& examples, std::size_t micro_batch) {
  NoGradGuard no_grad;
  double sum = 0.0;
  std::size_t count = 0;
  for_micro_batches(examples, micro_batch, [&](std::span<const Example* const> batch) {
    const ForwardOutput out = model.forward(batch);
    sum += model.loss(out, 1.0).item();
    count += out.counted_targets();
  });
  if (count == 0) throw DataError("mean_loss: no target positions");
  return sum / static_cast<double>(count);
}

std::vector<std::int64_t> predict_labels(const Model& model, const std::vector<Example>& examples,
                                         std::size_t micro_batch) {
  NoGradGuard no_grad;
  std::vector<std::int64_t> out;
  for_micro_batches(examples, micro_batch, [&](std::span<const Example* const> batch) {
    const Tensor logits = model.classify_logits(batch);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      out.push_back(static_cast<std::int64_t>(argmax_row(logits, r)));
    }
  });
  return out;
}

double accumulate_gradients(Model& model, const std::vector<const Example*>& batch,
                            std::size_t grad_accum, Rng* dropout_rng) {
  if (batch.empty()) throw ArgumentError("accumulate_gradients: empty batch");
  std::size_t targets = 0;
  for (const Example* ex : batch) targets += model.target_count(*ex);
  if (targets == 0) throw ArgumentError("batch has no loss positions");
  const double normalizer = static_cast<double>(targets);
  const std::size_t parts = std::max<std::size_t>(1, std::min(grad_accum, batch.size()));
  double total = 0.0;
  for (std::size_t a = 0; a < parts; ++a) {
    const std::size_t lo = a * batch.size() / parts, hi = (a + 1) * batch.size() / parts;
    const std::span<const Example* const> micro(batch.data() + lo, hi - lo);
    const Tensor loss = model.loss(model.forward(micro, dropout_rng), normalizer);
    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
    total += loss.item();
    backward(loss);
  }
  return total;
}

double validation_metric(const Model& model, const Dataset& data, const TrainConfig& cfg) {
  if (data.valid.empty()) throw DataError("no validation examples");
  const bool classification = model.spec().task == Task::kClassification;
  switch (cfg.eval_metric) {
    case EvalMetric::kLoss:
      return mean_loss(model, data.valid, cfg.micro_batch());
    case EvalMetric::kAccuracy: {
      if (!classification) return teacher_forced_accuracy(model, data.valid, cfg.micro_batch());
      std::vector<std::int64_t> gold;
      for (const Example& ex : data.valid) gold.push_back(ex.label);
      return accuracy(predict_labels(model, data.valid, cfg.micro_batch()), gold);
    }
    case EvalMetric::kBleu: {
      if (classification) throw ConfigError("bleu validation needs a translation model");
      const std::size_t n = std::min(cfg.valid_limit, data.valid_src.size());
      const std::vector<std::string> src(data.valid_src.begin(), data.valid_src.begin() + static_cast<std::ptrdiff_t>(n));
      const std::vector<std::string> ref(data.valid_tgt.begin(), data.valid_tgt.begin() + static_cast<std::ptrdiff_t>(n));
      return corpus_bleu(translate_all(model, src, cfg.max_blocks), ref).score;
    }
  }
  return 0.0;
}

TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& cfg, MetricsLog& log,
                        const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw DataError("no training examples");
  Rng root(cfg.seed);
  Rng order_rng = root.fork();
  Rng dropout_rng = root.fork();
  Rng* drop = model.spec().model.dropout > 0.0 ? &dropout_rng : nullptr;

  AdamW opt(model.params(), cfg);
  EarlyStopping stopper(cfg.patience, cfg.eval_metric != EvalMetric::kLoss);
  model.params().zero_grad();

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::vector<const Example*> batch;
  std::vector<std::vector<double>> best;
  TrainResult result;

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    batch.clear();
    while (batch.size() < cfg.batch_size) {
      if (cursor == order.size()) {
        order.resize(data.train.size());
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&data.train[order[cursor++]]);
    }
    double loss = 0.0;
    try {
      loss = accumulate_gradients(model, batch, cfg.grad_accum, drop);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = learning_rate(cfg, step);
    opt.step(lr);
    result.steps = step;
    if (step == 1 || step % cfg.log_every == 0) {
      log.add(step, "train", "loss", loss);
      log.add(step, "train", "lr", lr);
    }
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double metric = hooks.validate ? hooks.validate(model, step) : validation_metric(model, data, cfg);
      log.add(step, "valid", eval_metric_name(cfg.eval_metric), metric);
      ++result.validations;
      if (stopper.observe(metric)) {
        best = snapshot(model.params());
        result.best_metric = metric;
        result.best_step = step;
        if (hooks.on_best) hooks.on_best(model, step);
      }
      if (stopper.should_stop()) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (!best.empty()) restore(model.params(), best);
  return result;
}

}  // namespace blockpool
