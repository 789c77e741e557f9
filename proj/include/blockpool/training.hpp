#pragma once

// Data loading, AdamW with warmup and linear decay, gradient accumulation,
// validation with early stopping, and the metrics log.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blockpool/model.hpp"

namespace blockpool {

enum class EvalMetric { kBleu, kAccuracy, kLoss };
std::string eval_metric_name(EvalMetric m);
EvalMetric parse_eval_metric(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 128;  // effective batch
  std::size_t grad_accum = 4;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t warmup_steps = 10000;
  std::size_t patience = 10;
  std::size_t max_steps = 100000;
  std::size_t eval_every = 1000;
  std::size_t log_every = 50;
  EvalMetric eval_metric = EvalMetric::kBleu;
  std::size_t valid_limit = 200;  // sentences translated for BLEU
  std::size_t max_blocks = 256;   // translation budget during validation
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t micro_batch() const { return batch_size / grad_accum; }
};

// Original recipe (large batches, 10k warmup).
TrainConfig paper_train_preset();
// Small batches and a short warmup for CPU runs.
TrainConfig desk_train_preset();

// Learning rate of update number `step` (1-based; step 0 gives 0): linear
// warmup to cfg.lr at warmup_steps, then linear decay to 0 at max_steps.
double learning_rate(const TrainConfig& cfg, std::size_t step);

// Decoupled weight decay Adam over every tensor of a parameter set.
class AdamW {
 public:
  AdamW(ParameterSet& params, const TrainConfig& cfg);
  // Applies the accumulated gradients, then clears them.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  ParameterSet& params_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, bool higher_is_better)
      : patience_(patience), higher_is_better_(higher_is_better) {}

  // Records a validation result; true when it is a new best.
  bool observe(double metric);
  bool should_stop() const { return patience_ > 0 && bad_ >= patience_; }
  double best() const { return best_; }
  std::size_t observations() const { return observations_; }

 private:
  std::size_t patience_;
  bool higher_is_better_;
  std::size_t bad_ = 0;
  std::size_t observations_ = 0;
  double best_ = 0.0;
};

struct MetricRecord {
  std::size_t step;
  std::string split;
  std::string metric;
  double value;
};

// step, split, metric, value rows.
class MetricsLog {
 public:
  void add(std::size_t step, const std::string& split, const std::string& metric, double value);
  const std::vector<MetricRecord>& records() const { return records_; }
  std::string to_tsv() const;
  void write(const std::string& path) const;

 private:
  std::vector<MetricRecord> records_;
};

struct ParallelCorpus {
  std::vector<std::string> src, tgt;
  std::size_t size() const { return src.size(); }
};

// Line-aligned files; a line-count mismatch is a DataError naming both counts.
ParallelCorpus load_parallel(const std::string& src_path, const std::string& tgt_path);

struct LabeledCorpus {
  std::vector<std::string> texts;
  std::vector<std::string> labels;
  std::size_t size() const { return texts.size(); }
};

// `label<TAB>text` lines.
LabeledCorpus load_labeled(const std::string& path);
LabeledCorpus parse_labeled(const std::string& text);
// Sorted distinct labels.
std::vector<std::string> label_set(const LabeledCorpus& corpus);

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> valid;
  // Translation validation text, parallel to `valid`.
  std::vector<std::string> valid_src, valid_tgt;
  std::size_t skipped = 0;  // pairs the model cannot represent
};

// Pairs that fail preparation (for example a word longer than the upsampler
// cap) are skipped and counted.
Dataset build_translation_dataset(const Model& model, const ParallelCorpus& train,
                                  const ParallelCorpus& valid);
Dataset build_classification_dataset(const Model& model, const LabeledCorpus& train,
                                     const LabeledCorpus& valid);

// Greedy translations of every source line.
std::vector<std::string> translate_all(const Model& model, const std::vector<std::string>& sources,
                                       std::size_t max_blocks);

// Fraction of loss positions whose argmax equals the target (teacher forcing).
double teacher_forced_accuracy(const Model& model, const std::vector<Example>& examples,
                               std::size_t micro_batch = 32);
// Mean cross-entropy per loss position.
double mean_loss(const Model& model, const std::vector<Example>& examples,
                 std::size_t micro_batch = 32);
std::vector<std::int64_t> predict_labels(const Model& model, const std::vector<Example>& examples,
                                         std::size_t micro_batch = 32);

// One optimizer update over `batch`, split into grad_accum micro-batches whose
// cross-entropy sums are divided by the target count of the whole batch.
// Returns the batch loss. Throws NumericError on a non-finite loss.
double accumulate_gradients(Model& model, const std::vector<const Example*>& batch,
                            std::size_t grad_accum, Rng* dropout_rng);

double validation_metric(const Model& model, const Dataset& data, const TrainConfig& cfg);

struct TrainResult {
  std::size_t steps = 0;
  std::size_t validations = 0;
  double best_metric = 0.0;
  std::size_t best_step = 0;
  bool stopped_early = false;
};

struct TrainHooks {
  // Called after a new best validation result (e.g. to write a checkpoint).
  std::function<void(const Model&, std::size_t step)> on_best;
  // Replaces validation_metric when set.
  std::function<double(const Model&, std::size_t step)> validate;
};

// Trains until max_steps or early stopping, then restores the best
// parameters seen at validation.
TrainResult train_model(Model& model, const Dataset& data, const TrainConfig& cfg, MetricsLog& log,
                        const TrainHooks& hooks = {});

}  // namespace blockpool
