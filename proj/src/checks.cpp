#include "blockpool/checks.hpp"

#include <cstdio>
#include <cstring>

#include "blockpool/error.hpp"
#include "blockpool/gradcheck.hpp"

namespace blockpool {
namespace {

const std::vector<std::string>& check_corpus() {
  static const std::vector<std::string> c = {
      "the cat sat on the mat",
      "the dog sat on the log",
      "a small bird sang in the tall tree",
      "we walked along the river at night",
      "she takes the early train to work",
      "they took the long road home",
      "reading books makes the evenings shorter",
      "the children played in the garden",
      "he is writing a letter to his sister",
      "rain fell softly on the quiet town",
  };
  return c;
}

const std::vector<std::pair<std::string, std::string>>& check_pairs() {
  static const std::vector<std::pair<std::string, std::string>> p = {
      {"the cat sat", "le chat était assis"},
      {"a small bird sang", "un petit oiseau chantait dans l'arbre"},
      {"rain fell", "il pleuvait doucement"},
  };
  return p;
}

bool same_rows(const Tensor& a, const Tensor& b, std::size_t rows) {
  if (a.cols() != b.cols() || a.rows() < rows || b.rows() < rows) return false;
  return std::memcmp(a.values().data(), b.values().data(), rows * a.cols() * sizeof(double)) == 0;
}

std::vector<std::size_t> row_offsets(const Model& m, const Example& ex) {
  std::vector<std::size_t> out{0};
  if (const TwoStepUpsampler* up = m.upsampler()) {
    StepPlan plan;
    append_sentence_steps(plan, ex.target_blocks, up->config(), m.ids(), 0);
    for (std::size_t s : plan.steps_per_block) out.push_back(out.back() + s);
  } else {
    for (std::size_t b = 0; b < ex.target_blocks.size(); ++b) out.push_back(out.back() + 1);
  }
  return out;
}

std::int64_t perturb(std::int64_t s, std::int64_t pad) { return s < pad ? (s + 7) % pad : s; }

Tensor logits_of(const Model& m, const Example& ex) {
  NoGradGuard no_grad;
  const Example* one[] = {&ex};
  return m.forward(one).logits;
}

}  // namespace

VariantSpec check_spec(VariantName variant, const std::string& preset) {
  VariantSpec s;
  s.name = variant;
  if (preset == "tiny") {
    s.model = tiny_preset();
  } else if (preset == "base") {
    s.model = base_preset();
  } else {
    throw ArgumentError("unknown preset '" + preset + "' (expected tiny or base)");
  }
  s.model.dropout = 0.0;
  s.down.d_char = 16;
  s.up.d_slice = 16;
  s.up.d_char_embed = 16;
  s.up.lstm_hidden = 32;
  s.up.lmax_bytes = 24;
  if (uses_subwords(variant) || variant == VariantName::kSdd) {
    static const auto vocab = std::make_shared<const SubwordVocab>(train_bpe(check_corpus(), 300, 6));
    s.vocab = vocab;
  }
  return s;
}

CheckResult check_mask() {
  for (std::size_t n = 1; n <= 16; ++n) {
    const auto allow = build_block_causal_mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (allow[i][j] != (j <= i)) {
          return {false, "block-causal mask n=" + std::to_string(n) + " wrong at (" + std::to_string(i) +
                              "," + std::to_string(j) + ")"};
        }
      }
    }
  }
  BlockLayout layout;
  layout.offsets = {0, 1, 5, 7};
  auto sentence_of = [&](std::size_t r) {
    std::size_t s = 0;
    while (layout.offsets[s + 1] <= r) ++s;
    return s;
  };
  const auto dec = dense_mask(decoder_self_mask(layout), layout.rows());
  const auto enc = dense_mask(encoder_self_mask(layout), layout.rows());
  for (std::size_t i = 0; i < layout.rows(); ++i) {
    for (std::size_t j = 0; j < layout.rows(); ++j) {
      const bool same = sentence_of(i) == sentence_of(j);
      if (dec[i][j] != (same && j <= i)) {
        return {false, "decoder self mask wrong at (" + std::to_string(i) + "," + std::to_string(j) + ")"};
      }
      if (enc[i][j] != same) {
        return {false, "encoder self mask wrong at (" + std::to_string(i) + "," + std::to_string(j) + ")"};
      }
    }
  }
  return {true, "block-causal masks n=1..16 and a 3-sentence ragged batch"};
}

CheckResult check_leak(const Model& m) {
  if (m.spec().task != Task::kTranslation) throw ArgumentError("check_leak needs a translation model");
  const bool variable = m.upsampler() && m.upsampler()->config().variant == UpsampleVariant::kVariable;
  const std::int64_t pad = m.ids().pad;
  std::size_t comparisons = 0;
  bool changed_later = false;
  for (const auto& [src, tgt] : check_pairs()) {
    const Example base = m.prepare(src, tgt);
    const Tensor ref = logits_of(m, base);
    const auto offs = row_offsets(m, base);
    if (ref.rows() != offs.back()) {
      return {false, "logit rows " + std::to_string(ref.rows()) + " do not match the step plan"};
    }
    const auto& blocks = base.target_blocks;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      // (a) later blocks; fixed-length and one-token outputs also their own block.
      const std::size_t from = variable ? b + 1 : b;
      auto changed = blocks;
      for (std::size_t c = from; c < changed.size(); ++c) {
        for (auto& s : changed[c]) s = perturb(s, pad);
      }
      if (from < blocks.size()) {
        const Tensor out = logits_of(m, m.prepare_with_blocks(src, changed));
        ++comparisons;
        if (!same_rows(ref, out, offs[b + 1])) {
          return {false, "logits of block " + std::to_string(b) + " changed when later target bytes changed"};
        }
        changed_later = changed_later || !same_rows(ref, out, ref.rows());
      }
      // (b) later gold bytes inside the block.
      if (!variable) continue;
      for (std::size_t j = 0; j < blocks[b].size(); ++j) {
        auto inner = blocks;
        inner[b][j] = perturb(inner[b][j], pad);
        const Tensor out = logits_of(m, m.prepare_with_blocks(src, inner));
        ++comparisons;
        if (!same_rows(ref, out, offs[b] + j + 1)) {
          return {false, "step " + std::to_string(j) + " of block " + std::to_string(b) +
                             " changed when a later gold byte changed"};
        }
      }
    }
  }
  if (!changed_later) return {false, "perturbations never changed any logit; the check is vacuous"};
  return {true, std::to_string(comparisons) + " perturbations, earlier logits bit-identical"};
}

CheckResult check_grad(Model& m, std::size_t max_coords_per_tensor, double tolerance) {
  std::vector<Example> batch;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& [src, tgt] = check_pairs()[i];
    batch.push_back(m.spec().task == Task::kClassification
                        ? m.prepare_classification(src, static_cast<std::int64_t>(i % m.spec().labels.size()))
                        : m.prepare(src, tgt));
  }
  const Example* ptrs[] = {&batch[0], &batch[1]};
  NamedTensors params(m.params().items().begin(), m.params().items().end());
  GradCheckOptions opt;
  opt.max_coords_per_tensor = max_coords_per_tensor;
  // Key biases of attention get exactly zero gradient; see the transformer test.
  opt.floor = 1e-5;
  const GradCheckResult r = check_gradients(params, [&] { return m.loss(m.forward(ptrs)); }, opt);
  char buf[160];
  std::snprintf(buf, sizeof buf, "max rel err %.3e over %zu coords", r.max_rel_error, r.coords_checked);
  std::string detail = buf;
  if (!r.worst.empty()) detail += " (worst " + r.worst + ")";
  return {r.max_rel_error < tolerance, detail};
}

}  // namespace blockpool
