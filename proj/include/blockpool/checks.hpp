#pragma once

// Built-in self checks behind `blockpool check`: attention masks, leak
// freedom of the decoder side and an end-to-end gradient check.

#include <cstdint>
#include <string>

#include "blockpool/model.hpp"

namespace blockpool {

struct CheckResult {
  bool passed = false;
  std::string detail;
};

// Small byte-model spec on `preset` ("tiny" or "base") with a BPE vocabulary
// trained on a built-in corpus.
VariantSpec check_spec(VariantName variant, const std::string& preset);

CheckResult check_mask();

// Perturbs target bytes of later blocks, and for the variable upsampler later
// gold bytes of the same block, and requires earlier logits to stay
// bit-identical. Fixed-length variants must also ignore their own block.
CheckResult check_leak(const Model& model);

// Finite differences over every parameter tensor of `model` on a two-sentence
// batch.
CheckResult check_grad(Model& model, std::size_t max_coords_per_tensor = 6, double tolerance = 1e-4);

}  // namespace blockpool
