#pragma once

// Central finite-difference gradient checking. Used by the unit tests and by
// the `check grad` command; it only evaluates the loss, so it is independent
// of every backward rule it validates.

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "blockpool/rng.hpp"
#include "blockpool/tensor.hpp"

namespace blockpool {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // Coordinates checked per tensor; all of them when the tensor is smaller.
  std::size_t max_coords_per_tensor = std::numeric_limits<std::size_t>::max();
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "name[index]: analytic vs numeric"
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

GradCheckResult check_gradients(NamedTensors params,
                                const std::function<Tensor()>& loss_fn,
                                const GradCheckOptions& options = {});

}  // namespace blockpool
