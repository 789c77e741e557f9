#include "blockpool/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace blockpool {

GradCheckResult check_gradients(NamedTensors params,
                                const std::function<Tensor()>& loss_fn,
                                const GradCheckOptions& options) {
  for (auto& [name, t] : params) t.zero_grad();
  backward(loss_fn());

  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : params) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
  }

  Rng rng(options.seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, t] = params[pi];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = loss_fn().item();
      values[i] = saved - options.step;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi][i];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        if (rel >= result.max_rel_error) {
          std::ostringstream os;
          os << name << '[' << i << "]: analytic " << a << " vs numeric " << numeric;
          result.worst = os.str();
        }
      }
    }
  }
  return result;
}

}  // namespace blockpool
