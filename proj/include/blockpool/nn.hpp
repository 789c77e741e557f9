#pragma once

// Parameter registry and small layer helpers shared by the model modules.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "blockpool/rng.hpp"
#include "blockpool/tensor.hpp"

namespace blockpool {

// Ordered, uniquely named trainable tensors. Registration order is the
// checkpoint order.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  // Scalars in parameters whose name starts with prefix.
  std::size_t scalar_count(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Normal(0, 1/sqrt(fan_in)) weight [in × out].
Tensor init_weight(ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng);
Tensor init_zeros(ParameterSet& params, const std::string& name, Shape shape);
Tensor init_ones(ParameterSet& params, const std::string& name, Shape shape);
Tensor init_embedding(ParameterSet& params, const std::string& name, std::size_t rows,
                      std::size_t dim, Rng& rng);

struct LinearLayer {
  Tensor w, b;
  LinearLayer() = default;
  LinearLayer(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
              Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct LayerNormParams {
  Tensor gain, bias;
  LayerNormParams() = default;
  LayerNormParams(ParameterSet& params, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

// Sinusoidal position code for position pos: [sin, cos] pairs with
// frequencies 10000^(-2i/d).
void sinusoid_row(std::size_t pos, std::size_t dim, double* out);

// Index of the largest value in row `r`; the first one on ties.
std::size_t argmax_row(const Tensor& x, std::size_t r);

// Applies dropout only when p > 0 and an rng is supplied.
inline Tensor maybe_dropout(const Tensor& x, double p, Rng* rng) {
  return (rng != nullptr && p > 0.0) ? dropout(x, p, *rng) : x;
}

}  // namespace blockpool
