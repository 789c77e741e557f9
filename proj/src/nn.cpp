#include "blockpool/nn.hpp"

#include <cmath>

#include "blockpool/error.hpp"

namespace blockpool {

Tensor ParameterSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw StateError("duplicate parameter '" + name + "'");
  Tensor leaf = value.detach(true);
  items_.emplace_back(name, leaf);
  return leaf;
}

Tensor ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw StateError("missing parameter '" + name + "'");
}

bool ParameterSet::contains(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParameterSet::scalar_count() const { return scalar_count(""); }

std::size_t ParameterSet::scalar_count(const std::string& prefix) const {
  std::size_t total = 0;
  for (const auto& [n, t] : items_) {
    if (n.compare(0, prefix.size(), prefix) == 0) total += t.numel();
  }
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& [n, t] : items_) t.zero_grad();
}

Tensor init_weight(ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng) {
  return params.add(name, Tensor::normal(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
}

Tensor init_zeros(ParameterSet& params, const std::string& name, Shape shape) {
  return params.add(name, Tensor::zeros(std::move(shape)));
}

Tensor init_ones(ParameterSet& params, const std::string& name, Shape shape) {
  return params.add(name, Tensor::full(std::move(shape), 1.0));
}

Tensor init_embedding(ParameterSet& params, const std::string& name, std::size_t rows,
                      std::size_t dim, Rng& rng) {
  return params.add(name, Tensor::normal(rng, {rows, dim}, 1.0));
}

LinearLayer::LinearLayer(ParameterSet& params, const std::string& name, std::size_t in,
                         std::size_t out, Rng& rng)
    : w(init_weight(params, name + ".w", in, out, rng)),
      b(init_zeros(params, name + ".b", {out})) {}

LayerNormParams::LayerNormParams(ParameterSet& params, const std::string& name, std::size_t dim)
    : gain(init_ones(params, name + ".gain", {dim})), bias(init_zeros(params, name + ".bias", {dim})) {}

void sinusoid_row(std::size_t pos, std::size_t dim, double* out) {
  for (std::size_t i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    out[i] = std::sin(static_cast<double>(pos) * freq);
    if (i + 1 < dim) out[i + 1] = std::cos(static_cast<double>(pos) * freq);
  }
}

std::size_t argmax_row(const Tensor& x, std::size_t r) {
  const std::size_t n = x.cols();
  const auto v = x.values().subspan(r * n, n);
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

}  // namespace blockpool
