#pragma once

// Minimal reverse-mode autodiff over dense float64 arrays.
//
// A Tensor is a cheap handle to a shared node holding values, an optional
// gradient buffer and, for op outputs built while grad mode is on, the
// backward rule plus handles to its inputs. Layout is row-major; most ops are
// 2-D ([rows × cols]) with 1-D vectors used for biases and gains.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockpool/rng.hpp"

namespace blockpool {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v) { return from({}, {v}); }
  static Tensor normal(Rng& rng, Shape shape, double stddev,
                       bool requires_grad = false);
  static Tensor uniform(Rng& rng, Shape shape, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  // Rows/cols of a 2-D tensor; a 1-D tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  // Direct write access; only for leaves (parameters, fixtures).
  std::span<double> mutable_values() { return node_->value; }
  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const {
    return node_->value.at(r * cols() + c);
  }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad() { return node_->ensure_grad(); }
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values as a fresh leaf.
  Tensor detach(bool requires_grad = false) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Runs reverse accumulation from a scalar loss. Leaves accumulate across
// calls; intermediate gradients are recomputed each call.
void backward(const Tensor& loss);

// Whether ops record backward rules. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Finite-value checks after each forward op (default: on in debug builds).
void set_check_finite(bool enabled);
bool check_finite_enabled();

// ---------------------------------------------------------------------------
// Ops. Shape mismatches raise DimensionError naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);
// x[m×k] · w[k×n] + bias[n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[m×n] + row[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

// out[i] = x[index[i]]; an index of -1 yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index);
// Table lookup; ids must lie in [0, rows).
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);

Tensor softmax_rows(const Tensor& x);
// Per-row normalization followed by gain/bias (both [cols]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// Per-row mean over contiguous row groups: offsets has groups+1 entries.
Tensor mean_row_groups(const Tensor& x, std::span<const std::size_t> offsets);

Tensor dropout(const Tensor& x, double p, Rng& rng);

// Allowed input interval [lo, hi) for each output position of a conv, or
// allowed key interval for each attention query.
struct Intervals {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
};

enum class ConvPadding { kSame, kLeftCausal };

// 1-D convolution over the row axis of x[L × Cin] (length-major layout).
// weight is [width·Cin × Cout] with row index tap·Cin + channel; tap t reads
// input position i + t - left, left = width/2 (same) or width-1 (causal).
// A tap contributes only if the input position lies in allowed[i]; others
// read as zero.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t width, ConvPadding padding, const Intervals& allowed);

// Per-block, per-channel max over consecutive row blocks of x[L × C].
// Gradient goes to the first maximal row of each block and channel.
Tensor segment_max_pool(const Tensor& x, std::span<const std::size_t> lengths);

struct AttentionMask {
  Intervals keys;                    // per query, allowed keys [lo, hi)
  std::vector<std::uint8_t> key_valid;  // optional per-key validity (PAD = 0)
};

// Multi-head scaled dot-product attention on already-projected q[N×d],
// k[M×d], v[M×d]; heads split d evenly. Keys outside the mask never enter
// the computation. A query with no allowed key outputs zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const AttentionMask& mask);

// Per-head attention probabilities of the last forward call are not kept;
// this recomputes them for inspection: [query][head][key - lo].
std::vector<std::vector<std::vector<double>>> attention_weights(
    const Tensor& q, const Tensor& k, std::size_t heads,
    const AttentionMask& mask);

// Mean cross-entropy of logits[N×V] against targets. Positions equal to
// ignore_index are skipped. The sum is divided by `normalizer` when given,
// otherwise by the number of counted positions.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::optional<std::int64_t> ignore_index = std::nullopt,
                     std::optional<double> normalizer = std::nullopt);

// LSTM cell from primitive ops. Gate column order: input, forget, cell, output.
// x[B×I], h/c[B×H], wx[I×4H], wh[H×4H], bias[4H].
std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const Tensor& wx,
                                    const Tensor& wh, const Tensor& bias);

// Fused LSTM over a time-major sequence. xproj is [T·B × 4H] holding the
// already projected inputs (x·wx + bias) for step t, batch b at row t·B + b.
// h0/c0 ([B×H]) may be undefined for zero initial state. Returns all hidden
// states [T·B × H].
Tensor lstm_sequence(const Tensor& xproj, const Tensor& wh, std::size_t steps,
                     std::size_t batch, const Tensor& h0 = {},
                     const Tensor& c0 = {});

// One inference step of lstm_sequence for a single row, with no graph: h and
// c ([H]) are updated in place. Arithmetic matches the fused op exactly.
void lstm_step_values(std::span<const double> xproj_row, const Tensor& wh,
                      std::vector<double>& h, std::vector<double>& c);

}  // namespace blockpool
