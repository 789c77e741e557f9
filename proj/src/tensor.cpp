#include "blockpool/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "blockpool/error.hpp"
#include "blockpool/kernels.hpp"

namespace blockpool {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

#ifdef NDEBUG
std::atomic<bool> g_check_finite{false};
#else
std::atomic<bool> g_check_finite{true};
#endif

NodePtr new_node(Shape shape) {
  auto n = std::make_shared<Node>();
  const std::size_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->value.assign(count, 0.0);
  return n;
}

// Attaches the backward rule when grad mode is on and some input tracks.
Tensor finish(NodePtr out, const char* op, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward_fn) {
  if (g_check_finite.load(std::memory_order_relaxed)) {
    for (double v : out->value) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value produced by ") + op);
      }
    }
  }
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(out));
}

// Gradient buffer of a parent, or nullptr when it does not track.
std::vector<double>* gbuf(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

std::size_t rows_of(const Shape& s) {
  if (s.size() == 2) return s[0];
  if (s.size() == 1) return 1;
  if (s.empty()) return 1;
  return shape_numel(s) / s.back();
}
std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a) + " and " + shape_str(b));
}

void require_2d(const char* op, const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 1) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dim_error(op, a.shape(), b.shape());
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "×";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = new_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  auto n = new_node(std::move(shape));
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) +
                         " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::normal(Rng& rng, Shape shape, double stddev,
                      bool requires_grad) {
  if (!(stddev > 0)) throw ArgumentError("normal: stddev must be positive");
  auto n = new_node(std::move(shape));
  for (double& v : n->value) v = stddev * rng.normal();
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::uniform(Rng& rng, Shape shape, double lo, double hi,
                       bool requires_grad) {
  if (!(hi > lo)) throw ArgumentError("uniform: empty range");
  auto n = new_node(std::move(shape));
  for (double& v : n->value) v = rng.uniform(lo, hi);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

std::size_t Tensor::rows() const { return rows_of(shape()); }
std::size_t Tensor::cols() const { return cols_of(shape()); }

double Tensor::item() const {
  if (numel() != 1) {
    throw ArgumentError("item: tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("grad: no gradient has been computed");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), node_->value, requires_grad);
}

// --- graph -------------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_check_finite(bool enabled) { g_check_finite.store(enabled); }
bool check_finite_enabled() { return g_check_finite.load(); }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "[]"));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p != nullptr && p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// --- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) dim_error("matmul", a.shape(), b.shape());
  auto out = new_node({m, n});
  kernels::matmul_nn(a.values().data(), b.values().data(), out->value.data(), m,
                     k, n, false);
  return finish(out, "matmul", {a.node_ptr(), b.node_ptr()},
                [m, k, n](Node& self) {
                  const double* g = self.grad.data();
                  if (auto* ga = gbuf(self, 0)) {
                    kernels::matmul_nt(g, self.parents[1]->value.data(),
                                       ga->data(), m, n, k, true);
                  }
                  if (auto* gb = gbuf(self, 1)) {
                    kernels::matmul_tn(self.parents[0]->value.data(), g,
                                       gb->data(), k, m, n, true);
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_2d("linear", x);
  require_2d("linear", w);
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k) dim_error("linear", x.shape(), w.shape());
  if (bias.numel() != n) dim_error("linear(bias)", w.shape(), bias.shape());
  auto out = new_node({m, n});
  double* o = out->value.data();
  const double* bv = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv, bv + n, o + i * n);
  kernels::matmul_nn(x.values().data(), w.values().data(), o, m, k, n, true);
  return finish(
      out, "linear", {x.node_ptr(), w.node_ptr(), bias.node_ptr()},
      [m, k, n](Node& self) {
        const double* g = self.grad.data();
        if (auto* gx = gbuf(self, 0)) {
          kernels::matmul_nt(g, self.parents[1]->value.data(), gx->data(), m,
                             n, k, true);
        }
        if (auto* gw = gbuf(self, 1)) {
          kernels::matmul_tn(self.parents[0]->value.data(), g, gw->data(), k,
                             m, n, true);
        }
        if (auto* gb = gbuf(self, 2)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[i * n + j];
          }
        }
      });
}

// --- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  auto out = new_node(a.shape());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  return finish(out, "add", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = gbuf(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  auto out = new_node(a.shape());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  return finish(out, "sub", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = gbuf(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  auto out = new_node(a.shape());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  return finish(out, "mul", {a.node_ptr(), b.node_ptr()}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = gbuf(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  auto out = new_node(a.shape());
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  return finish(out, "scale", {a.node_ptr()}, [s](Node& self) {
    if (auto* g = gbuf(self, 0)) kernels::axpy(s, self.grad.data(), g->data(), g->size());
  });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_2d("add_row", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (row.numel() != n) dim_error("add_row", x.shape(), row.shape());
  auto out = new_node(x.shape());
  const auto xv = x.values(), rv = row.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = xv[i * n + j] + rv[j];
  }
  return finish(out, "add_row", {x.node_ptr(), row.node_ptr()},
                [m, n](Node& self) {
                  if (auto* g = gbuf(self, 0)) {
                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                  }
                  if (auto* g = gbuf(self, 1)) {
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[i * n + j];
                    }
                  }
                });
}

namespace {

// Elementwise map whose derivative is expressed through the output value.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df_from_out) {
  auto out = new_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = f(xv[i]);
  return finish(out, op, {x.node_ptr()}, [df_from_out](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * df_from_out(self.value[i]);
      }
    }
  });
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; },
      [](double y) { return y > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_scalar,
               [](double y) { return y * (1.0 - y); });
}

Tensor sum(const Tensor& x) {
  auto out = new_node({});
  const auto xv = x.values();
  out->value[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
  return finish(out, "sum", {x.node_ptr()}, [](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (double& v : *g) v += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ArgumentError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// --- structure ---------------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  for (const Tensor& p : parts) {
    require_2d("concat_cols", p);
    if (p.rows() != m) dim_error("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
    parents.push_back(p.node_ptr());
  }
  auto out = new_node({m, total});
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto v = parts[pi].values();
    const std::size_t w = widths[pi];
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(v.begin() + i * w, v.begin() + (i + 1) * w,
                out->value.begin() + i * total + off);
    }
    off += w;
  }
  return finish(out, "concat_cols", std::move(parents),
                [m, total, widths](Node& self) {
                  std::size_t off = 0;
                  for (std::size_t pi = 0; pi < widths.size(); ++pi) {
                    const std::size_t w = widths[pi];
                    if (auto* g = gbuf(self, pi)) {
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < w; ++j) {
                          (*g)[i * w + j] += self.grad[i * total + off + j];
                        }
                      }
                    }
                    off += w;
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::size_t> sizes;
  std::vector<NodePtr> parents;
  for (const Tensor& p : parts) {
    require_2d("concat_rows", p);
    if (p.cols() != n) dim_error("concat_rows", parts[0].shape(), p.shape());
    sizes.push_back(p.numel());
    total += p.rows();
    parents.push_back(p.node_ptr());
  }
  auto out = new_node({total, n});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out->value.begin() + off);
    off += p.numel();
  }
  return finish(out, "concat_rows", std::move(parents), [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < sizes.size(); ++pi) {
      if (auto* g = gbuf(self, pi)) {
        for (std::size_t i = 0; i < sizes[pi]; ++i) (*g)[i] += self.grad[off + i];
      }
      off += sizes[pi];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d("slice_cols", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  auto out = new_node({m, w});
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(xv.begin() + i * n + begin, xv.begin() + i * n + end,
              out->value.begin() + i * w);
  }
  return finish(out, "slice_cols", {x.node_ptr()}, [m, n, w, begin](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) (*g)[i * n + begin + j] += self.grad[i * w + j];
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d("slice_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > m) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  auto out = new_node({end - begin, n});
  const auto xv = x.values();
  std::copy(xv.begin() + begin * n, xv.begin() + end * n, out->value.begin());
  return finish(out, "slice_rows", {x.node_ptr()}, [n, begin](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * n + i] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) dim_error("reshape", x.shape(), shape);
  auto out = new_node(std::move(shape));
  out->value.assign(x.values().begin(), x.values().end());
  return finish(out, "reshape", {x.node_ptr()}, [](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index) {
  require_2d("gather_rows", x);
  const std::size_t rows = x.rows(), n = x.cols();
  for (std::int64_t r : index) {
    if (r < -1 || r >= static_cast<std::int64_t>(rows)) {
      throw ArgumentError("gather_rows: index " + std::to_string(r) +
                          " outside [-1, " + std::to_string(rows) + ")");
    }
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  auto out = new_node({idx.size(), n});
  const auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    std::copy(xv.begin() + idx[i] * n, xv.begin() + (idx[i] + 1) * n,
              out->value.begin() + i * n);
  }
  return finish(out, "gather_rows", {x.node_ptr()},
                [idx = std::move(idx), n](Node& self) {
                  if (auto* g = gbuf(self, 0)) {
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      if (idx[i] < 0) continue;
                      double* dst = g->data() + idx[i] * n;
                      const double* src = self.grad.data() + i * n;
                      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                    }
                  }
                });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
  for (std::int64_t id : ids) {
    if (id < 0 || id >= static_cast<std::int64_t>(table.rows())) {
      throw ArgumentError("embedding_lookup: id " + std::to_string(id) +
                          " outside table of " + std::to_string(table.rows()) +
                          " rows");
    }
  }
  return gather_rows(table, ids);
}

// --- normalization -----------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_2d("softmax_rows", x);
  const std::size_t m = x.rows(), n = x.cols();
  auto out = new_node(x.shape());
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    double* o = out->value.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return finish(out, "softmax_rows", {x.node_ptr()}, [m, n](Node& self) {
    if (auto* g = gbuf(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = self.value.data() + i * n;
        const double* dy = self.grad.data() + i * n;
        const double s = kernels::dot(y, dy, n);
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += y[j] * (dy[j] - s);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_2d("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n) dim_error("layer_norm(gain)", x.shape(), gain.shape());
  if (bias.numel() != n) dim_error("layer_norm(bias)", x.shape(), bias.shape());
  auto out = new_node(x.shape());
  std::vector<double> xhat(m * n), inv_std(m);
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xv.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += r[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (r[j] - mu) * inv_std[i];
      out->value[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return finish(
      out, "layer_norm", {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& gv = self.parents[1]->value;
        const double* dy = self.grad.data();
        if (auto* gx = gbuf(self, 0)) {
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dy[i * n + j] * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[i * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              (*gx)[i * n + j] +=
                  inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
            }
          }
        }
        if (auto* gg = gbuf(self, 1)) {
          for (std::size_t i = 0; i < m * n; ++i) (*gg)[i % n] += dy[i] * xhat[i];
        }
        if (auto* gb = gbuf(self, 2)) {
          for (std::size_t i = 0; i < m * n; ++i) (*gb)[i % n] += dy[i];
        }
      });
}

Tensor mean_row_groups(const Tensor& x, std::span<const std::size_t> offsets) {
  require_2d("mean_row_groups", x);
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.rows()) {
    throw DimensionError("mean_row_groups: offsets do not cover " +
                         shape_str(x.shape()));
  }
  const std::size_t groups = offsets.size() - 1, n = x.cols();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  auto out = new_node({groups, n});
  const auto xv = x.values();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    if (off[gi + 1] <= off[gi]) throw ArgumentError("mean_row_groups: empty group");
    const double inv = 1.0 / static_cast<double>(off[gi + 1] - off[gi]);
    for (std::size_t r = off[gi]; r < off[gi + 1]; ++r) {
      kernels::axpy(inv, xv.data() + r * n, out->value.data() + gi * n, n);
    }
  }
  return finish(out, "mean_row_groups", {x.node_ptr()},
                [off = std::move(off), n](Node& self) {
                  if (auto* g = gbuf(self, 0)) {
                    for (std::size_t gi = 0; gi + 1 < off.size(); ++gi) {
                      const double inv = 1.0 / static_cast<double>(off[gi + 1] - off[gi]);
                      for (std::size_t r = off[gi]; r < off[gi + 1]; ++r) {
                        kernels::axpy(inv, self.grad.data() + gi * n,
                                      g->data() + r * n, n);
                      }
                    }
                  }
                });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  std::vector<double> keep(x.numel());
  const double s = 1.0 / (1.0 - p);
  for (double& k : keep) k = rng.uniform() < p ? 0.0 : s;
  return mul(x, Tensor::from(x.shape(), std::move(keep)));
}

// --- convolution and pooling -------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t width, ConvPadding padding, const Intervals& allowed) {
  require_2d("conv1d", x);
  require_2d("conv1d", weight);
  const std::size_t len = x.rows(), cin = x.cols(), cout = weight.cols();
  if (width == 0) throw ArgumentError("conv1d: width must be positive");
  if (weight.rows() != width * cin) dim_error("conv1d", x.shape(), weight.shape());
  if (bias.numel() != cout) dim_error("conv1d(bias)", weight.shape(), bias.shape());
  if (allowed.lo.size() != len || allowed.hi.size() != len) {
    throw DimensionError("conv1d: interval table covers " +
                         std::to_string(allowed.lo.size()) + " positions, input " +
                         shape_str(x.shape()));
  }
  if (padding == ConvPadding::kSame && width % 2 == 0) {
    throw ArgumentError("conv1d: same padding needs an odd width");
  }
  const std::ptrdiff_t left = padding == ConvPadding::kSame
                                  ? static_cast<std::ptrdiff_t>(width / 2)
                                  : static_cast<std::ptrdiff_t>(width - 1);
  const std::size_t kw = width * cin;

  // im2col; taps outside the allowed interval stay zero and are never read.
  std::vector<std::int64_t> src(len * width, -1);
  std::vector<double> cols(len * kw, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t t = 0; t < width; ++t) {
      const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + t) - left;
      if (j < 0 || static_cast<std::size_t>(j) < allowed.lo[i] ||
          static_cast<std::size_t>(j) >= allowed.hi[i] ||
          static_cast<std::size_t>(j) >= len) {
        continue;
      }
      src[i * width + t] = j;
      std::copy(xv.begin() + j * cin, xv.begin() + (j + 1) * cin,
                cols.begin() + i * kw + t * cin);
    }
  }

  auto out = new_node({len, cout});
  const auto bv = bias.values();
  for (std::size_t i = 0; i < len; ++i) {
    std::copy(bv.begin(), bv.end(), out->value.begin() + i * cout);
  }
  kernels::matmul_nn(cols.data(), weight.values().data(), out->value.data(), len,
                     kw, cout, true);
  return finish(
      out, "conv1d", {x.node_ptr(), weight.node_ptr(), bias.node_ptr()},
      [len, cin, cout, width, kw, src = std::move(src),
       cols = std::move(cols)](Node& self) {
        const double* g = self.grad.data();
        if (auto* gw = gbuf(self, 1)) {
          kernels::matmul_tn(cols.data(), g, gw->data(), kw, len, cout, true);
        }
        if (auto* gb = gbuf(self, 2)) {
          for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += g[i * cout + c];
          }
        }
        if (auto* gx = gbuf(self, 0)) {
          std::vector<double> dcols(len * kw, 0.0);
          kernels::matmul_nt(g, self.parents[1]->value.data(), dcols.data(), len,
                             cout, kw, false);
          for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t t = 0; t < width; ++t) {
              const std::int64_t j = src[i * width + t];
              if (j < 0) continue;
              const double* d = dcols.data() + i * kw + t * cin;
              double* dst = gx->data() + j * cin;
              for (std::size_t c = 0; c < cin; ++c) dst[c] += d[c];
            }
          }
        }
      });
}

Tensor segment_max_pool(const Tensor& x, std::span<const std::size_t> lengths) {
  require_2d("segment_max_pool", x);
  const std::size_t len = x.rows(), c = x.cols();
  std::size_t total = 0;
  for (std::size_t l : lengths) {
    if (l == 0) throw ArgumentError("segment_max_pool: zero-length block");
    total += l;
  }
  if (total != len) {
    throw DimensionError("segment_max_pool: block lengths sum to " +
                         std::to_string(total) + " but input is " +
                         shape_str(x.shape()));
  }
  const std::size_t blocks = lengths.size();
  auto out = new_node({blocks, c});
  std::vector<std::size_t> argmax(blocks * c);
  const auto xv = x.values();
  std::size_t start = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    double* o = out->value.data() + b * c;
    std::size_t* am = argmax.data() + b * c;
    std::copy(xv.begin() + start * c, xv.begin() + (start + 1) * c, o);
    std::fill(am, am + c, start);
    for (std::size_t r = start + 1; r < start + lengths[b]; ++r) {
      const double* row = xv.data() + r * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (row[ch] > o[ch]) {
          o[ch] = row[ch];
          am[ch] = r;
        }
      }
    }
    start += lengths[b];
  }
  return finish(out, "segment_max_pool", {x.node_ptr()},
                [c, argmax = std::move(argmax)](Node& self) {
                  if (auto* g = gbuf(self, 0)) {
                    for (std::size_t i = 0; i < argmax.size(); ++i) {
                      (*g)[argmax[i] * c + i % c] += self.grad[i];
                    }
                  }
                });
}

// --- attention ---------------------------------------------------------------

namespace {

void check_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                     std::size_t heads, const AttentionMask& mask) {
  require_2d("attention", q);
  require_2d("attention", k);
  require_2d("attention", v);
  if (q.cols() != k.cols()) dim_error("attention(q,k)", q.shape(), k.shape());
  if (k.shape() != v.shape()) dim_error("attention(k,v)", k.shape(), v.shape());
  if (heads == 0 || q.cols() % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(q.cols()) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (mask.keys.lo.size() != q.rows() || mask.keys.hi.size() != q.rows()) {
    throw DimensionError("attention: mask covers " +
                         std::to_string(mask.keys.lo.size()) + " queries, q is " +
                         shape_str(q.shape()));
  }
  if (!mask.key_valid.empty() && mask.key_valid.size() != k.rows()) {
    throw DimensionError("attention: key validity covers " +
                         std::to_string(mask.key_valid.size()) + " keys, k is " +
                         shape_str(k.shape()));
  }
  for (std::size_t i = 0; i < q.rows(); ++i) {
    if (mask.keys.lo[i] > mask.keys.hi[i] || mask.keys.hi[i] > k.rows()) {
      throw DimensionError("attention: key interval of query " +
                           std::to_string(i) + " outside " + shape_str(k.shape()));
    }
  }
}

bool key_ok(const AttentionMask& mask, std::size_t j) {
  return mask.key_valid.empty() || mask.key_valid[j] != 0;
}

// Softmax probabilities for one query/head over its allowed keys; masked
// keys get probability 0 and are never touched.
void attention_probs(const double* q, const double* k, std::size_t width,
                     std::size_t dh, std::size_t h, std::size_t lo,
                     std::size_t hi, const AttentionMask& mask, double scale_f,
                     double* p) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = lo; j < hi; ++j) {
    if (!key_ok(mask, j)) {
      p[j - lo] = 0.0;
      continue;
    }
    p[j - lo] = scale_f * kernels::dot(q + h * dh, k + j * width + h * dh, dh);
    mx = std::max(mx, p[j - lo]);
  }
  double z = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    if (!key_ok(mask, j)) continue;
    p[j - lo] = std::exp(p[j - lo] - mx);
    z += p[j - lo];
  }
  for (std::size_t j = lo; j < hi; ++j) {
    if (key_ok(mask, j)) p[j - lo] /= z;
  }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const AttentionMask& mask) {
  check_attention(q, k, v, heads, mask);
  const std::size_t nq = q.rows(), width = q.cols(), dh = width / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<std::size_t> offset(nq + 1, 0);
  for (std::size_t i = 0; i < nq; ++i) {
    offset[i + 1] = offset[i] + (mask.keys.hi[i] - mask.keys.lo[i]) * heads;
  }
  std::vector<double> probs(offset[nq]);
  auto out = new_node({nq, width});
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t lo = mask.keys.lo[i], hi = mask.keys.hi[i], span = hi - lo;
    bool any = false;
    for (std::size_t j = lo; j < hi && !any; ++j) any = key_ok(mask, j);
    if (!any) {
      std::fill(probs.begin() + offset[i], probs.begin() + offset[i + 1], 0.0);
      continue;
    }
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + offset[i] + h * span;
      attention_probs(qv + i * width, kv, width, dh, h, lo, hi, mask, scale_f, p);
      double* o = out->value.data() + i * width + h * dh;
      for (std::size_t j = lo; j < hi; ++j) {
        if (p[j - lo] != 0.0) kernels::axpy(p[j - lo], vv + j * width + h * dh, o, dh);
      }
    }
  }
  return finish(
      out, "attention", {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [nq, width, dh, heads, scale_f, offset = std::move(offset),
       probs = std::move(probs), lo_keys = mask.keys.lo,
       hi_keys = mask.keys.hi](Node& self) {
        const double* qv = self.parents[0]->value.data();
        const double* kv = self.parents[1]->value.data();
        const double* vv = self.parents[2]->value.data();
        auto* gq = gbuf(self, 0);
        auto* gk = gbuf(self, 1);
        auto* gv = gbuf(self, 2);
        std::vector<double> ds;
        for (std::size_t i = 0; i < nq; ++i) {
          const std::size_t lo = lo_keys[i], span = hi_keys[i] - lo;
          ds.resize(span);
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + offset[i] + h * span;
            const double* dout = self.grad.data() + i * width + h * dh;
            double weighted = 0.0;
            for (std::size_t t = 0; t < span; ++t) {
              if (p[t] == 0.0) {
                ds[t] = 0.0;
                continue;
              }
              const std::size_t j = lo + t;
              ds[t] = kernels::dot(dout, vv + j * width + h * dh, dh);
              weighted += p[t] * ds[t];
              if (gv) kernels::axpy(p[t], dout, gv->data() + j * width + h * dh, dh);
            }
            for (std::size_t t = 0; t < span; ++t) {
              if (p[t] == 0.0) continue;
              const std::size_t j = lo + t;
              const double s = scale_f * p[t] * (ds[t] - weighted);
              if (gq) kernels::axpy(s, kv + j * width + h * dh, gq->data() + i * width + h * dh, dh);
              if (gk) kernels::axpy(s, qv + i * width + h * dh, gk->data() + j * width + h * dh, dh);
            }
          }
        }
      });
}

std::vector<std::vector<std::vector<double>>> attention_weights(
    const Tensor& q, const Tensor& k, std::size_t heads,
    const AttentionMask& mask) {
  check_attention(q, k, k, heads, mask);
  const std::size_t width = q.cols(), dh = width / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::vector<std::vector<double>>> result(q.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t lo = mask.keys.lo[i], hi = mask.keys.hi[i];
    result[i].assign(heads, std::vector<double>(hi - lo, 0.0));
    bool any = false;
    for (std::size_t j = lo; j < hi; ++j) any = any || key_ok(mask, j);
    if (!any) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      attention_probs(q.values().data() + i * width, k.values().data(), width,
                      dh, h, lo, hi, mask, scale_f, result[i][h].data());
    }
  }
  return result;
}

// --- loss --------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets,
                     std::optional<std::int64_t> ignore_index,
                     std::optional<double> normalizer) {
  require_2d("cross_entropy", logits);
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  if (ignore_index && (*ignore_index < 0 || *ignore_index >= static_cast<std::int64_t>(v))) {
    throw ArgumentError("cross_entropy: ignore_index " +
                        std::to_string(*ignore_index) + " outside vocabulary of " +
                        std::to_string(v));
  }
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  std::vector<double> lse(n, 0.0);
  std::size_t counted = 0;
  double total = 0.0;
  const auto lv = logits.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore_index && tgt[i] == *ignore_index) continue;
    if (tgt[i] < 0 || tgt[i] >= static_cast<std::int64_t>(v)) {
      throw ArgumentError("cross_entropy: target " + std::to_string(tgt[i]) +
                          " outside vocabulary of " + std::to_string(v));
    }
    const double* r = lv.data() + i * v;
    const double mx = *std::max_element(r, r + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(r[j] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - r[tgt[i]];
    ++counted;
  }
  if (counted == 0) throw ArgumentError("cross_entropy: every target is ignored");
  const double norm = normalizer ? *normalizer : static_cast<double>(counted);
  if (!(norm > 0)) throw ArgumentError("cross_entropy: normalizer must be positive");
  auto out = new_node({});
  out->value[0] = total / norm;
  return finish(out, "cross_entropy", {logits.node_ptr()},
                [n, v, norm, ignore_index, tgt = std::move(tgt),
                 lse = std::move(lse)](Node& self) {
                  auto* g = gbuf(self, 0);
                  if (!g) return;
                  const double gs = self.grad[0] / norm;
                  const auto& lv = self.parents[0]->value;
                  for (std::size_t i = 0; i < n; ++i) {
                    if (ignore_index && tgt[i] == *ignore_index) continue;
                    for (std::size_t j = 0; j < v; ++j) {
                      (*g)[i * v + j] += gs * std::exp(lv[i * v + j] - lse[i]);
                    }
                    (*g)[i * v + tgt[i]] -= gs;
                  }
                });
}

// --- recurrent -----------------------------------------------------------------

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h,
                                    const Tensor& c, const Tensor& wx,
                                    const Tensor& wh, const Tensor& bias) {
  const std::size_t hidden = h.cols();
  if (c.shape() != h.shape()) dim_error("lstm_cell(h,c)", h.shape(), c.shape());
  if (wh.rows() != hidden || wh.cols() != 4 * hidden) {
    dim_error("lstm_cell(h,wh)", h.shape(), wh.shape());
  }
  if (wx.cols() != 4 * hidden) dim_error("lstm_cell(wx,wh)", wx.shape(), wh.shape());
  if (x.rows() != h.rows()) dim_error("lstm_cell(x,h)", x.shape(), h.shape());
  const Tensor gates = add(linear(x, wx, bias), matmul(h, wh));
  const Tensor i = sigmoid(slice_cols(gates, 0, hidden));
  const Tensor f = sigmoid(slice_cols(gates, hidden, 2 * hidden));
  const Tensor g = tanh(slice_cols(gates, 2 * hidden, 3 * hidden));
  const Tensor o = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

Tensor lstm_sequence(const Tensor& xproj, const Tensor& wh, std::size_t steps,
                     std::size_t batch, const Tensor& h0, const Tensor& c0) {
  require_2d("lstm_sequence", xproj);
  require_2d("lstm_sequence", wh);
  const std::size_t hidden = wh.rows();
  if (wh.cols() != 4 * hidden) {
    throw DimensionError("lstm_sequence: recurrent weight " + shape_str(wh.shape()) +
                         " is not [H×4H]");
  }
  if (xproj.rows() != steps * batch || xproj.cols() != 4 * hidden) {
    dim_error("lstm_sequence", xproj.shape(), wh.shape());
  }
  const Shape state_shape{batch, hidden};
  if (h0.defined() && h0.shape() != state_shape) dim_error("lstm_sequence(h0)", h0.shape(), state_shape);
  if (c0.defined() && c0.shape() != state_shape) dim_error("lstm_sequence(c0)", c0.shape(), state_shape);

  const std::size_t bh = batch * hidden, g4 = 4 * hidden;
  // Per step: activated gates [B×4H], cell state and tanh(cell) [B×H].
  std::vector<double> act(steps * batch * g4), cell(steps * bh), tcell(steps * bh);
  std::vector<double> h_init(bh, 0.0), c_init(bh, 0.0);
  if (h0.defined()) std::copy(h0.values().begin(), h0.values().end(), h_init.begin());
  if (c0.defined()) std::copy(c0.values().begin(), c0.values().end(), c_init.begin());

  auto out = new_node({steps * batch, hidden});
  const double* xp = xproj.values().data();
  const double* whv = wh.values().data();
  for (std::size_t t = 0; t < steps; ++t) {
    double* a = act.data() + t * batch * g4;
    std::copy(xp + t * batch * g4, xp + (t + 1) * batch * g4, a);
    const double* h_prev = t == 0 ? h_init.data() : out->value.data() + (t - 1) * bh;
    const double* c_prev = t == 0 ? c_init.data() : cell.data() + (t - 1) * bh;
    kernels::matmul_nn(h_prev, whv, a, batch, hidden, g4, true);
    for (std::size_t b = 0; b < batch; ++b) {
      double* ab = a + b * g4;
      for (std::size_t j = 0; j < hidden; ++j) {
        const double ig = sigmoid_scalar(ab[j]);
        const double fg = sigmoid_scalar(ab[hidden + j]);
        const double cg = std::tanh(ab[2 * hidden + j]);
        const double og = sigmoid_scalar(ab[3 * hidden + j]);
        ab[j] = ig;
        ab[hidden + j] = fg;
        ab[2 * hidden + j] = cg;
        ab[3 * hidden + j] = og;
        const std::size_t s = t * bh + b * hidden + j;
        cell[s] = fg * c_prev[b * hidden + j] + ig * cg;
        tcell[s] = std::tanh(cell[s]);
        out->value[s] = og * tcell[s];
      }
    }
  }

  std::vector<NodePtr> parents{xproj.node_ptr(), wh.node_ptr()};
  parents.push_back(h0.defined() ? h0.node_ptr() : nullptr);
  parents.push_back(c0.defined() ? c0.node_ptr() : nullptr);
  return finish(
      out, "lstm_sequence", std::move(parents),
      [steps, batch, hidden, bh, g4, act = std::move(act), cell = std::move(cell),
       tcell = std::move(tcell), h_init = std::move(h_init),
       c_init = std::move(c_init)](Node& self) {
        auto* gx = gbuf(self, 0);
        auto* gw = gbuf(self, 1);
        auto* gh0 = gbuf(self, 2);
        auto* gc0 = gbuf(self, 3);
        const double* whv = self.parents[1]->value.data();
        std::vector<double> dh(bh, 0.0), dc(bh, 0.0), dgates(batch * g4);
        for (std::size_t t = steps; t-- > 0;) {
          const double* a = act.data() + t * batch * g4;
          const double* c_prev = t == 0 ? c_init.data() : cell.data() + (t - 1) * bh;
          const double* h_prev = t == 0 ? h_init.data() : self.value.data() + (t - 1) * bh;
          for (std::size_t b = 0; b < batch; ++b) {
            const double* ab = a + b * g4;
            double* dg = dgates.data() + b * g4;
            for (std::size_t j = 0; j < hidden; ++j) {
              const std::size_t s = t * bh + b * hidden + j;
              const std::size_t u = b * hidden + j;
              const double ig = ab[j], fg = ab[hidden + j], cg = ab[2 * hidden + j],
                           og = ab[3 * hidden + j];
              const double dht = dh[u] + self.grad[s];
              const double dct = dc[u] + dht * og * (1.0 - tcell[s] * tcell[s]);
              dg[j] = dct * cg * ig * (1.0 - ig);
              dg[hidden + j] = dct * c_prev[u] * fg * (1.0 - fg);
              dg[2 * hidden + j] = dct * ig * (1.0 - cg * cg);
              dg[3 * hidden + j] = dht * tcell[s] * og * (1.0 - og);
              dc[u] = dct * fg;
            }
          }
          if (gx) {
            double* dst = gx->data() + t * batch * g4;
            for (std::size_t i = 0; i < batch * g4; ++i) dst[i] += dgates[i];
          }
          if (gw) kernels::matmul_tn(h_prev, dgates.data(), gw->data(), hidden, batch, g4, true);
          kernels::matmul_nt(dgates.data(), whv, dh.data(), batch, g4, hidden, false);
        }
        if (gh0) for (std::size_t i = 0; i < bh; ++i) (*gh0)[i] += dh[i];
        if (gc0) for (std::size_t i = 0; i < bh; ++i) (*gc0)[i] += dc[i];
      });
}

void lstm_step_values(std::span<const double> xproj_row, const Tensor& wh,
                      std::vector<double>& h, std::vector<double>& c) {
  const std::size_t hidden = wh.rows();
  if (xproj_row.size() != 4 * hidden || h.size() != hidden || c.size() != hidden) {
    throw DimensionError("lstm_step_values: row of " + std::to_string(xproj_row.size()) +
                         " and state of " + std::to_string(h.size()) + " do not match " +
                         shape_str(wh.shape()));
  }
  std::vector<double> a(xproj_row.begin(), xproj_row.end());
  kernels::matmul_nn(h.data(), wh.values().data(), a.data(), 1, hidden, 4 * hidden, true);
  for (std::size_t j = 0; j < hidden; ++j) {
    const double ig = sigmoid_scalar(a[j]);
    const double fg = sigmoid_scalar(a[hidden + j]);
    const double cg = std::tanh(a[2 * hidden + j]);
    const double og = sigmoid_scalar(a[3 * hidden + j]);
    c[j] = fg * c[j] + ig * cg;
    h[j] = og * std::tanh(c[j]);
  }
}

}  // namespace blockpool
