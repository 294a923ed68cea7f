#include "glad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "glad/error.hpp"
#include "kernels.hpp"

namespace glad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<TensorNode<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (dim() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
  return shape()[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (dim() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
  return shape()[1];
}

template <typename T>
T Tensor<T>::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS over nodes that participate in differentiation.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      TensorNode<T>* p = n->parents[next++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) n->grad.clear();
  }
  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// helpers

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      const char* op,
                      std::function<void(TensorNode<T>&)> backward_fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool rg = false;
  if (NoGradGuard::grad_enabled()) {
    for (const auto* in : inputs) {
      if (in->defined() && in->requires_grad()) rg = true;
    }
  }
  if (rg) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->defined() ? in->node() : nullptr);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
bool wants(const NodePtr<T>& p) {
  return p && p->requires_grad;
}

// Returns p's gradient buffer, allocating zeros on first touch.
template <typename T>
std::vector<T>& grad_of(TensorNode<T>& p) {
  if (p.grad.empty()) p.grad.assign(p.data.size(), T(0));
  return p.grad;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [](TensorNode<T>& self) {
    for (auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& g = grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub", [](TensorNode<T>& self) {
    if (wants(self.parents[0])) {
      auto& g = grad_of(*self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = grad_of(*self.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = grad_of(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (wants(pb)) {
      auto& g = grad_of(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return make_result<T>(x.shape(), std::move(out), {&x}, "scale", [s](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: factor must have one element, got " + shape_str(s.shape()));
  }
  const T f = s[0];
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  return make_result<T>(x.shape(), std::move(out), {&x, &s}, "scale_by", [](TensorNode<T>& self) {
    auto& px = self.parents[0];
    auto& ps = self.parents[1];
    if (wants(px)) {
      auto& g = grad_of(*px);
      const T f = ps->data[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
    }
    if (wants(ps)) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px->data[i];
      grad_of(*ps)[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) - x[i];
  return make_result<T>(x.shape(), std::move(out), {&x}, "one_minus", [](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return make_result<T>(Shape{}, {acc}, {&x}, "sum", [](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  const T n = static_cast<T>(x.numel());
  return make_result<T>(Shape{}, {acc / n}, {&x}, "mean", [n](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    const T d = self.grad[0] / n;
    for (auto& v : g) v += d;
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, "tanh", [](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.data[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return make_result<T>(x.shape(), std::move(out), {&x}, "sigmoid", [](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.data[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * kInvSqrt2));
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, "gelu", [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>({m, n}, std::move(out), {&a, &b}, "matmul",
                        [m, k, n](TensorNode<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          if (wants(pa)) {
                            // dA = G . B^T
                            kernels::gemm_nt(m, k, n, self.grad.data(), pb->data.data(),
                                             grad_of(*pa).data());
                          }
                          if (wants(pb)) {
                            // dB = A^T . G
                            kernels::gemm_tn(k, n, m, pa->data.data(), self.grad.data(),
                                             grad_of(*pb).data());
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t n = x.rows(), in = x.cols(), out_dim = w.rows();
  if (w.cols() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
  }
  std::vector<T> out(n * out_dim, T(0));
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r) {
      std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_dim);
    }
  }
  kernels::gemm_nt(n, out_dim, in, x.data().data(), w.data().data(), out.data());
  return make_result<T>({n, out_dim}, std::move(out), {&x, &w, &bias}, "linear",
                        [n, in, out_dim](TensorNode<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          auto& pb = self.parents[2];
                          if (wants(px)) {
                            kernels::gemm_nn(n, in, out_dim, self.grad.data(), pw->data.data(),
                                             grad_of(*px).data());
                          }
                          if (wants(pw)) {
                            kernels::gemm_tn(out_dim, in, n, self.grad.data(), px->data.data(),
                                             grad_of(*pw).data());
                          }
                          if (wants(pb)) {
                            auto& g = grad_of(*pb);
                            for (std::size_t r = 0; r < n; ++r) {
                              const T* row = self.grad.data() + r * out_dim;
                              for (std::size_t c = 0; c < out_dim; ++c) g[c] += row[c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(r * c);
  kernels::transpose(r, c, x.data().data(), out.data());
  return make_result<T>({c, r}, std::move(out), {&x}, "transpose", [r, c](TensorNode<T>& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, "reshape",
                        [](TensorNode<T>& self) {
                          auto& g = grad_of(*self.parents[0]);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                        });
}

// ---------------------------------------------------------------------------
// softmax family and losses

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = x.data().data() + i * c;
    T* o = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_rows: NaN at row " + std::to_string(i));
    }
    kernels::softmax(in, o, c);
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, "softmax_rows",
                        [r, c](TensorNode<T>& self) {
                          auto& g = grad_of(*self.parents[0]);
                          for (std::size_t i = 0; i < r; ++i) {
                            const T* y = self.data.data() + i * c;
                            const T* gy = self.grad.data() + i * c;
                            T dot = 0;
                            for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<T> probs(n * v);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(v) + ") at row " + std::to_string(i));
    }
    const T* row = logits.data().data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
    total += lse - row[t];
  }
  if (std::isnan(total)) throw NumericError("cross_entropy: NaN loss");
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result<T>(Shape{}, {total / static_cast<T>(n)}, {&logits}, "cross_entropy",
                        [probs = std::move(probs), tg = std::move(tg), n, v](TensorNode<T>& self) {
                          auto& g = grad_of(*self.parents[0]);
                          const T s = self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < v; ++j) {
                              T d = probs[i * v + j];
                              if (static_cast<int>(j) == tg[i]) d -= T(1);
                              g[i * v + j] += s * d;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  T acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  const T n = static_cast<T>(a.numel());
  return make_result<T>(Shape{}, {acc / n}, {&a, &b}, "mse", [n](TensorNode<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T s = T(2) * self.grad[0] / n;
    if (wants(pa)) {
      auto& g = grad_of(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * (pa->data[i] - pb->data[i]);
    }
    if (wants(pb)) {
      auto& g = grad_of(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (pa->data[i] - pb->data[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// layers

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_matrix(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " for input " + shape_str(x.shape()));
  }
  std::vector<T> out(r * c), xhat(r * c), rstd(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* in = x.data().data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (in[j] - mu) * rs;
      xhat[i * c + j] = h;
      out[i * c + j] = h * gamma[j] + beta[j];
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
      [xhat = std::move(xhat), rstd = std::move(rstd), r, c](TensorNode<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        if (wants(pg)) {
          auto& g = grad_of(*pg);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
        }
        if (wants(pb)) {
          auto& g = grad_of(*pb);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        }
        if (wants(px)) {
          auto& g = grad_of(*px);
          const auto& gamma = pg->data;
          for (std::size_t i = 0; i < r; ++i) {
            const T* gy = self.grad.data() + i * c;
            const T* h = xhat.data() + i * c;
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T d = gy[j] * gamma[j];
              m1 += d;
              m2 += d * h[j];
            }
            m1 /= static_cast<T>(c);
            m2 /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              const T d = gy[j] * gamma[j];
              g[i * c + j] += rstd[i] * (d - m1 - h[j] * m2);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const std::size_t vocab = table.rows(), d = table.cols(), n = ids.size();
  if (n == 0) throw ContractError("embedding: empty id list");
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result<T>({n, d}, std::move(out), {&table}, "embedding",
                        [idv = std::move(idv), d](TensorNode<T>& self) {
                          auto& g = grad_of(*self.parents[0]);
                          for (std::size_t i = 0; i < idv.size(); ++i) {
                            T* dst = g.data() + idv[i] * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t c = x.cols(), n = rows.size();
  if (n == 0) throw ContractError("gather_rows: empty row list");
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i] >= x.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                       shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + rows[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return make_result<T>({n, c}, std::move(out), {&x}, "gather_rows",
                        [rv = std::move(rv), c](TensorNode<T>& self) {
                          auto& g = grad_of(*self.parents[0]);
                          for (std::size_t i = 0; i < rv.size(); ++i) {
                            T* dst = g.data() + rv[i] * c;
                            const T* src = self.grad.data() + i * c;
                            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  auto node = std::make_shared<TensorNode<T>>();
  node->shape = {total, c};
  node->data = std::move(out);
  node->op = "concat_rows";
  bool rg = false;
  if (NoGradGuard::grad_enabled()) {
    for (const auto& p : parts) rg = rg || p.requires_grad();
  }
  if (rg) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [](TensorNode<T>& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const std::size_t n = p->data.size();
        if (wants(p)) {
          auto& g = grad_of(*p);
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
        }
        off += n;
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.data().data() + i * ca, ca, out.data() + i * c);
    std::copy_n(b.data().data() + i * cb, cb, out.data() + i * c + ca);
  }
  return make_result<T>({r, c}, std::move(out), {&a, &b}, "concat_cols",
                        [r, ca, cb, c](TensorNode<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          if (wants(pa)) {
                            auto& g = grad_of(*pa);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < ca; ++j) g[i * ca + j] += self.grad[i * c + j];
                          }
                          if (wants(pb)) {
                            auto& g = grad_of(*pb);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < cb; ++j)
                                g[i * cb + j] += self.grad[i * c + ca + j];
                          }
                        });
}

template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& p) {
  require_matrix(x, "add_tiled");
  require_matrix(p, "add_tiled");
  if (p.cols() != x.cols() || x.rows() % p.rows() != 0) {
    throw DimensionError("add_tiled: cannot tile " + shape_str(p.shape()) + " over " +
                         shape_str(x.shape()));
  }
  const std::size_t period = p.numel();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + p[i % period];
  return make_result<T>(x.shape(), std::move(out), {&x, &p}, "add_tiled",
                        [period](TensorNode<T>& self) {
                          auto& px = self.parents[0];
                          auto& pp = self.parents[1];
                          if (wants(px)) {
                            auto& g = grad_of(*px);
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (wants(pp)) {
                            auto& g = grad_of(*pp);
                            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t batch, std::size_t seq, std::size_t heads,
                           std::vector<T>* probs_out) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  require_matrix(q, "causal_attention");
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq || heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: " + shape_str(q.shape()) + " incompatible with batch " +
                         std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                         std::to_string(heads));
  }
  const std::size_t hd = d / heads;
  const T inv = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> probs(batch * heads * seq * seq, T(0));
  std::vector<T> out(batch * seq * d, T(0));
  std::vector<T> scores(seq);
  const T* Q = q.data().data();
  const T* K = k.data().data();
  const T* V = v.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* qi = Q + (b * seq + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = K + (b * seq + j) * d + h * hd;
          T s = 0;
          for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
          scores[j] = s * inv;
        }
        kernels::softmax(scores.data(), P + i * seq, i + 1);
        T* oi = out.data() + (b * seq + i) * d + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const T pij = P[i * seq + j];
          const T* vj = V + (b * seq + j) * d + h * hd;
          for (std::size_t e = 0; e < hd; ++e) oi[e] += pij * vj[e];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  return make_result<T>(
      q.shape(), std::move(out), {&q, &k, &v}, "causal_attention",
      [probs = std::move(probs), batch, seq, heads, hd, d, inv](TensorNode<T>& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        std::vector<T> dq(batch * seq * d, T(0)), dk(batch * seq * d, T(0)),
            dv(batch * seq * d, T(0));
        std::vector<T> dp(seq);
        const T* Q = pq->data.data();
        const T* K = pk->data.data();
        const T* V = pv->data.data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const T* go = self.grad.data() + (b * seq + i) * d + h * hd;
              T dot = 0;
              for (std::size_t j = 0; j <= i; ++j) {
                const T* vj = V + (b * seq + j) * d + h * hd;
                T s = 0;
                for (std::size_t e = 0; e < hd; ++e) s += go[e] * vj[e];
                dp[j] = s;
                dot += s * P[i * seq + j];
              }
              const T* qi = Q + (b * seq + i) * d + h * hd;
              T* dqi = dq.data() + (b * seq + i) * d + h * hd;
              for (std::size_t j = 0; j <= i; ++j) {
                const T pij = P[i * seq + j];
                const T ds = pij * (dp[j] - dot) * inv;
                const T* kj = K + (b * seq + j) * d + h * hd;
                T* dkj = dk.data() + (b * seq + j) * d + h * hd;
                T* dvj = dv.data() + (b * seq + j) * d + h * hd;
                for (std::size_t e = 0; e < hd; ++e) {
                  dqi[e] += ds * kj[e];
                  dkj[e] += ds * qi[e];
                  dvj[e] += pij * go[e];
                }
              }
            }
          }
        }
        auto acc = [](const std::shared_ptr<TensorNode<T>>& p, const std::vector<T>& src) {
          if (!wants(p)) return;
          auto& g = grad_of(*p);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        };
        acc(pq, dq);
        acc(pk, dk);
        acc(pv, dv);
      });
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                  double eps) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  NoGradGuard guard;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = f().item();
      data[i] = saved - eps;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// explicit instantiations

#define GLAD_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> one_minus(const Tensor<T>&);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> mean(const Tensor<T>&);                                                  \
  template Tensor<T> tanh(const Tensor<T>&);                                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                                               \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                   \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                       \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);             \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> concat_cols(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> add_tiled(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                      std::size_t, std::size_t, std::size_t, std::vector<T>*);

GLAD_INSTANTIATE(float)
GLAD_INSTANTIATE(double)

#undef GLAD_INSTANTIATE

}  // namespace glad
