#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace glad {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  // Empty until the node is reached by backward(); leaves keep accumulating.
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad and accumulates into parents. Empty for leaves.
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";
};

// Disables tape recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool grad_enabled();

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<TensorNode<T>> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  // Direct write access, for optimizers, initializers and finite differences.
  std::span<T> mutable_data() { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const;
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  bool is_leaf() const { return !node_->backward_fn; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  // Drops the gradient buffer; the next backward() starts from zero.
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const;
  Tensor clone() const;

  // Reverse-mode sweep from a scalar. Intermediate gradients are rebuilt on
  // every call; leaf gradients accumulate until zero_grad().
  void backward() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All reductions run left to right over row-major
// storage so results are bitwise reproducible for a given build.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);
// x * s where s is a one-element tensor that may itself require grad.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s);
// 1 - x, elementwise.
template <typename T>
Tensor<T> one_minus(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// [m x k] . [k x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [n x in], w [out x in], bias [out] (may be undefined) -> x w^T + bias
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
// Mean over rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets);
// Mean of squared differences.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5));
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b);
// x [(reps*p) x c] plus p [p x c] tiled down the rows.
template <typename T>
Tensor<T> add_tiled(const Tensor<T>& x, const Tensor<T>& p);

// Multi-head causal self-attention over `batch` sequences of length `seq`.
// q, k, v: [batch*seq x d] with d = heads * head_dim. When `probs_out` is
// non-null it receives the attention weights as [batch][head][query][key].
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, std::size_t batch,
                           std::size_t seq, std::size_t heads,
                           std::vector<T>* probs_out = nullptr);

// ---------------------------------------------------------------------------
// Finite-difference oracle. Returns the max over all coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|) with central
// differences of step eps. Parameters are restored on exit.
double grad_check(const std::function<Tensor<double>()>& f,
                  std::vector<Tensor<double>> params, double eps = 1e-5);

}  // namespace glad
