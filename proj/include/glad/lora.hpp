#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glad/rng.hpp"
#include "glad/tensor.hpp"

namespace glad {

// Low-rank adapter around a frozen dense layer:
//   y = x W^T + bias + (alpha / r) * (x A^T) B^T
// A starts Gaussian and B starts at zero, so a fresh adapter is an exact no-op.
template <typename T>
struct LoRAAdapter {
  Tensor<T> base_weight;  // d_out x d_in, frozen
  Tensor<T> base_bias;    // d_out, frozen (may be undefined)
  Tensor<T> a;            // r x d_in
  Tensor<T> b;            // d_out x r
  int rank = 0;
  double alpha = 0.0;

  T scaling() const { return static_cast<T>(alpha / rank); }
  std::size_t d_in() const { return base_weight.cols(); }
  std::size_t d_out() const { return base_weight.rows(); }
  std::size_t trainable_count() const { return a.numel() + b.numel(); }
};

// Freezes `weight`/`bias` and attaches a rank-r adapter. Requires
// 1 <= r <= min(d_in, d_out).
template <typename T>
LoRAAdapter<T> wrap_linear(Tensor<T> weight, Tensor<T> bias, int rank, double alpha, Rng& rng);

template <typename T>
Tensor<T> lora_forward(const LoRAAdapter<T>& adapter, const Tensor<T>& x);

// Dense W + (alpha / r) B A.
template <typename T>
Tensor<T> merge(const LoRAAdapter<T>& adapter);

// Dense layer that can carry one adapter.
template <typename T>
struct Linear {
  Tensor<T> weight;  // out x in
  Tensor<T> bias;    // out, or undefined
  std::optional<LoRAAdapter<T>> adapter;

  Tensor<T> operator()(const Tensor<T>& x) const {
    return adapter ? lora_forward(*adapter, x) : linear(x, weight, bias);
  }

  // Throws ContractError when already wrapped.
  void wrap(int rank, double alpha, Rng& rng);
  // Folds the adapter into `weight` and drops it. The merged weight stays
  // frozen; no adapter parameters remain.
  void merge_adapter();
  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
};

// Xavier-uniform weight, zero bias, from the named init stream.
template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, std::uint64_t seed,
                      const std::string& name, bool with_bias = true);

template <typename T>
void append_parameters(const Linear<T>& layer, const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>>>& out);

}  // namespace glad
