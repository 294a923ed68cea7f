#pragma once

#include <cstdint>

#include "glad/backbone.hpp"
#include "glad/config.hpp"
#include "glad/lora.hpp"
#include "glad/tensor.hpp"

namespace glad {

// Two-layer MLP mapping image-token hidden states into teacher feature space:
// d_llm -> d_hidden (= d_t) -> GELU -> d_t.
template <typename T>
struct AlignmentNetwork {
  Linear<T> fc1;
  Linear<T> fc2;

  static AlignmentNetwork create(const ModelConfig& cfg, std::uint64_t seed);
  std::size_t in_features() const { return fc1.in_features(); }
  std::size_t out_features() const { return fc2.out_features(); }
  std::size_t parameter_count() const;
  void append_parameters(NamedTensors<T>& out) const;
};

// Early-fusion ablation: teacher features are projected to d_llm and blended
// with the vision tokens through a scalar sigmoid gate.
template <typename T>
struct EarlyFusion {
  Linear<T> teacher_proj;  // d_t -> d_llm
  Tensor<T> gate;          // scalar pre-sigmoid weight, starts at 0

  static EarlyFusion create(const ModelConfig& cfg, std::uint64_t seed);
  void append_parameters(NamedTensors<T>& out) const;
};

// H_aligned = MLP(H_img), applied row-wise.
template <typename T>
Tensor<T> align(const Tensor<T>& h_img, const AlignmentNetwork<T>& net);

// Mean of squared differences over all N_p x d_t entries.
template <typename T>
Tensor<T> distill_loss(const Tensor<T>& h_aligned, const Tensor<T>& f_single);

template <typename T>
struct LossBundle {
  T l_vla = 0;
  T l_distill = 0;
  T lambda = 0;
  T l_total = 0;
};

// l_total = l_vla + lambda * l_distill. Throws ConfigError for lambda < 0.
template <typename T>
LossBundle<T> total_loss(T l_vla, T l_distill, T lambda);

// Differentiable form of the combined objective.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_vla, const Tensor<T>& l_distill, T lambda);

// sigmoid(w) * teacher_proj + (1 - sigmoid(w)) * vision_feats
template <typename T>
Tensor<T> weighted_fusion(const Tensor<T>& vision_feats, const Tensor<T>& teacher_proj,
                          const Tensor<T>& w_param);

}  // namespace glad
