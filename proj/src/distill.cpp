#include "glad/distill.hpp"

#include "glad/error.hpp"

namespace glad {

template <typename T>
AlignmentNetwork<T> AlignmentNetwork<T>::create(const ModelConfig& cfg, std::uint64_t seed) {
  AlignmentNetwork net;
  net.fc1 = make_linear<T>(cfg.d_llm, cfg.d_teacher, seed, "align.fc1");
  net.fc2 = make_linear<T>(cfg.d_teacher, cfg.d_teacher, seed, "align.fc2");
  return net;
}

template <typename T>
std::size_t AlignmentNetwork<T>::parameter_count() const {
  return fc1.weight.numel() + fc1.bias.numel() + fc2.weight.numel() + fc2.bias.numel();
}

template <typename T>
void AlignmentNetwork<T>::append_parameters(NamedTensors<T>& out) const {
  glad::append_parameters(fc1, "align.fc1", out);
  glad::append_parameters(fc2, "align.fc2", out);
}

template <typename T>
EarlyFusion<T> EarlyFusion<T>::create(const ModelConfig& cfg, std::uint64_t seed) {
  EarlyFusion f;
  f.teacher_proj = make_linear<T>(cfg.d_teacher, cfg.d_llm, seed, "fusion.teacher_proj");
  f.gate = Tensor<T>::scalar(T(0), true);
  return f;
}

template <typename T>
void EarlyFusion<T>::append_parameters(NamedTensors<T>& out) const {
  glad::append_parameters(teacher_proj, "fusion.teacher_proj", out);
  out.emplace_back("fusion.gate", gate);
}

template <typename T>
Tensor<T> align(const Tensor<T>& h_img, const AlignmentNetwork<T>& net) {
  if (h_img.dim() != 2 || h_img.cols() != net.in_features()) {
    throw DimensionError("align: hidden states " + shape_str(h_img.shape()) +
                         " do not fit alignment input width " + std::to_string(net.in_features()));
  }
  return net.fc2(gelu(net.fc1(h_img)));
}

template <typename T>
Tensor<T> distill_loss(const Tensor<T>& h_aligned, const Tensor<T>& f_single) {
  if (h_aligned.shape() != f_single.shape()) {
    throw DimensionError("distill_loss: aligned " + shape_str(h_aligned.shape()) +
                         " vs teacher " + shape_str(f_single.shape()));
  }
  return mse(h_aligned, f_single);
}

template <typename T>
LossBundle<T> total_loss(T l_vla, T l_distill, T lambda) {
  if (!(lambda >= T(0))) throw ConfigError("total_loss: lambda must be >= 0");
  return LossBundle<T>{l_vla, l_distill, lambda, l_vla + lambda * l_distill};
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_vla, const Tensor<T>& l_distill, T lambda) {
  if (!(lambda >= T(0))) throw ConfigError("total_loss: lambda must be >= 0");
  return add(l_vla, scale(l_distill, lambda));
}

template <typename T>
Tensor<T> weighted_fusion(const Tensor<T>& vision_feats, const Tensor<T>& teacher_proj,
                          const Tensor<T>& w_param) {
  if (vision_feats.shape() != teacher_proj.shape()) {
    throw DimensionError("weighted_fusion: vision " + shape_str(vision_feats.shape()) +
                         " vs teacher " + shape_str(teacher_proj.shape()));
  }
  Tensor<T> g = sigmoid(w_param);
  return add(scale_by(teacher_proj, g), scale_by(vision_feats, one_minus(g)));
}

#define GLAD_INSTANTIATE(T)                                                                   \
  template struct AlignmentNetwork<T>;                                                        \
  template struct EarlyFusion<T>;                                                             \
  template Tensor<T> align(const Tensor<T>&, const AlignmentNetwork<T>&);                     \
  template Tensor<T> distill_loss(const Tensor<T>&, const Tensor<T>&);                        \
  template LossBundle<T> total_loss(T, T, T);                                                 \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, T);                       \
  template Tensor<T> weighted_fusion(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

GLAD_INSTANTIATE(float)
GLAD_INSTANTIATE(double)

#undef GLAD_INSTANTIATE

}  // namespace glad
