#include "glad/lora.hpp"

#include <algorithm>
#include <cmath>

#include "glad/error.hpp"

namespace glad {

template <typename T>
LoRAAdapter<T> wrap_linear(Tensor<T> weight, Tensor<T> bias, int rank, double alpha, Rng& rng) {
  const std::size_t d_out = weight.rows(), d_in = weight.cols();
  if (rank < 1 || static_cast<std::size_t>(rank) > std::min(d_in, d_out)) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " outside [1, " +
                      std::to_string(std::min(d_in, d_out)) + "] for weight " +
                      shape_str(weight.shape()));
  }
  LoRAAdapter<T> ad;
  weight.set_requires_grad(false);
  if (bias.defined()) bias.set_requires_grad(false);
  ad.base_weight = std::move(weight);
  ad.base_bias = std::move(bias);
  ad.rank = rank;
  ad.alpha = alpha;

  const std::size_t r = static_cast<std::size_t>(rank);
  std::vector<T> a(r * d_in);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (auto& v : a) v = static_cast<T>(sd * rng.normal());
  ad.a = Tensor<T>({r, d_in}, std::move(a), true);
  ad.b = Tensor<T>::zeros({d_out, r}, true);
  return ad;
}

template <typename T>
Tensor<T> lora_forward(const LoRAAdapter<T>& ad, const Tensor<T>& x) {
  if (x.dim() != 2 || x.cols() != ad.d_in()) {
    throw DimensionError("lora_forward: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(ad.base_weight.shape()));
  }
  const Tensor<T> none;
  Tensor<T> base = linear(x, ad.base_weight, ad.base_bias);
  Tensor<T> low = linear(linear(x, ad.a, none), ad.b, none);
  return add(base, scale(low, ad.scaling()));
}

template <typename T>
Tensor<T> merge(const LoRAAdapter<T>& ad) {
  NoGradGuard guard;
  Tensor<T> delta = matmul(ad.b, ad.a);
  const T s = ad.scaling();
  std::vector<T> w(ad.base_weight.data().begin(), ad.base_weight.data().end());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * delta[i];
  return Tensor<T>(ad.base_weight.shape(), std::move(w), false);
}

template <typename T>
void Linear<T>::wrap(int rank, double alpha, Rng& rng) {
  if (adapter) throw ContractError("linear layer already carries a LoRA adapter");
  adapter = wrap_linear(weight, bias, rank, alpha, rng);
}

template <typename T>
void Linear<T>::merge_adapter() {
  if (!adapter) return;
  Tensor<T> merged = merge(*adapter);
  std::copy(merged.data().begin(), merged.data().end(), weight.mutable_data().begin());
  adapter.reset();
}

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name,
                      bool with_bias) {
  Rng rng = Rng::derive(seed, "init." + name + ".weight");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
  Linear<T> l;
  l.weight = Tensor<T>({out, in}, std::move(w), true);
  if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <typename T>
void append_parameters(const Linear<T>& layer, const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>>>& out) {
  out.emplace_back(prefix + ".weight", layer.weight);
  if (layer.bias.defined()) out.emplace_back(prefix + ".bias", layer.bias);
  if (layer.adapter) {
    out.emplace_back("lora." + prefix + ".a", layer.adapter->a);
    out.emplace_back("lora." + prefix + ".b", layer.adapter->b);
  }
}

#define GLAD_INSTANTIATE(T)                                                                  \
  template LoRAAdapter<T> wrap_linear(Tensor<T>, Tensor<T>, int, double, Rng&);              \
  template Tensor<T> lora_forward(const LoRAAdapter<T>&, const Tensor<T>&);                  \
  template Tensor<T> merge(const LoRAAdapter<T>&);                                           \
  template struct Linear<T>;                                                                 \
  template Linear<T> make_linear(std::size_t, std::size_t, std::uint64_t, const std::string&, \
                                 bool);                                                      \
  template void append_parameters(const Linear<T>&, const std::string&,                      \
                                  std::vector<std::pair<std::string, Tensor<T>>>&);

GLAD_INSTANTIATE(float)
GLAD_INSTANTIATE(double)

#undef GLAD_INSTANTIATE

}  // namespace glad
