#include "glad/train.hpp"

#include <cmath>
#include <sstream>

#include "glad/error.hpp"
#include "glad/rng.hpp"

namespace glad {

template <typename T>
GladModel<T>::GladModel(const ModelConfig& cfg, std::uint64_t seed)
    : backbone(cfg, seed), align(AlignmentNetwork<T>::create(cfg, seed)) {
  if (cfg.fusion == FusionMode::early_weighted) fusion = EarlyFusion<T>::create(cfg, seed);
}

template <typename T>
Tensor<T> GladModel<T>::image_tokens(std::span<const T> images, std::size_t batch,
                                     const Tensor<T>& teacher) const {
  Tensor<T> vision = backbone.encode_images(images, batch);
  if (!fusion) return vision;
  if (!teacher.defined()) throw ContractError("early fusion needs teacher features");
  return weighted_fusion(vision, fusion->teacher_proj(teacher), fusion->gate);
}

template <typename T>
NamedTensors<T> GladModel<T>::named_parameters() const {
  NamedTensors<T> out = backbone.named_parameters();
  align.append_parameters(out);
  if (fusion) fusion->append_parameters(out);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<float> teacher_single(const Scene& scene, const ModelConfig& cfg) {
  const auto fmap = teacher_features(scene, cfg.teacher_frames, cfg.teacher_tokens, cfg.d_teacher,
                                     cfg.teacher_seed);
  const auto pooled = adaptive_pool(fmap, cfg.n_patches());
  const std::size_t n = pooled.tokens * pooled.dim;
  return {pooled.data.end() - static_cast<std::ptrdiff_t>(n), pooled.data.end()};
}

template <typename T>
Batch<T> make_batch(const std::vector<std::pair<Scene, Task>>& samples, const ModelConfig& cfg,
                    bool with_teacher) {
  Batch<T> b;
  b.size = samples.size();
  const std::size_t np = cfg.n_patches(), dt = cfg.d_teacher;
  std::vector<T> teacher;
  if (with_teacher) teacher.reserve(b.size * np * dt);
  for (const auto& [scene, task] : samples) {
    const auto img = render(scene, cfg.image_size);
    b.images.insert(b.images.end(), img.begin(), img.end());
    if (task.instruction.size() != static_cast<std::size_t>(cfg.instr_len) ||
        task.gold_actions.size() != static_cast<std::size_t>(cfg.action_len)) {
      throw ContractError("make_batch: task does not match instruction/action lengths");
    }
    b.instructions.insert(b.instructions.end(), task.instruction.begin(), task.instruction.end());
    b.actions.insert(b.actions.end(), task.gold_actions.begin(), task.gold_actions.end());
    if (with_teacher) {
      const auto f = teacher_single(scene, cfg);
      teacher.insert(teacher.end(), f.begin(), f.end());
    }
    b.scenes.push_back(scene);
  }
  if (with_teacher) b.teacher = Tensor<T>({b.size * np, dt}, std::move(teacher));
  return b;
}

std::uint64_t sample_seed(const TrainConfig& cfg, std::uint64_t step, std::size_t i) {
  std::uint64_t index = step * static_cast<std::uint64_t>(cfg.batch_size) + i;
  if (cfg.dataset_size > 0) index %= static_cast<std::uint64_t>(cfg.dataset_size);
  return Rng::derive(cfg.seed, "train.sample", index).next_u64();
}

TaskDistribution training_distribution(const RunConfig& cfg) {
  TaskDistribution d;
  d.instr_len = cfg.model.instr_len;
  d.referent_color_bias = cfg.train.referent_color_bias;
  const auto& s = cfg.train.suite;
  if (s == "plain") d.template_weights = {1, 0, 0, 0};
  else if (s == "depth") d.template_weights = {0, 1, 1, 0};
  else if (s == "relational") d.template_weights = {0, 0, 0, 1};
  else if (s != "all") throw ConfigError("unknown training suite '" + s + "'");
  return d;
}

template <typename T>
Batch<T> training_batch(const RunConfig& cfg, std::uint64_t step) {
  const auto dist = training_distribution(cfg);
  std::vector<std::pair<Scene, Task>> samples;
  samples.reserve(cfg.train.batch_size);
  for (int i = 0; i < cfg.train.batch_size; ++i) {
    samples.push_back(generate_scene(sample_seed(cfg.train, step, i), dist));
  }
#ifdef GLAD_NO_DISTILL
  const bool with_teacher = cfg.model.fusion == FusionMode::early_weighted;
#else
  const bool with_teacher = true;
#endif
  return make_batch<T>(samples, cfg.model, with_teacher);
}

// ---------------------------------------------------------------------------

template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params) {
  double ss = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) ss += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const T coef = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= coef;
    }
  }
  return norm;
}

template <typename T>
void adamw_update(std::vector<Tensor<T>>& params, AdamWState<T>& state, const AdamWConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    state.t.assign(params.size(), 0);
  }
  const T lr = static_cast<T>(cfg.lr), b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.eps);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.empty()) {
      m.assign(p.numel(), T(0));
      v.assign(p.numel(), T(0));
    }
    const std::uint64_t t = ++state.t[i];
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const T bc2_sqrt = static_cast<T>(std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(t))));
    const T step = lr / bc1;
    auto w = p.mutable_data();
    auto g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] *= decay;
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T denom = std::sqrt(v[j]) / bc2_sqrt + eps;
      w[j] -= step * (m[j] / denom);
    }
  }
}

std::string metrics_header() { return "step,l_vla,l_distill,l_total,grad_norm"; }

std::string metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os << m.step << ',' << format_double(m.l_vla) << ',' << format_double(m.l_distill) << ','
     << format_double(m.l_total) << ',' << format_double(m.grad_norm);
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Losses {
  Tensor<T> l_vla, l_distill, l_total;
};

template <typename T>
Losses<T> compute_losses(const GladModel<T>& model, const Batch<T>& batch, double lambda) {
  const auto& cfg = model.config();
  const std::size_t B = batch.size, N = cfg.action_len;
  std::vector<int> prefix(B * (N - 1));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i + 1 < N; ++i) prefix[b * (N - 1) + i] = batch.actions[b * N + i];

  Tensor<T> tokens = model.image_tokens(batch.images, B, batch.teacher);
  auto out = model.backbone.forward(tokens, batch.instructions, prefix, B, N - 1);
  Losses<T> l;
  l.l_vla = cross_entropy(model.backbone.action_logits(out), std::span<const int>(batch.actions));
  l.l_total = l.l_vla;
#ifndef GLAD_NO_DISTILL
  if (cfg.fusion == FusionMode::late_hidden) {
    Tensor<T> h_img = extract_image_hidden(out.stack, cfg.align_layer);
    l.l_distill = distill_loss(align(h_img, model.align), batch.teacher);
    // With lambda == 0 the distillation branch stays out of the graph, so the
    // alignment network receives no gradient at all.
    if (lambda > 0) l.l_total = total_loss(l.l_vla, l.l_distill, static_cast<T>(lambda));
  }
#else
  (void)lambda;
#endif
  return l;
}

}  // namespace

template <typename T>
LossBundle<T> evaluate_losses(const GladModel<T>& model, const Batch<T>& batch, double lambda) {
  NoGradGuard guard;
  auto l = compute_losses(model, batch, lambda);
  const T ld = l.l_distill.defined() ? l.l_distill.item() : T(0);
  return LossBundle<T>{l.l_vla.item(), ld, static_cast<T>(lambda), l.l_total.item()};
}

bool posttrain_trainable(const std::string& name) {
  return name.starts_with("lora.") || name.starts_with("head.") || name.starts_with("align.");
}

template <typename T>
Trainer<T>::Trainer(const RunConfig& cfg) : cfg_(cfg), model_(cfg.model, cfg.train.seed) {
  cfg_.model.validate();
  cfg_.train.validate();
  if (cfg_.train.stage == Stage::posttrain) {
    model_.backbone.install_lora(cfg_.train.lora_rank, cfg_.train.lora_alpha, cfg_.train.seed);
  }
  setup_trainable();
}

template <typename T>
Trainer<T>::Trainer(const RunConfig& cfg, GladModel<T> pretrained) : cfg_(cfg), model_(std::move(pretrained)) {
  cfg_.model.validate();
  cfg_.train.validate();
  if (cfg_.train.stage == Stage::posttrain && !model_.backbone.has_lora()) {
    model_.backbone.install_lora(cfg_.train.lora_rank, cfg_.train.lora_alpha, cfg_.train.seed);
  }
  setup_trainable();
}

template <typename T>
void Trainer<T>::setup_trainable() {
  trainable_names_.clear();
  const bool post = cfg_.train.stage == Stage::posttrain;
  for (auto& [name, t] : model_.named_parameters()) {
    const bool train = post ? posttrain_trainable(name) : true;
    t.set_requires_grad(train);
    if (train) trainable_names_.push_back(name);
  }
}

template <typename T>
std::vector<Tensor<T>> Trainer<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : trainable_named()) out.push_back(t);
  return out;
}

template <typename T>
NamedTensors<T> Trainer<T>::trainable_named() const {
  NamedTensors<T> out;
  for (auto& [name, t] : model_.named_parameters()) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

template <typename T>
StepMetrics Trainer<T>::step() {
  return step(training_batch<T>(cfg_, step_));
}

template <typename T>
StepMetrics Trainer<T>::step(const Batch<T>& batch) {
  auto params = trainable();
  for (auto& p : params) p.zero_grad();
  const double lambda = cfg_.model.lambda;
  auto l = compute_losses(model_, batch, lambda);
  StepMetrics m;
  m.step = step_ + 1;
  m.l_vla = static_cast<double>(l.l_vla.item());
  m.l_distill = l.l_distill.defined() ? static_cast<double>(l.l_distill.item()) : 0.0;
  m.l_total = static_cast<double>(l.l_total.item());
  if (!std::isfinite(m.l_total)) {
    throw NumericError("training step " + std::to_string(m.step) + ": loss is not finite");
  }
  l.l_total.backward();
  m.grad_norm = clip_grad_norm(params, cfg_.train.grad_clip);
  AdamWConfig oc;
  oc.lr = cfg_.train.stage == Stage::posttrain ? cfg_.train.lr_posttrain : cfg_.train.lr;
  oc.beta1 = cfg_.train.beta1;
  oc.beta2 = cfg_.train.beta2;
  oc.eps = cfg_.train.eps;
  oc.weight_decay = cfg_.train.weight_decay;
  oc.grad_clip = cfg_.train.grad_clip;
  adamw_update(params, opt_, oc);
  ++step_;
  return m;
}

template <typename T>
void Trainer<T>::run(std::uint64_t total_steps, const std::function<void(const StepMetrics&)>& on_step) {
  while (step_ < total_steps) {
    const auto m = step();
    if (on_step) on_step(m);
  }
}

ModelConfig gradcheck_config() {
  ModelConfig m;
  m.image_size = 16;
  m.patch_size = 8;
  m.d_llm = 16;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_teacher = 8;
  m.teacher_tokens = 16;
  m.align_layer = 2;
  return m;
}

double gradcheck_objective(std::uint64_t seed, double lambda) {
  const ModelConfig cfg = gradcheck_config();
  GladModel<double> model(cfg, seed);
  TaskDistribution dist;
  dist.instr_len = cfg.instr_len;
  std::vector<std::pair<Scene, Task>> samples;
  for (std::uint64_t i = 0; i < 2; ++i) samples.push_back(generate_scene(Rng::derive(seed, "gradcheck", i).next_u64(), dist));
  const auto batch = make_batch<double>(samples, cfg, true);
  std::vector<Tensor<double>> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  return grad_check([&] { return compute_losses(model, batch, lambda).l_total; }, params, 1e-5);
}

#define GLAD_INSTANTIATE(T)                                                                     \
  template struct GladModel<T>;                                                                 \
  template Batch<T> make_batch(const std::vector<std::pair<Scene, Task>>&, const ModelConfig&, \
                               bool);                                                           \
  template Batch<T> training_batch(const RunConfig&, std::uint64_t);                            \
  template double grad_norm(const std::vector<Tensor<T>>&);                                     \
  template double clip_grad_norm(std::vector<Tensor<T>>&, double);                              \
  template void adamw_update(std::vector<Tensor<T>>&, AdamWState<T>&, const AdamWConfig&);      \
  template LossBundle<T> evaluate_losses(const GladModel<T>&, const Batch<T>&, double);         \
  template class Trainer<T>;

GLAD_INSTANTIATE(float)
GLAD_INSTANTIATE(double)

#undef GLAD_INSTANTIATE

}  // namespace glad
