#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glad/backbone.hpp"
#include "glad/config.hpp"
#include "glad/distill.hpp"
#include "glad/task.hpp"
#include "glad/teacher.hpp"

namespace glad {

// Student policy plus the modules that only exist for distillation.
template <typename T>
struct GladModel {
  GladModel(const ModelConfig& cfg, std::uint64_t seed);

  Backbone<T> backbone;
  AlignmentNetwork<T> align;
  std::optional<EarlyFusion<T>> fusion;  // early_weighted only

  const ModelConfig& config() const { return backbone.config(); }
  // Image tokens for a batch, blended with projected teacher features when
  // the model uses early fusion. `teacher` is (batch*N_p) x d_t.
  Tensor<T> image_tokens(std::span<const T> images, std::size_t batch, const Tensor<T>& teacher) const;
  NamedTensors<T> named_parameters() const;
};

// One training (or evaluation) batch.
template <typename T>
struct Batch {
  std::size_t size = 0;
  std::vector<T> images;           // size x H x W x 3
  std::vector<int> instructions;   // size x instr_len
  std::vector<int> actions;        // size x N (gold)
  Tensor<T> teacher;               // (size*N_p) x d_t, no grad
  std::vector<Scene> scenes;
};

// Teacher features for one scene, pooled to N_p tokens and reduced to the
// last frame, as (N_p x d_t) floats.
std::vector<float> teacher_single(const Scene& scene, const ModelConfig& cfg);

template <typename T>
Batch<T> make_batch(const std::vector<std::pair<Scene, Task>>& samples, const ModelConfig& cfg,
                    bool with_teacher = true);

// Seed of sample i in training step `step`. With a fixed dataset the stream
// cycles over `dataset_size` samples.
std::uint64_t sample_seed(const TrainConfig& cfg, std::uint64_t step, std::size_t i);

TaskDistribution training_distribution(const RunConfig& cfg);

template <typename T>
Batch<T> training_batch(const RunConfig& cfg, std::uint64_t step);

// Plain AdamW with decoupled weight decay and per-parameter step counts.
// Parameters without a gradient in a step are skipped entirely.
template <typename T>
struct AdamWState {
  std::vector<std::vector<T>> m, v;
  std::vector<std::uint64_t> t;
};

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // 0 disables clipping
};

// Global L2 norm over all present gradients.
template <typename T>
double grad_norm(const std::vector<Tensor<T>>& params);

// Scales gradients so their global norm is at most max_norm; returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm);

template <typename T>
void adamw_update(std::vector<Tensor<T>>& params, AdamWState<T>& state, const AdamWConfig& cfg);

struct StepMetrics {
  std::uint64_t step = 0;
  double l_vla = 0;
  double l_distill = 0;
  double l_total = 0;
  double grad_norm = 0;
};

std::string metrics_header();
std::string metrics_row(const StepMetrics& m);

// Losses of a batch without updating anything.
template <typename T>
LossBundle<T> evaluate_losses(const GladModel<T>& model, const Batch<T>& batch, double lambda);

// Owns model, optimizer and step counter for one stage.
template <typename T>
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);
  // Starts stage 2 from a stage-1 model: installs LoRA and freezes dense weights.
  Trainer(const RunConfig& cfg, GladModel<T> pretrained);

  StepMetrics step();
  StepMetrics step(const Batch<T>& batch);
  // Runs until `total_steps` steps have been taken in this stage.
  void run(std::uint64_t total_steps, const std::function<void(const StepMetrics&)>& on_step = {});

  GladModel<T>& model() { return model_; }
  const GladModel<T>& model() const { return model_; }
  const RunConfig& config() const { return cfg_; }
  std::uint64_t steps_done() const { return step_; }
  std::vector<Tensor<T>> trainable() const;
  NamedTensors<T> trainable_named() const;
  AdamWState<T>& optimizer() { return opt_; }
  const AdamWState<T>& optimizer() const { return opt_; }
  void set_steps_done(std::uint64_t s) { step_ = s; }
  // Moves the stopping point; everything else about the run stays fixed.
  void set_total_steps(int steps) {
    cfg_.train.steps = steps;
    cfg_.train.validate();
  }

 private:
  void setup_trainable();

  RunConfig cfg_;
  GladModel<T> model_;
  AdamWState<T> opt_;
  std::uint64_t step_ = 0;
  std::vector<std::string> trainable_names_;
};

// Toy model for the finite-difference oracle: d_llm 16, 2 layers, N_p 4, d_t 8.
ModelConfig gradcheck_config();
// Max relative error of the analytic gradient of l_vla + lambda * l_distill
// over every parameter of the f64 toy model, against central differences.
double gradcheck_objective(std::uint64_t seed, double lambda = 0.5);

// Parameter names trainable in stage 2: LoRA factors, action head, alignment net.
bool posttrain_trainable(const std::string& name);

}  // namespace glad
