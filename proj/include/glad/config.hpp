#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace glad {

enum class FusionMode { late_hidden, early_weighted };
enum class Stage { pretrain, posttrain };

std::string to_string(FusionMode m);
std::string to_string(Stage s);
FusionMode parse_fusion(std::string_view s);
Stage parse_stage(std::string_view s);

// Architecture of the toy policy and of the teacher it distills from.
struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int d_llm = 64;
  int n_layers = 4;
  int n_heads = 4;
  int mlp_ratio = 4;
  int vocab = 64;
  int action_codebook = 16;  // K
  int action_len = 4;        // N
  int instr_len = 6;         // instruction slots, padded with token 0
  int d_teacher = 32;        // d_t
  int teacher_tokens = 256;  // L, a grid over the image
  int teacher_frames = 1;    // T
  std::uint64_t teacher_seed = 7;
  int align_layer = 4;       // 1-based, in [1, n_layers]
  FusionMode fusion = FusionMode::late_hidden;
  double lambda = 0.1;

  int n_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int seq_len() const { return n_patches() + instr_len + action_len - 1; }
  int head_dim() const { return d_llm / n_heads; }
  // Row of the sequence whose logits predict action token i (0-based).
  int action_query_pos(int i) const { return n_patches() + instr_len - 1 + i; }

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

struct TrainConfig {
  Stage stage = Stage::pretrain;
  int steps = 2000;
  int batch_size = 32;
  double lr = 3e-4;
  double lr_posttrain = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 = only at the end
  int lora_rank = 8;
  double lora_alpha = 16.0;
  // 0 = fresh scenes every step; >0 = cycle over a fixed set of this size.
  int dataset_size = 0;
  std::string suite = "all";
  // Probability that the training referent is marked red (see TaskDistribution).
  double referent_color_bias = 0.0;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Canonical text: one `key=value` line per field, keys sorted, doubles in
// shortest round-trip form. Parsing accepts `key = value`, blank lines and
// `#` comments; unknown keys are a ConfigError.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);

KeyValues to_key_values(const RunConfig& cfg);
// Applies the given keys on top of `base`.
RunConfig apply_key_values(RunConfig base, const KeyValues& kv);

std::string to_canonical_text(const RunConfig& cfg);
RunConfig run_config_from_text(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

std::string format_double(double v);

}  // namespace glad
