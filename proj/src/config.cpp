#include "glad/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "glad/error.hpp"

namespace glad {

std::string to_string(FusionMode m) {
  return m == FusionMode::late_hidden ? "late_hidden" : "early_weighted";
}

std::string to_string(Stage s) { return s == Stage::pretrain ? "pretrain" : "posttrain"; }

FusionMode parse_fusion(std::string_view s) {
  if (s == "late_hidden" || s == "late") return FusionMode::late_hidden;
  if (s == "early_weighted" || s == "early") return FusionMode::early_weighted;
  throw ConfigError("unknown fusion mode '" + std::string(s) + "'");
}

Stage parse_stage(std::string_view s) {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "posttrain") return Stage::posttrain;
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(image_size > 0 && patch_size > 0, "image_size and patch_size must be positive");
  need(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  need(d_llm > 0 && n_heads > 0 && d_llm % n_heads == 0, "d_llm must be divisible by n_heads");
  need(d_llm % 2 == 0, "d_llm must be even (two encoder streams)");
  need(n_layers >= 1, "n_layers must be >= 1");
  need(mlp_ratio >= 1, "mlp_ratio must be >= 1");
  need(vocab >= 2 && action_codebook >= 2, "vocab and action_codebook must be >= 2");
  need(action_len >= 1 && instr_len >= 1, "action_len and instr_len must be >= 1");
  need(d_teacher >= 1, "d_teacher must be >= 1");
  need(teacher_tokens >= 1 && teacher_frames >= 1, "teacher tokens/frames must be >= 1");
  need(align_layer >= 1 && align_layer <= n_layers,
       "align_layer " + std::to_string(align_layer) + " outside [1, " + std::to_string(n_layers) + "]");
  need(lambda >= 0.0, "lambda must be >= 0");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  need(lr > 0.0, "lr must be > 0");
  need(lr_posttrain > 0.0, "lr_posttrain must be > 0");
  need(referent_color_bias >= 0.0 && referent_color_bias <= 1.0, "referent_color_bias must be in [0, 1]");
  need(steps > 0, "steps must be > 0");
  need(batch_size > 0, "batch_size must be > 0");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
  need(eps > 0.0, "eps must be > 0");
  need(weight_decay >= 0.0, "weight_decay must be >= 0");
  need(grad_clip >= 0.0, "grad_clip must be >= 0");
  need(lora_rank >= 1, "lora_rank must be >= 1");
  need(dataset_size >= 0, "dataset_size must be >= 0");
  need(checkpoint_every >= 0, "checkpoint_every must be >= 0");
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

namespace {

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_dbl(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define GLAD_INT_FIELD(name, member)                                                      \
  {name, Field{[](const RunConfig& c) { return std::to_string(c.member); },               \
               [](RunConfig& c, const std::string& k, const std::string& v) {             \
                 c.member = parse_int<decltype(c.member)>(k, v);                          \
               }}}
#define GLAD_DBL_FIELD(name, member)                                                      \
  {name, Field{[](const RunConfig& c) { return format_double(c.member); },                \
               [](RunConfig& c, const std::string& k, const std::string& v) {             \
                 c.member = parse_dbl(k, v);                                              \
               }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      GLAD_INT_FIELD("model.image_size", model.image_size),
      GLAD_INT_FIELD("model.patch_size", model.patch_size),
      GLAD_INT_FIELD("model.d_llm", model.d_llm),
      GLAD_INT_FIELD("model.n_layers", model.n_layers),
      GLAD_INT_FIELD("model.n_heads", model.n_heads),
      GLAD_INT_FIELD("model.mlp_ratio", model.mlp_ratio),
      GLAD_INT_FIELD("model.vocab", model.vocab),
      GLAD_INT_FIELD("model.action_codebook", model.action_codebook),
      GLAD_INT_FIELD("model.action_len", model.action_len),
      GLAD_INT_FIELD("model.instr_len", model.instr_len),
      GLAD_INT_FIELD("model.d_teacher", model.d_teacher),
      GLAD_INT_FIELD("model.teacher_tokens", model.teacher_tokens),
      GLAD_INT_FIELD("model.teacher_frames", model.teacher_frames),
      GLAD_INT_FIELD("model.teacher_seed", model.teacher_seed),
      GLAD_INT_FIELD("model.align_layer", model.align_layer),
      {"model.fusion",
       Field{[](const RunConfig& c) { return to_string(c.model.fusion); },
             [](RunConfig& c, const std::string&, const std::string& v) {
               c.model.fusion = parse_fusion(v);
             }}},
      GLAD_DBL_FIELD("model.lambda", model.lambda),
      {"train.stage",
       Field{[](const RunConfig& c) { return to_string(c.train.stage); },
             [](RunConfig& c, const std::string&, const std::string& v) {
               c.train.stage = parse_stage(v);
             }}},
      GLAD_INT_FIELD("train.steps", train.steps),
      GLAD_INT_FIELD("train.batch_size", train.batch_size),
      GLAD_DBL_FIELD("train.lr", train.lr),
      GLAD_DBL_FIELD("train.lr_posttrain", train.lr_posttrain),
      GLAD_DBL_FIELD("train.referent_color_bias", train.referent_color_bias),
      GLAD_DBL_FIELD("train.beta1", train.beta1),
      GLAD_DBL_FIELD("train.beta2", train.beta2),
      GLAD_DBL_FIELD("train.eps", train.eps),
      GLAD_DBL_FIELD("train.weight_decay", train.weight_decay),
      GLAD_DBL_FIELD("train.grad_clip", train.grad_clip),
      GLAD_INT_FIELD("train.seed", train.seed),
      GLAD_INT_FIELD("train.checkpoint_every", train.checkpoint_every),
      GLAD_INT_FIELD("train.lora_rank", train.lora_rank),
      GLAD_DBL_FIELD("train.lora_alpha", train.lora_alpha),
      GLAD_INT_FIELD("train.dataset_size", train.dataset_size),
      {"train.suite",
       Field{[](const RunConfig& c) { return c.train.suite; },
             [](RunConfig& c, const std::string&, const std::string& v) { c.train.suite = v; }}},
  };
  return table;
}

#undef GLAD_INT_FIELD
#undef GLAD_DBL_FIELD

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues kv;
  for (const auto& [name, f] : fields()) kv[name] = f.get(cfg);
  return kv;
}

RunConfig apply_key_values(RunConfig base, const KeyValues& kv) {
  const auto& table = fields();
  for (const auto& [k, v] : kv) {
    auto it = table.find(k);
    if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second.set(base, k, v);
  }
  return base;
}

std::string to_canonical_text(const RunConfig& cfg) { return format_key_values(to_key_values(cfg)); }

RunConfig run_config_from_text(std::string_view text, RunConfig base) {
  return apply_key_values(std::move(base), parse_key_values(text));
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_text(ss.str(), std::move(base));
}

}  // namespace glad
