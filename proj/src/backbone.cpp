#include "glad/backbone.hpp"

#include <algorithm>
#include <numeric>

#include "glad/error.hpp"

namespace glad {

namespace {

template <typename T>
Tensor<T> gaussian_table(std::size_t rows, std::size_t cols, std::uint64_t seed,
                         const std::string& name, double sd) {
  Rng rng = Rng::derive(seed, "init." + name);
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(sd * rng.normal());
  return Tensor<T>({rows, cols}, std::move(v), true);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> layer_norm_params(std::size_t d) {
  return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
}

}  // namespace

std::size_t argmax_lowest(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmax_lowest(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
Backbone<T>::Backbone(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg.d_llm, pd = cfg.patch_dim();
  enc_a = make_linear<T>(pd, d / 2, seed, "enc_a");
  enc_b = make_linear<T>(pd, d / 2, seed, "enc_b");
  proj1 = make_linear<T>(d, d, seed, "proj.fc1");
  proj2 = make_linear<T>(d, d, seed, "proj.fc2");
  const std::size_t max_seq = cfg.n_patches() + cfg.instr_len + cfg.action_len;
  pos_emb = gaussian_table<T>(max_seq, d, seed, "pos_emb", 1.0);
  tok_emb = gaussian_table<T>(cfg.vocab, d, seed, "tok_emb", 1.0);
  act_emb = gaussian_table<T>(cfg.action_codebook, d, seed, "act_emb", 1.0);
  const std::size_t hidden = d * cfg.mlp_ratio;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    TransformerBlock<T> blk;
    std::tie(blk.ln1_gamma, blk.ln1_beta) = layer_norm_params<T>(d);
    blk.wq = make_linear<T>(d, d, seed, p + ".attn.wq");
    blk.wk = make_linear<T>(d, d, seed, p + ".attn.wk");
    blk.wv = make_linear<T>(d, d, seed, p + ".attn.wv");
    blk.wo = make_linear<T>(d, d, seed, p + ".attn.wo");
    std::tie(blk.ln2_gamma, blk.ln2_beta) = layer_norm_params<T>(d);
    blk.fc1 = make_linear<T>(d, hidden, seed, p + ".mlp.fc1");
    blk.fc2 = make_linear<T>(hidden, d, seed, p + ".mlp.fc2");
    blocks.push_back(std::move(blk));
  }
  std::tie(lnf_gamma, lnf_beta) = layer_norm_params<T>(d);
  head = make_linear<T>(d, cfg.action_codebook, seed, "head");
}

template <typename T>
Tensor<T> Backbone<T>::encode_images(std::span<const T> images, std::size_t batch) const {
  const std::size_t H = cfg_.image_size, P = cfg_.patch_size, G = H / P;
  if (batch == 0 || images.size() != batch * H * H * 3) {
    throw ConfigError("encode_image: got " + std::to_string(images.size()) + " values for " +
                      std::to_string(batch) + " images of " + std::to_string(H) + "x" +
                      std::to_string(H) + "x3");
  }
  const std::size_t pd = P * P * 3, np = G * G;
  std::vector<T> patches(batch * np * pd);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = images.data() + b * H * H * 3;
    for (std::size_t gy = 0; gy < G; ++gy) {
      for (std::size_t gx = 0; gx < G; ++gx) {
        T* dst = patches.data() + ((b * np) + gy * G + gx) * pd;
        for (std::size_t y = 0; y < P; ++y) {
          const T* src = img + ((gy * P + y) * H + gx * P) * 3;
          std::copy_n(src, P * 3, dst + y * P * 3);
        }
      }
    }
  }
  Tensor<T> x({batch * np, pd}, std::move(patches));
  Tensor<T> both = concat_cols(enc_a(x), enc_b(x));
  return proj2(gelu(proj1(both)));
}

template <typename T>
ForwardOutput<T> Backbone<T>::forward(const Tensor<T>& image_tokens,
                                      std::span<const int> instructions,
                                      std::span<const int> actions, std::size_t batch,
                                      std::size_t n_actions, bool keep_attention) const {
  const std::size_t np = cfg_.n_patches(), ni = cfg_.instr_len, d = cfg_.d_llm;
  if (batch == 0) throw ContractError("forward: empty batch");
  if (n_actions > static_cast<std::size_t>(cfg_.action_len)) {
    throw ContractError("forward: " + std::to_string(n_actions) + " action tokens exceed N = " +
                        std::to_string(cfg_.action_len));
  }
  if (image_tokens.rows() != batch * np || image_tokens.cols() != d) {
    throw DimensionError("forward: image tokens " + shape_str(image_tokens.shape()) +
                         " for batch " + std::to_string(batch));
  }
  if (instructions.size() != batch * ni || actions.size() != batch * n_actions) {
    throw ContractError("forward: malformed instruction/action spans");
  }
  const std::size_t S = np + ni + n_actions;

  std::vector<Tensor<T>> parts{image_tokens, embedding(tok_emb, instructions)};
  if (n_actions > 0) parts.push_back(embedding(act_emb, actions));
  Tensor<T> stacked = concat_rows(parts);
  std::vector<std::size_t> order(batch * S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t src;
      if (s < np) {
        src = b * np + s;
      } else if (s < np + ni) {
        src = batch * np + b * ni + (s - np);
      } else {
        src = batch * (np + ni) + b * n_actions + (s - np - ni);
      }
      order[b * S + s] = src;
    }
  }
  std::vector<std::size_t> pos_rows(S);
  std::iota(pos_rows.begin(), pos_rows.end(), std::size_t{0});
  Tensor<T> h = add_tiled(gather_rows(stacked, order), gather_rows(pos_emb, pos_rows));

  ForwardOutput<T> out;
  out.stack.batch = batch;
  out.stack.seq_len = S;
  out.stack.n_image = np;
  for (const auto& blk : blocks) {
    Tensor<T> a = layer_norm(h, blk.ln1_gamma, blk.ln1_beta);
    std::vector<T> probs;
    Tensor<T> att = causal_attention(blk.wq(a), blk.wk(a), blk.wv(a), batch, S,
                                     static_cast<std::size_t>(cfg_.n_heads),
                                     keep_attention ? &probs : nullptr);
    h = add(h, blk.wo(att));
    Tensor<T> m = layer_norm(h, blk.ln2_gamma, blk.ln2_beta);
    h = add(h, blk.fc2(gelu(blk.fc1(m))));
    out.stack.hidden.push_back(h);
    if (keep_attention) out.stack.attention.push_back(std::move(probs));
  }
  out.logits = head(layer_norm(h, lnf_gamma, lnf_beta));
  return out;
}

template <typename T>
ForwardOutput<T> Backbone<T>::forward(const TokenSequence<T>& seq, bool keep_attention) const {
  if (!seq.image_tokens.defined() || seq.instruction.empty()) {
    throw ContractError("forward: empty sequence");
  }
  if (seq.instruction.size() != static_cast<std::size_t>(cfg_.instr_len)) {
    throw ContractError("forward: instruction has " + std::to_string(seq.instruction.size()) +
                        " slots, expected " + std::to_string(cfg_.instr_len));
  }
  return forward(seq.image_tokens, seq.instruction, seq.actions, 1, seq.actions.size(),
                 keep_attention);
}

template <typename T>
Tensor<T> Backbone<T>::action_logits(const ForwardOutput<T>& out) const {
  const std::size_t N = cfg_.action_len, S = out.stack.seq_len;
  if (S < static_cast<std::size_t>(cfg_.action_query_pos(cfg_.action_len - 1)) + 1) {
    throw ContractError("action_logits: sequence too short for N action predictions");
  }
  std::vector<std::size_t> rows;
  rows.reserve(out.stack.batch * N);
  for (std::size_t b = 0; b < out.stack.batch; ++b) {
    for (std::size_t i = 0; i < N; ++i) {
      rows.push_back(b * S + cfg_.action_query_pos(static_cast<int>(i)));
    }
  }
  return gather_rows(out.logits, rows);
}

template <typename T>
NamedTensors<T> Backbone<T>::named_parameters() const {
  NamedTensors<T> out;
  append_parameters(enc_a, "enc_a", out);
  append_parameters(enc_b, "enc_b", out);
  append_parameters(proj1, "proj.fc1", out);
  append_parameters(proj2, "proj.fc2", out);
  out.emplace_back("pos_emb", pos_emb);
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("act_emb", act_emb);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& blk = blocks[l];
    const std::string p = "layers." + std::to_string(l);
    out.emplace_back(p + ".ln1.gamma", blk.ln1_gamma);
    out.emplace_back(p + ".ln1.beta", blk.ln1_beta);
    append_parameters(blk.wq, p + ".attn.wq", out);
    append_parameters(blk.wk, p + ".attn.wk", out);
    append_parameters(blk.wv, p + ".attn.wv", out);
    append_parameters(blk.wo, p + ".attn.wo", out);
    out.emplace_back(p + ".ln2.gamma", blk.ln2_gamma);
    out.emplace_back(p + ".ln2.beta", blk.ln2_beta);
    append_parameters(blk.fc1, p + ".mlp.fc1", out);
    append_parameters(blk.fc2, p + ".mlp.fc2", out);
  }
  out.emplace_back("lnf.gamma", lnf_gamma);
  out.emplace_back("lnf.beta", lnf_beta);
  append_parameters(head, "head", out);
  return out;
}

template <typename T>
void Backbone<T>::install_lora(int rank, double alpha, std::uint64_t seed) {
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "lora.layers." + std::to_string(l) + ".attn.";
    auto& blk = blocks[l];
    std::pair<Linear<T>*, const char*> targets[] = {
        {&blk.wq, "wq"}, {&blk.wk, "wk"}, {&blk.wv, "wv"}, {&blk.wo, "wo"}};
    for (auto& [layer, name] : targets) {
      Rng rng = Rng::derive(seed, p + name);
      layer->wrap(rank, alpha, rng);
    }
  }
}

template <typename T>
bool Backbone<T>::has_lora() const {
  return !blocks.empty() && blocks[0].wq.adapter.has_value();
}

template <typename T>
void Backbone<T>::merge_lora() {
  for (auto& blk : blocks) {
    for (Linear<T>* layer : {&blk.wq, &blk.wk, &blk.wv, &blk.wo}) layer->merge_adapter();
  }
}

template <typename T>
Tensor<T> extract_image_hidden(const HiddenStateStack<T>& stack, int layer) {
  if (layer < 1 || static_cast<std::size_t>(layer) > stack.depth()) {
    throw ConfigError("extract_image_hidden: layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(stack.depth()) + "]");
  }
  std::vector<std::size_t> rows;
  rows.reserve(stack.batch * stack.n_image);
  for (std::size_t b = 0; b < stack.batch; ++b) {
    for (std::size_t i = 0; i < stack.n_image; ++i) rows.push_back(b * stack.seq_len + i);
  }
  return gather_rows(stack.hidden[layer - 1], rows);
}

template <typename T>
std::vector<int> decode_actions(const Backbone<T>& model, const Tensor<T>& image_tokens,
                                std::span<const int> instructions, std::size_t batch) {
  NoGradGuard guard;
  const auto& cfg = model.config();
  const std::size_t N = cfg.action_len, K = cfg.action_codebook;
  std::vector<int> decoded(batch * N, 0);
  std::vector<int> prefix;
  for (std::size_t i = 0; i < N; ++i) {
    prefix.assign(batch * i, 0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < i; ++j) prefix[b * i + j] = decoded[b * N + j];
    auto out = model.forward(image_tokens, instructions, prefix, batch, i);
    const std::size_t S = out.stack.seq_len;
    const std::size_t q = cfg.action_query_pos(static_cast<int>(i));
    for (std::size_t b = 0; b < batch; ++b) {
      auto row = out.logits.data().subspan((b * S + q) * K, K);
      decoded[b * N + i] = static_cast<int>(argmax_lowest(row));
    }
  }
  return decoded;
}

template <typename T>
std::vector<T> attention_map(const HiddenStateStack<T>& stack, int layer, int head,
                             std::size_t query_position) {
  if (stack.attention.empty()) throw ContractError("attention_map: attention was not recorded");
  if (layer < 1 || static_cast<std::size_t>(layer) > stack.attention.size()) {
    throw ConfigError("attention_map: layer " + std::to_string(layer) + " outside [1, " +
                      std::to_string(stack.attention.size()) + "]");
  }
  const std::size_t S = stack.seq_len;
  const std::size_t heads = stack.attention[layer - 1].size() / (stack.batch * S * S);
  if (head >= static_cast<int>(heads)) {
    throw ConfigError("attention_map: head " + std::to_string(head) + " outside [0, " +
                      std::to_string(heads) + ")");
  }
  if (query_position >= S) {
    throw ConfigError("attention_map: query " + std::to_string(query_position) +
                      " outside sequence of length " + std::to_string(S));
  }
  const auto& probs = stack.attention[layer - 1];
  std::vector<T> map(stack.n_image, T(0));
  const std::size_t h0 = head < 0 ? 0 : static_cast<std::size_t>(head);
  const std::size_t h1 = head < 0 ? heads : h0 + 1;
  for (std::size_t h = h0; h < h1; ++h) {
    const T* row = probs.data() + (h * S + query_position) * S;
    for (std::size_t j = 0; j < stack.n_image; ++j) map[j] += row[j];
  }
  T total = 0;
  for (auto v : map) total += v;
  if (total > T(0)) {
    for (auto& v : map) v /= total;
  }
  return map;
}

template <typename T>
std::vector<T> attention_map(const Backbone<T>& model, const Tensor<T>& image_tokens,
                             std::span<const int> instruction, int layer, int head,
                             std::size_t query_position) {
  NoGradGuard guard;
  const auto& cfg = model.config();
  // Run the full teacher-forcing length so every query position exists; the
  // causal mask makes the placeholder actions irrelevant to earlier rows.
  const std::size_t na = cfg.action_len - 1;
  std::vector<int> actions(na, 0);
  auto out = model.forward(image_tokens, instruction, actions, 1, na, true);
  return attention_map(out.stack, layer, head, query_position);
}

#define GLAD_INSTANTIATE(T)                                                                 \
  template class Backbone<T>;                                                               \
  template Tensor<T> extract_image_hidden(const HiddenStateStack<T>&, int);                 \
  template std::vector<int> decode_actions(const Backbone<T>&, const Tensor<T>&,            \
                                           std::span<const int>, std::size_t);              \
  template std::vector<T> attention_map(const HiddenStateStack<T>&, int, int, std::size_t); \
  template std::vector<T> attention_map(const Backbone<T>&, const Tensor<T>&,               \
                                        std::span<const int>, int, int, std::size_t);

GLAD_INSTANTIATE(float)
GLAD_INSTANTIATE(double)

#undef GLAD_INSTANTIATE

}  // namespace glad
