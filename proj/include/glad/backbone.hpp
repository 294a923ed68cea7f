#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "glad/config.hpp"
#include "glad/lora.hpp"
#include "glad/tensor.hpp"

namespace glad {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// A single (image | instruction | action) sequence. Segments are contiguous
// and ordered; `image_tokens` are already embedded, the rest are ids.
template <typename T>
struct TokenSequence {
  Tensor<T> image_tokens;          // N_p x d_llm
  std::vector<int> instruction;    // instr_len ids < vocab
  std::vector<int> actions;        // action prefix, ids < K, length <= N
  struct Span {
    std::size_t begin = 0, end = 0;
  };
  Span image_span() const { return {0, image_tokens.rows()}; }
  Span instruction_span() const {
    return {image_tokens.rows(), image_tokens.rows() + instruction.size()};
  }
  Span action_span() const {
    const auto s = instruction_span().end;
    return {s, s + actions.size()};
  }
};

// Per-layer hidden states and attention weights of a batched forward pass.
template <typename T>
struct HiddenStateStack {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t n_image = 0;
  std::vector<Tensor<T>> hidden;         // per layer: (batch*seq) x d_llm
  std::vector<std::vector<T>> attention; // per layer: [batch][head][query][key]
  std::size_t depth() const { return hidden.size(); }
};

template <typename T>
struct ForwardOutput {
  HiddenStateStack<T> stack;
  Tensor<T> logits;  // (batch*seq) x K
};

template <typename T>
struct TransformerBlock {
  Tensor<T> ln1_gamma, ln1_beta;
  Linear<T> wq, wk, wv, wo;
  Tensor<T> ln2_gamma, ln2_beta;
  Linear<T> fc1, fc2;
};

// Toy vision-language-action policy: two linear patch encoders whose outputs
// are concatenated and projected by a two-layer MLP, then a pre-norm causal
// transformer over [image | instruction | action] with a head over the action
// codebook.
template <typename T>
class Backbone {
 public:
  Backbone(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // images: batch x H x W x 3, row-major, values in [0, 1].
  // Returns (batch * N_p) x d_llm, patch-major within each image.
  Tensor<T> encode_images(std::span<const T> images, std::size_t batch) const;
  Tensor<T> encode_image(std::span<const T> image) const { return encode_images(image, 1); }

  // image_tokens: (batch * N_p) x d_llm. instructions: batch x instr_len.
  // actions: batch x n_actions with n_actions <= N.
  ForwardOutput<T> forward(const Tensor<T>& image_tokens, std::span<const int> instructions,
                           std::span<const int> actions, std::size_t batch,
                           std::size_t n_actions, bool keep_attention = false) const;
  ForwardOutput<T> forward(const TokenSequence<T>& seq, bool keep_attention = false) const;

  // Final LayerNorm + head rows used for the action loss: for every sample
  // the N positions preceding action slots, in order. Needs n_actions == N-1.
  Tensor<T> action_logits(const ForwardOutput<T>& out) const;

  NamedTensors<T> named_parameters() const;

  // LoRA on attention q/k/v/o projections of every block.
  void install_lora(int rank, double alpha, std::uint64_t seed);
  bool has_lora() const;
  void merge_lora();

  Linear<T> enc_a, enc_b;
  Linear<T> proj1, proj2;
  Tensor<T> pos_emb;   // max_seq x d_llm
  Tensor<T> tok_emb;   // vocab x d_llm
  Tensor<T> act_emb;   // K x d_llm
  std::vector<TransformerBlock<T>> blocks;
  Tensor<T> lnf_gamma, lnf_beta;
  Linear<T> head;

 private:
  ModelConfig cfg_;
};

// Rows [0, N_p) of every sequence at the given 1-based layer.
template <typename T>
Tensor<T> extract_image_hidden(const HiddenStateStack<T>& stack, int layer);

// Greedy decoding of N action tokens; argmax ties go to the lowest id.
// `image_tokens` is (batch * N_p) x d_llm.
template <typename T>
std::vector<int> decode_actions(const Backbone<T>& model, const Tensor<T>& image_tokens,
                                std::span<const int> instructions, std::size_t batch);

// Attention from `query_position` onto the image span of sample 0, for the
// given 1-based layer and head (head < 0 averages heads), renormalized over
// the span.
template <typename T>
std::vector<T> attention_map(const HiddenStateStack<T>& stack, int layer, int head,
                             std::size_t query_position);

template <typename T>
std::vector<T> attention_map(const Backbone<T>& model, const Tensor<T>& image_tokens,
                             std::span<const int> instruction, int layer, int head,
                             std::size_t query_position);

std::size_t argmax_lowest(std::span<const float> v);
std::size_t argmax_lowest(std::span<const double> v);

}  // namespace glad
