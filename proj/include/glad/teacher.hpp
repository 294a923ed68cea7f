#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glad/task.hpp"
#include "glad/tensor.hpp"

namespace glad {

// Teacher output for one scene: frames x tokens x dim, stored as f32 so that
// the file format round-trips exactly.
struct GeometryFeatureMap {
  std::size_t frames = 0;
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::vector<float> data;

  float at(std::size_t t, std::size_t l, std::size_t d) const {
    return data[(t * tokens + l) * dim + d];
  }
  bool operator==(const GeometryFeatureMap&) const = default;
};

constexpr int kTeacherResolution = 64;
constexpr std::size_t kDescriptorDim = 7;

// Raw per-token descriptors [depth, x, y, z, distance, |grad_x|, |grad_y|] for
// a token grid of side sqrt(tokens). Gradients are block means of absolute
// central differences, in depth units per table cell. When the grid side is a multiple of the
// table side, tokens are ordered cell-major (all tokens of table cell 0, then
// cell 1, ...) so that 1-D pooling down to one token per cell averages
// within cells. Otherwise tokens are row-major.
std::vector<double> geometry_descriptors(const Scene& scene, std::size_t tokens);

// Token index order used by geometry_descriptors: element k is the row-major
// grid index of the k-th token.
std::vector<std::size_t> token_order(std::size_t tokens);

// Fixed lifting matrix (descriptor_dim x dim) drawn from teacher_seed.
std::vector<double> teacher_projection(std::size_t dim, std::uint64_t teacher_seed);

GeometryFeatureMap teacher_features(const Scene& scene, std::size_t frames, std::size_t tokens,
                                    std::size_t dim, std::uint64_t teacher_seed);

// out[j] = mean of in[floor(j*L/n) .. ceil((j+1)*L/n)), per frame.
GeometryFeatureMap adaptive_pool(const GeometryFeatureMap& fmap, std::size_t n_out);

// Features of frame T-1 as an (tokens x dim) tensor without gradient.
template <typename T>
Tensor<T> last_frame(const GeometryFeatureMap& fmap, std::size_t expected_tokens);

void save_teacher_file(const GeometryFeatureMap& fmap, const std::string& path);
GeometryFeatureMap load_teacher_file(const std::string& path);
std::string encode_teacher(const GeometryFeatureMap& fmap);
GeometryFeatureMap decode_teacher(const std::string& bytes);

}  // namespace glad
