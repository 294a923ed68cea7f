#include "glad/teacher.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "glad/error.hpp"
#include "glad/rng.hpp"

namespace glad {

namespace {

constexpr char kMagic[4] = {'G', 'T', 'E', 'A'};
constexpr std::uint32_t kVersion = 1;

std::size_t grid_side(std::size_t tokens) {
  auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (g == 0 || g * g != tokens || kTeacherResolution % g != 0) {
    throw ConfigError("teacher: token count " + std::to_string(tokens) +
                      " must be a square grid dividing " + std::to_string(kTeacherResolution));
  }
  return g;
}

}  // namespace

std::vector<std::size_t> token_order(std::size_t tokens) {
  const std::size_t g = grid_side(tokens);
  std::vector<std::size_t> order;
  order.reserve(tokens);
  if (g % kGridSide != 0) {
    for (std::size_t i = 0; i < tokens; ++i) order.push_back(i);
    return order;
  }
  const std::size_t sub = g / kGridSide;
  for (int cy = 0; cy < kGridSide; ++cy)
    for (int cx = 0; cx < kGridSide; ++cx)
      for (std::size_t sy = 0; sy < sub; ++sy)
        for (std::size_t sx = 0; sx < sub; ++sx)
          order.push_back((cy * sub + sy) * g + cx * sub + sx);
  return order;
}

std::vector<double> geometry_descriptors(const Scene& scene, std::size_t tokens) {
  for (const auto& o : scene.objects) {
    if (!std::isfinite(o.depth) || o.depth <= 0.0 || o.depth >= 1.0 || o.cell < 0 ||
        o.cell >= kGridCells) {
      throw ContractError("teacher_features: scene object lacks valid geometry");
    }
  }
  const int res = kTeacherResolution;
  const std::size_t g = grid_side(tokens);
  const std::size_t block = res / g;
  const auto depth = depth_map(scene, res);
  const double cell_px = static_cast<double>(res) / kGridSide;

  // Central differences in depth units per table cell. The table continues
  // past the image border.
  auto depth_at = [&](int x, int y) {
    return x < 0 || y < 0 || x >= res || y >= res ? kTableDepth : depth[static_cast<std::size_t>(y) * res + x];
  };
  std::vector<double> grad_x(depth.size()), grad_y(depth.size());
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * res + x;
      grad_x[i] = 0.5 * (depth_at(x + 1, y) - depth_at(x - 1, y)) * cell_px;
      grad_y[i] = 0.5 * (depth_at(x, y + 1) - depth_at(x, y - 1)) * cell_px;
    }

  std::vector<double> out(tokens * kDescriptorDim);
  const auto order = token_order(tokens);
  for (std::size_t k = 0; k < tokens; ++k) {
    const std::size_t ty = order[k] / g, tx = order[k] % g;
    double sum = 0, gx = 0, gy = 0;
    for (std::size_t y = 0; y < block; ++y) {
      for (std::size_t x = 0; x < block; ++x) {
        const std::size_t i = (ty * block + y) * res + tx * block + x;
        sum += depth[i];
        gx += std::abs(grad_x[i]);
        gy += std::abs(grad_y[i]);
      }
    }
    const double n = static_cast<double>(block * block);
    const double z = sum / n;
    gx /= n;
    gy /= n;
    const double px = (tx + 0.5) * block, py = (ty + 0.5) * block;
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& o : scene.objects) {
      const double ox = (o.cell_x() + 0.5) * cell_px, oy = (o.cell_y() + 0.5) * cell_px;
      dist = std::min(dist, std::hypot(px - ox, py - oy));
    }
    if (scene.objects.empty()) dist = std::sqrt(2.0) * res;
    double* row = &out[k * kDescriptorDim];
    row[0] = z;
    row[1] = (px / res - 0.5) * z;
    row[2] = (py / res - 0.5) * z;
    row[3] = z;
    row[4] = dist / res;
    row[5] = gx;
    row[6] = gy;
  }
  return out;
}

std::vector<double> teacher_projection(std::size_t dim, std::uint64_t teacher_seed) {
  Rng rng = Rng::derive(teacher_seed, "teacher.projection");
  std::vector<double> w(kDescriptorDim * dim);
  for (auto& v : w) v = rng.normal();
  return w;
}

GeometryFeatureMap teacher_features(const Scene& scene, std::size_t frames, std::size_t tokens,
                                    std::size_t dim, std::uint64_t teacher_seed) {
  if (frames == 0 || dim == 0) throw ConfigError("teacher_features: frames and dim must be >= 1");
  const auto desc = geometry_descriptors(scene, tokens);
  const auto w = teacher_projection(dim, teacher_seed);

  std::vector<double> f(tokens * dim);
  for (std::size_t l = 0; l < tokens; ++l) {
    for (std::size_t d = 0; d < dim; ++d) {
      double acc = 0;
      for (std::size_t k = 0; k < kDescriptorDim; ++k) acc += desc[l * kDescriptorDim + k] * w[k * dim + d];
      f[l * dim + d] = std::tanh(acc);
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    double ss = 0;
    for (std::size_t l = 0; l < tokens; ++l) ss += f[l * dim + d] * f[l * dim + d];
    const double rms = std::sqrt(ss / static_cast<double>(tokens));
    if (!(rms > 0)) throw NumericError("teacher_features: feature dimension " + std::to_string(d) + " is identically zero");
    for (std::size_t l = 0; l < tokens; ++l) f[l * dim + d] /= rms;
  }

  GeometryFeatureMap m{frames, tokens, dim, {}};
  m.data.reserve(frames * tokens * dim);
  // The scene is static, so every frame sees the same geometry.
  for (std::size_t t = 0; t < frames; ++t)
    for (double v : f) m.data.push_back(static_cast<float>(v));
  return m;
}

GeometryFeatureMap adaptive_pool(const GeometryFeatureMap& fmap, std::size_t n_out) {
  const std::size_t L = fmap.tokens;
  if (L == 0 || n_out == 0) throw ConfigError("adaptive_pool: token counts must be >= 1");
  if (L == n_out) return fmap;
  GeometryFeatureMap out{fmap.frames, n_out, fmap.dim, std::vector<float>(fmap.frames * n_out * fmap.dim)};
  for (std::size_t t = 0; t < fmap.frames; ++t) {
    for (std::size_t j = 0; j < n_out; ++j) {
      const std::size_t s = j * L / n_out;
      const std::size_t e = ((j + 1) * L + n_out - 1) / n_out;
      for (std::size_t d = 0; d < fmap.dim; ++d) {
        double acc = 0;
        for (std::size_t i = s; i < e; ++i) acc += fmap.at(t, i, d);
        out.data[(t * n_out + j) * fmap.dim + d] = static_cast<float>(acc / static_cast<double>(e - s));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> last_frame(const GeometryFeatureMap& fmap, std::size_t expected_tokens) {
  if (fmap.frames == 0) throw ContractError("last_frame: feature map has no frames");
  if (fmap.tokens != expected_tokens) {
    throw ContractError("last_frame: pooled token count " + std::to_string(fmap.tokens) +
                        " != N_p " + std::to_string(expected_tokens));
  }
  const std::size_t n = fmap.tokens * fmap.dim;
  const auto begin = fmap.data.begin() + static_cast<std::ptrdiff_t>((fmap.frames - 1) * n);
  return Tensor<T>({fmap.tokens, fmap.dim}, std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(n)));
}

template Tensor<float> last_frame<float>(const GeometryFeatureMap&, std::size_t);
template Tensor<double> last_frame<double>(const GeometryFeatureMap&, std::size_t);

std::string encode_teacher(const GeometryFeatureMap& fmap) {
  if (fmap.data.size() != fmap.frames * fmap.tokens * fmap.dim) {
    throw ContractError("save_teacher_file: data size does not match T*L*d_t");
  }
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(fmap.frames));
  w.u32(static_cast<std::uint32_t>(fmap.tokens));
  w.u32(static_cast<std::uint32_t>(fmap.dim));
  for (float v : fmap.data) w.f32(v);
  return w.buffer();
}

GeometryFeatureMap decode_teacher(const std::string& bytes) {
  binio::Reader r(bytes, "teacher file");
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    throw FormatError("teacher file: bad magic at offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("teacher file: unsupported version " + std::to_string(version) + " at offset 4");
  }
  GeometryFeatureMap m;
  m.frames = r.u32();
  m.tokens = r.u32();
  m.dim = r.u32();
  const std::size_t n = m.frames * m.tokens * m.dim;
  if (r.remaining() != n * 4) {
    if (r.remaining() < n * 4) r.bytes(n * 4);
    r.fail("trailing bytes after payload");
  }
  m.data.resize(n);
  for (auto& v : m.data) v = r.f32();
  return m;
}

void save_teacher_file(const GeometryFeatureMap& fmap, const std::string& path) {
  binio::write_file(path, encode_teacher(fmap));
}

GeometryFeatureMap load_teacher_file(const std::string& path) {
  return decode_teacher(binio::read_file(path));
}

}  // namespace glad
