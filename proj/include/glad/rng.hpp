#pragma once

#include <cstdint>
#include <string_view>

namespace glad {

// Counter-based generator: draw k of a stream is splitmix64(key + k * gamma),
// so the sequence depends only on (key, counter) and is identical on every
// platform. Floating-point helpers (normal) go through libm.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed) : key_(mix(seed)) {}

  // Independent stream for a named purpose ("init.layers.0.attn.wq", "batch").
  static Rng derive(std::uint64_t seed, std::string_view name,
                    std::uint64_t index = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_state(std::uint64_t key, std::uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t key_ = 0x853c49e6748fea9bULL;
  std::uint64_t counter_ = 0;
};

}  // namespace glad
