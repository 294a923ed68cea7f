#include <doctest.h>

#include <cmath>
#include <vector>

#include "glad/error.hpp"
#include "glad/rng.hpp"
#include "glad/tensor.hpp"

using namespace glad;

namespace {

Tensor<double> randn(Shape shape, std::uint64_t seed, bool rg = true) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<double>(shape, v, rg);
}

}  // namespace

TEST_CASE("matmul of 2x2 matrices") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
  Tensor<double> b({2, 2}, std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("softmax of a row of logs") {
  Tensor<double> x({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  auto p = softmax_rows(x);
  CHECK(p[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(2.0 / 6).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax is stable for large logits") {
  Tensor<double> x({1, 2}, {1000.0, 1000.0});
  auto p = softmax_rows(x);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
}

TEST_CASE("cross entropy values") {
  Tensor<double> logits({1, 3}, {2, 1, 0});
  const int target[] = {0};
  CHECK(cross_entropy(logits, target).item() == doctest::Approx(0.40760596444438013).epsilon(1e-12));

  Tensor<double> uniform({1, 4}, {0, 0, 0, 0});
  const int t2[] = {3};
  CHECK(std::abs(cross_entropy(uniform, t2).item() - std::log(4.0)) < 1e-9);

  const int bad[] = {4};
  CHECK_THROWS_AS(cross_entropy(uniform, bad), IndexError);
}

TEST_CASE("mse value") {
  Tensor<double> a({1, 2}, {1, 2});
  Tensor<double> b({1, 2}, {4, 0});
  CHECK(mse(a, b).item() == 6.5);
  Tensor<double> c({2, 2}, {0, 0, 0, 0});
  Tensor<double> d({2, 2}, {1, 2, 3, 0});
  CHECK(mse(c, d).item() == 3.5);
}

TEST_CASE("gelu matches the erf form") {
  Tensor<double> x({1, 3}, {0.5, -1.0, 2.0});
  auto y = gelu(x);
  CHECK(y[0] == doctest::Approx(0.34573123063700656).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(1.9544997361036416).epsilon(1e-12));
}

TEST_CASE("layer norm output has zero mean and unit variance") {
  auto x = randn({3, 8}, 1, false);
  auto g = Tensor<double>::full({8}, 1.0);
  auto b = Tensor<double>::zeros({8});
  auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c);
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    v /= 8;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("gradients of every op agree with finite differences") {
  auto a = randn({3, 4}, 11);
  auto b = randn({4, 2}, 12);
  auto c = randn({3, 4}, 13);
  auto w = randn({5, 4}, 14);
  auto bias = randn({5}, 15);
  auto g = randn({4}, 16);
  auto be = randn({4}, 17);
  const int targets[] = {1, 0, 4};

  SUBCASE("matmul and sum") { CHECK(grad_check([&] { return sum(matmul(a, b)); }, {a, b}) < 1e-7); }
  SUBCASE("elementwise") {
    CHECK(grad_check([&] { return sum(mul(add(a, c), sub(a, c))); }, {a, c}) < 1e-7);
    CHECK(grad_check([&] { return mean(tanh(scale(a, 0.7))); }, {a}) < 1e-7);
    CHECK(grad_check([&] { return mean(sigmoid(one_minus(a))); }, {a}) < 1e-7);
    CHECK(grad_check([&] { return mean(gelu(a)); }, {a}) < 1e-7);
  }
  SUBCASE("linear and cross entropy") {
    CHECK(grad_check([&] { return cross_entropy(linear(c, w, bias), targets); }, {c, w, bias}) < 1e-7);
  }
  SUBCASE("layer norm and mse") {
    CHECK(grad_check([&] { return mse(layer_norm(a, g, be), c); }, {a, g, be}) < 1e-7);
  }
  SUBCASE("shape ops") {
    const std::size_t rows[] = {2, 0, 2};
    CHECK(grad_check([&] { return sum(mul(gather_rows(a, rows), c)); }, {a}) < 1e-7);
    CHECK(grad_check([&] { return sum(matmul(transpose(a), c)); }, {a, c}) < 1e-7);
    CHECK(grad_check([&] { return mean(tanh(concat_cols(a, c))); }, {a, c}) < 1e-7);
    CHECK(grad_check([&] { return mean(tanh(concat_rows<double>({a, c}))); }, {a, c}) < 1e-7);
    CHECK(grad_check([&] { return mean(tanh(reshape(a, {2, 6}))); }, {a}) < 1e-7);
  }
  SUBCASE("embedding and tiling") {
    const int ids[] = {2, 2, 0};
    CHECK(grad_check([&] { return mean(tanh(embedding(c, ids))); }, {c}) < 1e-7);
    auto x = randn({6, 4}, 18);
    CHECK(grad_check([&] { return mean(tanh(add_tiled(x, a))); }, {x, a}) < 1e-7);
  }
  SUBCASE("scalar gate") {
    auto s = randn({1}, 19);
    CHECK(grad_check([&] { return mean(tanh(scale_by(a, sigmoid(s)))); }, {a, s}) < 1e-7);
  }
  SUBCASE("causal attention") {
    auto q = randn({6, 4}, 20), k = randn({6, 4}, 21), v = randn({6, 4}, 22);
    auto tgt = randn({6, 4}, 23, false);
    CHECK(grad_check([&] { return mse(causal_attention(q, k, v, 2, 3, 2), tgt); }, {q, k, v}) < 1e-7);
  }
}

TEST_CASE("causal attention rows are distributions over past keys") {
  auto q = randn({8, 4}, 30, false), k = randn({8, 4}, 31, false), v = randn({8, 4}, 32, false);
  std::vector<double> probs;
  causal_attention(q, k, v, 2, 4, 2, &probs);
  REQUIRE(probs.size() == 2 * 2 * 4 * 4);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          const double p = probs[((b * 2 + h) * 4 + i) * 4 + j];
          if (j > i) CHECK(p == 0.0);
          s += p;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("gradient accumulates across backward calls and no-grad skips the graph") {
  Tensor<double> x({1, 2}, {1.0, 2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  {
    NoGradGuard ng;
    auto y = sum(scale(x, 3.0));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("rng streams are deterministic and independent") {
  Rng a = Rng::derive(5, "x", 1), b = Rng::derive(5, "x", 1), c = Rng::derive(5, "x", 2);
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != c.next_u64());
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.below(7) < 7);
  }
}
