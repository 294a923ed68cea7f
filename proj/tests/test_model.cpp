#include <doctest.h>

#include <cmath>

#include "glad/backbone.hpp"
#include "glad/distill.hpp"
#include "glad/error.hpp"
#include "glad/lora.hpp"
#include "glad/rng.hpp"
#include "glad/task.hpp"
#include "glad/train.hpp"

using namespace glad;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.d_llm = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_teacher = 8;
  c.teacher_tokens = 16;
  c.align_layer = 2;
  return c;
}

template <typename T>
Tensor<T> randn(Shape shape, std::uint64_t seed, bool rg = false) {
  Rng rng(seed);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>(shape, v, rg);
}

std::vector<double> image_of(std::uint64_t seed, int size) {
  auto [scene, task] = generate_scene(seed);
  return render(scene, size);
}

template <typename T>
bool same_rows(const Tensor<T>& a, const Tensor<T>& b, std::size_t r0, std::size_t r1) {
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      if (a.at(r, c) != b.at(r, c)) return false;
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.align_layer = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.align_layer = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.patch_size = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config text round-trips") {
  RunConfig a;
  a.model.lambda = 0.37;
  a.model.fusion = FusionMode::early_weighted;
  a.train.seed = 12345678901ull;
  a.train.lr = 1.0 / 3.0;
  const auto text = to_canonical_text(a);
  const auto b = run_config_from_text(text);
  CHECK(to_canonical_text(b) == text);
  CHECK(b.train.lr == a.train.lr);
  CHECK(run_config_from_text("# comment\n\n model.lambda = 0.5 \n").model.lambda == 0.5);
  CHECK_THROWS_AS(run_config_from_text("model.nope=1"), ConfigError);
  CHECK_THROWS_AS(run_config_from_text("train.lr=-1").train.validate(), ConfigError);
  CHECK_THROWS_AS(run_config_from_text("train.steps=x"), ConfigError);
}

TEST_CASE("image encoder shapes and locality") {
  ModelConfig cfg;
  Backbone<double> model(cfg, 3);
  std::vector<double> zero(32 * 32 * 3, 0.0);
  auto z = model.encode_image(zero);
  CHECK(z.rows() == 16);
  CHECK(z.cols() == 64);
  CHECK(same_rows(z, z, 0, 16));
  for (std::size_t r = 1; r < 16; ++r)
    for (std::size_t c = 0; c < 64; ++c) CHECK(z.at(r, c) == z.at(0, c));

  auto img = image_of(4, 32);
  auto swapped = img;
  // swap patch (0,0) with patch (1,2)
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int ch = 0; ch < 3; ++ch)
        std::swap(swapped[(y * 32 + x) * 3 + ch], swapped[((8 + y) * 32 + 16 + x) * 3 + ch]);
  auto a = model.encode_image(img), b = model.encode_image(swapped);
  const std::size_t p = 1 * 4 + 2;
  for (std::size_t r = 0; r < 16; ++r) {
    const std::size_t src = r == 0 ? p : r == p ? 0 : r;
    for (std::size_t c = 0; c < 64; ++c) CHECK(b.at(r, c) == a.at(src, c));
  }
  CHECK_THROWS_AS(model.encode_image(std::vector<double>(10, 0.0)), ConfigError);
}

TEST_CASE("forward is causal and records distributions") {
  auto cfg = small_config();
  Backbone<double> model(cfg, 5);
  auto img = model.encode_image(image_of(1, 16));
  TokenSequence<double> seq{img, {1, 9, 0, 0, 0, 0}, {2, 3, 4}};
  auto out = model.forward(seq, true);
  const std::size_t S = cfg.seq_len();
  REQUIRE(out.stack.depth() == 2);
  CHECK(out.logits.rows() == S);
  CHECK(out.logits.cols() == 16);

  for (const auto& att : out.stack.attention)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < S; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < S; ++j) s += att[(h * S + i) * S + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }

  // perturb each position and compare every earlier position bitwise
  for (std::size_t t = 0; t < S; ++t) {
    TokenSequence<double> p = seq;
    if (t < 4) {
      auto v = std::vector<double>(img.data().begin(), img.data().end());
      v[t * 16] += 0.5;
      p.image_tokens = Tensor<double>({4, 16}, v);
    } else if (t < 10) {
      p.instruction[t - 4] = 20;
    } else {
      p.actions[t - 10] = (p.actions[t - 10] + 1) % 16;
    }
    auto o2 = model.forward(p);
    for (std::size_t l = 0; l < 2; ++l) CHECK(same_rows(out.stack.hidden[l], o2.stack.hidden[l], 0, t));
    if (t + 1 < S) CHECK_FALSE(same_rows(out.stack.hidden[1], o2.stack.hidden[1], t, S));
  }
  CHECK(model.forward(seq).logits.data()[7] == out.logits.data()[7]);
}

TEST_CASE("attention matches a brute-force single-layer evaluation") {
  auto q = randn<double>({5, 4}, 1), k = randn<double>({5, 4}, 2), v = randn<double>({5, 4}, 3);
  std::vector<double> probs;
  auto o = causal_attention(q, k, v, 1, 5, 1, &probs);
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> w(i + 1);
    double z = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t e = 0; e < 4; ++e) s += q.at(i, e) * k.at(j, e);
      w[j] = std::exp(s / 2.0);
      z += w[j];
    }
    for (std::size_t j = 0; j <= i; ++j) CHECK(probs[i * 5 + j] == doctest::Approx(w[j] / z).epsilon(1e-12));
    for (std::size_t e = 0; e < 4; ++e) {
      double y = 0;
      for (std::size_t j = 0; j <= i; ++j) y += w[j] / z * v.at(j, e);
      CHECK(o.at(i, e) == doctest::Approx(y).epsilon(1e-12));
    }
  }
}

TEST_CASE("image hidden states come from the image span of the chosen layer") {
  auto cfg = small_config();
  Backbone<double> model(cfg, 6);
  auto img = model.encode_image(image_of(2, 16));
  auto out = model.forward(TokenSequence<double>{img, {1, 9, 0, 0, 0, 0}, {}});
  auto h1 = extract_image_hidden(out.stack, 1), h2 = extract_image_hidden(out.stack, 2);
  CHECK(h2.rows() == 4);
  CHECK(same_rows(h2, out.stack.hidden[1], 0, 4));
  CHECK_FALSE(same_rows(h1, h2, 0, 4));
  CHECK_THROWS_AS(extract_image_hidden(out.stack, 0), ConfigError);
  CHECK_THROWS_AS(extract_image_hidden(out.stack, 3), ConfigError);

  // image token 0 reaches every later image row by layer 2
  auto v = std::vector<double>(img.data().begin(), img.data().end());
  v[0] += 1.0;
  auto out2 = model.forward(TokenSequence<double>{Tensor<double>({4, 16}, v), {1, 9, 0, 0, 0, 0}, {}});
  auto g2 = extract_image_hidden(out2.stack, 2);
  for (std::size_t r = 0; r < 4; ++r) CHECK_FALSE(same_rows(h2, g2, r, r + 1));
}

TEST_CASE("decoding is greedy with lowest-index ties") {
  auto cfg = small_config();
  Backbone<float> model(cfg, 7);
  auto img = model.encode_images(std::vector<float>(16 * 16 * 3 * 2, 0.3f), 2);
  const std::vector<int> instr{1, 9, 0, 0, 0, 0, 2, 10, 0, 0, 0, 0};
  auto a = decode_actions(model, img, instr, 2);
  CHECK(a.size() == 8);
  CHECK(decode_actions(model, img, instr, 2) == a);
  for (auto& w : model.head.weight.mutable_data()) w = 0;
  for (auto& w : model.head.bias.mutable_data()) w = 0;
  CHECK(decode_actions(model, img, instr, 2) == std::vector<int>(8, 0));
  const float tie[] = {1, 3, 3, 2};
  CHECK(argmax_lowest(tie) == 1);
}

TEST_CASE("attention maps are distributions over the image") {
  auto cfg = small_config();
  Backbone<double> model(cfg, 8);
  auto img = model.encode_image(image_of(3, 16));
  const std::vector<int> instr{1, 9, 0, 0, 0, 0};
  auto m = attention_map(model, img, instr, 2, -1, cfg.action_query_pos(0));
  REQUIRE(m.size() == 4);
  double s = 0;
  for (double v : m) s += v;
  CHECK(std::abs(s - 1.0) < 1e-6);

  for (auto& blk : model.blocks) {
    for (auto& w : blk.wq.weight.mutable_data()) w = 0;
    for (auto& w : blk.wq.bias.mutable_data()) w = 0;
  }
  for (double v : attention_map(model, img, instr, 2, 0, cfg.action_query_pos(0))) CHECK(v == doctest::Approx(0.25));
  CHECK_THROWS_AS(attention_map(model, img, instr, 3, 0, 0), ConfigError);
  CHECK_THROWS_AS(attention_map(model, img, instr, 1, 2, 0), ConfigError);
  CHECK_THROWS_AS(attention_map(model, img, instr, 1, 0, 100), ConfigError);
}

TEST_CASE("a model can memorize one episode") {
  RunConfig rc;
  rc.model = small_config();
  rc.train.dataset_size = 1;
  rc.train.batch_size = 1;
  rc.train.lr = 3e-3;
  rc.model.lambda = 0.0;
  Trainer<float> tr(rc);
  for (int i = 0; i < 300; ++i) tr.step();
  auto batch = training_batch<float>(rc, 0);
  auto img = tr.model().image_tokens(batch.images, 1, batch.teacher);
  CHECK(decode_actions(tr.model().backbone, img, batch.instructions, 1) == batch.actions);
}

// ---------------------------------------------------------------------------

TEST_CASE("alignment network and distillation loss") {
  auto cfg = small_config();
  auto net = AlignmentNetwork<double>::create(cfg, 1);
  auto h = randn<double>({4, 16}, 2, true);
  auto y = align(h, net);
  CHECK(y.rows() == 4);
  CHECK(y.cols() == 8);
  CHECK(net.parameter_count() == 16 * 8 + 8 + 8 * 8 + 8);

  auto zero = AlignmentNetwork<double>::create(cfg, 1);
  for (auto* l : {&zero.fc1, &zero.fc2}) {
    for (auto& w : l->weight.mutable_data()) w = 0;
    for (auto& w : l->bias.mutable_data()) w = 0;
  }
  const auto zero_out = align(h, zero);
  for (double v : zero_out.data()) CHECK(v == 0.0);

  auto t = randn<double>({4, 8}, 3);
  CHECK(grad_check([&] { return distill_loss(align(h, net), t); }, {h, net.fc1.weight, net.fc2.bias}) < 1e-7);

  auto a = randn<double>({16, 32}, 4), b = randn<double>({16, 32}, 5);
  double brute = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) brute += (a[i] - b[i]) * (a[i] - b[i]);
  brute /= 16.0 * 32.0;
  CHECK(std::abs(distill_loss(a, b).item() - brute) <= 1e-6 * brute);
  CHECK(distill_loss(a, a).item() == 0.0);
  auto c = a.clone();
  c.mutable_data()[5] += 0.5;
  CHECK(distill_loss(c, a).item() == doctest::Approx(0.25 / 512).epsilon(1e-12));
  CHECK_THROWS_AS(distill_loss(a, randn<double>({16, 31}, 6)), DimensionError);
  CHECK_THROWS_AS(align(randn<double>({4, 15}, 7), net), DimensionError);
}

TEST_CASE("total loss arithmetic") {
  auto b = total_loss(1.5, 0.25, 1.0);
  CHECK(b.l_total == 1.75);
  CHECK(total_loss(1.5, 0.25, 0.0).l_total == 1.5);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.1), ConfigError);
  Tensor<double> lv = Tensor<double>::scalar(1.0, true), ld = Tensor<double>::scalar(2.0, true);
  total_loss(lv, ld, 0.3).backward();
  CHECK(ld.grad()[0] == 0.3);
  CHECK(lv.grad()[0] == 1.0);
}

TEST_CASE("weighted fusion gate") {
  auto v = randn<double>({4, 16}, 1, true), t = randn<double>({4, 16}, 2, true);
  auto w = Tensor<double>({1}, {0.0}, true);
  auto f = weighted_fusion(v, t, w);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(f[i] == doctest::Approx((v[i] + t[i]) / 2));
  auto closed = weighted_fusion(v, t, Tensor<double>({1}, {-1e4}));
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(closed[i] == v[i]);
  auto w2 = Tensor<double>({1}, {0.3}, true);
  CHECK(grad_check([&] { return mean(tanh(weighted_fusion(v, t, w2))); }, {v, t, w2}) < 1e-7);
}

TEST_CASE("distillation gradient reaches layers below the aligned one") {
  auto cfg = small_config();
  cfg.lambda = 1.0;
  GladModel<double> m(cfg, 3);
  auto [scene, task] = generate_scene(9);
  auto batch = make_batch<double>({{scene, task}}, cfg);
  auto img = m.image_tokens(batch.images, 1, batch.teacher);
  auto out = m.backbone.forward(img, batch.instructions, {}, 1, 0);
  auto loss = distill_loss(align(extract_image_hidden(out.stack, cfg.align_layer), m.align), batch.teacher);
  loss.backward();
  bool reached = false;
  for (double g : m.backbone.blocks[0].wq.weight.grad()) reached = reached || g != 0.0;
  CHECK(reached);
}

// ---------------------------------------------------------------------------

TEST_CASE("LoRA adapter contracts") {
  Rng rng(1);
  auto w = randn<double>({24, 20}, 2), b = randn<double>({24}, 3);
  auto ad = wrap_linear(w, b, 4, 8.0, rng);
  CHECK(ad.trainable_count() == 4u * (20u + 24u));
  CHECK_FALSE(ad.base_weight.requires_grad());
  CHECK(ad.a.requires_grad());
  CHECK(ad.b.requires_grad());

  auto x = randn<double>({5, 20}, 4);
  auto base = linear(x, w, b);
  const auto y0 = lora_forward(ad, x);
  CHECK(std::vector<double>(y0.data().begin(), y0.data().end()) == std::vector<double>(base.data().begin(), base.data().end()));
  auto merged0 = merge(ad);
  CHECK(std::vector<double>(merged0.data().begin(), merged0.data().end()) ==
        std::vector<double>(w.data().begin(), w.data().end()));

  Rng r2(5);
  for (auto& v : ad.b.mutable_data()) v = r2.normal();
  auto ya = lora_forward(ad, x), ym = linear(x, merge(ad), b);
  double worst = 0;
  for (std::size_t i = 0; i < ya.numel(); ++i)
    worst = std::max(worst, std::abs(ya[i] - ym[i]) / std::max(1.0, std::abs(ya[i])));
  CHECK(worst < 1e-6);

  sum(lora_forward(ad, x)).backward();
  CHECK(ad.a.has_grad());
  CHECK(ad.b.has_grad());
  CHECK_FALSE(w.has_grad());

  Rng r3(6);
  CHECK_THROWS_AS(wrap_linear(w, b, 0, 1.0, r3), ConfigError);
  CHECK_THROWS_AS(wrap_linear(w, b, 21, 1.0, r3), ConfigError);
  CHECK(wrap_linear(randn<double>({64, 64}, 9), Tensor<double>{}, 4, 8.0, r3).trainable_count() == 512);
}

TEST_CASE("LoRA with a full-rank identity A reproduces a dense delta") {
  Rng rng(1);
  auto w = randn<double>({3, 3}, 2), bias = randn<double>({3}, 3);
  auto ad = wrap_linear(w, bias, 3, 6.0, rng);
  auto a = ad.a.mutable_data();
  for (std::size_t i = 0; i < 9; ++i) a[i] = (i % 4 == 0) ? 1.0 : 0.0;
  auto delta = randn<double>({3, 3}, 4);
  auto bd = ad.b.mutable_data();
  for (std::size_t i = 0; i < 9; ++i) bd[i] = delta[i];
  auto x = randn<double>({2, 3}, 5);
  auto y = lora_forward(ad, x);
  std::vector<double> wd(9);
  for (std::size_t i = 0; i < 9; ++i) wd[i] = w[i] + 2.0 * delta[i];
  auto ref = linear(x, Tensor<double>({3, 3}, wd), bias);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("wrapping a layer twice is refused and merging drops the adapter") {
  auto lin = make_linear<double>(8, 6, 1, "t");
  Rng rng(2);
  lin.wrap(2, 4.0, rng);
  CHECK_THROWS_AS(lin.wrap(2, 4.0, rng), ContractError);
  for (auto& v : lin.adapter->b.mutable_data()) v = 0.1;
  auto x = randn<double>({3, 8}, 3);
  auto before = lin(x);
  lin.merge_adapter();
  CHECK_FALSE(lin.adapter.has_value());
  auto after = lin(x);
  for (std::size_t i = 0; i < before.numel(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-9));
  NamedTensors<double> params;
  append_parameters(lin, "t", params);
  for (auto& [name, t] : params) CHECK(name.find("lora") == std::string::npos);
}

TEST_CASE("installing LoRA on the backbone keeps its forward bitwise") {
  auto cfg = small_config();
  Backbone<float> model(cfg, 11);
  auto img = model.encode_image(std::vector<float>(16 * 16 * 3, 0.4f));
  TokenSequence<float> seq{img, {1, 9, 0, 0, 0, 0}, {1, 2, 3}};
  auto a = model.forward(seq).logits;
  model.install_lora(4, 8.0, 3);
  CHECK(model.has_lora());
  auto b = model.forward(seq).logits;
  CHECK(std::vector<float>(a.data().begin(), a.data().end()) == std::vector<float>(b.data().begin(), b.data().end()));
  std::size_t lora = 0;
  for (auto& [name, t] : model.named_parameters())
    if (name.starts_with("lora.")) lora += t.numel();
  CHECK(lora == 2u * 4u * 4u * (16u + 16u));
}
