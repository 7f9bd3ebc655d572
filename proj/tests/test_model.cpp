#include <gtest/gtest.h>

#include <random>

#include "tcslot/loss.hpp"
#include "tcslot/model.hpp"
#include "test_util.hpp"

using namespace tcslot;
using model::ModelConfig;
using model::TcslotNet;
using V = Var<double>;

namespace {

// softmax(Q K^T / sqrt(C)) K with Q, K given as (C, H, W) maps, by nested loops.
Tensor<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k) {
  const int c = q.dim(0), h = q.dim(1), w = q.dim(2), n = h * w;
  Tensor<double> out(q.shape(), 0.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300;
    for (int j = 0; j < n; ++j) {
      double dot = 0;
      for (int ch = 0; ch < c; ++ch) dot += q[ch * n + i] * k[ch * n + j];
      s[j] = dot / std::sqrt(static_cast<double>(c));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (int j = 0; j < n; ++j) acc += s[j] / z * k[ch * n + j];
      out[ch * n + i] = acc;
    }
  }
  return out;
}

Tensor<double> tvp_oracle(const Tensor<double>& m1, const Tensor<double>& m2, const Tensor<double>& m3) {
  const auto a = attention_oracle(m2, m1), b = attention_oracle(m2, m3);
  const int c = m2.dim(0), n = m2.dim(1) * m2.dim(2);
  Tensor<double> out(Shape{2 * c, m2.dim(1), m2.dim(2)});
  for (int i = 0; i < c * n; ++i) {
    out[i] = a[i] + m2[i];
    out[c * n + i] = b[i] + m2[i];
  }
  return out;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.encoder_channels = {3, 4};
  c.encoder_strides = {2, 2};
  c.decoder_channels = {4, 4, 3};
  c.head_channels = 3;
  c.embed_dim = 6;
  return c;
}

std::array<Tensor<double>, 3> random_slices(const ModelConfig& c, std::mt19937_64& rng) {
  std::array<Tensor<double>, 3> s;
  for (auto& t : s) t = random_uniform<double>(Shape{c.input_height, c.input_width}, 0.0, 1.0, rng);
  return s;
}

}  // namespace

TEST(Tvp, MatchesExplicitLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 4), ch(1, 8);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape s{ch(rng), dim(rng), dim(rng)};
    const auto m1 = random_uniform<double>(s, -2.0, 2.0, rng), m2 = random_uniform<double>(s, -2.0, 2.0, rng),
               m3 = random_uniform<double>(s, -2.0, 2.0, rng);
    const auto out = model::tvp_fuse(V::constant(m1), V::constant(m2), V::constant(m3)).value();
    EXPECT_LT(max_abs_diff(out, tvp_oracle(m1, m2, m3)), 1e-10);
    const auto attn = model::cross_attention(V::constant(m2), V::constant(m1)).attention.value();
    for (int r = 0; r < attn.dim(0); ++r) {
      double sum = 0;
      for (int c = 0; c < attn.dim(1); ++c) sum += attn.at(r, c);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Tvp, SingleLocationReducesToResidualSums) {
  std::mt19937_64 rng(2);
  const auto m1 = random_uniform<double>(Shape{5, 1, 1}, -1.0, 1.0, rng), m2 = random_uniform<double>(Shape{5, 1, 1}, -1.0, 1.0, rng),
             m3 = random_uniform<double>(Shape{5, 1, 1}, -1.0, 1.0, rng);
  const auto out = model::tvp_fuse(V::constant(m1), V::constant(m2), V::constant(m3)).value();
  for (int c = 0; c < 5; ++c) {
    EXPECT_NEAR(out[c], m1[c] + m2[c], 1e-15);
    EXPECT_NEAR(out[5 + c], m3[c] + m2[c], 1e-15);
  }
}

TEST(Tvp, ShapeMismatchRaises) {
  const V a = V::constant(Tensor<double>(Shape{2, 2, 2})), b = V::constant(Tensor<double>(Shape{2, 2, 3}));
  EXPECT_THROW(model::tvp_fuse(a, a, b), ShapeError);
}

TEST(Tvp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::vector<Tensor<double>> in;
  for (int i = 0; i < 3; ++i) in.push_back(random_uniform<double>(Shape{3, 2, 2}, -1.0, 1.0, rng));
  const auto r = tcslot::testing::grad_check(
      [](const std::vector<V>& v) { return ops::sum(ops::sigmoid(model::tvp_fuse(v[0], v[1], v[2]))); }, in);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Model, DefaultConfigShapes) {
  ModelConfig c;
  c.encoder_channels = {8, 8, 8, 8};
  c.decoder_channels = {8, 8, 8};
  c.head_channels = 8;
  c.embed_dim = 32;
  TcslotNet<float> net(c);
  std::mt19937_64 rng(4);
  std::array<Tensor<float>, 3> s;
  for (auto& t : s) t = random_uniform<float>(Shape{64, 64}, 0.0f, 1.0f, rng);
  embedding::StubEmbeddingProvider p(32);
  const auto out = net.forward(s, "left", p);
  EXPECT_EQ(out.heatmap.shape(), (Shape{1, 16, 16}));
  EXPECT_EQ(out.offsets.shape(), (Shape{2, 16, 16}));
  EXPECT_EQ(out.pooled.shape(), (Shape{32}));
  for (float v : out.heatmap.value().values()) {
    EXPECT_GE(v, 1e-4f);
    EXPECT_LE(v, 1 - 1e-4f);
  }
}

TEST(Model, StridedDecoderVariant) {
  auto c = tiny_config();
  c.input_height = c.input_width = 32;
  c.encoder_channels = {3, 4, 4};
  c.encoder_strides = {2, 2, 2};
  c.decoder_strides = {2, 1, 1};
  TcslotNet<double> net(c);
  std::mt19937_64 rng(5);
  const auto out = net.forward(random_slices(c, rng), Tensor<double>(Shape{6}, 0.1));
  EXPECT_EQ(out.heatmap.shape(), (Shape{1, 8, 8}));
}

TEST(Model, ConfigValidation) {
  auto c = tiny_config();
  c.g = 2;
  EXPECT_THROW(TcslotNet<double>{c}, ConfigError);
  c = tiny_config();
  c.encoder_strides = {2, 1};
  EXPECT_THROW(TcslotNet<double>{c}, ConfigError);
  c = tiny_config();
  c.decoder_channels = {4, 4};
  EXPECT_THROW(TcslotNet<double>{c}, ConfigError);
}

TEST(Model, InputErrors) {
  const auto c = tiny_config();
  TcslotNet<double> net(c);
  std::mt19937_64 rng(6);
  EXPECT_THROW(net.forward(random_slices(c, rng), Tensor<double>(Shape{5}, 0.1)), ShapeError);
  std::array<Tensor<double>, 3> bad{Tensor<double>(Shape{8, 8}), Tensor<double>(Shape{8, 8}), Tensor<double>(Shape{8, 8})};
  EXPECT_THROW(net.forward(bad, Tensor<double>(Shape{6}, 0.1)), ShapeError);
  embedding::StubEmbeddingProvider p(6);
  EXPECT_THROW(net.forward(random_slices(c, rng), "upper", p), ConfigError);
}

TEST(Model, EncoderIsSharedAcrossSlices) {
  const auto c = tiny_config();
  TcslotNet<double> net(c);
  // One encoder: 3x3 conv 1->3 then 3->4, weights and biases.
  EXPECT_EQ(net.encoder_parameter_count(), static_cast<std::size_t>(3 * 9 + 3 + 4 * 3 * 9 + 4));
  std::mt19937_64 rng(7);
  const auto s = random_slices(c, rng);
  std::array<V, 3> in{V::constant(s[0]), V::constant(s[1]), V::constant(s[2])};
  const auto feats = net.encode_triplet(in);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(feats[i].value(), net.encode(in[i]).value());
}

TEST(Model, DeterministicInitialization) {
  const auto c = tiny_config();
  TcslotNet<double> a(c), b(c);
  auto c2 = c;
  c2.init_seed = 99;
  TcslotNet<double> d(c2);
  std::mt19937_64 rng(8);
  const auto s = random_slices(c, rng);
  const Tensor<double> e(Shape{6}, 0.3);
  EXPECT_EQ(a.forward(s, e).heatmap.value(), b.forward(s, e).heatmap.value());
  EXPECT_NE(a.forward(s, e).heatmap.value(), d.forward(s, e).heatmap.value());
}

TEST(Model, TextConditionChangesOutputOnlyWithGuidance) {
  auto c = tiny_config();
  std::mt19937_64 rng(9);
  const auto s = random_slices(c, rng);
  embedding::StubEmbeddingProvider p(6);
  {
    TcslotNet<double> net(c);
    EXPECT_NE(net.forward(s, "left", p).heatmap.value(), net.forward(s, "right", p).heatmap.value());
    EXPECT_GT(net.parameters().scalar_count("ctg."), 0u);
  }
  c.use_ctg = false;
  TcslotNet<double> net(c);
  EXPECT_EQ(net.forward(s, "left", p).heatmap.value(), net.forward(s, "right", p).heatmap.value());
  EXPECT_EQ(net.parameters().scalar_count("ctg."), 0u);
  EXPECT_FALSE(net.forward(s, "left", p).pooled.defined());
}

TEST(Model, FusionVariants) {
  auto c = tiny_config();
  TcslotNet<double> with_tvp(c);
  EXPECT_EQ(with_tvp.parameters().scalar_count("fuse_reduce"), 0u);
  c.use_tvp = false;
  TcslotNet<double> without(c);
  // 1x1 reduction 3C -> 2C with bias, C = 4.
  EXPECT_EQ(without.parameters().scalar_count("fuse_reduce"), static_cast<std::size_t>(12 * 8 + 8));
  std::mt19937_64 rng(10);
  const auto out = without.forward(random_slices(c, rng), Tensor<double>(Shape{6}, 0.1));
  EXPECT_EQ(out.heatmap.shape(), (Shape{1, 4, 4}));
}

TEST(Model, TilePlaneRepeatsEmbedding) {
  auto c = tiny_config();
  c.text_plane = model::TextPlaneMode::kTile;
  TcslotNet<double> net(c);
  Tensor<double> e(Shape{6});
  for (int i = 0; i < 6; ++i) e[i] = i;
  const auto plane = net.text_plane(e).value();
  ASSERT_EQ(plane.shape(), (Shape{1, 4, 4}));
  for (std::size_t i = 0; i < plane.size(); ++i) EXPECT_EQ(plane[i], static_cast<double>(i % 6));
}

TEST(Model, ConfigJsonRoundTrip) {
  auto c = tiny_config();
  c.use_tvp = false;
  c.text_plane = model::TextPlaneMode::kTile;
  c.init_seed = 1234;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
  EXPECT_EQ(nlohmann::json::parse(R"({"embed_dim": 7})").get<ModelConfig>().embed_dim, 7);
}

// End-to-end gradient of a heatmap + offset objective with respect to a few
// parameters of every block.
TEST(Model, EndToEndGradientCheck) {
  auto c = tiny_config();
  std::mt19937_64 rng(11);
  const auto s = random_slices(c, rng);
  Tensor<double> e = random_uniform<double>(Shape{6}, -1.0, 1.0, rng);
  Tensor<double> gt(Shape{1, 4, 4}, 0.2);
  gt[5] = 1.0;
  TcslotNet<double> net(c);
  auto objective = [&]() {
    auto out = net.forward(s, e);
    auto l = loss::focal_heatmap_loss(out.heatmap, gt);
    return ops::add(l, ops::add(ops::sum(ops::sigmoid(out.offsets)), ops::sum(ops::sigmoid(out.pooled))));
  };
  net.parameters().zero_grad();
  backward(objective());
  for (const auto& name : {"encoder.0.weight", "decoder.1.weight", "ctg.text_proj.weight", "ctg.pool_query",
                           "head.heatmap.1.bias", "head.offset.0.weight"}) {
    Var<double> p = net.parameters().find(name);
    const auto g = p.grad();
    double max_num = 0, max_diff = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(p.size(), 6); ++i) {
      const double orig = p.value()[i];
      p.mutable_value()[i] = orig + 1e-6;
      const double up = objective().item();
      p.mutable_value()[i] = orig - 1e-6;
      const double dn = objective().item();
      p.mutable_value()[i] = orig;
      const double num = (up - dn) / 2e-6;
      max_num = std::max(max_num, std::abs(num));
      max_diff = std::max(max_diff, std::abs(num - g[i]));
    }
    EXPECT_LT(max_diff / std::max(max_num, 1e-8), 1e-4) << name;
  }
}
