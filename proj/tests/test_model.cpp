#include <gtest/gtest.h>

#include <random>

#include "stiln/loss.hpp"
#include "stiln/model.hpp"
#include "support/oracles.hpp"
#include "support/testing.hpp"

using namespace stiln;
using stiln::testing::random_tensor;

namespace {

ModelConfig reduced(Variant v = Variant::net0, int hidden = 16) {
  ModelConfig m;
  m.conv_widths = {8, 16, 16, 16, 16};
  m.lstm_hidden = hidden;
  return make_ablation(v, m);
}

// Closed-form parameter count from the layer table.
std::int64_t expected_params(const ModelConfig& m) {
  const auto& w = m.conv_widths;
  std::int64_t n = 0;
  if (m.use_cbam) {
    const std::int64_t c = m.bands, h = (c + m.se_ratio - 1) / m.se_ratio;
    n += c * h + h + h * c + c + 7 * 7 * 2 + 1;
  }
  const int k[5] = {5, 5, 3, 3, 3};
  std::int64_t cin = m.bands;
  for (int i = 0; i < 5; ++i) {
    n += k[i] * k[i] * cin * w[i] + w[i] + 2 * w[i];
    cin = w[i];
  }
  n += 9 * w[4] * w[4] + w[4];
  if (m.use_se) n += 2 * w[4] * (w[4] / m.se_ratio);
  const std::int64_t feat = 8 * 8 * w[4], d = m.lstm_hidden;
  n += (m.bidirectional ? 2 : 1) * (feat * 4 * d + d * 4 * d + 4 * d);
  const std::int64_t head_in = (6 * feat - 1) / 48 + 1 + 6 * (m.bidirectional ? 2 : 1) * d;
  n += 2 + head_in * 128 + 128 + 128 * 2 + 2;
  return n;
}

Tensor<float> random_frames(std::mt19937_64& rng, std::int64_t b) {
  return random_tensor<float>({b, 6, 32, 32, 5}, rng, 0.0, 3.0);
}

}  // namespace

TEST(ModelConfig, DefaultsAndHeadWidth) {
  const ModelConfig m;
  EXPECT_EQ(m.lstm_hidden, 64);
  EXPECT_EQ(m.conv_widths, (std::array<int, 5>{32, 64, 64, 64, 64}));
  EXPECT_EQ(m.se_ratio, 4);
  EXPECT_EQ(m.head_stride, 48);
  EXPECT_EQ(m.frame_feature(), 4096);
  EXPECT_EQ(m.head_spatial(), 512);
  EXPECT_EQ(m.head_input(), 512 + 768);
}

TEST(ModelConfig, InvalidSettingsAreConfigErrors) {
  ModelConfig m;
  m.se_ratio = 3;
  EXPECT_THROW(m.validate(), ConfigError);
  EXPECT_THROW(parse_variant("NET9"), ConfigError);
  EXPECT_EQ(parse_variant("NET3"), Variant::net3);
}

TEST(Ablation, VariantsChangeExactlyOneSwitch) {
  const ModelConfig base = make_ablation(Variant::net0, ModelConfig{});
  EXPECT_TRUE(base.use_cbam && base.instance_norm_early && base.residual_fusion && base.use_se && base.bidirectional);
  EXPECT_FALSE(make_ablation(Variant::net1, base).use_cbam);
  EXPECT_FALSE(make_ablation(Variant::net2, base).instance_norm_early);
  EXPECT_FALSE(make_ablation(Variant::net3, base).residual_fusion);
  EXPECT_FALSE(make_ablation(Variant::net4, base).use_se);
  const ModelConfig n5 = make_ablation(Variant::net5, base);
  EXPECT_FALSE(n5.bidirectional);
  EXPECT_EQ(n5.temporal_step_width(), 64);
  EXPECT_EQ(n5.head_input(), 512 + 6 * 64);
}

TEST(Ablation, ParameterCountsMatchEnumeration) {
  for (Variant v : kAllVariants) {
    const ModelConfig m = make_ablation(v, ModelConfig{});
    const Stiln<float> net(m, 1);
    EXPECT_EQ(net.parameter_count(), expected_params(m)) << variant_name(v);
  }
  EXPECT_EQ(Stiln<float>(ModelConfig{}, 1).parameter_count(), 2'500'418);
  EXPECT_EQ(Stiln<float>(reduced(Variant::net0, 64), 1).parameter_count(), expected_params(reduced(Variant::net0, 64)));
}

TEST(Ablation, StructuralOrdering) {
  auto count = [](Variant v) { return Stiln<float>(make_ablation(v, ModelConfig{}), 1).parameter_count(); };
  const auto n0 = count(Variant::net0);
  EXPECT_LT(count(Variant::net1), n0);
  EXPECT_LT(count(Variant::net4), n0);
  EXPECT_LT(count(Variant::net5), n0);
}

TEST(Model, ParameterNamesAreUnique) {
  const Stiln<float> net(ModelConfig{}, 3);
  std::set<std::string> names;
  for (const auto& p : net.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Model, SeededInitIsReproducible) {
  EXPECT_EQ(Stiln<float>(reduced(), 5).checksum(), Stiln<float>(reduced(), 5).checksum());
  EXPECT_NE(Stiln<float>(reduced(), 5).checksum(), Stiln<float>(reduced(), 6).checksum());
}

TEST(Model, OutputShapeAndRange) {
  std::mt19937_64 rng(61);
  for (Variant v : kAllVariants) {
    Stiln<float> net(reduced(v), 2);
    const Tensor<float> p = net.forward(random_frames(rng, 3), true);
    ASSERT_EQ(p.shape(), (Shape{3, 2})) << variant_name(v);
    for (float x : p.data()) {
      EXPECT_GT(x, 0.0f);
      EXPECT_LT(x, 1.0f);
    }
  }
}

TEST(Model, SpatialExtractorShape) {
  std::mt19937_64 rng(62);
  Stiln<float> net(ModelConfig{}, 2);
  const Tensor<float> f = net.spatial_extractor(random_tensor<float>({2, 32, 32, 5}, rng), false);
  EXPECT_EQ(f.shape(), (Shape{2, 8, 8, 64}));
}

TEST(Model, WrongInputShapeIsRejected) {
  Stiln<float> net(reduced(), 2);
  EXPECT_THROW(net.forward(Tensor<float>(Shape{1, 5, 32, 32, 5}), false), InvalidShape);
}

TEST(Model, ZeroOutputLayerGivesHalf) {
  std::mt19937_64 rng(63);
  Stiln<float> net(reduced(), 2);
  std::fill(net.head().out_w.data().begin(), net.head().out_w.data().end(), 0.0f);
  std::fill(net.head().out_b.data().begin(), net.head().out_b.data().end(), 0.0f);
  const Tensor<float> p = net.forward(random_frames(rng, 2), false);
  for (float x : p.data()) EXPECT_EQ(x, 0.5f);
}

TEST(Model, InferenceIsDeterministic) {
  std::mt19937_64 rng(64);
  Stiln<float> net(reduced(), 2);
  const auto x = random_frames(rng, 2);
  const auto a = net.forward(x, false), b = net.forward(x, false);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Model, IdenticalFramesGiveIdenticalFeatures) {
  std::mt19937_64 rng(65);
  Stiln<float> net(reduced(), 2);
  const auto one = random_tensor<float>({1, 32, 32, 5}, rng);
  const auto two = concat<float>({one, one}, 0);
  const auto f = net.spatial_extractor(two, false);
  const auto half = f.numel() / 2;
  EXPECT_TRUE(std::equal(f.data().begin(), f.data().begin() + half, f.data().begin() + half));
}

TEST(Model, ReversingFramesChangesOutput) {
  std::mt19937_64 rng(66);
  Stiln<float> net(reduced(), 2);
  const auto x = random_frames(rng, 1);
  Tensor<float> rev(x.shape());
  const std::int64_t per = 32 * 32 * 5;
  for (int t = 0; t < 6; ++t) std::copy_n(x.data().begin() + t * per, per, rev.data().begin() + (5 - t) * per);
  const auto a = net.forward(x, false), b = net.forward(rev, false);
  EXPECT_NE(std::vector<float>(a.data().begin(), a.data().end()), std::vector<float>(b.data().begin(), b.data().end()));
}

TEST(Model, ExtractorWeightsAreSharedAcrossFrames) {
  // One set of extractor weights regardless of frame count.
  ModelConfig a = reduced(), b = reduced();
  b.frames = 3;
  auto extractor = [](const ModelConfig& m) {
    std::int64_t n = 0;
    const Stiln<float> net(m, 1);
    for (const auto& p : net.parameters())
      if (p.name.rfind("conv", 0) == 0 || p.name.rfind("cbam", 0) == 0 || p.name.rfind("se.", 0) == 0 ||
          p.name.rfind("fusion", 0) == 0)
        n += p.tensor.numel();
    return n;
  };
  EXPECT_EQ(extractor(a), extractor(b));
}

TEST(Model, GradientReachesNearlyAllParameters) {
  // One random training mini-batch; a 2-sample batch leaves about a third of the
  // ReLU FC units inactive for every sample.
  std::mt19937_64 rng(67);
  Stiln<float> net(ModelConfig{}, 4);
  net.zero_grad();
  Tensor<float> y(Shape{32, 2});
  for (std::size_t i = 0; i < 32; ++i) y[2 * i + i % 2] = 1.0f;
  {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tensor<float> loss = bce_loss(net.forward(random_frames(rng, 32), true), y);
    backward(loss);
  }
  std::int64_t total = 0, nonzero = 0;
  for (const auto& p : net.parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    for (float g : p.tensor.grad()) {
      ++total;
      nonzero += g != 0.0f;
    }
  }
  EXPECT_GE(static_cast<double>(nonzero) / static_cast<double>(total), 0.99);
}

TEST(Model, TwentyWeightsMatchFiniteDifferencesInFloat) {
  std::mt19937_64 rng(68);
  Stiln<float> net(reduced(), 7);
  const auto x = random_frames(rng, 2);
  const Tensor<float> y(Shape{2, 2}, {1, 0, 0, 1});
  auto loss_at = [&] { return static_cast<double>(bce_loss(net.forward(x, true), y).item()); };
  net.zero_grad();
  {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tensor<float> loss = bce_loss(net.forward(x, true), y);
    backward(loss);
  }
  auto& params = net.parameters();
  std::int64_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
  const double h = 1e-2;
  for (int k = 0; k < 20; ++k) {
    std::int64_t idx = pick(rng);
    std::size_t which = 0;
    while (idx >= params[which].tensor.numel()) idx -= params[which++].tensor.numel();
    auto& t = params[which].tensor;
    const auto i = static_cast<std::size_t>(idx);
    const float orig = t[i];
    const double analytic = t.grad()[i];
    t[i] = orig + static_cast<float>(h);
    const double up = loss_at();
    t[i] = orig - static_cast<float>(h);
    const double down = loss_at();
    t[i] = orig;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), stiln::testing::kGradFloor});
    EXPECT_LT(rel, 1e-2) << params[which].name << "[" << i << "] analytic " << analytic << " numeric " << numeric;
  }
}

TEST(Model, DescribeListsTableRows) {
  const Stiln<float> net(ModelConfig{}, 1);
  const auto rows = net.describe();
  std::int64_t sum = 0;
  for (const auto& r : rows) sum += r.params;
  EXPECT_EQ(sum, net.parameter_count());
  EXPECT_EQ(rows.front().layer, "CBAM");
  EXPECT_EQ(rows.back().layer, "Output");
}

// --- Block examples ----------------------------------------------------------

namespace {

CbamWeights<double> random_cbam(std::mt19937_64& rng, int c, int hid) {
  return {random_tensor<double>({c, hid}, rng), random_tensor<double>({hid}, rng), random_tensor<double>({hid, c}, rng),
          random_tensor<double>({c}, rng), random_tensor<double>({7, 7, 2, 1}, rng, -0.3, 0.3),
          random_tensor<double>({1}, rng)};
}

}  // namespace

TEST(Cbam, ZeroInputWithZeroBiasGivesHalfGate) {
  std::mt19937_64 rng(71);
  auto w = random_cbam(rng, 5, 2);
  std::fill(w.mlp_b1.data().begin(), w.mlp_b1.data().end(), 0.0);
  std::fill(w.mlp_b2.data().begin(), w.mlp_b2.data().end(), 0.0);
  const auto g = cbam_channel_attention(Tensor<double>(Shape{9, 9, 5}), w);
  EXPECT_EQ(g.shape(), (Shape{1, 1, 5}));
  for (double v : g.data()) EXPECT_EQ(v, 0.5);
  const auto out = cbam_apply(Tensor<double>(Shape{9, 9, 5}), w);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Cbam, ConstantChannelsPoolIdentically) {
  std::mt19937_64 rng(72);
  const auto w = random_cbam(rng, 3, 1);
  Tensor<double> f(Shape{8, 8, 3});
  for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = 0.5 + static_cast<double>(i % 3);
  const auto g = cbam_channel_attention(f, w);
  const oracle::Vec pooled{0.5, 1.5, 2.5};
  auto mlp = oracle::dense(pooled, oracle::to_vec(w.mlp_w1.data()), oracle::to_vec(w.mlp_b1.data()), 3, 1);
  for (double& v : mlp) v = std::max(0.0, v);
  const auto z = oracle::dense(mlp, oracle::to_vec(w.mlp_w2.data()), oracle::to_vec(w.mlp_b2.data()), 1, 3);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(g[c], oracle::sigmoid(2.0 * z[c]), 1e-12);
}

TEST(Cbam, SpatialGateMatchesPerPixelOracle) {
  std::mt19937_64 rng(73);
  const auto w = random_cbam(rng, 3, 1);
  const auto f = random_tensor<double>({9, 9, 3}, rng);
  const auto g = cbam_spatial_attention(f, w);
  ASSERT_EQ(g.shape(), (Shape{9, 9, 1}));
  const auto want = oracle::cbam_spatial(oracle::to_vec(f.data()), 9, 9, 3, oracle::to_vec(w.conv_w.data()), w.conv_b[0]);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(g[i], want[i], 1e-12);
}

TEST(Cbam, SpatiallyConstantInputGivesConstantInteriorGate) {
  std::mt19937_64 rng(74);
  auto w = random_cbam(rng, 2, 1);
  // A centred 1x1 spatial kernel removes the zero-padding border effect.
  std::fill(w.conv_w.data().begin(), w.conv_w.data().end(), 0.0);
  w.conv_w[(3 * 7 + 3) * 2] = 0.7;
  const auto g = cbam_spatial_attention(Tensor<double>::full(Shape{9, 9, 2}, 1.3), w);
  for (double v : g.data()) EXPECT_NEAR(v, g[0], 1e-15);
}

TEST(Cbam, AttenuatesElementwise) {
  std::mt19937_64 rng(75);
  const auto w = random_cbam(rng, 4, 1);
  const auto f = random_tensor<double>({2, 8, 8, 4}, rng, -3, 3);
  const auto out = cbam_apply(f, w);
  for (std::int64_t i = 0; i < f.numel(); ++i) EXPECT_LE(std::abs(out[i]), std::abs(f[i]));
}

TEST(ResidualFusion, ZeroConvIsRelu) {
  std::mt19937_64 rng(76);
  const auto f = random_tensor<double>({5, 5, 4}, rng);
  const auto out = residual_fusion(f, Tensor<double>(Shape{3, 3, 4, 4}), Tensor<double>(Shape{4}));
  for (std::int64_t i = 0; i < f.numel(); ++i) {
    EXPECT_EQ(out[i], std::max(0.0, f[i]));
    EXPECT_GE(out[i], 0.0);
  }
  EXPECT_THROW(residual_fusion(f, Tensor<double>(Shape{3, 3, 4, 3}), Tensor<double>(Shape{3})), InvalidShape);
}

TEST(SeBlock, SqueezeIsSpatialMean) {
  // One channel [[1,2],[3,4]]; W1 = W2 = 1 (r = 1) so output = sigmoid(relu(2.5)) * u.
  const Tensor<double> u(Shape{2, 2, 1}, {1, 2, 3, 4});
  const SeWeights<double> w{Tensor<double>(Shape{1, 1}, {1.0}), Tensor<double>(Shape{1, 1}, {1.0})};
  const auto out = se_block(u, w);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(out[i], oracle::sigmoid(2.5) * u[i], 1e-15);
}

TEST(SeBlock, AttenuatesAndRejectsBadRatio) {
  std::mt19937_64 rng(77);
  const auto u = random_tensor<double>({4, 4, 8}, rng, -2, 2);
  const SeWeights<double> w{random_tensor<double>({8, 2}, rng), random_tensor<double>({2, 8}, rng)};
  const auto out = se_block(u, w);
  for (std::int64_t i = 0; i < u.numel(); ++i) EXPECT_LE(std::abs(out[i]), std::abs(u[i]));
  const SeWeights<double> bad{random_tensor<double>({8, 3}, rng), random_tensor<double>({3, 8}, rng)};
  EXPECT_THROW(se_block(u, bad), ConfigError);
}

TEST(BiLstm, ZeroWeightsGiveZeros) {
  const LstmWeights<double> z{Tensor<double>(Shape{5, 12}), Tensor<double>(Shape{3, 12}), Tensor<double>(Shape{12})};
  std::mt19937_64 rng(78);
  const auto out = bilstm(random_tensor<double>({2, 6, 5}, rng), z, z);
  EXPECT_EQ(out.shape(), (Shape{2, 6, 6}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(BiLstm, WrongSequenceLengthIsRejected) {
  const LstmWeights<double> z{Tensor<double>(Shape{5, 12}), Tensor<double>(Shape{3, 12}), Tensor<double>(Shape{12})};
  EXPECT_THROW(bilstm(Tensor<double>(Shape{1, 5, 5}), z, z), InvalidShape);
}

TEST(FusionHead, OutputInUnitInterval) {
  std::mt19937_64 rng(79);
  const HeadWeights<double> w{random_tensor<double>({1, 1, 1, 1}, rng), random_tensor<double>({1}, rng),
                              random_tensor<double>({2 + 12, 8}, rng), random_tensor<double>({8}, rng),
                              random_tensor<double>({8, 2}, rng), random_tensor<double>({2}, rng)};
  const auto p = fusion_head(random_tensor<double>({3, 96}, rng), random_tensor<double>({3, 12}, rng), w, 48);
  ASSERT_EQ(p.shape(), (Shape{3, 2}));
  for (double v : p.data()) EXPECT_TRUE(v > 0.0 && v < 1.0);
}

// Tape-free re-implementation of the extractor with loop oracles (inference
// mode, so batch norms use their initial running statistics).
TEST(Model, ExtractorMatchesLoopReimplementation) {
  ModelConfig m;
  m.conv_widths = {4, 4, 4, 4, 4};
  m.lstm_hidden = 4;
  Stiln<double> net(make_ablation(Variant::net0, m), 9);
  std::mt19937_64 rng(80);
  const auto x = random_tensor<double>({1, 32, 32, 5}, rng, 0.0, 2.0);
  const auto got = net.spatial_extractor(x, false);

  auto vec = [](const Tensor<double>& t) { return oracle::to_vec(t.data()); };
  auto param = [&](const std::string& name) {
    for (const auto& p : net.parameters())
      if (p.name == name) return vec(p.tensor);
    throw std::runtime_error("missing " + name);
  };
  const auto& cb = net.cbam();
  oracle::Vec f = vec(x);
  int h = 32, w = 32, c = 5;
  {
    const auto gate = oracle::cbam_channel(f, h, w, c, vec(cb.mlp_w1), vec(cb.mlp_b1), vec(cb.mlp_w2), vec(cb.mlp_b2), 2);
    for (int p = 0; p < h * w; ++p)
      for (int ch = 0; ch < c; ++ch) f[p * c + ch] *= gate[ch];
    const auto sg = oracle::cbam_spatial(f, h, w, c, vec(cb.conv_w), cb.conv_b[0]);
    for (int p = 0; p < h * w; ++p)
      for (int ch = 0; ch < c; ++ch) f[p * c + ch] *= sg[p];
  }
  const int k[5] = {5, 5, 3, 3, 3};
  for (int layer = 0; layer < 5; ++layer) {
    const std::string base = "conv" + std::to_string(layer + 1);
    const bool inst = layer < 2;
    int ho = 0, wo = 0;
    f = oracle::conv2d(f, h, w, c, param(base + ".w"), k[layer], 4, param(base + ".b"), 1, k[layer] / 2, ho, wo);
    c = 4;
    const auto gamma = param(base + (inst ? ".in.gamma" : ".bn.gamma"));
    const auto beta = param(base + (inst ? ".in.beta" : ".bn.beta"));
    for (int ch = 0; ch < c; ++ch) {
      double mu = 0.0, var = 1.0;
      if (inst) {
        mu = 0.0;
        for (int p = 0; p < h * w; ++p) mu += f[p * c + ch] / (h * w);
        var = 0.0;
        for (int p = 0; p < h * w; ++p) var += (f[p * c + ch] - mu) * (f[p * c + ch] - mu) / (h * w);
      }
      for (int p = 0; p < h * w; ++p)
        f[p * c + ch] = std::max(0.0, (f[p * c + ch] - mu) / std::sqrt(var + 1e-5) * gamma[ch] + beta[ch]);
    }
    if (layer == 1 || layer == 3) {
      f = oracle::pool2d(f, h, w, c, 2, true);
      h /= 2;
      w /= 2;
    }
  }
  int ho = 0, wo = 0;
  const auto conv = oracle::conv2d(f, h, w, c, param("fusion.w"), 3, c, param("fusion.b"), 1, 1, ho, wo);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::max(0.0, f[i] + conv[i]);
  f = oracle::se(f, h, w, c, param("se.w1"), param("se.w2"), 1);

  ASSERT_EQ(static_cast<std::size_t>(got.numel()), f.size());
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(got[i], f[i], 1e-9);
}
