#pragma once

// The spatial-temporal network. Each sample is a sequence of six 32x32x5 power
// topographic frames. A shared convolutional extractor (CBAM gate, IN/BN conv
// stack, residual fusion, SE recalibration) maps every frame to a feature map;
// a Bi-LSTM reads the six flattened features and a fusion head joins the
// temporal context with a strided down-sampling of the spatial features.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/lstm.hpp"
#include "stiln/norm.hpp"
#include "stiln/ops.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

enum class Variant { net0, net1, net2, net3, net4, net5 };

inline std::string variant_name(Variant v) { return "NET" + std::to_string(static_cast<int>(v)); }

inline Variant parse_variant(const std::string& s) {
  for (int i = 0; i <= 5; ++i) {
    if (s == "NET" + std::to_string(i) || s == "net" + std::to_string(i)) return static_cast<Variant>(i);
  }
  throw ConfigError("unknown variant '" + s + "' (expected NET0..NET5)");
}

inline constexpr std::array<Variant, 6> kAllVariants{Variant::net0, Variant::net1, Variant::net2,
                                                     Variant::net3, Variant::net4, Variant::net5};

struct ModelConfig {
  Variant variant = Variant::net0;
  int lstm_hidden = 64;
  std::array<int, 5> conv_widths{32, 64, 64, 64, 64};
  int se_ratio = 4;
  int head_stride = 48;
  int fc_hidden = 128;
  int frames = 6;
  int height = 32;
  int width = 32;
  int bands = 5;

  // Structural switches; make_ablation derives them from `variant`.
  bool use_cbam = true;
  bool instance_norm_early = true;
  bool residual_fusion = true;
  bool use_se = true;
  bool bidirectional = true;

  int c5() const { return conv_widths[4]; }
  std::int64_t frame_feature() const {
    return static_cast<std::int64_t>(height / 4) * (width / 4) * c5();
  }
  std::int64_t head_spatial() const { return (frames * frame_feature() - 1) / head_stride + 1; }
  std::int64_t temporal_step_width() const { return (bidirectional ? 2 : 1) * lstm_hidden; }
  std::int64_t head_input() const { return head_spatial() + frames * temporal_step_width(); }

  void validate() const {
    for (int w : conv_widths)
      if (w <= 0) throw ConfigError("conv widths must be positive");
    if (se_ratio < 1 || c5() % se_ratio != 0) {
      throw ConfigError("SE reduction ratio " + std::to_string(se_ratio) + " must divide " +
                        std::to_string(c5()));
    }
    if (lstm_hidden <= 0 || fc_hidden <= 0 || head_stride <= 0) {
      throw ConfigError("hidden sizes and head stride must be positive");
    }
    if (frames <= 0 || height % 4 != 0 || width % 4 != 0 || height < 7 || width < 7 || bands <= 0) {
      throw ConfigError("input must be at least 8x8 with extents divisible by 4");
    }
  }
};

// Full model with the structural change of one ablation variant applied.
inline ModelConfig make_ablation(Variant variant, ModelConfig base) {
  base.variant = variant;
  base.use_cbam = variant != Variant::net1;
  base.instance_norm_early = variant != Variant::net2;
  base.residual_fusion = variant != Variant::net3;
  base.use_se = variant != Variant::net4;
  base.bidirectional = variant != Variant::net5;
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

template <typename T>
struct CbamWeights {
  Tensor<T> mlp_w1;  // [C, h]
  Tensor<T> mlp_b1;  // [h]
  Tensor<T> mlp_w2;  // [h, C]
  Tensor<T> mlp_b2;  // [C]
  Tensor<T> conv_w;  // [7, 7, 2, 1]
  Tensor<T> conv_b;  // [1]
};

inline int cbam_hidden(int channels, int ratio) {
  if (ratio < 1 || ratio > channels) {
    throw ConfigError("CBAM reduction ratio " + std::to_string(ratio) + " invalid for " +
                      std::to_string(channels) + " channels");
  }
  return (channels + ratio - 1) / ratio;
}

// M_C = sigmoid(MLP(avgpool(F)) + MLP(maxpool(F))) with one shared MLP; [N,1,1,C].
template <typename T>
Tensor<T> cbam_channel_attention(const Tensor<T>& f, const CbamWeights<T>& w) {
  const bool batched = f.rank() == 4;
  const std::int64_t n = batched ? f.dim(0) : 1;
  const std::int64_t c = f.shape().back();
  if (w.mlp_w1.dim(0) != c) throw InvalidShape("cbam: MLP input width does not match channels");
  auto mlp = [&](const Tensor<T>& pooled) {
    Tensor<T> v = reshape(pooled, Shape{n, c});
    return linear(relu(linear(v, w.mlp_w1, w.mlp_b1)), w.mlp_w2, w.mlp_b2);
  };
  Tensor<T> gate = sigmoid(add(mlp(global_pool(f, PoolMode::avg)), mlp(global_pool(f, PoolMode::max))));
  return reshape(gate, batched ? Shape{n, 1, 1, c} : Shape{1, 1, c});
}

// M_S = sigmoid(conv7x7(concat(mean_c(F), max_c(F)))); [N,H,W,1].
template <typename T>
Tensor<T> cbam_spatial_attention(const Tensor<T>& f, const CbamWeights<T>& w) {
  const std::size_t axis = f.rank() - 1;
  Tensor<T> pooled = concat<T>({reduce_channels(f, PoolMode::avg), reduce_channels(f, PoolMode::max)}, axis);
  return sigmoid(conv2d(pooled, w.conv_w, w.conv_b, 1, 3));
}

template <typename T>
Tensor<T> cbam_apply(const Tensor<T>& f, const CbamWeights<T>& w) {
  Tensor<T> f_cam = mul(cbam_channel_attention(f, w), f);
  return mul(cbam_spatial_attention(f_cam, w), f_cam);
}

// F_Res = ReLU(F + conv3x3(F)).
template <typename T>
Tensor<T> residual_fusion(const Tensor<T>& f, const Tensor<T>& conv_w, const Tensor<T>& conv_b) {
  if (f.shape().back() != conv_w.dim(3) || conv_w.dim(2) != conv_w.dim(3)) {
    throw InvalidShape("residual_fusion: conv must map " + std::to_string(f.shape().back()) +
                       " channels onto themselves");
  }
  return relu(add(f, conv2d(f, conv_w, conv_b, 1, 1)));
}

template <typename T>
struct SeWeights {
  Tensor<T> w1;  // [C, C/r]  (applied as S * w1)
  Tensor<T> w2;  // [C/r, C]
};

// Squeeze (spatial mean), excitation sigmoid(W2 ReLU(W1 S)), channelwise scale.
template <typename T>
Tensor<T> se_block(const Tensor<T>& u, const SeWeights<T>& w) {
  const bool batched = u.rank() == 4;
  const std::int64_t n = batched ? u.dim(0) : 1;
  const std::int64_t c = u.shape().back();
  if (w.w1.dim(0) != c || w.w2.dim(1) != c || w.w1.dim(1) != w.w2.dim(0) || c % w.w1.dim(1) != 0) {
    throw ConfigError("se_block: weights inconsistent with " + std::to_string(c) + " channels");
  }
  Tensor<T> s = reshape(global_pool(u, PoolMode::avg), Shape{n, c});
  Tensor<T> e = sigmoid(matmul(relu(matmul(s, w.w1)), w.w2));
  return mul(reshape(e, batched ? Shape{n, 1, 1, c} : Shape{1, 1, c}), u);
}

// Left pass over t = 1..T and right pass over t = T..1 with independent
// weights; per-step output concat(h_left_t, h_right_t): [B,T,2d].
template <typename T>
Tensor<T> bilstm(const Tensor<T>& seq, const LstmWeights<T>& left, const LstmWeights<T>& right,
                 std::int64_t expected_steps = 6) {
  if (seq.rank() != 3 || seq.dim(1) != expected_steps) {
    throw InvalidShape("bilstm: expected [B," + std::to_string(expected_steps) + ",d_in], got " +
                       shape_str(seq.shape()));
  }
  return concat<T>({lstm_sequence(seq, left, false), lstm_sequence(seq, right, true)}, 2);
}

template <typename T>
struct HeadWeights {
  Tensor<T> conv6_w;  // [1,1,1,1]
  Tensor<T> conv6_b;  // [1]
  Tensor<T> fc_w;     // [head_input, fc_hidden]
  Tensor<T> fc_b;
  Tensor<T> out_w;    // [fc_hidden, 2]
  Tensor<T> out_b;
};

// spatial [B, frames * feature], temporal [B, frames * step_width] -> probs [B,2].
template <typename T>
Tensor<T> fusion_head(const Tensor<T>& spatial, const Tensor<T>& temporal, const HeadWeights<T>& w,
                      int stride) {
  if (spatial.rank() != 2 || temporal.rank() != 2 || spatial.dim(0) != temporal.dim(0)) {
    throw InvalidShape("fusion_head: inputs must be [B, width]");
  }
  const std::int64_t b = spatial.dim(0), len = spatial.dim(1);
  Tensor<T> down = conv2d(reshape(spatial, Shape{b, 1, len, 1}), w.conv6_w, w.conv6_b, stride, 0);
  Tensor<T> joined = concat<T>({reshape(down, Shape{b, down.dim(2)}), temporal}, 1);
  if (joined.dim(1) != w.fc_w.dim(0)) {
    throw InvalidShape("fusion_head: head input width " + std::to_string(joined.dim(1)) +
                       " does not match FC weights " + shape_str(w.fc_w.shape()));
  }
  Tensor<T> hidden = relu(linear(joined, w.fc_w, w.fc_b));
  return sigmoid(linear(hidden, w.out_w, w.out_b));
}

template <typename T>
struct ConvUnit {
  Tensor<T> w;
  Tensor<T> b;
  Tensor<T> gamma;
  Tensor<T> beta;
  bool instance = false;
  BatchNormState<T> bn;
};

template <typename T>
Tensor<T> conv_norm_relu(const Tensor<T>& x, ConvUnit<T>& u, bool training) {
  Tensor<T> y = conv2d(x, u.w, u.b, 1, static_cast<int>(u.w.dim(0) / 2));
  y = u.instance ? norm_instance(y, u.gamma, u.beta) : norm_batch(y, u.gamma, u.beta, u.bn, training);
  return relu(y);
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

struct LayerInfo {
  std::string layer;
  std::string operation;
  std::string kernel;
  std::string activation;
  std::string output;
  std::int64_t params;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
class Stiln {
 public:
  Stiln(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)), rng_(seed) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }

  // frames: [B, frames, H, W, bands] -> probabilities [B, 2].
  Tensor<T> forward(const Tensor<T>& frames, bool training) {
    if (frames.rank() != 5 || frames.dim(1) != cfg_.frames || frames.dim(2) != cfg_.height ||
        frames.dim(3) != cfg_.width || frames.dim(4) != cfg_.bands) {
      throw InvalidShape("forward: expected [B," + std::to_string(cfg_.frames) + "," +
                         std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "," +
                         std::to_string(cfg_.bands) + "], got " + shape_str(frames.shape()));
    }
    const std::int64_t b = frames.dim(0);
    Tensor<T> per_frame = reshape(frames, Shape{b * cfg_.frames, cfg_.height, cfg_.width, cfg_.bands});
    Tensor<T> feat = spatial_extractor(per_frame, training);
    const std::int64_t width = cfg_.frame_feature();
    Tensor<T> seq = reshape(feat, Shape{b, cfg_.frames, width});
    Tensor<T> temporal = cfg_.bidirectional ? bilstm(seq, lstm_left_, lstm_right_, cfg_.frames)
                                            : lstm_sequence(seq, lstm_left_, false);
    return fusion_head(reshape(feat, Shape{b, cfg_.frames * width}),
                       reshape(temporal, Shape{b, cfg_.frames * cfg_.temporal_step_width()}), head_,
                       cfg_.head_stride);
  }

  // [N, H, W, bands] -> [N, H/4, W/4, c5]; weights shared by all frames.
  Tensor<T> spatial_extractor(const Tensor<T>& x, bool training) {
    Tensor<T> f = cfg_.use_cbam ? cbam_apply(x, cbam_) : x;
    f = conv_norm_relu(f, conv_[0], training);
    f = conv_norm_relu(f, conv_[1], training);
    f = pool2d(f, 2, PoolMode::max);
    f = conv_norm_relu(f, conv_[2], training);
    f = conv_norm_relu(f, conv_[3], training);
    f = pool2d(f, 2, PoolMode::max);
    f = conv_norm_relu(f, conv_[4], training);
    f = cfg_.residual_fusion ? residual_fusion(f, fusion_w_, fusion_b_)
                             : relu(conv2d(f, fusion_w_, fusion_b_, 1, 1));
    if (cfg_.use_se) f = se_block(f, se_);
    return f;
  }

  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> parameter_tensors() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

  // Non-trainable state (batch-norm running statistics).
  std::vector<NamedTensor<T>> buffers() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      if (conv_[i].instance) continue;
      const std::string base = "conv" + std::to_string(i + 1) + ".bn.";
      out.push_back({base + "running_mean", conv_[i].bn.running_mean});
      out.push_back({base + "running_var", conv_[i].bn.running_var});
    }
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // FNV-1a over parameter and buffer bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const Tensor<T>& t) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
      for (std::size_t i = 0; i < t.data().size_bytes(); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& p : params_) mix(p.tensor);
    for (const auto& b : buffers()) mix(b.tensor);
    return h;
  }

  std::vector<LayerInfo> describe() const {
    const auto& w = cfg_.conv_widths;
    const std::int64_t h = cfg_.height, wd = cfg_.width;
    auto hw = [](std::int64_t a, std::int64_t b, std::int64_t c) {
      return std::to_string(a) + "x" + std::to_string(b) + "x" + std::to_string(c);
    };
    auto count = [&](const std::string& prefix) {
      std::int64_t n = 0;
      for (const auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) n += p.tensor.numel();
      return n;
    };
    std::vector<LayerInfo> rows;
    if (cfg_.use_cbam) {
      rows.push_back({"CBAM", "Channel and spatial-wise attention", "7x7/1", "ReLU/Sigmoid",
                      hw(h, wd, cfg_.bands), count("cbam.")});
    }
    const char* early = cfg_.instance_norm_early ? "IN" : "BN";
    rows.push_back({"CONV1", std::string("Convolutional(2D)+") + early, "5x5/1", "ReLU", hw(h, wd, w[0]), count("conv1.")});
    rows.push_back({"CONV2", std::string("Convolutional(2D)+") + early + "+MaxPool2", "5x5/1", "ReLU",
                    hw(h / 2, wd / 2, w[1]), count("conv2.")});
    rows.push_back({"CONV3", "Convolutional(2D)+BN", "3x3/1", "ReLU", hw(h / 2, wd / 2, w[2]), count("conv3.")});
    rows.push_back({"CONV4", "Convolutional(2D)+BN+MaxPool2", "3x3/1", "ReLU", hw(h / 4, wd / 4, w[3]),
                    count("conv4.")});
    rows.push_back({"CONV5", "Convolutional(2D)+BN", "3x3/1", "ReLU", hw(h / 4, wd / 4, w[4]), count("conv5.")});
    rows.push_back({"FUSION", cfg_.residual_fusion ? "Residual deep-fusion block" : "Convolutional(2D)", "3x3/1",
                    "ReLU", hw(h / 4, wd / 4, w[4]), count("fusion.")});
    if (cfg_.use_se) {
      rows.push_back({"SE", "Channel-wise attention", "1x1/1", "ReLU/Sigmoid", hw(h / 4, wd / 4, w[4]), count("se.")});
    }
    rows.push_back({cfg_.bidirectional ? "Bi-LSTM" : "LSTM", "LSTM", "-", "Sigmoid/Tanh",
                    std::to_string(cfg_.frames) + "x" + std::to_string(cfg_.temporal_step_width()),
                    count("lstm.")});
    rows.push_back({"CONV6", "Convolutional(1D)", "1x1/" + std::to_string(cfg_.head_stride), "-",
                    std::to_string(cfg_.head_spatial()), count("head.conv6")});
    rows.push_back({"FC", "Linear", "-", "ReLU", std::to_string(cfg_.fc_hidden), count("head.fc")});
    rows.push_back({"Output", "Linear", "-", "Sigmoid", "2", count("head.out")});
    return rows;
  }

  CbamWeights<T>& cbam() { return cbam_; }
  SeWeights<T>& se() { return se_; }
  HeadWeights<T>& head() { return head_; }
  LstmWeights<T>& lstm_left() { return lstm_left_; }
  LstmWeights<T>& lstm_right() { return lstm_right_; }
  ConvUnit<T>& conv(int i) { return conv_.at(static_cast<std::size_t>(i)); }
  Tensor<T>& fusion_weight() { return fusion_w_; }

 private:
  Tensor<T> add_param(const std::string& name, Shape shape) {
    Tensor<T> t(std::move(shape));
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
  }

  void fill_uniform(Tensor<T>& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng_));
  }

  Tensor<T> kaiming(const std::string& name, Shape shape, std::int64_t fan_in) {
    Tensor<T> t = add_param(name, std::move(shape));
    fill_uniform(t, std::sqrt(6.0 / static_cast<double>(fan_in)));
    return t;
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    Tensor<T> t = add_param(name, std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  LstmWeights<T> make_lstm(const std::string& name, std::int64_t d_in, std::int64_t d) {
    LstmWeights<T> w;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    w.w_input = add_param(name + ".w_input", Shape{d_in, 4 * d});
    fill_uniform(w.w_input, bound);
    w.w_hidden = add_param(name + ".w_hidden", Shape{d, 4 * d});
    fill_uniform(w.w_hidden, bound);
    w.bias = add_param(name + ".bias", Shape{4 * d});
    for (std::int64_t i = d; i < 2 * d; ++i) w.bias[static_cast<std::size_t>(i)] = T(1);  // forget gate
    return w;
  }

  void build() {
    const auto& w = cfg_.conv_widths;
    if (cfg_.use_cbam) {
      const std::int64_t c = cfg_.bands;
      const std::int64_t hid = cbam_hidden(cfg_.bands, cfg_.se_ratio);
      cbam_.mlp_w1 = kaiming("cbam.mlp_w1", {c, hid}, c);
      cbam_.mlp_b1 = constant("cbam.mlp_b1", {hid}, T(0));
      cbam_.mlp_w2 = kaiming("cbam.mlp_w2", {hid, c}, hid);
      cbam_.mlp_b2 = constant("cbam.mlp_b2", {c}, T(0));
      cbam_.conv_w = kaiming("cbam.conv_w", {7, 7, 2, 1}, 7 * 7 * 2);
      cbam_.conv_b = constant("cbam.conv_b", {1}, T(0));
    }
    const std::array<int, 5> kernel{5, 5, 3, 3, 3};
    std::int64_t cin = cfg_.bands;
    for (int i = 0; i < 5; ++i) {
      const std::string base = "conv" + std::to_string(i + 1);
      const std::int64_t k = kernel[i], cout = w[i];
      ConvUnit<T> u;
      u.w = kaiming(base + ".w", {k, k, cin, cout}, k * k * cin);
      u.b = constant(base + ".b", {cout}, T(0));
      u.instance = i < 2 && cfg_.instance_norm_early;
      const std::string norm = u.instance ? ".in" : ".bn";
      u.gamma = constant(base + norm + ".gamma", {cout}, T(1));
      u.beta = constant(base + norm + ".beta", {cout}, T(0));
      u.bn = BatchNormState<T>(cout);
      conv_.push_back(std::move(u));
      cin = cout;
    }
    const std::int64_t c5 = cfg_.c5();
    fusion_w_ = kaiming("fusion.w", {3, 3, c5, c5}, 9 * c5);
    fusion_b_ = constant("fusion.b", {c5}, T(0));
    if (cfg_.use_se) {
      const std::int64_t r = c5 / cfg_.se_ratio;
      se_.w1 = kaiming("se.w1", {c5, r}, c5);
      se_.w2 = kaiming("se.w2", {r, c5}, r);
    }
    const std::int64_t d = cfg_.lstm_hidden;
    lstm_left_ = make_lstm(cfg_.bidirectional ? "lstm.left" : "lstm.forward", cfg_.frame_feature(), d);
    if (cfg_.bidirectional) lstm_right_ = make_lstm("lstm.right", cfg_.frame_feature(), d);
    head_.conv6_w = kaiming("head.conv6.w", {1, 1, 1, 1}, 1);
    head_.conv6_b = constant("head.conv6.b", {1}, T(0));
    head_.fc_w = kaiming("head.fc.w", {cfg_.head_input(), cfg_.fc_hidden}, cfg_.head_input());
    head_.fc_b = constant("head.fc.b", {cfg_.fc_hidden}, T(0));
    head_.out_w = kaiming("head.out.w", {cfg_.fc_hidden, 2}, cfg_.fc_hidden);
    head_.out_b = constant("head.out.b", {2}, T(0));
  }

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<NamedTensor<T>> params_;
  CbamWeights<T> cbam_;
  std::vector<ConvUnit<T>> conv_;
  Tensor<T> fusion_w_, fusion_b_;
  SeWeights<T> se_;
  LstmWeights<T> lstm_left_, lstm_right_;
  HeadWeights<T> head_;
};

}  // namespace stiln
