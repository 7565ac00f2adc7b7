#pragma once

// Finite-difference cases for every differentiable operation, shared by the
// unit tests and the acceptance suite. Each case builds seeded random inputs in
// double precision and returns the gradient comparison.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stiln/loss.hpp"
#include "stiln/lstm.hpp"
#include "stiln/model.hpp"
#include "stiln/norm.hpp"
#include "stiln/ops.hpp"
#include "support/testing.hpp"

namespace stiln::testing {

using D = double;
using Inputs = std::vector<Tensor<D>>;
using LossFn = std::function<Tensor<D>(Inputs&)>;

struct GradCase {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

inline GradCheck check(Inputs inputs, const LossFn& f) { return gradcheck<D>(std::move(inputs), f); }

// Smallest distance of any CBAM max/ReLU decision from switching: top-two gap
// of the spatial max per channel, of the channel max per pixel of the gated map,
// and |pre-activation| of the shared MLP hidden layer.
inline double cbam_kink_margin(const Tensor<D>& f, const CbamWeights<D>& w) {
  const std::int64_t n = f.dim(0), hw = f.dim(1) * f.dim(2), c = f.dim(3), hid = w.mlp_w1.dim(1);
  auto top2_gap = [](std::vector<double> v) {
    std::partial_sort(v.begin(), v.begin() + 2, v.end(), std::greater<>());
    return v[0] - v[1];
  };
  const Tensor<D> gated = mul(cbam_channel_attention(f, w), f);
  double margin = INFINITY;
  for (std::int64_t s = 0; s < n; ++s) {
    std::vector<double> avg(static_cast<std::size_t>(c), 0.0), mx(static_cast<std::size_t>(c), -INFINITY);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      std::vector<double> col;
      for (std::int64_t p = 0; p < hw; ++p) col.push_back(f[static_cast<std::size_t>((s * hw + p) * c + ch)]);
      margin = std::min(margin, top2_gap(col));
      for (double v : col) avg[ch] += v / static_cast<double>(hw);
      mx[ch] = *std::max_element(col.begin(), col.end());
    }
    for (const auto& pooled : {avg, mx}) {
      for (std::int64_t j = 0; j < hid; ++j) {
        double pre = w.mlp_b1[static_cast<std::size_t>(j)];
        for (std::int64_t ch = 0; ch < c; ++ch) pre += pooled[ch] * w.mlp_w1[static_cast<std::size_t>(ch * hid + j)];
        margin = std::min(margin, std::abs(pre));
      }
    }
    for (std::int64_t p = 0; p < hw; ++p) {
      const auto* px = gated.ptr() + (s * hw + p) * c;
      margin = std::min(margin, top2_gap(std::vector<double>(px, px + c)));
    }
  }
  return margin;
}

inline std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r_same = random_tensor<D>({2, 5, 5, 3}, rng);
    const auto r_strided = random_tensor<D>({2, 2, 2, 3}, rng);
    return check({random_tensor<D>({2, 5, 5, 2}, rng), random_tensor<D>({3, 3, 2, 3}, rng), random_tensor<D>({3}, rng)},
                 [=](Inputs& in) {
                   return add(weighted_sum(conv2d(in[0], in[1], in[2], 1, 1), r_same),
                              weighted_sum(conv2d(in[0], in[1], in[2], 2, 0), r_strided));
                 });
  }});

  cases.push_back({"conv2d_1x1", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({1, 4, 4, 2}, rng);
    return check({random_tensor<D>({1, 4, 4, 3}, rng), random_tensor<D>({1, 1, 3, 2}, rng), random_tensor<D>({2}, rng)},
                 [=](Inputs& in) { return weighted_sum(conv2d(in[0], in[1], in[2], 1, 0), r); });
  }});

  cases.push_back({"pool2d_max", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({2, 2, 2, 3}, rng);
    return check({spaced_tensor<D>({2, 4, 4, 3}, rng)},
                 [=](Inputs& in) { return weighted_sum(pool2d(in[0], 2, PoolMode::max), r); });
  }});

  cases.push_back({"pool2d_avg", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({2, 2, 2, 3}, rng);
    return check({random_tensor<D>({2, 4, 4, 3}, rng)},
                 [=](Inputs& in) { return weighted_sum(pool2d(in[0], 2, PoolMode::avg), r); });
  }});

  cases.push_back({"global_and_channel_pools", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r1 = random_tensor<D>({2, 1, 1, 3}, rng);
    const auto r2 = random_tensor<D>({2, 3, 3, 1}, rng);
    return check({spaced_tensor<D>({2, 3, 3, 3}, rng)}, [=](Inputs& in) {
      return add(add(weighted_sum(global_pool(in[0], PoolMode::max), r1),
                     weighted_sum(global_pool(in[0], PoolMode::avg), r1)),
                 add(weighted_sum(reduce_channels(in[0], PoolMode::max), r2),
                     weighted_sum(reduce_channels(in[0], PoolMode::avg), r2)));
    });
  }});

  for (auto kind : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
    const std::string name = kind == Activation::relu ? "relu" : kind == Activation::sigmoid ? "sigmoid" : "tanh";
    cases.push_back({name, [kind](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      const auto r = random_tensor<D>({3, 4}, rng);
      auto x = kind == Activation::relu ? off_zero_tensor<D>({3, 4}, rng) : random_tensor<D>({3, 4}, rng, -3.0, 3.0);
      return check({x}, [=](Inputs& in) { return weighted_sum(activation(in[0], kind), r); });
    }});
  }

  cases.push_back({"concat", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r1 = random_tensor<D>({2, 5}, rng);
    const auto r0 = random_tensor<D>({4, 3}, rng);
    return check({random_tensor<D>({2, 3}, rng), random_tensor<D>({2, 2}, rng), random_tensor<D>({2, 3}, rng)},
                 [=](Inputs& in) {
                   return add(weighted_sum(concat<D>({in[0], in[1]}, 1), r1),
                              weighted_sum(concat<D>({in[0], in[2]}, 0), r0));
                 });
  }});

  cases.push_back({"elementwise_and_linear", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({3, 2}, rng);
    return check({random_tensor<D>({3, 4}, rng), random_tensor<D>({4, 2}, rng), random_tensor<D>({2}, rng),
                  random_tensor<D>({1, 2}, rng)},
                 [=](Inputs& in) {
                   Tensor<D> y = linear(in[0], in[1], in[2]);
                   y = sub(mul(y, in[3]), scale(matmul(in[0], in[1]), D(0.5)));
                   return weighted_sum(slice(reshape(y, Shape{3, 2}), 0, 0, 3), r);
                 });
  }});

  cases.push_back({"norm_batch", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({4, 3, 3, 2}, rng);
    return check({random_tensor<D>({4, 3, 3, 2}, rng), random_tensor<D>({2}, rng, 0.5, 1.5), random_tensor<D>({2}, rng)},
                 [=](Inputs& in) {
                   BatchNormState<D> state(2);
                   return weighted_sum(norm_batch(in[0], in[1], in[2], state, true), r);
                 });
  }});

  cases.push_back({"norm_instance", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({2, 3, 3, 2}, rng);
    return check({random_tensor<D>({2, 3, 3, 2}, rng), random_tensor<D>({2}, rng, 0.5, 1.5), random_tensor<D>({2}, rng)},
                 [=](Inputs& in) { return weighted_sum(norm_instance(in[0], in[1], in[2]), r); });
  }});

  cases.push_back({"lstm_cell", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int din = 3, d = 4;
    const auto rh = random_tensor<D>({d}, rng);
    const auto rc = random_tensor<D>({d}, rng);
    return check({random_tensor<D>({din}, rng), random_tensor<D>({d}, rng), random_tensor<D>({d}, rng),
                  random_tensor<D>({din, 4 * d}, rng), random_tensor<D>({d, 4 * d}, rng), random_tensor<D>({4 * d}, rng)},
                 [=](Inputs& in) {
                   const LstmWeights<D> w{in[3], in[4], in[5]};
                   const auto s = lstm_cell(in[0], in[1], in[2], w);
                   return add(weighted_sum(s.h, rh), weighted_sum(s.c, rc));
                 });
  }});

  cases.push_back({"bilstm", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int din = 5, d = 3, steps = 6;
    const auto r = random_tensor<D>({1, steps, 2 * d}, rng);
    return check({random_tensor<D>({1, steps, din}, rng), random_tensor<D>({din, 4 * d}, rng),
                  random_tensor<D>({d, 4 * d}, rng), random_tensor<D>({4 * d}, rng), random_tensor<D>({din, 4 * d}, rng),
                  random_tensor<D>({d, 4 * d}, rng), random_tensor<D>({4 * d}, rng)},
                 [=](Inputs& in) {
                   return weighted_sum(bilstm(in[0], LstmWeights<D>{in[1], in[2], in[3]}, LstmWeights<D>{in[4], in[5], in[6]}), r);
                 });
  }});

  cases.push_back({"se_block", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({2, 4, 4, 8}, rng);
    for (;;) {
      Inputs in{random_tensor<D>({2, 4, 4, 8}, rng), random_tensor<D>({8, 2}, rng), random_tensor<D>({2, 8}, rng)};
      // Redraw while a bottleneck ReLU input sits near its kink.
      const Tensor<D> pre = matmul(reshape(global_pool(in[0], PoolMode::avg), Shape{2, 8}), in[1]);
      if (std::any_of(pre.data().begin(), pre.data().end(), [](D v) { return std::abs(v) < 5e-3; })) continue;
      return check(in, [=](Inputs& v) { return weighted_sum(se_block(v[0], SeWeights<D>{v[1], v[2]}), r); });
    }
  }});

  cases.push_back({"cbam", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({2, 7, 7, 4}, rng);
    // The channel gate rescales channels unevenly, so the per-pixel channel max
    // of the gated map can sit arbitrarily close to a tie; redraw until every
    // max and ReLU decision is well clear of the difference step.
    for (;;) {
      Inputs in{spaced_tensor<D>({2, 7, 7, 4}, rng, 0.01), random_tensor<D>({4, 2}, rng), random_tensor<D>({2}, rng),
                random_tensor<D>({2, 4}, rng), random_tensor<D>({4}, rng),
                random_tensor<D>({7, 7, 2, 1}, rng, -0.3, 0.3), random_tensor<D>({1}, rng)};
      const CbamWeights<D> w{in[1], in[2], in[3], in[4], in[5], in[6]};
      if (cbam_kink_margin(in[0], w) < 5e-3) continue;
      return check(in, [=](Inputs& v) {
        return weighted_sum(cbam_apply(v[0], CbamWeights<D>{v[1], v[2], v[3], v[4], v[5], v[6]}), r);
      });
    }
  }});

  cases.push_back({"residual_fusion", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto r = random_tensor<D>({1, 4, 4, 3}, rng);
    return check({random_tensor<D>({1, 4, 4, 3}, rng, 0.2, 1.0), random_tensor<D>({3, 3, 3, 3}, rng, -0.05, 0.05),
                  random_tensor<D>({3}, rng, -0.05, 0.05)},
                 [=](Inputs& in) { return weighted_sum(residual_fusion(in[0], in[1], in[2]), r); });
  }});

  cases.push_back({"bce_loss", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor<D> target({4, 2});
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < 4; ++i) target[static_cast<std::size_t>(2 * i + (coin(rng) ? 1 : 0))] = 1.0;
    return check({random_tensor<D>({4, 2}, rng, 0.05, 0.95)},
                 [=](Inputs& in) { return bce_loss(in[0], target); });
  }});

  return cases;
}

}  // namespace stiln::testing
