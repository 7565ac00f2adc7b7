#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

template <typename T>
struct AdamState {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update over `params`, which must be passed in the
// same order on every call.
template <typename T>
void adam_step(AdamState<T>& state, std::span<Tensor<T>> params) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw ContractViolation("adam_step: parameter without gradient buffer");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractViolation("adam_step: parameter list changed between steps");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].data();
    auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != data.size()) throw ContractViolation("adam_step: parameter shape changed");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] = static_cast<T>(data[i] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

}  // namespace stiln
