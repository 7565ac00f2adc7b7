#pragma once

#include <algorithm>
#include <cmath>

#include "stiln/error.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy over every batch entry and output unit. Predictions
// are clamped to [1e-7, 1 - 1e-7]; the gradient is zero where the clamp is active.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw InvalidShape("bce_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                       shape_str(target.shape()));
  }
  const std::int64_t n = pred.numel();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(pred[i]), kBceClamp, 1.0 - kBceClamp);
    const double y = target[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  record<T>("bce_loss", {&pred, &target}, out, [n](Node<T>& nd) {
    T* gp = input_grad(nd, 0);
    if (!gp) return;
    const double g = nd.output->grad[0] / static_cast<double>(n);
    const auto& pv = nd.inputs[0]->data;
    const auto& yv = nd.inputs[1]->data;
    for (std::int64_t i = 0; i < n; ++i) {
      const double p = pv[i];
      if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
      const double y = yv[i];
      gp[i] += static_cast<T>(g * (-y / p + (1.0 - y) / (1.0 - p)));
    }
  });
  return out;
}

}  // namespace stiln
