#pragma once

// Shared helpers for the unit and acceptance suites: seeded random tensors and a
// central finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stiln/ops.hpp"
#include "stiln/tensor.hpp"

namespace stiln::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Distinct values spaced at least `gap` apart, randomly permuted: keeps max
// selections away from ties so finite differences never cross a kink.
template <typename T>
Tensor<T> spaced_tensor(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  Tensor<T> t(std::move(shape));
  std::vector<double> vals(t.data().size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = gap * (static_cast<double>(i) - vals.size() / 2.0);
  std::shuffle(vals.begin(), vals.end(), rng);
  for (std::size_t i = 0; i < vals.size(); ++i) t[i] = static_cast<T>(vals[i]);
  return t;
}

// Random values whose magnitude stays at least `margin` away from 0, so ReLU
// kinks are never crossed by a step smaller than the margin.
template <typename T>
Tensor<T> off_zero_tensor(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.data()) v = static_cast<T>(sign(rng) ? u(rng) : -u(rng));
  return t;
}

struct GradCheck {
  double max_rel = 0.0;   // worst |analytic - numeric| / max(|analytic|, |numeric|, floor)
  double max_abs = 0.0;
  std::size_t checked = 0;
  std::string worst;      // "input#index"
};

inline constexpr double kGradFloor = 1e-3;

// Compares reverse-mode gradients of the scalar f(inputs) with central finite
// differences (step h) for every element of every input.
template <typename T>
GradCheck gradcheck(std::vector<Tensor<T>> inputs, const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                    double h = 1e-3, double floor = kGradFloor) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> loss = f(inputs);
    backward(loss);
  }
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<T> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    for (std::size_t i = 0; i < static_cast<std::size_t>(inputs[k].numel()); ++i) {
      const T orig = inputs[k][i];
      inputs[k][i] = static_cast<T>(orig + h);
      const double up = static_cast<double>(f(inputs).item());
      inputs[k][i] = static_cast<T>(orig - h);
      const double down = static_cast<double>(f(inputs).item());
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      out.max_abs = std::max(out.max_abs, abs_err);
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = std::to_string(k) + "#" + std::to_string(i);
      }
    }
  }
  return out;
}

// Reduces a tensor to a scalar through fixed random weights so every output
// element contributes to the checked gradient.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& y, const Tensor<T>& w) {
  return sum(mul(y, w));
}

}  // namespace stiln::testing
