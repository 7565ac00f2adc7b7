#pragma once

#include <cmath>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/ops.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

// Running statistics of a batch normalization layer. Stored as tensors so they
// can be checkpointed next to the trainable parameters.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::int64_t channels)
      : running_mean(Shape{channels}), running_var(Tensor<T>::full(Shape{channels}, T(1))) {}
};

namespace detail {

// Elements of group (o, j) live at x[(o * count + p) * c + j], p < count.
// Stats are accumulated pixel-major so the channel axis stays contiguous.
template <typename T>
void group_stats(const T* x, std::int64_t outer, std::int64_t count, std::int64_t c,
                 std::vector<double>& mu, std::vector<double>& var) {
  mu.assign(static_cast<std::size_t>(outer * c), 0.0);
  var.assign(static_cast<std::size_t>(outer * c), 0.0);
  for (std::int64_t o = 0; o < outer; ++o) {
    double* m = mu.data() + o * c;
    double* v = var.data() + o * c;
    for (std::int64_t p = 0; p < count; ++p) {
      const T* row = x + (o * count + p) * c;
      for (std::int64_t j = 0; j < c; ++j) m[j] += row[j];
    }
    for (std::int64_t j = 0; j < c; ++j) m[j] /= static_cast<double>(count);
    for (std::int64_t p = 0; p < count; ++p) {
      const T* row = x + (o * count + p) * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double d = row[j] - m[j];
        v[j] += d * d;
      }
    }
    for (std::int64_t j = 0; j < c; ++j) v[j] /= static_cast<double>(count);
  }
}

// y = gamma * xhat + beta with xhat = (x - mu) * inv_std per group.
template <typename T>
void group_normalize(const T* x, const std::vector<double>& mu, const std::vector<double>& inv_std,
                     const T* gamma, const T* beta, std::int64_t outer, std::int64_t count,
                     std::int64_t c, T* xhat, T* y) {
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* m = mu.data() + o * c;
    const double* is = inv_std.data() + o * c;
    for (std::int64_t p = 0; p < count; ++p) {
      const std::int64_t base = (o * count + p) * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const T xh = static_cast<T>((x[base + j] - m[j]) * is[j]);
        xhat[base + j] = xh;
        y[base + j] = gamma[j] * xh + beta[j];
      }
    }
  }
}

// Backward of the normalize-scale-shift family. With batch statistics the
// input gradient is inv_std / M * (M * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat));
// with fixed statistics it is dxhat * inv_std.
template <typename T>
void group_backward(const T* g, const T* xhat, const std::vector<double>& inv_std, const T* gamma,
                    std::int64_t outer, std::int64_t count, std::int64_t c, bool batch_stats,
                    T* gx, T* ggamma, T* gbeta) {
  std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0), sdx(c), sdxx(c);
  const double m = static_cast<double>(count);
  for (std::int64_t o = 0; o < outer; ++o) {
    std::fill(sdx.begin(), sdx.end(), 0.0);
    std::fill(sdxx.begin(), sdxx.end(), 0.0);
    for (std::int64_t p = 0; p < count; ++p) {
      const std::int64_t base = (o * count + p) * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double gi = g[base + j];
        const double xh = xhat[base + j];
        dgamma[j] += gi * xh;
        dbeta[j] += gi;
        sdx[j] += gi;
        sdxx[j] += gi * xh;
      }
    }
    if (!gx) continue;
    const double* is = inv_std.data() + o * c;
    for (std::int64_t p = 0; p < count; ++p) {
      const std::int64_t base = (o * count + p) * c;
      for (std::int64_t j = 0; j < c; ++j) {
        const double gam = gamma[j];
        if (batch_stats) {
          gx[base + j] += static_cast<T>(is[j] / m * gam *
                                         (m * g[base + j] - sdx[j] - xhat[base + j] * sdxx[j]));
        } else {
          gx[base + j] += static_cast<T>(g[base + j] * gam * is[j]);
        }
      }
    }
  }
  for (std::int64_t j = 0; j < c; ++j) {
    if (ggamma) ggamma[j] += static_cast<T>(dgamma[j]);
    if (gbeta) gbeta[j] += static_cast<T>(dbeta[j]);
  }
}

template <typename T>
void check_affine(const Tensor<T>& gamma, const Tensor<T>& beta, std::int64_t c, const char* op) {
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c) {
    throw InvalidShape(std::string(op) + ": scale/shift must have " + std::to_string(c) +
                       " entries");
  }
}

}  // namespace detail

// Batch normalization over every axis but the last (channel) axis.
template <typename T>
Tensor<T> norm_batch(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
  detail::require_rank(input, 2, 4, "norm_batch");
  const std::int64_t c = input.shape().back();
  const std::int64_t m = input.numel() / c;
  detail::check_affine(gamma, beta, c, "norm_batch");
  if (training && input.dim(0) < 2) {
    throw ContractViolation("norm_batch: training mode needs a batch of at least 2");
  }
  std::vector<double> mu, var, inv_std(static_cast<std::size_t>(c));
  if (training) {
    detail::group_stats(input.ptr(), 1, m, c, mu, var);
    for (std::int64_t j = 0; j < c; ++j) {
      inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
      const double unbiased = m > 1 ? var[j] * m / (m - 1) : var[j];
      state.running_mean[j] =
          static_cast<T>((1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu[j]);
      state.running_var[j] = static_cast<T>((1.0 - state.momentum) * state.running_var[j] +
                                            state.momentum * unbiased);
    }
  } else {
    mu.resize(static_cast<std::size_t>(c));
    for (std::int64_t j = 0; j < c; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(static_cast<double>(state.running_var[j]) + state.eps);
    }
  }
  Tensor<T> out(input.shape());
  std::vector<T> xhat(static_cast<std::size_t>(input.numel()));
  detail::group_normalize(input.ptr(), mu, inv_std, gamma.ptr(), beta.ptr(), 1, m, c, xhat.data(),
                          out.ptr());
  record<T>("norm_batch", {&input, &gamma, &beta}, out,
            [m, c, training, inv_std, xhat = std::move(xhat)](Node<T>& nd) {
              detail::group_backward(nd.output->grad.data(), xhat.data(), inv_std,
                                     nd.inputs[1]->data.data(), 1, m, c, training,
                                     input_grad(nd, 0), input_grad(nd, 1), input_grad(nd, 2));
            });
  return out;
}

// Instance normalization: each (sample, channel) slab is normalized over its
// spatial extent. Same behavior in training and inference.
template <typename T>
Tensor<T> norm_instance(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        double eps = 1e-5) {
  const detail::Nhwc s = detail::as_nhwc(input, "norm_instance");
  detail::check_affine(gamma, beta, s.c, "norm_instance");
  const std::int64_t hw = s.h * s.w;
  if (hw < 2) throw ContractViolation("norm_instance: spatial extent must hold >= 2 pixels");
  std::vector<double> mu, var;
  detail::group_stats(input.ptr(), s.n, hw, s.c, mu, var);
  std::vector<double> inv_std(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + eps);
  Tensor<T> out(input.shape());
  std::vector<T> xhat(static_cast<std::size_t>(input.numel()));
  detail::group_normalize(input.ptr(), mu, inv_std, gamma.ptr(), beta.ptr(), s.n, hw, s.c,
                          xhat.data(), out.ptr());
  record<T>("norm_instance", {&input, &gamma, &beta}, out,
            [s, hw, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& nd) {
              detail::group_backward(nd.output->grad.data(), xhat.data(), inv_std,
                                     nd.inputs[1]->data.data(), s.n, hw, s.c, true,
                                     input_grad(nd, 0), input_grad(nd, 1), input_grad(nd, 2));
            });
  return out;
}

}  // namespace stiln
