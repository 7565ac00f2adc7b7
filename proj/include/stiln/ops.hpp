#pragma once

// Differentiable tensor operations. Feature maps are NHWC (rank 4) or HWC
// (rank 3, treated as a batch of one). Every op validates shapes and records a
// tape node when its inputs are tracked.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

enum class Activation { relu, sigmoid, tanh };
enum class PoolMode { max, avg };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c = a(m x k) * b(k x n), optionally accumulating. trans_a / trans_b read the
// stored operand as its transpose (stored shape then k x m / n x k).
template <typename T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n,
          bool accumulate, bool trans_a = false, bool trans_b = false) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += Map(a, m, k) * Map(b, k, n);
  } else if (trans_a && !trans_b) {
    cm.noalias() += Map(a, k, m).transpose() * Map(b, k, n);
  } else if (!trans_a && trans_b) {
    cm.noalias() += Map(a, m, k) * Map(b, n, k).transpose();
  } else {
    cm.noalias() += Map(a, k, m).transpose() * Map(b, n, k).transpose();
  }
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw InvalidShape(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " +
                       shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw InvalidShape(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                         shape_str(b));
    }
  }
  return out;
}

// Strides of `in` addressed by output coordinates (0 along broadcast axes).
inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(in.size());
  std::int64_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i] = (in[i] == out[i]) ? s : 0;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void broadcast_for_each(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia = sa[r - 1], ib = sb[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oi = 0, ai = 0, bi = 0;
  const std::int64_t total = shape_numel(out);
  while (oi < total) {
    for (std::int64_t j = 0; j < inner; ++j) f(oi + j, ai + j * ia, bi + j * ib);
    oi += inner;
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ai += sa[d];
      bi += sb[d];
      if (idx[d] < out[d]) break;
      ai -= sa[d] * out[d];
      bi -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor<T> out(out_shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const bool same = a.shape() == b.shape();
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  auto apply = [&](std::int64_t o, std::int64_t i, std::int64_t j) {
    switch (op) {
      case BinOp::add: po[o] = pa[i] + pb[j]; break;
      case BinOp::sub: po[o] = pa[i] - pb[j]; break;
      case BinOp::mul: po[o] = pa[i] * pb[j]; break;
    }
  };
  if (same) {
    for (std::int64_t i = 0; i < out.numel(); ++i) apply(i, i, i);
  } else {
    broadcast_for_each(out_shape, sa, sb, apply);
  }
  record<T>(name, {&a, &b}, out, [out_shape, sa, sb, same, op](Node<T>& n) {
    const T* g = n.output->grad.data();
    const T* va = n.inputs[0]->data.data();
    const T* vb = n.inputs[1]->data.data();
    T* ga = input_grad(n, 0);
    T* gb = input_grad(n, 1);
    auto back = [&](std::int64_t o, std::int64_t i, std::int64_t j) {
      switch (op) {
        case BinOp::add:
          if (ga) ga[i] += g[o];
          if (gb) gb[j] += g[o];
          break;
        case BinOp::sub:
          if (ga) ga[i] += g[o];
          if (gb) gb[j] -= g[o];
          break;
        case BinOp::mul:
          if (ga) ga[i] += g[o] * vb[j];
          if (gb) gb[j] += g[o] * va[i];
          break;
      }
    };
    if (same) {
      for (std::int64_t i = 0; i < shape_numel(out_shape); ++i) back(i, i, i);
    } else {
      broadcast_for_each(out_shape, sa, sb, back);
    }
  });
  return out;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t lo, std::size_t hi, const char* op) {
  if (!t.defined()) throw InvalidShape(std::string(op) + ": undefined tensor");
  if (t.rank() < lo || t.rank() > hi) {
    throw InvalidShape(std::string(op) + ": unexpected rank for shape " + shape_str(t.shape()));
  }
}

struct Nhwc {
  std::int64_t n, h, w, c;
};

template <typename T>
Nhwc as_nhwc(const Tensor<T>& t, const char* op) {
  require_rank(t, 3, 4, op);
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2)};
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

inline Shape nhwc_shape(bool batched, const Nhwc& s) {
  if (batched) return {s.n, s.h, s.w, s.c};
  return {s.h, s.w, s.c};
}

template <typename T>
void im2col(const T* img, std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, T* col) {
  const std::int64_t kc = k * c;
  const std::int64_t row_len = k * kc;
  for (std::int64_t oy = 0; oy < ho; ++oy) {
    for (std::int64_t ox = 0; ox < wo; ++ox) {
      T* row = col + (oy * wo + ox) * row_len;
      for (std::int64_t ky = 0; ky < k; ++ky) {
        const std::int64_t iy = oy * stride - pad + ky;
        T* dst = row + ky * kc;
        if (iy < 0 || iy >= h) {
          std::fill(dst, dst + kc, T(0));
          continue;
        }
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const std::int64_t ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) {
            std::fill(dst + kx * c, dst + (kx + 1) * c, T(0));
          } else {
            std::memcpy(dst + kx * c, img + (iy * w + ix) * c, sizeof(T) * c);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::int64_t h, std::int64_t w, std::int64_t c, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t ho, std::int64_t wo, T* img) {
  const std::int64_t kc = k * c;
  const std::int64_t row_len = k * kc;
  for (std::int64_t oy = 0; oy < ho; ++oy) {
    for (std::int64_t ox = 0; ox < wo; ++ox) {
      const T* row = col + (oy * wo + ox) * row_len;
      for (std::int64_t ky = 0; ky < k; ++ky) {
        const std::int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const std::int64_t ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const T* src = row + ky * kc + kx * c;
          T* dst = img + (iy * w + ix) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

template <typename T>
Tensor<T> pool_impl(const Tensor<T>& input, std::int64_t wh, std::int64_t ww, PoolMode mode,
                    const char* op) {
  const bool batched = input.rank() == 4;
  const Nhwc s = as_nhwc(input, op);
  if (wh <= 0 || ww <= 0) throw InvalidArgument(std::string(op) + ": window must be positive");
  if (s.h % wh != 0 || s.w % ww != 0) {
    throw InvalidShape(std::string(op) + ": extents " + shape_str(input.shape()) +
                       " not divisible by window");
  }
  const Nhwc o{s.n, s.h / wh, s.w / ww, s.c};
  Tensor<T> out(nhwc_shape(batched, o));
  std::vector<std::int64_t> argmax;
  if (mode == PoolMode::max) argmax.resize(static_cast<std::size_t>(out.numel()));
  const T* x = input.ptr();
  T* y = out.ptr();
  const double inv = 1.0 / static_cast<double>(wh * ww);
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t oy = 0; oy < o.h; ++oy) {
      for (std::int64_t ox = 0; ox < o.w; ++ox) {
        for (std::int64_t c = 0; c < s.c; ++c) {
          const std::int64_t oi = ((n * o.h + oy) * o.w + ox) * s.c + c;
          if (mode == PoolMode::max) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_i = -1;
            for (std::int64_t dy = 0; dy < wh; ++dy) {
              for (std::int64_t dx = 0; dx < ww; ++dx) {
                const std::int64_t ii = ((n * s.h + oy * wh + dy) * s.w + ox * ww + dx) * s.c + c;
                if (best_i < 0 || x[ii] > best || (x[ii] != x[ii] && best == best)) {  // NaN wins
                  best = x[ii];
                  best_i = ii;
                }
              }
            }
            y[oi] = best;
            argmax[static_cast<std::size_t>(oi)] = best_i;
          } else {
            double acc = 0.0;
            for (std::int64_t dy = 0; dy < wh; ++dy) {
              for (std::int64_t dx = 0; dx < ww; ++dx) {
                acc += x[((n * s.h + oy * wh + dy) * s.w + ox * ww + dx) * s.c + c];
              }
            }
            y[oi] = static_cast<T>(acc * inv);
          }
        }
      }
    }
  }
  record<T>(op, {&input}, out, [s, o, wh, ww, mode, inv, argmax = std::move(argmax)](Node<T>& nd) {
    T* gx = input_grad(nd, 0);
    if (!gx) return;
    const T* g = nd.output->grad.data();
    if (mode == PoolMode::max) {
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
      return;
    }
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t oy = 0; oy < o.h; ++oy)
        for (std::int64_t ox = 0; ox < o.w; ++ox)
          for (std::int64_t c = 0; c < s.c; ++c) {
            const T gi = static_cast<T>(g[((n * o.h + oy) * o.w + ox) * s.c + c] * inv);
            for (std::int64_t dy = 0; dy < wh; ++dy)
              for (std::int64_t dx = 0; dx < ww; ++dx)
                gx[((n * s.h + oy * wh + dy) * s.w + ox * ww + dx) * s.c + c] += gi;
          }
  });
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinOp::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinOp::sub, "sub");
}
// Elementwise product; either operand may have extent 1 along an axis (gates,
// channelwise scale).
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, detail::BinOp::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;
  record<T>("scale", {&x}, out, [factor](Node<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const auto& g = n.output->grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  const T* px = x.ptr();
  T* py = out.ptr();
  const std::int64_t n = x.numel();
  switch (kind) {
    case Activation::relu:
      for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] < T(0) ? T(0) : px[i];  // keeps NaN
      break;
    case Activation::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) py[i] = T(1) / (T(1) + std::exp(-px[i]));
      break;
    case Activation::tanh:
      for (std::int64_t i = 0; i < n; ++i) py[i] = std::tanh(px[i]);
      break;
  }
  record<T>("activation", {&x}, out, [kind](Node<T>& nd) {
    T* gx = input_grad(nd, 0);
    if (!gx) return;
    const T* g = nd.output->grad.data();
    const T* y = nd.output->data.data();
    const T* xin = nd.inputs[0]->data.data();
    const std::size_t n = nd.output->grad.size();
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += xin[i] > T(0) ? g[i] : T(0);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
        break;
    }
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return activation(x, Activation::tanh);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  record<T>("sum", {&x}, out, [](Node<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const T g = n.output->grad[0];
    for (std::size_t i = 0; i < n.inputs[0]->data.size(); ++i) gx[i] += g;
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw InvalidShape("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  record<T>("reshape", {&x}, out, [](Node<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const auto& g = n.output->grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw InvalidArgument("concat: no inputs");
  const Shape& first = inputs[0].shape();
  if (axis >= first.size()) throw InvalidShape("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : inputs) {
    if (t.rank() != first.size()) throw InvalidShape("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.dim(d) != first[d]) {
        throw InvalidShape("concat: mismatched extents " + shape_str(first) + " vs " +
                           shape_str(t.shape()));
      }
    }
    out_shape[axis] += t.dim(axis);
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::int64_t out_row = out_shape[axis] * inner;
  Tensor<T> out(out_shape);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : inputs) {
    offsets.push_back(off);
    const std::int64_t len = t.dim(axis) * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(t.ptr() + o * len, len, out.ptr() + o * out_row + off);
    }
    off += len;
  }
  record<T>("concat", inputs, out, [outer, out_row, offsets](Node<T>& n) {
    const T* g = n.output->grad.data();
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      T* gx = input_grad(n, i);
      if (!gx) continue;
      const std::int64_t len = static_cast<std::int64_t>(n.inputs[i]->data.size()) / outer;
      for (std::int64_t o = 0; o < outer; ++o) {
        const T* src = g + o * out_row + offsets[i];
        T* dst = gx + o * len;
        for (std::int64_t j = 0; j < len; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

// Contiguous range [start, start+length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::int64_t start, std::int64_t length) {
  if (axis >= x.rank()) throw InvalidShape("slice: axis out of range");
  if (start < 0 || length <= 0 || start + length > x.dim(axis)) {
    throw InvalidShape("slice: range out of bounds for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::int64_t in_row = x.dim(axis) * inner;
  const std::int64_t len = length * inner;
  const std::int64_t off = start * inner;
  Tensor<T> out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(x.ptr() + o * in_row + off, len, out.ptr() + o * len);
  }
  record<T>("slice", {&x}, out, [outer, in_row, len, off](Node<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const T* g = n.output->grad.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t j = 0; j < len; ++j) gx[o * in_row + off + j] += g[o * len + j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw InvalidShape("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  detail::gemm(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
  record<T>("matmul", {&a, &b}, out, [m, k, n](Node<T>& nd) {
    const T* g = nd.output->grad.data();
    if (T* ga = input_grad(nd, 0)) {
      detail::gemm(g, nd.inputs[1]->data.data(), ga, m, n, k, true, false, true);
    }
    if (T* gb = input_grad(nd, 1)) {
      detail::gemm(nd.inputs[0]->data.data(), g, gb, k, m, n, true, true, false);
    }
  });
  return out;
}

// x[M,K] * weight[K,N] + bias[N]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw InvalidShape("linear: " + shape_str(x.shape()) + " x " + shape_str(weight.shape()));
  }
  const std::int64_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) {
    throw InvalidShape("linear: bias shape " + shape_str(bias.shape()));
  }
  Tensor<T> out(Shape{m, n});
  detail::gemm(x.ptr(), weight.ptr(), out.ptr(), m, k, n, false);
  if (bias.defined()) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  }
  record<T>("linear", {&x, &weight, &bias}, out, [m, k, n](Node<T>& nd) {
    const T* g = nd.output->grad.data();
    if (T* gx = input_grad(nd, 0)) {
      detail::gemm(g, nd.inputs[1]->data.data(), gx, m, n, k, true, false, true);
    }
    if (T* gw = input_grad(nd, 1)) {
      detail::gemm(nd.inputs[0]->data.data(), g, gw, k, m, n, true, true, false);
    }
    if (T* gb = input_grad(nd, 2)) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) acc += g[i * n + j];
        gb[j] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

// Cross-correlation with zero padding. kernels: [k,k,Cin,Cout]; bias: [Cout] or
// undefined. Output extent: floor((H + 2*padding - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 int stride, int padding) {
  const bool batched = input.rank() == 4;
  const detail::Nhwc s = detail::as_nhwc(input, "conv2d");
  if (kernels.rank() != 4 || kernels.dim(0) != kernels.dim(1)) {
    throw InvalidShape("conv2d: kernels must be [k,k,Cin,Cout], got " +
                       shape_str(kernels.shape()));
  }
  const std::int64_t k = kernels.dim(0), cout = kernels.dim(3);
  if (kernels.dim(2) != s.c) {
    throw InvalidShape("conv2d: kernel Cin " + std::to_string(kernels.dim(2)) +
                       " != input channels " + std::to_string(s.c));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw InvalidShape("conv2d: bias shape " + shape_str(bias.shape()));
  }
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: bad stride/padding");
  if (k > s.h + 2 * padding || k > s.w + 2 * padding) {
    throw InvalidShape("conv2d: kernel larger than padded input");
  }
  const detail::Nhwc o{s.n, (s.h + 2 * padding - k) / stride + 1,
                       (s.w + 2 * padding - k) / stride + 1, cout};
  Tensor<T> out(detail::nhwc_shape(batched, o));
  const std::int64_t kk = k * k * s.c;
  const std::int64_t pix = o.h * o.w;
  const bool direct = (k == 1 && stride == 1 && padding == 0);
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(pix * kk));
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* img = input.ptr() + n * s.h * s.w * s.c;
    const T* a = img;
    if (!direct) {
      detail::im2col(img, s.h, s.w, s.c, k, stride, padding, o.h, o.w, col.data());
      a = col.data();
    }
    T* y = out.ptr() + n * pix * cout;
    detail::gemm(a, kernels.ptr(), y, pix, kk, cout, false);
    if (bias.defined()) {
      for (std::int64_t p = 0; p < pix; ++p)
        for (std::int64_t c = 0; c < cout; ++c) y[p * cout + c] += bias[c];
    }
  }
  record<T>("conv2d", {&input, &kernels, &bias}, out,
            [s, o, k, kk, pix, stride, padding, direct](Node<T>& nd) {
              const T* g = nd.output->grad.data();
              const T* x = nd.inputs[0]->data.data();
              const T* w = nd.inputs[1]->data.data();
              T* gx = input_grad(nd, 0);
              T* gw = input_grad(nd, 1);
              T* gb = input_grad(nd, 2);
              std::vector<T> col(direct ? 0 : static_cast<std::size_t>(pix * kk));
              for (std::int64_t n = 0; n < s.n; ++n) {
                const T* gy = g + n * pix * o.c;
                const T* img = x + n * s.h * s.w * s.c;
                if (gw) {
                  const T* a = img;
                  if (!direct) {
                    detail::im2col(img, s.h, s.w, s.c, k, stride, padding, o.h, o.w, col.data());
                    a = col.data();
                  }
                  detail::gemm(a, gy, gw, kk, pix, o.c, true, true, false);
                }
                if (gx) {
                  T* gimg = gx + n * s.h * s.w * s.c;
                  if (direct) {
                    detail::gemm(gy, w, gimg, pix, o.c, kk, true, false, true);
                  } else {
                    detail::gemm(gy, w, col.data(), pix, o.c, kk, false, false, true);
                    detail::col2im(col.data(), s.h, s.w, s.c, k, stride, padding, o.h, o.w, gimg);
                  }
                }
              }
              if (gb) {
                for (std::int64_t c = 0; c < o.c; ++c) {
                  double acc = 0.0;
                  for (std::int64_t i = 0; i < s.n * pix; ++i) acc += g[i * o.c + c];
                  gb[c] += static_cast<T>(acc);
                }
              }
            });
  return out;
}

// Non-overlapping window pooling, stride = window.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, int window, PoolMode mode) {
  return detail::pool_impl(input, window, window, mode, "pool2d");
}

// Pools each channel over the whole spatial extent: [N,H,W,C] -> [N,1,1,C].
template <typename T>
Tensor<T> global_pool(const Tensor<T>& input, PoolMode mode) {
  const detail::Nhwc s = detail::as_nhwc(input, "global_pool");
  return detail::pool_impl(input, s.h, s.w, mode, "global_pool");
}

// Mean or max across channels: [N,H,W,C] -> [N,H,W,1].
template <typename T>
Tensor<T> reduce_channels(const Tensor<T>& input, PoolMode mode) {
  const bool batched = input.rank() == 4;
  const detail::Nhwc s = detail::as_nhwc(input, "reduce_channels");
  const std::int64_t pixels = s.n * s.h * s.w;
  Tensor<T> out(detail::nhwc_shape(batched, {s.n, s.h, s.w, 1}));
  std::vector<std::int64_t> argmax(mode == PoolMode::max ? pixels : 0);
  const T* x = input.ptr();
  for (std::int64_t p = 0; p < pixels; ++p) {
    const T* px = x + p * s.c;
    if (mode == PoolMode::max) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < s.c; ++c)
        if (px[c] > px[best] || (px[c] != px[c] && px[best] == px[best])) best = c;
      out[p] = px[best];
      argmax[p] = best;
    } else {
      double acc = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) acc += px[c];
      out[p] = static_cast<T>(acc / static_cast<double>(s.c));
    }
  }
  record<T>("reduce_channels", {&input}, out, [pixels, c = s.c, mode, argmax](Node<T>& nd) {
    T* gx = input_grad(nd, 0);
    if (!gx) return;
    const T* g = nd.output->grad.data();
    for (std::int64_t p = 0; p < pixels; ++p) {
      if (mode == PoolMode::max) {
        gx[p * c + argmax[p]] += g[p];
      } else {
        const T gi = static_cast<T>(g[p] / static_cast<double>(c));
        for (std::int64_t j = 0; j < c; ++j) gx[p * c + j] += gi;
      }
    }
  });
  return out;
}

}  // namespace stiln
