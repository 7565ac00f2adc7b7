#pragma once

#include <utility>

#include "stiln/ops.hpp"
#include "stiln/tensor.hpp"

namespace stiln {

// Gate blocks are laid out along the last axis in the order input, forget,
// candidate, output.
template <typename T>
struct LstmWeights {
  Tensor<T> w_input;   // [d_in, 4d]
  Tensor<T> w_hidden;  // [d, 4d]
  Tensor<T> bias;      // [4d]

  std::int64_t input_size() const { return w_input.dim(0); }
  std::int64_t hidden_size() const { return w_hidden.dim(0); }
};

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

namespace detail {

template <typename T>
void check_lstm_weights(const LstmWeights<T>& w) {
  const std::int64_t d = w.w_hidden.dim(0);
  if (w.w_input.rank() != 2 || w.w_hidden.rank() != 2 || w.bias.rank() != 1 ||
      w.w_input.dim(1) != 4 * d || w.w_hidden.dim(1) != 4 * d || w.bias.dim(0) != 4 * d) {
    throw InvalidShape("lstm: inconsistent weight extents");
  }
}

}  // namespace detail

// One step given precomputed input projections gx = x * W_input + bias, [B,4d].
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& gx, const LstmState<T>& prev, const Tensor<T>& w_hidden) {
  const std::int64_t d = w_hidden.dim(0);
  if (prev.h.rank() != 2 || prev.h.dim(1) != d || prev.c.shape() != prev.h.shape() ||
      gx.rank() != 2 || gx.dim(1) != 4 * d || gx.dim(0) != prev.h.dim(0)) {
    throw InvalidShape("lstm: state/gate shapes disagree with hidden size " + std::to_string(d));
  }
  Tensor<T> gates = add(gx, matmul(prev.h, w_hidden));
  Tensor<T> i = sigmoid(slice(gates, 1, 0, d));
  Tensor<T> f = sigmoid(slice(gates, 1, d, d));
  Tensor<T> g = tanh(slice(gates, 1, 2 * d, d));
  Tensor<T> o = sigmoid(slice(gates, 1, 3 * d, d));
  Tensor<T> c = add(mul(f, prev.c), mul(i, g));
  Tensor<T> h = mul(o, tanh(c));
  return {h, c};
}

// Standard LSTM cell. Accepts unbatched ([d_in], [d], [d]) or batched
// ([B,d_in], [B,d], [B,d]) arguments and returns (h_t, c_t) of the same rank.
template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                       const LstmWeights<T>& w) {
  detail::check_lstm_weights(w);
  const bool flat = x.rank() == 1;
  const std::int64_t d = w.hidden_size();
  if ((flat ? x.dim(0) : x.dim(1)) != w.input_size()) {
    throw InvalidShape("lstm_cell: input width " + shape_str(x.shape()) + " vs weights " +
                       shape_str(w.w_input.shape()));
  }
  auto as2 = [&](const Tensor<T>& t, std::int64_t width) {
    if (!flat) return t;
    if (t.rank() != 1 || t.dim(0) != width) throw InvalidShape("lstm_cell: state shape");
    return reshape(t, Shape{1, width});
  };
  LstmState<T> prev{as2(h_prev, d), as2(c_prev, d)};
  LstmState<T> next = lstm_step(linear(as2(x, w.input_size()), w.w_input, w.bias), prev, w.w_hidden);
  if (flat) return {reshape(next.h, Shape{d}), reshape(next.c, Shape{d})};
  return next;
}

// Runs one direction over xs [B,T,d_in] from zero initial state and returns
// hidden states [B,T,d] in the original time order.
template <typename T>
Tensor<T> lstm_sequence(const Tensor<T>& xs, const LstmWeights<T>& w, bool reverse) {
  detail::check_lstm_weights(w);
  if (xs.rank() != 3 || xs.dim(2) != w.input_size()) {
    throw InvalidShape("lstm_sequence: input " + shape_str(xs.shape()));
  }
  const std::int64_t b = xs.dim(0), steps = xs.dim(1), d = w.hidden_size();
  const std::int64_t d4 = 4 * d;
  Tensor<T> gx_all =
      reshape(linear(reshape(xs, Shape{b * steps, xs.dim(2)}), w.w_input, w.bias), Shape{b, steps, d4});
  LstmState<T> state{Tensor<T>(Shape{b, d}), Tensor<T>(Shape{b, d})};
  std::vector<Tensor<T>> outputs(static_cast<std::size_t>(steps));
  for (std::int64_t k = 0; k < steps; ++k) {
    const std::int64_t t = reverse ? steps - 1 - k : k;
    Tensor<T> gx = reshape(slice(gx_all, 1, t, 1), Shape{b, d4});
    state = lstm_step(gx, state, w.w_hidden);
    outputs[static_cast<std::size_t>(t)] = reshape(state.h, Shape{b, 1, d});
  }
  return concat(outputs, 1);
}

}  // namespace stiln
