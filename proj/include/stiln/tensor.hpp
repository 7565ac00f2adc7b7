#pragma once

// Dense row-major tensors with a tape-based reverse-mode autodiff engine.
//
// A Tensor is a shared handle: copying a Tensor aliases the same storage, the
// way framework tensors behave. Use clone() for an independent copy.
//
// Recording happens only while a Tape is installed on the current thread with
// TapeScope and at least one input of an op requires gradients. backward()
// walks the active tape once in reverse; a second call on the same tape is a
// contract violation. Gradient buffers of parameters accumulate across
// recorded uses inside one pass and are zeroed explicitly by the caller.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stiln/error.hpp"

namespace stiln {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw InvalidShape("tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e <= 0) throw InvalidShape("non-positive extent in shape " + shape_str(shape));
  }
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is written
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // id of the tape that produced this value, 0 for leaves

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
    check_shape(shape);
    impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw InvalidShape("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  T item() const {
    if (impl_->data.size() != 1) throw ContractViolation("item() on non-scalar tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }
  void drop_grad() { impl_->grad.clear(); }

  Tensor clone() const { return Tensor(impl_->shape, impl_->data); }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::shared_ptr<TensorImpl<T>> output;
  std::function<void(Node&)> backward;
};

template <typename T>
class Tape;

namespace detail {
template <typename T>
inline thread_local Tape<T>* active_tape = nullptr;

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
}  // namespace detail

template <typename T>
class Tape {
 public:
  Tape() : id_(detail::next_tape_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const Node<T>& node(std::size_t i) const { return nodes_[i]; }

  static Tape* active() { return detail::active_tape<T>; }

  void push(Node<T> node) {
    if (consumed_) throw ContractViolation("recording onto a tape after backward");
    node.output->requires_grad = true;
    node.output->tape_id = id_;
    nodes_.push_back(std::move(node));
  }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractViolation("backward requires a scalar loss, got shape " +
                              shape_str(loss.shape()));
    }
    if (consumed_) throw ContractViolation("backward called twice on the same tape");
    consumed_ = true;
    auto& g = loss.impl()->ensure_grad();
    g[0] += T(1);
    if (loss.impl()->tape_id == 0) return;  // leaf loss: d(loss)/d(loss) only
    if (loss.impl()->tape_id != id_) {
      throw ContractViolation("loss was not produced on the active tape");
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // unreachable from loss
      it->backward(*it);
    }
  }

 private:
  std::uint64_t id_;
  std::vector<Node<T>> nodes_;
  bool consumed_ = false;
};

// Installs a tape as the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape<T>) {
    detail::active_tape<T> = &tape;
  }
  ~TapeScope() { detail::active_tape<T> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) {
    if (loss.numel() != 1) throw ContractViolation("backward requires a scalar loss");
    throw ContractViolation("backward called with no active tape");
  }
  tape->backward(loss);
}

// Records a node for `output` when a tape is active and any input is tracked.
template <typename T>
void record(const char* op, std::initializer_list<const Tensor<T>*> inputs, Tensor<T>& output,
            std::function<void(Node<T>&)> fn) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return;
  bool tracked = false;
  for (const auto* in : inputs) {
    if (in->defined() && in->requires_grad()) tracked = true;
  }
  if (!tracked) return;
  Node<T> node;
  node.op = op;
  for (const auto* in : inputs) node.inputs.push_back(in->defined() ? in->impl() : nullptr);
  node.output = output.impl();
  node.backward = std::move(fn);
  tape->push(std::move(node));
}

template <typename T>
void record(const char* op, const std::vector<Tensor<T>>& inputs, Tensor<T>& output,
            std::function<void(Node<T>&)> fn) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return;
  bool tracked = false;
  for (const auto& in : inputs) {
    if (in.requires_grad()) tracked = true;
  }
  if (!tracked) return;
  Node<T> node;
  node.op = op;
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = output.impl();
  node.backward = std::move(fn);
  tape->push(std::move(node));
}

// Gradient buffer of a node input, or nullptr when that input needs none.
template <typename T>
T* input_grad(Node<T>& node, std::size_t i) {
  auto& in = node.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return in->ensure_grad().data();
}

}  // namespace stiln
