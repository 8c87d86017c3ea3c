#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle. Every differentiable primitive in ops.hpp
// returns a tensor that remembers the GraphNode that produced it; backward()
// orders the reachable nodes topologically and runs each node's pullback once,
// in reverse. Gradients accumulate until zero_grad() is called.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdmim/error.hpp"

namespace sdmim {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
inline thread_local bool grad_mode = true;
inline std::atomic<std::uint64_t> next_tensor_id{1};
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor;

/// Pullback: receives the forward output and its gradient, accumulates into inputs.
template <typename T>
using PullbackFn = std::function<void(std::span<const T> out, std::span<const T> out_grad)>;

template <typename T>
struct GraphNode {
  std::string op;
  std::vector<Tensor<T>> inputs;
  PullbackFn<T> pullback;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value) { return Tensor({}, {value}); }

  /// Builds an op output. Records a graph node only when grad mode is on and
  /// at least one input needs a gradient.
  static Tensor from_op(Shape shape, std::vector<T> data, std::string op,
                        std::vector<Tensor> inputs, PullbackFn<T> pullback) {
    Tensor out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.impl_->requires_grad = true;
    out.impl_->node = std::make_shared<GraphNode<T>>(
        GraphNode<T>{std::move(op), std::move(inputs), std::move(pullback)});
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rows() const { return impl_->shape.size() == 2 ? impl_->shape[0] : 1; }
  std::size_t cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }
  std::uint64_t id() const { return impl_->id; }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  T& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated (zero-filled) on first use.
  std::span<T> mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void clear_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  const GraphNode<T>* node() const { return impl_->node.get(); }

  /// Copy of the values with no history.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::shared_ptr<GraphNode<T>> node;
    std::uint64_t id = detail::next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  };
  std::shared_ptr<Impl> impl_;

  template <typename U>
  friend std::vector<Tensor<U>> topological_order(const Tensor<U>& root);
};

/// All tensors reachable from root through recorded nodes, inputs before outputs.
template <typename T>
std::vector<Tensor<T>> topological_order(const Tensor<T>& root) {
  std::vector<Tensor<T>> order;
  std::unordered_set<const void*> visited;
  // Iterative post-order DFS; each frame is (tensor, next input index).
  std::vector<std::pair<Tensor<T>, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto* node = t.node();
    if (node && next < node->inputs.size()) {
      const Tensor<T>& in = node->inputs[next++];
      if (in.requires_grad() && visited.insert(in.impl_.get()).second) {
        stack.emplace_back(in, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }
  return order;
}

/// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1.
template <typename T>
void backward(Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that does not depend on any parameter");
  }
  auto order = topological_order(loss);
  loss.mutable_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& t = *it;
    const auto* node = t.node();
    if (!node || !t.has_grad()) continue;
    node->pullback(t.data(), t.grad());
  }
}

template <typename T>
void backward(Tensor<T>&& loss) {
  backward(loss);
}

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t, bool requires_grad = false) {
  std::vector<U> out(t.data().begin(), t.data().end());
  return Tensor<U>(t.shape(), std::move(out), requires_grad);
}

}  // namespace sdmim
