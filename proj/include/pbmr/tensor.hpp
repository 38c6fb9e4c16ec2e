#pragma once

// Dense row-major tensors with a tape-free reverse-mode autodiff graph.
//
// Every op result holds a GradFn that references its inputs; backward()
// walks the graph reachable from a scalar loss in reverse topological order.
// Leaf gradients accumulate across backward() calls until zero_grad().

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pbmr/error.hpp"

namespace pbmr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// When set, non-smooth ops (relu, max pool, l1) append a signature of their
/// branch decisions. Gradient checks use it to detect kink crossings.
inline std::vector<std::uint64_t>*& branch_trace() {
  thread_local std::vector<std::uint64_t>* sink = nullptr;
  return sink;
}

} // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

template <typename T>
struct TensorImpl;

template <typename T>
struct GradFn {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  /// Reads out.grad and accumulates into the inputs that require grad.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GradFn<T>> grad_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->data.assign(shape_numel(shape), value);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ValidationError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                            shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  /// Empty until the first backward() that reaches this tensor.
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return !impl_->grad_fn; }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  /// Deep copy of values only; the copy is a fresh leaf.
  Tensor detach_copy() const {
    Tensor t = from(impl_->shape, impl_->data, false);
    return t;
  }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// A tensor with a stable name, as enumerated by networks and consumed by
/// optimizers and checkpoints.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

template <typename T>
void zero_grad(std::span<NamedTensor<T>> params) {
  for (auto& p : params) p.value.zero_grad();
}

namespace detail {

/// Allocates an op result and, when any input requires grad and recording is
/// enabled, attaches the backward closure.
template <typename T>
Tensor<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs, const char* name,
                      std::function<void(const TensorImpl<T>&)> backward) {
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  if (!grad_mode()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  auto fn = std::make_shared<GradFn<T>>();
  fn->name = name;
  for (const auto* in : inputs) fn->inputs.push_back(in->impl());
  fn->backward = std::move(backward);
  out.impl()->grad_fn = std::move(fn);
  out.impl()->requires_grad = true;
  return out;
}

} // namespace detail

/// Reverse-mode sweep from a scalar. Intermediate gradients are recomputed
/// from scratch on each call; leaf gradients accumulate.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ValidationError("backward() requires a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  using Impl = TensorImpl<T>;
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Impl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      Impl* child = fn->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Impl* node : order) {
    if (node->grad_fn) {
      node->grad.assign(node->data.size(), T(0));
    } else {
      node->ensure_grad();
    }
  }
  Impl* root = loss.impl().get();
  if (!root->requires_grad) return;
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->grad_fn) (*it)->grad_fn->backward(**it);
  }
}

} // namespace pbmr
