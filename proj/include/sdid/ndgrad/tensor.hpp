#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "sdid/errors.hpp"

namespace sdid::nd {

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorized kernels peel unaligned heads with
/// scalar code, so a fixed alignment keeps results independent of where the
/// allocator happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient recording is on by default; NoGradGuard switches it off for the
/// current thread (inference, optimizer updates, finite differences).
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const noexcept { return !backward_fn && !consumed; }

  Buffer<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor. A Tensor is a reference-counted handle: copies
/// alias the same storage and graph node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer<T> values, bool requires_grad = false);
  template <typename A>
    requires(!std::is_same_v<A, AlignedAllocator<T>>)
  static Tensor from(Shape shape, const std::vector<T, A>& values, bool requires_grad = false) {
    return from(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad);
  }
  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  Buffer<T>& values() { return node_->data; }
  const Buffer<T>& values() const { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the data, outside any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. When recording is enabled and any input requires a
/// gradient, the result joins the graph with the given backward closure.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, std::function<void(Node<T>&)> backward_fn);

/// Reverse-mode sweep from a scalar loss. Leaves accumulate additively;
/// the graph is consumed and cannot be swept twice.
template <typename T>
void backward(const Tensor<T>& loss);

bool all_finite(std::span<const float> v) noexcept;
bool all_finite(std::span<const double> v) noexcept;

}  // namespace sdid::nd
