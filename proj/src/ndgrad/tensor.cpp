#include "sdid/ndgrad/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace sdid::nd {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  auto node = std::make_shared<Node<T>>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, Buffer<T> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " elements");
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw GraphError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto* in : inputs)
      if (in && in->defined() && in->requires_grad()) track = true;
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* in : inputs)
      if (in && in->defined()) {
        if (in->node()->consumed)
          throw GraphError(std::string("op '") + op + "' consumes a tensor whose graph was already swept");
        node->parents.push_back(in->node());
      }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  Node<T>* root = loss.node().get();
  if (root->consumed) throw GraphError("backward called twice on the same graph");
  if (root->data.size() != 1)
    throw GraphError("backward requires a scalar loss, got shape " + shape_str(root->shape));
  if (!root->requires_grad) throw GraphError("loss is detached: no input requires a gradient");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->consumed) throw GraphError("graph contains a node consumed by an earlier backward call");
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn) continue;
    if (!n->grad.empty()) n->backward_fn(*n);
    Buffer<T>().swap(n->grad);
  }
  for (Node<T>* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->consumed = true;
  }
}

bool all_finite(std::span<const float> v) noexcept {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(std::span<const double> v) noexcept {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template Tensor<float> make_result(Shape, Buffer<float>, std::initializer_list<const Tensor<float>*>,
                                   const char*, std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, Buffer<double>, std::initializer_list<const Tensor<double>*>,
                                    const char*, std::function<void(Node<double>&)>);
template void backward(const Tensor<float>&);
template Tensor<long double> make_result(Shape, Buffer<long double>,
                                         std::initializer_list<const Tensor<long double>*>, const char*,
                                         std::function<void(Node<long double>&)>);
template void backward(const Tensor<double>&);
template void backward(const Tensor<long double>&);

}  // namespace sdid::nd
