#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sdid/ndgrad/rng.hpp"
#include "sdid/ndgrad/tensor.hpp"

namespace sdid::nd {

/// Ordered registry of named trainable tensors. Registration order is the
/// serialization order, so it must not depend on anything but the config.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  explicit ParamStore(std::uint64_t init_seed = 0) : rng_(init_seed) {}

  /// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)).
  Tensor<T> uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    Buffer<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng_.uniform(-bound, bound));
    return add(name, Tensor<T>::from(std::move(shape), std::move(v), true));
  }

  Tensor<T> constant(const std::string& name, Shape shape, T value) {
    return add(name, Tensor<T>::full(std::move(shape), value, true));
  }

  Tensor<T> add(const std::string& name, Tensor<T> t) {
    for (const auto& e : entries_)
      if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(true);
    entries_.push_back({name, t});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  Rng rng_;
  std::vector<Entry> entries_;
};

}  // namespace sdid::nd
