#pragma once

#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

/// Named, ordered collection of trainable tensors with their gradients and
/// optimizer state. Order of insertion is the order of every update sweep,
/// which keeps training bit-reproducible.
template <typename T>
class ParameterStore {
 public:
  struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> cache;  // RMSProp second-moment accumulator
  };

  int add(const std::string& name, Tensor<T> value) {
    for (const auto& p : params_)
      if (p.name == name) throw usage_error("duplicate parameter name: " + name);
    Param p;
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    p.cache = Tensor<T>(value.shape());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  int size() const { return static_cast<int>(params_.size()); }

  Param& at(int slot) { return params_.at(static_cast<std::size_t>(slot)); }
  const Param& at(int slot) const { return params_.at(static_cast<std::size_t>(slot)); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

}  // namespace cadnet
