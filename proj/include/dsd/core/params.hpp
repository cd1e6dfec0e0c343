#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/tensor.hpp"

namespace dsd {

/// A named trainable array. `grad` accumulates across backward passes until
/// zeroed by the optimizer loop.
struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Ordered registry of parameters. Registration order is the checkpoint order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, std::size_t rows, std::size_t cols) {
    if (index_.contains(name)) throw InvariantError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->rows = rows;
    p->cols = cols;
    p->value.assign(rows * cols, 0.0);
    p->grad.assign(rows * cols, 0.0);
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvariantError("no parameter named " + name);
    return *params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t count() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  /// Sum of sizes of parameters whose name starts with `prefix`.
  std::size_t size_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->name.starts_with(prefix)) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform(-k, k) with k = 1/sqrt(fan_in).
inline void init_uniform_fan_in(Parameter& p, std::size_t fan_in, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-k, k);
  for (double& v : p.value) v = dist(rng);
}

}  // namespace dsd
