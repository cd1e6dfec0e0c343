#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dsd/core/error.hpp"
#include "dsd/core/params.hpp"

namespace dsd {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_lo = -10.0;
  double clip_hi = 10.0;
};

/// Per-parameter Adam moments. Gradients are clipped elementwise to
/// [clip_lo, clip_hi] before the moment update.
class OptimizerState {
 public:
  OptimizerState() = default;

  explicit OptimizerState(AdamConfig config) : config_(config) {
    if (!(config_.clip_lo < config_.clip_hi))
      throw InvariantError("clip range must satisfy lo < hi");
    if (!(config_.learning_rate > 0.0)) throw InvariantError("learning rate must be positive");
  }

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t step_count() const noexcept { return step_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

  /// Updates every parameter of `store` from its accumulated `grad`.
  void step(ParameterStore& store) {
    if (m_.empty()) {
      for (const auto& p : store) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    if (m_.size() != store.count()) throw ShapeError("optimizer state does not match parameters");
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < store.count(); ++i) {
      Parameter& p = store[i];
      if (m_[i].size() != p.size()) throw ShapeError("moment shape mismatch for " + p.name);
      update(p.value, p.grad, m_[i], v_[i], bc1, bc2);
    }
  }

 private:
  void update(std::vector<double>& value, const std::vector<double>& grad,
              std::vector<double>& m, std::vector<double>& v, double bc1, double bc2) const {
    const auto& c = config_;
    for (std::size_t k = 0; k < value.size(); ++k) {
      double g = grad[k];
      g = g < c.clip_lo ? c.clip_lo : (g > c.clip_hi ? c.clip_hi : g);
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      value[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }

  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Convenience form: one Adam step over `store` using its current gradients.
inline void adam_step(OptimizerState& state, ParameterStore& store) { state.step(store); }

}  // namespace dsd
