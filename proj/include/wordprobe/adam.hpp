#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "wordprobe/error.hpp"

namespace wordprobe {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a flat float parameter vector.
class Adam {
 public:
  Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0f), v_(size, 0.0f) {}

  void step(std::span<float> params, std::span<const float> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw Error(Errc::shape_mismatch, "Adam state does not match the parameter vector");
    }
    ++t_;
    if (config_.lr == 0.0) return;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    const auto step_size = static_cast<float>(config_.lr / correction1);
    const auto inv_c2 = static_cast<float>(1.0 / correction2);
    const auto eps = static_cast<float>(config_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float g = grad[i];
      m_[i] = b1 * m_[i] + (1.0f - b1) * g;
      v_[i] = b2 * v_[i] + (1.0f - b2) * g * g;
      params[i] -= step_size * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
  }

  std::size_t steps() const noexcept { return t_; }
  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  AdamConfig config_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::size_t t_ = 0;
};

}  // namespace wordprobe
