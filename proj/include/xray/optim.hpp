#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "xray/error.hpp"
#include "xray/graph.hpp"

namespace xray {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double plateau_decay = 0.1;
  int plateau_patience = 2;
  double plateau_min_delta = 1e-4;

  void validate() const {
    if (!(lr > 0.0)) fail(ErrorCode::InvalidConfig, "lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      fail(ErrorCode::InvalidConfig, "Adam betas must lie in [0,1)");
    if (!(plateau_decay > 0.0 && plateau_decay <= 1.0)) fail(ErrorCode::InvalidConfig, "plateau_decay must be in (0,1]");
    if (plateau_patience < 1) fail(ErrorCode::InvalidConfig, "plateau_patience must be >= 1");
  }

  /// Adversarial variant: beta1 = 0.5. beta2 stays 0.999 unless overridden.
  static OptimizerConfig adversarial() {
    OptimizerConfig c;
    c.beta1 = 0.5;
    return c;
  }
};

/// Adam over a flat parameter vector; slots marked non-trainable are frozen.
class Adam {
 public:
  Adam(const OptimizerConfig& cfg, const Network& net) : cfg_(cfg), m_(net.param_count()), v_(net.param_count()) {
    cfg_.validate();
    mask_.assign(net.param_count(), 1);
    for (const auto& s : net.slots())
      if (!s.trainable) std::fill(mask_.begin() + s.offset, mask_.begin() + s.offset + s.size(), 0);
    lr_ = cfg_.lr;
  }

  void step(std::span<double> weights, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!mask_[i]) continue;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      weights[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::vector<char> mask_;
  double lr_ = 0.0;
  long t_ = 0;
};

/// Multiplies the learning rate by `decay` once the monitored metric
/// (higher is better) has failed to improve by min_delta for `patience`
/// consecutive observations.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const OptimizerConfig& cfg)
      : decay_(cfg.plateau_decay), patience_(cfg.plateau_patience), min_delta_(cfg.plateau_min_delta) {}

  /// Returns the factor to apply to the learning rate (1 or decay).
  double observe(double metric) {
    if (!seen_ || metric > best_ + min_delta_) {
      best_ = metric;
      seen_ = true;
      stale_ = 0;
      return 1.0;
    }
    if (++stale_ >= patience_) {
      stale_ = 0;
      return decay_;
    }
    return 1.0;
  }

 private:
  double decay_;
  int patience_;
  double min_delta_;
  double best_ = 0.0;
  bool seen_ = false;
  int stale_ = 0;
};

}  // namespace xray
