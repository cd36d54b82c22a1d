#pragma once

#include "wisense/layers.hpp"

#include <map>
#include <string>

namespace wisense::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are keyed by parameter name, so the
/// same optimizer can be driven with any ordering of the parameter list.
/// Frozen parameters are skipped entirely.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const ParamList& params);
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m, v;
  };
  AdamConfig config_;
  std::map<std::string, Moments> state_;
  long t_ = 0;
};

/// Cosine decay from `base` to 0 over `total` steps.
double cosine_lr(double base, long step, long total);

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

}  // namespace wisense::nn
