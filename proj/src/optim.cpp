#include "wisense/optim.hpp"

#include <cmath>
#include <numbers>

namespace wisense::nn {

void Adam::step(const ParamList& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto* p : params) {
    if (p->frozen) continue;
    require_shape(p->grad.rows() == p->value.rows() && p->grad.cols() == p->value.cols(),
                  "adam: gradient shape of " + p->name + " does not match its value");
    auto [it, fresh] = state_.try_emplace(p->name);
    auto& s = it->second;
    if (fresh) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    require_shape(s.m.rows() == p->value.rows() && s.m.cols() == p->value.cols(),
                  "adam: parameter " + p->name + " changed shape");
    s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * p->grad;
    s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * p->grad.cwiseAbs2();
    p->value.array() -=
        config_.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + config_.eps);
  }
}

double cosine_lr(double base, long step, long total) {
  if (total <= 0) return base;
  const double x = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params)
    if (!p->frozen) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto* p : params)
      if (!p->frozen) p->grad *= s;
  }
  return norm;
}

}  // namespace wisense::nn
