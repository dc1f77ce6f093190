#pragma once

#include <cmath>
#include <span>

#include "apgan/param.hpp"

namespace apgan {

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// v <- momentum*v + grad + wd*value ; value <- value - lr*v
inline void sgd_step(std::span<Parameter* const> params, const SgdConfig& cfg) {
  for (Parameter* p : params) {
    double* v = p->momentum.data();
    double* val = p->value.data();
    const double* g = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * val[i];
      val[i] -= cfg.lr * v[i];
    }
  }
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 added to the gradient before the moment updates (classic Adam, not
  // the decoupled variant).
  double weight_decay = 5e-4;
};

inline void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg) {
  for (Parameter* p : params) {
    p->steps += 1;
    const double t = static_cast<double>(p->steps);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    double* m = p->adam_m.data();
    double* v = p->adam_v.data();
    double* val = p->value.data();
    const double* grad = p->grad.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = grad[i] + cfg.weight_decay * val[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      val[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace apgan
