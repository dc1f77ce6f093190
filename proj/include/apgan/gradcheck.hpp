#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "apgan/param.hpp"
#include "apgan/tensor.hpp"

namespace apgan {

struct GradCheckOptions {
  double step = 1e-5;     // central-difference half step
  double rel_tol = 1e-4;
  double fault_scale = 1.0;  // != 1 corrupts analytic grads (negative-control hook)
};

struct GradCheckItem {
  std::string name;
  double max_rel_err = 0.0;
  bool finite = true;
  std::string worst_coord;
};

struct GradCheckReport {
  double rel_tol = 1e-4;
  std::vector<GradCheckItem> items;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& it : items) m = std::max(m, it.max_rel_err);
    return m;
  }
  bool passed() const {
    for (const auto& it : items) {
      if (!it.finite || it.max_rel_err > rel_tol) return false;
    }
    return !items.empty();
  }
};

// rel = |a - n| / max(|a|, |n|, 1e-6); the floor keeps finite-difference
// round-off (~1e-11 at h=1e-5) from dominating near-zero gradients.
inline double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Compares an analytic gradient against central finite differences of the
// scalar re-forward `f`, perturbing `value` coordinate by coordinate.
// `analytic` must already hold d f / d value at the unperturbed point.
inline void check_gradient(GradCheckItem& item, const std::string& coord_prefix, Tensor& value,
                           const Tensor& analytic, const std::function<double()>& f,
                           const GradCheckOptions& opt) {
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double saved = value[i];
    value[i] = saved + opt.step;
    const double f_plus = f();
    value[i] = saved - opt.step;
    const double f_minus = f();
    value[i] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * opt.step);
    const double a = analytic[i] * opt.fault_scale;
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      item.finite = false;
      item.worst_coord = coord_prefix + "[" + std::to_string(i) + "]";
      return;
    }
    const double rel = grad_rel_error(a, numeric);
    if (rel > item.max_rel_err) {
      item.max_rel_err = rel;
      item.worst_coord = coord_prefix + "[" + std::to_string(i) + "]";
    }
  }
}

inline void check_parameter(GradCheckItem& item, Parameter& p, const std::function<double()>& f,
                            const GradCheckOptions& opt) {
  check_gradient(item, p.name, p.value, p.grad, f, opt);
}

}  // namespace apgan
