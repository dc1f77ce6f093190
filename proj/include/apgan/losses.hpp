#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "apgan/tensor.hpp"

namespace apgan {

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before any
// log so a saturated sigmoid/softmax cannot produce -inf.
inline constexpr double kProbEpsilon = 1e-12;

inline double clamp_prob(double p) {
  if (std::isnan(p)) return p;  // let divergence surface instead of hiding it
  return std::min(1.0 - kProbEpsilon, std::max(kProbEpsilon, p));
}

// Cross-entropy only ever takes log p, so a certain correct prediction must
// stay exactly zero; only the lower clamp applies.
inline double clamp_prob_low(double p) {
  if (std::isnan(p)) return p;
  return std::max(kProbEpsilon, p);
}

// -sum_i y_i log s_i for a one-hot target. `target` is the true class index.
inline double cross_entropy(std::size_t target, const Tensor& probs) {
  if (probs.rank() != 1) {
    throw ShapeError("cross_entropy: probabilities must be rank 1, got " + probs.shape_str());
  }
  if (target >= probs.size()) {
    throw std::out_of_range("cross_entropy: class " + std::to_string(target) + " out of range " +
                            std::to_string(probs.size()));
  }
  return -std::log(clamp_prob_low(probs[target]));
}

// Mean cross-entropy over a batch of softmax rows.
inline double cross_entropy_mean(const std::vector<std::size_t>& targets, const Tensor& probs) {
  if (probs.rank() != 2 || probs.rows() != targets.size()) {
    throw ShapeError("cross_entropy_mean: probs " + probs.shape_str() + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= probs.cols()) {
      throw std::out_of_range("cross_entropy_mean: class out of range");
    }
    total += -std::log(clamp_prob_low(probs.at(i, targets[i])));
  }
  return total / static_cast<double>(targets.size());
}

// d(mean CE)/d(probs); zero everywhere except the true-class entries.
inline Tensor cross_entropy_mean_backward(const std::vector<std::size_t>& targets,
                                          const Tensor& probs) {
  Tensor d(probs.shape());
  const double inv_batch = 1.0 / static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    d.at(i, targets[i]) = -inv_batch / clamp_prob_low(probs.at(i, targets[i]));
  }
  return d;
}

enum class AdversarialForm {
  saturating,      // generator minimizes +mean log(1 - D(g))
  non_saturating,  // generator minimizes -mean log D(g)
};

struct GanLosses {
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
};

// Discriminator loss is the minimax objective written as descent:
//   loss_D = -mean log D(z) - mean log(1 - D(g)).
// Generator adversarial loss follows `form`; both share the same fixed points.
inline GanLosses gan_losses(const Tensor& d_real, const Tensor& d_fake,
                            AdversarialForm form = AdversarialForm::non_saturating) {
  if (d_real.rank() != 1 || d_fake.rank() != 1) {
    throw ShapeError("gan_losses: expected rank-1 probability tensors");
  }
  if (d_real.empty() || d_fake.empty()) {
    throw std::invalid_argument("gan_losses: empty batch");
  }
  GanLosses out;
  double real_term = 0.0;
  for (std::size_t i = 0; i < d_real.size(); ++i) real_term += std::log(clamp_prob(d_real[i]));
  real_term /= static_cast<double>(d_real.size());

  double fake_term = 0.0;
  double g_term = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = clamp_prob(d_fake[i]);
    fake_term += std::log(1.0 - p);
    g_term += (form == AdversarialForm::non_saturating) ? -std::log(p) : std::log(1.0 - p);
  }
  fake_term /= static_cast<double>(d_fake.size());
  g_term /= static_cast<double>(d_fake.size());

  out.loss_d = -real_term - fake_term;
  out.loss_g_adv = g_term;
  return out;
}

// Generator-side adversarial loss alone (the discriminator term needs a real
// batch which a generator step does not have).
inline double gan_loss_g(const Tensor& d_fake, AdversarialForm form) {
  if (d_fake.rank() != 1 || d_fake.empty()) {
    throw ShapeError("gan_loss_g: expected a non-empty rank-1 probability tensor");
  }
  double g_term = 0.0;
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = clamp_prob(d_fake[i]);
    g_term += (form == AdversarialForm::non_saturating) ? -std::log(p) : std::log(1.0 - p);
  }
  return g_term / static_cast<double>(d_fake.size());
}

// d loss_D / d d_real and d loss_D / d d_fake.
inline std::pair<Tensor, Tensor> gan_loss_d_backward(const Tensor& d_real, const Tensor& d_fake) {
  Tensor dr(d_real.shape()), df(d_fake.shape());
  const double inv_r = 1.0 / static_cast<double>(d_real.size());
  const double inv_f = 1.0 / static_cast<double>(d_fake.size());
  for (std::size_t i = 0; i < d_real.size(); ++i) dr[i] = -inv_r / clamp_prob(d_real[i]);
  for (std::size_t i = 0; i < d_fake.size(); ++i) df[i] = inv_f / (1.0 - clamp_prob(d_fake[i]));
  return {std::move(dr), std::move(df)};
}

// d loss_G_adv / d d_fake.
inline Tensor gan_loss_g_backward(const Tensor& d_fake, AdversarialForm form) {
  Tensor df(d_fake.shape());
  const double inv = 1.0 / static_cast<double>(d_fake.size());
  for (std::size_t i = 0; i < d_fake.size(); ++i) {
    const double p = clamp_prob(d_fake[i]);
    df[i] = (form == AdversarialForm::non_saturating) ? -inv / p : -inv / (1.0 - p);
  }
  return df;
}

}  // namespace apgan
