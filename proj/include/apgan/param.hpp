#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apgan/random.hpp"
#include "apgan/tensor.hpp"

namespace apgan {

// A trainable tensor: value, gradient slot and optimizer state, all the same
// shape. Optimizer state is allocated eagerly so the shape invariant holds
// from construction.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;  // SGD velocity
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t steps = 0;

  Parameter() = default;

  Parameter(std::string param_name, Tensor v)
      : name(std::move(param_name)),
        value(std::move(v)),
        grad(value.shape()),
        momentum(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }

  void reset_optimizer_state() {
    momentum.fill(0.0);
    adam_m.fill(0.0);
    adam_v.fill(0.0);
    steps = 0;
  }
};

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

// Glorot/fan-balanced uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void init_glorot_uniform(Parameter& p, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-a, a);
}

inline void init_constant(Parameter& p, double v) { p.value.fill(v); }

// FNV-1a over the raw value bytes; used to assert that a training step did
// not touch parameters it does not own.
inline std::uint64_t params_checksum(std::span<Parameter* const> params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const Parameter* p : params) {
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

inline std::size_t params_count(std::span<Parameter* const> params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->value.size();
  return n;
}

}  // namespace apgan
