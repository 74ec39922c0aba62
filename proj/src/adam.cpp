#include "steal_lab/adam.hpp"

#include <cmath>

#include "steal_lab/errors.hpp"

namespace steal_lab {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamOptions& options) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads size mismatch");
  if (!(options.lr > 0.0)) throw DomainError("adam_step: learning rate must be positive");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state size mismatch");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  const double decay = 1.0 - options.lr * options.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    if (options.weight_decay != 0.0) params[i] *= decay;
    params[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
  }
}

}  // namespace steal_lab
