#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace steal_lab {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled weight decay: params *= (1 - lr * weight_decay) before the step.
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamOptions& options);

}  // namespace steal_lab
