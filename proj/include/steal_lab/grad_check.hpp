#pragma once

#include <cstddef>
#include <span>

#include "steal_lab/layers.hpp"
#include "steal_lab/network.hpp"

namespace steal_lab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Number of checked coordinates: every parameter followed by every input entry.
  std::size_t param_count = 0;
  // Index into that concatenated coordinate list.
  std::size_t worst_index = 0;
};

/// Relative error with denominator max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Central-difference check of one layer under the loss
///   L = sum_ij c_ij * y_ij + 0.5 * sum_ij y_ij^2 + regularizer(rows)
/// with fixed pseudo-random coefficients c. Stochastic layers use the given
/// frozen noise; an empty noise matrix draws one from a fixed seed.
GradCheckResult finite_diff_check(const Layer& layer, const Matrix& input, double eps = 1e-3,
                                  const Matrix& noise = {});

/// Central-difference check of a whole network under softmax cross-entropy
/// plus kl_weight times its regularizers, with a frozen noise draw.
GradCheckResult finite_diff_check(const Network& net, const Matrix& input,
                                  std::span<const int> labels, const NoiseDraw& noise,
                                  double eps = 1e-3, double kl_weight = 0.0,
                                  std::size_t n_data = 0);

}  // namespace steal_lab
