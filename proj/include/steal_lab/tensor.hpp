#pragma once

#include <span>

#include "steal_lab/matrix.hpp"

namespace steal_lab {

// Accumulation order for all products is row-major, left-to-right over the
// inner dimension, so results are bit-stable on a fixed platform.

Matrix matmul(MatrixRef a, MatrixRef b);
/// a · bᵀ
Matrix matmul_nt(MatrixRef a, MatrixRef b);
/// aᵀ · b
Matrix matmul_tn(MatrixRef a, MatrixRef b);

Matrix softmax_rows(MatrixRef logits);

/// Mean negative log-likelihood in nats. Probabilities are clamped at 1e-12.
double cross_entropy(MatrixRef probs, std::span<const int> labels);

/// Gradient of cross_entropy(softmax(logits)) with respect to the logits.
Matrix softmax_cross_entropy_grad(MatrixRef probs, std::span<const int> labels);

/// Row-wise argmax; ties resolve to the lowest class index.
LabelVector argmax_rows(MatrixRef m);

bool all_finite(std::span<const double> values);

}  // namespace steal_lab
