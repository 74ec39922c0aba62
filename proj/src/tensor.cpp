#include "steal_lab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

constexpr double kProbFloor = 1e-12;

std::string shape_str(MatrixRef m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != rows " +
                     std::to_string(rows));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0," + std::to_string(classes) +
                        ")");
    }
  }
}

}  // namespace

Matrix matmul(MatrixRef a, MatrixRef b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) dst[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(MatrixRef a, MatrixRef b) {
  if (a.cols != b.cols) {
    throw ShapeError("matmul_nt: " + shape_str(a) + " * (" + shape_str(b) + ")^T");
  }
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(MatrixRef a, MatrixRef b) {
  if (a.rows != b.rows) {
    throw ShapeError("matmul_tn: (" + shape_str(a) + ")^T * " + shape_str(b));
  }
  Matrix out(a.cols, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* arow = a.data.data() + r * a.cols;
    const double* brow = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = arow[i];
      auto dst = out.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) dst[j] += ari * brow[j];
    }
  }
  return out;
}

Matrix softmax_rows(MatrixRef logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* in = logits.data.data() + i * logits.cols;
    auto dst = out.row(i);
    const double mx = *std::max_element(in, in + logits.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      dst[j] = std::exp(in[j] - mx);
      sum += dst[j];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

double cross_entropy(MatrixRef probs, std::span<const int> labels) {
  check_labels(labels, probs.rows, probs.cols);
  if (probs.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    total += -std::log(std::max(probs(i, static_cast<std::size_t>(labels[i])), kProbFloor));
  }
  return total / static_cast<double>(probs.rows);
}

Matrix softmax_cross_entropy_grad(MatrixRef probs, std::span<const int> labels) {
  check_labels(labels, probs.rows, probs.cols);
  Matrix grad(probs.rows, probs.cols, std::vector<double>(probs.data.begin(), probs.data.end()));
  const double inv_n = probs.rows ? 1.0 / static_cast<double>(probs.rows) : 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    grad(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    for (double& g : grad.row(i)) g *= inv_n;
  }
  return grad;
}

LabelVector argmax_rows(MatrixRef m) {
  LabelVector out(m.rows, 0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols; ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace steal_lab
