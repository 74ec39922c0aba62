#include "steal_lab/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

Matrix quadratic_coefficients(std::size_t rows, std::size_t cols) {
  Matrix c(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      c(i, j) = 0.5 * std::sin(1.0 + 1.7 * static_cast<double>(i) + 2.3 * static_cast<double>(j));
    }
  }
  return c;
}

double quadratic_loss(const Matrix& y, const Matrix& c, Matrix* grad) {
  double loss = 0.0;
  if (grad) *grad = Matrix(y.rows(), y.cols());
  auto yd = y.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < yd.size(); ++i) {
    loss += cd[i] * yd[i] + 0.5 * yd[i] * yd[i];
    if (grad) grad->data()[i] = cd[i] + yd[i];
  }
  return loss;
}

void update(GradCheckResult& result, double analytic, double numeric, std::size_t index) {
  const double err = relative_error(analytic, numeric);
  if (err > result.max_rel_error) {
    result.max_rel_error = err;
    result.worst_index = index;
  }
  ++result.param_count;
}

}  // namespace

double relative_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

GradCheckResult finite_diff_check(const Layer& layer, const Matrix& input, double eps,
                                  const Matrix& noise) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_check: eps must be positive");
  Matrix frozen = noise;
  if (frozen.empty() && layer.stochastic()) {
    Rng rng(0x5eed);
    frozen = layer.draw_noise(input.rows(), rng);
  }
  const std::size_t n_data = std::max<std::size_t>(input.rows(), 1);
  const Matrix c = quadratic_coefficients(input.rows(), layer.out_dim());

  auto loss_of = [&](const Layer& l, const Matrix& x) {
    return quadratic_loss(l.forward(x, frozen, nullptr), c, nullptr) +
           l.regularizer(n_data, {}, 1.0);
  };

  LayerCache cache;
  const Matrix y = layer.forward(input, frozen, &cache);
  Matrix grad_y;
  quadratic_loss(y, c, &grad_y);
  std::vector<double> grad_params(layer.param_count(), 0.0);
  const Matrix grad_x = layer.backward(cache, grad_y, grad_params);
  layer.regularizer(n_data, grad_params, 1.0);

  GradCheckResult result;
  auto probe = layer.clone();
  auto params = probe->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + eps;
    const double up = loss_of(*probe, input);
    params[i] = orig - eps;
    const double down = loss_of(*probe, input);
    params[i] = orig;
    update(result, grad_params[i], (up - down) / (2.0 * eps), i);
  }

  Matrix x = input;
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double orig = xd[i];
    xd[i] = orig + eps;
    const double up = loss_of(layer, x);
    xd[i] = orig - eps;
    const double down = loss_of(layer, x);
    xd[i] = orig;
    update(result, grad_x.data()[i], (up - down) / (2.0 * eps), params.size() + i);
  }
  return result;
}

GradCheckResult finite_diff_check(const Network& net, const Matrix& input,
                                  std::span<const int> labels, const NoiseDraw& noise,
                                  double eps, double kl_weight, std::size_t n_data) {
  if (!(eps > 0.0)) throw DomainError("finite_diff_check: eps must be positive");
  Gradients grads;
  net.loss_and_grad(input, labels, noise, kl_weight, n_data, &grads);

  GradCheckResult result;
  Network probe = net;
  std::size_t index = 0;
  for (std::size_t li = 0; li < probe.layer_count(); ++li) {
    auto params = probe.layer(li).params();
    for (std::size_t i = 0; i < params.size(); ++i, ++index) {
      const double orig = params[i];
      params[i] = orig + eps;
      const double up = probe.loss_and_grad(input, labels, noise, kl_weight, n_data, nullptr).total();
      params[i] = orig - eps;
      const double down =
          probe.loss_and_grad(input, labels, noise, kl_weight, n_data, nullptr).total();
      params[i] = orig;
      update(result, grads[li][i], (up - down) / (2.0 * eps), index);
    }
  }
  return result;
}

}  // namespace steal_lab
