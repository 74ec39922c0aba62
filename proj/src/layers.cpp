#include "steal_lab/layers.hpp"

#include <cmath>

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"

namespace steal_lab {
namespace {

void he_uniform(std::span<double> weights, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : weights) w = dist(rng);
}

void check_input(const Layer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError(to_string(layer.kind()) + " layer expects " + std::to_string(layer.in_dim()) +
                     " input columns, got " + std::to_string(x.cols()));
  }
}

void check_noise(const Matrix& noise, std::size_t rows, std::size_t cols) {
  if (noise.rows() != rows || noise.cols() != cols) {
    throw ShapeError("noise shape " + std::to_string(noise.rows()) + "x" +
                     std::to_string(noise.cols()) + " does not match " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
}

// y = x W^T + b
Matrix affine(const Matrix& x, MatrixRef w, std::span<const double> b) {
  Matrix pre = matmul_nt(x, w);
  for (std::size_t i = 0; i < pre.rows(); ++i) {
    auto r = pre.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return pre;
}

Matrix activate(const Matrix& pre, Activation act) {
  Matrix out = pre;
  switch (act) {
    case Activation::identity:
      break;
    case Activation::relu:
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::tanh:
      for (double& v : out.data()) v = std::tanh(v);
      break;
  }
  return out;
}

Matrix activation_backward(const Matrix& grad_out, const LayerCache& cache, Activation act) {
  Matrix g = grad_out;
  auto gd = g.data();
  switch (act) {
    case Activation::identity:
      break;
    case Activation::relu: {
      auto pre = cache.pre.data();
      for (std::size_t i = 0; i < gd.size(); ++i) {
        if (!(pre[i] > 0.0)) gd[i] = 0.0;
      }
      break;
    }
    case Activation::tanh: {
      auto out = cache.output.data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= 1.0 - out[i] * out[i];
      break;
    }
  }
  return g;
}

// Accumulates dW (out x in) and db into the given spans; returns dL/dx.
Matrix affine_backward(const Matrix& grad_pre, const Matrix& x, MatrixRef w,
                       std::span<double> grad_w, std::span<double> grad_b) {
  const Matrix gw = matmul_tn(grad_pre, x);
  auto gws = gw.data();
  for (std::size_t i = 0; i < gws.size(); ++i) grad_w[i] += gws[i];
  for (std::size_t r = 0; r < grad_pre.rows(); ++r) {
    auto row = grad_pre.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) grad_b[j] += row[j];
  }
  return matmul(grad_pre, w);
}

// Shared dense tail: affine + activation, filling the cache when requested.
Matrix dense_tail(const Matrix& gated, MatrixRef w, std::span<const double> b, Activation act,
                  LayerCache* cache) {
  Matrix pre = affine(gated, w, b);
  Matrix out = activate(pre, act);
  if (cache) {
    cache->pre = std::move(pre);
    cache->output = out;
  }
  return out;
}

void check_grad_span(const Layer& layer, std::span<double> grad_params) {
  if (grad_params.size() != layer.param_count()) {
    throw ShapeError("gradient buffer size " + std::to_string(grad_params.size()) +
                     " != parameter count " + std::to_string(layer.param_count()));
  }
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "identity";
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::mc_dropout: return "mc_dropout";
    case LayerKind::concrete_dropout: return "concrete_dropout";
    case LayerKind::variational: return "variational";
  }
  return "dense";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "mc_dropout") return LayerKind::mc_dropout;
  if (s == "concrete_dropout") return LayerKind::concrete_dropout;
  if (s == "variational") return LayerKind::variational;
  throw ConfigError("unknown layer kind '" + s + "'");
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Layer

Matrix Layer::draw_noise(std::size_t /*batch*/, Rng& /*rng*/) const { return {}; }

double Layer::regularizer(std::size_t /*n_data*/, std::span<double> /*grad_params*/,
                          double /*weight*/) const {
  return 0.0;
}

Matrix Layer::sample_forward(const Matrix& x, Rng& rng) const {
  return forward(x, draw_noise(x.rows(), rng), nullptr);
}

nlohmann::json Layer::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(spec_.kind);
  j["in"] = spec_.in;
  j["out"] = spec_.out;
  j["activation"] = to_string(spec_.activation);
  switch (spec_.kind) {
    case LayerKind::dense:
      break;
    case LayerKind::mc_dropout:
      j["rate"] = spec_.rate;
      break;
    case LayerKind::concrete_dropout:
      j["temperature"] = spec_.temperature;
      j["weight_scale"] = spec_.weight_scale;
      j["dropout_scale"] = spec_.dropout_scale;
      break;
    case LayerKind::variational:
      j["prior_std"] = spec_.prior_std;
      break;
  }
  j["params"] = params_;
  return j;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& init_rng) {
  switch (spec.kind) {
    case LayerKind::dense: return std::make_unique<DenseLayer>(spec, init_rng);
    case LayerKind::mc_dropout: return std::make_unique<McDropoutLayer>(spec, init_rng);
    case LayerKind::concrete_dropout: return std::make_unique<ConcreteDropoutLayer>(spec, init_rng);
    case LayerKind::variational: return std::make_unique<VariationalDenseLayer>(spec, init_rng);
  }
  throw ConfigError("unknown layer kind");
}

std::unique_ptr<Layer> layer_from_json(const nlohmann::json& j) {
  LayerSpec spec;
  try {
    spec.kind = layer_kind_from_string(j.at("kind").get<std::string>());
    spec.in = j.at("in").get<std::size_t>();
    spec.out = j.at("out").get<std::size_t>();
    spec.activation = activation_from_string(j.at("activation").get<std::string>());
    if (spec.kind == LayerKind::mc_dropout) spec.rate = j.at("rate").get<double>();
    if (spec.kind == LayerKind::concrete_dropout) {
      spec.temperature = j.at("temperature").get<double>();
      spec.weight_scale = j.at("weight_scale").get<double>();
      spec.dropout_scale = j.at("dropout_scale").get<double>();
    }
    if (spec.kind == LayerKind::variational) spec.prior_std = j.at("prior_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed layer record: ") + e.what());
  }

  std::unique_ptr<Layer> layer;
  switch (spec.kind) {
    case LayerKind::dense: layer = std::make_unique<DenseLayer>(spec); break;
    case LayerKind::mc_dropout: layer = std::make_unique<McDropoutLayer>(spec); break;
    case LayerKind::concrete_dropout: layer = std::make_unique<ConcreteDropoutLayer>(spec); break;
    case LayerKind::variational: layer = std::make_unique<VariationalDenseLayer>(spec); break;
  }
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != layer->param_count()) {
    throw ParseError("layer parameter count " + std::to_string(params.size()) + " != expected " +
                     std::to_string(layer->param_count()));
  }
  if (!all_finite(params)) throw ParseError("layer parameters contain non-finite values");
  std::copy(params.begin(), params.end(), layer->params().begin());
  return layer;
}

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(LayerSpec spec) : Layer(spec) {
  params_.assign(spec.out * spec.in + spec.out, 0.0);
}

DenseLayer::DenseLayer(LayerSpec spec, Rng& init_rng) : DenseLayer(spec) {
  he_uniform(std::span(params_).subspan(0, spec.out * spec.in), spec.in, init_rng);
}

MatrixRef DenseLayer::weights() const {
  return {spec_.out, spec_.in, params().subspan(0, spec_.out * spec_.in)};
}

std::span<const double> DenseLayer::bias() const {
  return params().subspan(spec_.out * spec_.in, spec_.out);
}

Matrix DenseLayer::forward(const Matrix& x, const Matrix& /*noise*/, LayerCache* cache) const {
  check_input(*this, x);
  if (cache) {
    cache->input = x;
    cache->gated = x;
  }
  return dense_tail(x, weights(), bias(), spec_.activation, cache);
}

Matrix DenseLayer::backward(const LayerCache& cache, const Matrix& grad_out,
                            std::span<double> grad_params) const {
  check_grad_span(*this, grad_params);
  const Matrix grad_pre = activation_backward(grad_out, cache, spec_.activation);
  const std::size_t nw = spec_.out * spec_.in;
  return affine_backward(grad_pre, cache.gated, weights(), grad_params.subspan(0, nw),
                         grad_params.subspan(nw, spec_.out));
}

// ---------------------------------------------------------------------------
// McDropoutLayer

McDropoutLayer::McDropoutLayer(LayerSpec spec) : Layer(spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw DomainError("dropout rate must lie in [0,1), got " + std::to_string(spec.rate));
  }
  params_.assign(spec.out * spec.in + spec.out, 0.0);
}

McDropoutLayer::McDropoutLayer(LayerSpec spec, Rng& init_rng) : McDropoutLayer(spec) {
  he_uniform(std::span(params_).subspan(0, spec.out * spec.in), spec.in, init_rng);
}

Matrix McDropoutLayer::draw_noise(std::size_t batch, Rng& rng) const {
  const double keep_scale = 1.0 / (1.0 - spec_.rate);
  Matrix mask(batch, spec_.in);
  for (double& m : mask.data()) m = uniform_open(rng) < spec_.rate ? 0.0 : keep_scale;
  return mask;
}

Matrix McDropoutLayer::forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const {
  check_input(*this, x);
  check_noise(noise, x.rows(), spec_.in);
  Matrix gated = x;
  auto g = gated.data();
  auto n = noise.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= n[i];

  const std::size_t nw = spec_.out * spec_.in;
  MatrixRef w{spec_.out, spec_.in, params().subspan(0, nw)};
  Matrix out = dense_tail(gated, w, params().subspan(nw, spec_.out), spec_.activation, cache);
  if (cache) {
    cache->input = x;
    cache->noise = noise;
    cache->gated = std::move(gated);
  }
  return out;
}

Matrix McDropoutLayer::backward(const LayerCache& cache, const Matrix& grad_out,
                                std::span<double> grad_params) const {
  check_grad_span(*this, grad_params);
  const Matrix grad_pre = activation_backward(grad_out, cache, spec_.activation);
  const std::size_t nw = spec_.out * spec_.in;
  MatrixRef w{spec_.out, spec_.in, params().subspan(0, nw)};
  Matrix grad_x = affine_backward(grad_pre, cache.gated, w, grad_params.subspan(0, nw),
                                  grad_params.subspan(nw, spec_.out));
  auto gx = grad_x.data();
  auto n = cache.noise.data();
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n[i];
  return grad_x;
}

// ---------------------------------------------------------------------------
// ConcreteDropoutLayer

double concrete_mask(double p, double t, double u) {
  return sigmoid((std::log(p) - std::log1p(-p) + std::log(u) - std::log1p(-u)) / t);
}

ConcreteDropoutLayer::ConcreteDropoutLayer(LayerSpec spec) : Layer(spec) {
  if (!(spec.temperature > 0.0)) throw DomainError("concrete temperature must be positive");
  params_.assign(spec.out * spec.in + spec.out + 1, 0.0);
  // Default logit_p corresponds to init_p; overwritten on checkpoint load.
  params_.back() = std::log(spec.init_p) - std::log1p(-spec.init_p);
}

ConcreteDropoutLayer::ConcreteDropoutLayer(LayerSpec spec, Rng& init_rng)
    : ConcreteDropoutLayer(spec) {
  if (!(spec.init_p > 0.0 && spec.init_p < 1.0)) {
    throw DomainError("concrete init_p must lie in (0,1)");
  }
  he_uniform(std::span(params_).subspan(0, spec.out * spec.in), spec.in, init_rng);
}

double ConcreteDropoutLayer::drop_probability() const { return sigmoid(logit_p()); }

MatrixRef ConcreteDropoutLayer::weights() const {
  return {spec_.out, spec_.in, params().subspan(0, spec_.out * spec_.in)};
}

Matrix ConcreteDropoutLayer::draw_noise(std::size_t batch, Rng& rng) const {
  Matrix u(batch, spec_.in);
  for (double& v : u.data()) v = uniform_open(rng);
  return u;
}

Matrix ConcreteDropoutLayer::forward(const Matrix& x, const Matrix& noise,
                                     LayerCache* cache) const {
  check_input(*this, x);
  check_noise(noise, x.rows(), spec_.in);
  const double a = logit_p();
  const double inv_keep = 1.0 + std::exp(a);  // 1/(1-p)
  Matrix gated = x;
  auto g = gated.data();
  auto u = noise.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double z = sigmoid((a + std::log(u[i]) - std::log1p(-u[i])) / spec_.temperature);
    g[i] *= (1.0 - z) * inv_keep;
  }

  const std::size_t nw = spec_.out * spec_.in;
  Matrix out =
      dense_tail(gated, weights(), params().subspan(nw, spec_.out), spec_.activation, cache);
  if (cache) {
    cache->input = x;
    cache->noise = noise;
    cache->gated = std::move(gated);
  }
  return out;
}

Matrix ConcreteDropoutLayer::backward(const LayerCache& cache, const Matrix& grad_out,
                                      std::span<double> grad_params) const {
  check_grad_span(*this, grad_params);
  const Matrix grad_pre = activation_backward(grad_out, cache, spec_.activation);
  const std::size_t nw = spec_.out * spec_.in;
  Matrix grad_gated = affine_backward(grad_pre, cache.gated, weights(),
                                      grad_params.subspan(0, nw), grad_params.subspan(nw, spec_.out));

  const double a = logit_p();
  const double p = sigmoid(a);
  const double inv_keep = 1.0 + std::exp(a);
  const double t = spec_.temperature;
  auto gg = grad_gated.data();
  auto u = cache.noise.data();
  auto x = cache.input.data();
  double grad_a = 0.0;
  for (std::size_t i = 0; i < gg.size(); ++i) {
    const double z = sigmoid((a + std::log(u[i]) - std::log1p(-u[i])) / t);
    const double scale = (1.0 - z) * inv_keep;
    const double dscale_da = -z * (1.0 - z) / t * inv_keep + (1.0 - z) * p * inv_keep;
    grad_a += gg[i] * x[i] * dscale_da;
    gg[i] *= scale;
  }
  grad_params.back() += grad_a;
  return grad_gated;
}

double concrete_regularizer(const ConcreteDropoutLayer& layer, std::size_t n_data) {
  return layer.regularizer(n_data, {}, 1.0);
}

double ConcreteDropoutLayer::regularizer(std::size_t n_data, std::span<double> grad_params,
                                         double weight) const {
  if (n_data == 0) throw DomainError("concrete regularizer needs n_data > 0");
  const double n = static_cast<double>(n_data);
  const double a = logit_p();
  const double p = sigmoid(a);
  const double inv_keep = 1.0 + std::exp(a);
  const double log_p = -softplus(-a);
  const double log_q = -softplus(a);
  const double d_in = static_cast<double>(spec_.in);

  const std::size_t nw = spec_.out * spec_.in;
  double sq = 0.0;
  for (std::size_t i = 0; i < nw; ++i) sq += params_[i] * params_[i];

  const double weight_term = spec_.weight_scale * sq * inv_keep / n;
  const double entropy_term = spec_.dropout_scale * d_in * (p * log_p + (1.0 - p) * log_q) / n;

  if (!grad_params.empty()) {
    check_grad_span(*this, grad_params);
    const double c = weight * 2.0 * spec_.weight_scale * inv_keep / n;
    for (std::size_t i = 0; i < nw; ++i) grad_params[i] += c * params_[i];
    const double d_weight = spec_.weight_scale * sq / n * std::exp(a);
    const double d_entropy = spec_.dropout_scale * d_in * a * p * (1.0 - p) / n;
    grad_params.back() += weight * (d_weight + d_entropy);
  }
  return weight_term + entropy_term;
}

// ---------------------------------------------------------------------------
// VariationalDenseLayer

double kl_gaussian(double mu, double sigma, double prior_std) {
  if (!(sigma > 0.0) || !(prior_std > 0.0)) {
    throw DomainError("kl_gaussian requires sigma > 0 and prior_std > 0");
  }
  const double var_ratio = (sigma * sigma + mu * mu) / (2.0 * prior_std * prior_std);
  return std::log(prior_std / sigma) + var_ratio - 0.5;
}

double kl_gaussian(const VariationalDenseLayer& layer) {
  return layer.regularizer(1, {}, 1.0);
}

VariationalDenseLayer::VariationalDenseLayer(LayerSpec spec) : Layer(spec) {
  if (!(spec.prior_std > 0.0)) throw DomainError("prior_std must be positive");
  params_.assign(2 * weight_count(), 0.0);
}

VariationalDenseLayer::VariationalDenseLayer(LayerSpec spec, Rng& init_rng)
    : VariationalDenseLayer(spec) {
  if (!(spec.init_sigma > 0.0)) throw DomainError("init_sigma must be positive");
  he_uniform(std::span(params_).subspan(0, spec.out * spec.in), spec.in, init_rng);
  // softplus(rho) == init_sigma
  const double rho0 = std::log(std::expm1(spec.init_sigma));
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(weight_count()), params_.end(), rho0);
}

Matrix VariationalDenseLayer::draw_noise(std::size_t /*batch*/, Rng& rng) const {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix eps(1, weight_count());
  for (double& e : eps.data()) e = dist(rng);
  return eps;
}

Matrix VariationalDenseLayer::forward(const Matrix& x, const Matrix& noise,
                                      LayerCache* cache) const {
  check_input(*this, x);
  check_noise(noise, 1, weight_count());
  const std::size_t nw = weight_count();
  Matrix sampled(1, nw);
  auto s = sampled.data();
  auto e = noise.data();
  for (std::size_t i = 0; i < nw; ++i) s[i] = params_[i] + softplus(params_[nw + i]) * e[i];

  const std::size_t nW = spec_.out * spec_.in;
  std::span<const double> sc = s;
  MatrixRef w{spec_.out, spec_.in, sc.subspan(0, nW)};
  Matrix out = dense_tail(x, w, sc.subspan(nW, spec_.out), spec_.activation, cache);
  if (cache) {
    cache->input = x;
    cache->gated = x;
    cache->noise = noise;
    cache->weights = std::move(sampled);
  }
  return out;
}

Matrix VariationalDenseLayer::backward(const LayerCache& cache, const Matrix& grad_out,
                                       std::span<double> grad_params) const {
  check_grad_span(*this, grad_params);
  const Matrix grad_pre = activation_backward(grad_out, cache, spec_.activation);
  const std::size_t nw = weight_count();
  const std::size_t nW = spec_.out * spec_.in;
  std::vector<double> grad_theta(nw, 0.0);
  std::span<double> gt = grad_theta;
  MatrixRef w{spec_.out, spec_.in, cache.weights.data().subspan(0, nW)};
  Matrix grad_x = affine_backward(grad_pre, cache.gated, w, gt.subspan(0, nW),
                                  gt.subspan(nW, spec_.out));
  auto e = cache.noise.data();
  for (std::size_t i = 0; i < nw; ++i) {
    grad_params[i] += grad_theta[i];
    grad_params[nw + i] += grad_theta[i] * e[i] * sigmoid(params_[nw + i]);
  }
  return grad_x;
}

double VariationalDenseLayer::regularizer(std::size_t /*n_data*/, std::span<double> grad_params,
                                          double weight) const {
  const std::size_t nw = weight_count();
  const double ps = spec_.prior_std;
  const double inv_var = 1.0 / (ps * ps);
  if (!grad_params.empty()) check_grad_span(*this, grad_params);
  double kl = 0.0;
  for (std::size_t i = 0; i < nw; ++i) {
    const double mu = params_[i];
    const double rho = params_[nw + i];
    const double sigma = softplus(rho);
    kl += kl_gaussian(mu, sigma, ps);
    if (!grad_params.empty()) {
      grad_params[i] += weight * mu * inv_var;
      grad_params[nw + i] += weight * (-1.0 / sigma + sigma * inv_var) * sigmoid(rho);
    }
  }
  return kl;
}

}  // namespace steal_lab
