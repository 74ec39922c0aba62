#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "steal_lab/matrix.hpp"
#include "steal_lab/rng.hpp"

namespace steal_lab {

enum class Activation { identity, relu, tanh };
enum class LayerKind { dense, mc_dropout, concrete_dropout, variational };

std::string to_string(Activation a);
std::string to_string(LayerKind k);
Activation activation_from_string(const std::string& s);
LayerKind layer_kind_from_string(const std::string& s);

/// Declarative description of one layer. Fields irrelevant to `kind` are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::identity;

  // mc_dropout
  double rate = 0.5;

  // concrete_dropout
  double temperature = 0.1;
  double init_p = 0.1;
  double weight_scale = 1e-4;
  double dropout_scale = 1e-3;

  // variational
  double prior_std = 1.0;
  double init_sigma = 0.05;

  bool operator==(const LayerSpec&) const = default;
};

/// Intermediate values kept by forward() for the matching backward().
struct LayerCache {
  Matrix input;
  Matrix gated;  // input after dropout / concrete scaling
  Matrix pre;    // pre-activation
  Matrix output;
  Matrix noise;
  Matrix weights;  // sampled weights (variational only)
};

/// A layer owns a flat parameter vector. Stochastic layers draw their noise
/// explicitly through draw_noise(), so a forward pass with a given noise
/// matrix is a pure function; this is what lets gradient checks freeze a draw.
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }
  std::size_t in_dim() const { return spec_.in; }
  std::size_t out_dim() const { return spec_.out; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

  virtual bool stochastic() const { return false; }

  /// Noise for a batch of `batch` rows; empty for deterministic layers.
  virtual Matrix draw_noise(std::size_t batch, Rng& rng) const;

  virtual Matrix forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const = 0;

  /// Accumulates parameter gradients into `grad_params` and returns dL/dx.
  virtual Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                          std::span<double> grad_params) const = 0;

  /// Training-time penalty (KL or concrete regularizer). When `grad_params`
  /// is non-empty the penalty gradient is added to it, scaled by `weight`.
  virtual double regularizer(std::size_t n_data, std::span<double> grad_params,
                             double weight) const;

  /// Forward with freshly drawn noise.
  Matrix sample_forward(const Matrix& x, Rng& rng) const;

  virtual std::unique_ptr<Layer> clone() const = 0;

  nlohmann::json to_json() const;

 protected:
  LayerSpec spec_;
  std::vector<double> params_;
};

// Flat parameter layout: [W (out x in, row-major), b (out)].
class DenseLayer : public Layer {
 public:
  explicit DenseLayer(LayerSpec spec);
  DenseLayer(LayerSpec spec, Rng& init_rng);

  MatrixRef weights() const;
  std::span<const double> bias() const;

  Matrix forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const override;
  Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                  std::span<double> grad_params) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }
};

/// Inverted dropout on the layer input followed by a dense transform. The mask
/// is resampled on every call, at training and at inference time.
// Flat parameter layout: [W, b]. Noise: rows x in, entries 0 or 1/(1-rate).
class McDropoutLayer : public Layer {
 public:
  explicit McDropoutLayer(LayerSpec spec);
  McDropoutLayer(LayerSpec spec, Rng& init_rng);

  double rate() const { return spec_.rate; }

  bool stochastic() const override { return true; }
  Matrix draw_noise(std::size_t batch, Rng& rng) const override;
  Matrix forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const override;
  Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                  std::span<double> grad_params) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<McDropoutLayer>(*this);
  }
};

/// Concrete (relaxed Bernoulli) dropout with a learned drop probability.
// Flat parameter layout: [W, b, logit_p]. Noise: rows x in uniform draws u.
class ConcreteDropoutLayer : public Layer {
 public:
  explicit ConcreteDropoutLayer(LayerSpec spec);
  ConcreteDropoutLayer(LayerSpec spec, Rng& init_rng);

  double logit_p() const { return params_.back(); }
  double drop_probability() const;
  MatrixRef weights() const;

  bool stochastic() const override { return true; }
  Matrix draw_noise(std::size_t batch, Rng& rng) const override;
  Matrix forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const override;
  Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                  std::span<double> grad_params) const override;
  double regularizer(std::size_t n_data, std::span<double> grad_params,
                     double weight) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ConcreteDropoutLayer>(*this);
  }
};

/// Bayes-by-backprop dense layer: factorized Gaussian posterior over W and b,
/// sigma = softplus(rho), one weight draw per forward call.
// Flat parameter layout: [mu_W, mu_b, rho_W, rho_b]. Noise: 1 x (out*in + out).
class VariationalDenseLayer : public Layer {
 public:
  explicit VariationalDenseLayer(LayerSpec spec);
  VariationalDenseLayer(LayerSpec spec, Rng& init_rng);

  std::size_t weight_count() const { return spec_.out * spec_.in + spec_.out; }
  std::span<const double> mu() const { return params().subspan(0, weight_count()); }
  std::span<const double> rho() const { return params().subspan(weight_count()); }

  bool stochastic() const override { return true; }
  Matrix draw_noise(std::size_t batch, Rng& rng) const override;
  Matrix forward(const Matrix& x, const Matrix& noise, LayerCache* cache) const override;
  Matrix backward(const LayerCache& cache, const Matrix& grad_out,
                  std::span<double> grad_params) const override;
  double regularizer(std::size_t n_data, std::span<double> grad_params,
                     double weight) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<VariationalDenseLayer>(*this);
  }
};

/// Builds a layer with He-uniform initialized weights.
std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& init_rng);
/// Restores a layer from to_json() output.
std::unique_ptr<Layer> layer_from_json(const nlohmann::json& j);

double softplus(double x);
double sigmoid(double x);

/// Relaxed Bernoulli drop indicator z in (0,1) for drop probability p,
/// temperature t and uniform draw u.
double concrete_mask(double p, double t, double u);

/// w_scale*||W||^2/((1-p)*n) + d_scale*D_in*(p log p + (1-p) log(1-p))/n
double concrete_regularizer(const ConcreteDropoutLayer& layer, std::size_t n_data);

/// KL(N(mu, sigma^2) || N(0, prior_std^2)) in nats.
double kl_gaussian(double mu, double sigma, double prior_std);

/// Sum of kl_gaussian over every weight and bias of the layer.
double kl_gaussian(const VariationalDenseLayer& layer);

}  // namespace steal_lab
