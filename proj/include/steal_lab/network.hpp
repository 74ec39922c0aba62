#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "steal_lab/layers.hpp"
#include "steal_lab/matrix.hpp"
#include "steal_lab/rng.hpp"

namespace steal_lab {

/// Declarative layer stack. Consecutive layers must agree on widths.
struct NetworkSpec {
  std::vector<LayerSpec> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  void validate() const;
};

/// Training objective split into its data and penalty parts.
struct UqLoss {
  double nll = 0.0;
  double reg = 0.0;
  double kl_weight = 0.0;

  double total() const { return nll + kl_weight * reg; }
};

/// One gradient buffer per layer, matching Layer::params() sizes.
using Gradients = std::vector<std::vector<double>>;

/// Noise for every layer of one forward pass (empty entries for deterministic layers).
using NoiseDraw = std::vector<Matrix>;

/// A stack of layers producing logits.
class Network {
 public:
  Network() = default;
  Network(const NetworkSpec& spec, Rng& init_rng);
  explicit Network(std::vector<std::unique_ptr<Layer>> layers);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t param_count() const;

  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  bool stochastic() const;
  /// Number of leading layers that are deterministic.
  std::size_t deterministic_prefix() const;

  NoiseDraw draw_noise(std::size_t batch, Rng& rng) const;

  /// Logits for one stochastic forward pass.
  Matrix forward(const Matrix& x, Rng& rng) const;
  /// Logits with a fixed noise draw; fills caches when non-null.
  Matrix forward(const Matrix& x, const NoiseDraw& noise,
                 std::vector<LayerCache>* caches = nullptr) const;
  /// Runs layers [begin, end) on x with fresh noise.
  Matrix forward_range(const Matrix& x, std::size_t begin, std::size_t end, Rng& rng) const;

  /// Softmax probabilities of one stochastic forward pass.
  Matrix predict_proba(const Matrix& x, Rng& rng) const;

  /// Sum of per-layer penalties (KL terms or concrete regularizers).
  double regularizer(std::size_t n_data) const;

  /// Loss and (optionally) gradients with a fixed noise draw.
  UqLoss loss_and_grad(const Matrix& x, std::span<const int> labels, const NoiseDraw& noise,
                       double kl_weight, std::size_t n_data, Gradients* grads) const;

  Gradients zero_gradients() const;

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// nll from one stochastic forward pass, reg from the layer penalties;
/// n_data scales the concrete regularizer and defaults to the batch size.
UqLoss uq_loss(const Network& model, const Matrix& x, std::span<const int> labels, Rng& rng,
               double kl_weight, std::size_t n_data = 0);

}  // namespace steal_lab
