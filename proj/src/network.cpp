#include "steal_lab/network.hpp"

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"

namespace steal_lab {

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network spec has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].in == 0 || layers[i].out == 0) {
      throw ConfigError("layer " + std::to_string(i) + " has zero width");
    }
    if (i > 0 && layers[i].in != layers[i - 1].out) {
      throw ConfigError("layer " + std::to_string(i) + " input width " +
                        std::to_string(layers[i].in) + " != previous output width " +
                        std::to_string(layers[i - 1].out));
    }
  }
}

Network::Network(const NetworkSpec& spec, Rng& init_rng) {
  spec.validate();
  layers_.reserve(spec.layers.size());
  for (const auto& ls : spec.layers) layers_.push_back(make_layer(ls, init_rng));
}

Network::Network(std::vector<std::unique_ptr<Layer>> layers) : layers_(std::move(layers)) {
  NetworkSpec spec;
  for (const auto& l : layers_) spec.layers.push_back(l->spec());
  spec.validate();
}

Network::Network(const Network& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::size_t Network::input_dim() const { return layers_.empty() ? 0 : layers_.front()->in_dim(); }
std::size_t Network::output_dim() const { return layers_.empty() ? 0 : layers_.back()->out_dim(); }

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

bool Network::stochastic() const {
  for (const auto& l : layers_) {
    if (l->stochastic()) return true;
  }
  return false;
}

std::size_t Network::deterministic_prefix() const {
  std::size_t i = 0;
  while (i < layers_.size() && !layers_[i]->stochastic()) ++i;
  return i;
}

NoiseDraw Network::draw_noise(std::size_t batch, Rng& rng) const {
  NoiseDraw noise;
  noise.reserve(layers_.size());
  for (const auto& l : layers_) noise.push_back(l->draw_noise(batch, rng));
  return noise;
}

Matrix Network::forward(const Matrix& x, Rng& rng) const {
  return forward_range(x, 0, layers_.size(), rng);
}

Matrix Network::forward(const Matrix& x, const NoiseDraw& noise,
                        std::vector<LayerCache>* caches) const {
  if (noise.size() != layers_.size()) throw ShapeError("noise draw does not match layer count");
  if (caches) caches->assign(layers_.size(), LayerCache{});
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, noise[i], caches ? &(*caches)[i] : nullptr);
  }
  return h;
}

Matrix Network::forward_range(const Matrix& x, std::size_t begin, std::size_t end,
                              Rng& rng) const {
  Matrix h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->sample_forward(h, rng);
  return h;
}

Matrix Network::predict_proba(const Matrix& x, Rng& rng) const {
  return softmax_rows(forward(x, rng));
}

double Network::regularizer(std::size_t n_data) const {
  double reg = 0.0;
  for (const auto& l : layers_) reg += l->regularizer(n_data, {}, 1.0);
  return reg;
}

Gradients Network::zero_gradients() const {
  Gradients g;
  g.reserve(layers_.size());
  for (const auto& l : layers_) g.emplace_back(l->param_count(), 0.0);
  return g;
}

UqLoss Network::loss_and_grad(const Matrix& x, std::span<const int> labels,
                              const NoiseDraw& noise, double kl_weight, std::size_t n_data,
                              Gradients* grads) const {
  if (kl_weight < 0.0) throw DomainError("kl_weight must be non-negative");
  if (n_data == 0) n_data = x.rows();
  std::vector<LayerCache> caches;
  const Matrix logits = forward(x, noise, grads ? &caches : nullptr);
  const Matrix probs = softmax_rows(logits);

  UqLoss loss;
  loss.kl_weight = kl_weight;
  loss.nll = cross_entropy(probs, labels);

  if (grads) {
    *grads = zero_gradients();
    Matrix g = softmax_cross_entropy_grad(probs, labels);
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i]->backward(caches[i], g, (*grads)[i]);
    }
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    std::span<double> gspan;
    if (grads) gspan = (*grads)[i];
    loss.reg += layers_[i]->regularizer(n_data, gspan, kl_weight);
  }
  return loss;
}

nlohmann::json Network::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back(l->to_json());
  return nlohmann::json{{"layers", std::move(layers)}};
}

Network Network::from_json(const nlohmann::json& j) {
  if (!j.contains("layers") || !j["layers"].is_array()) {
    throw ParseError("network record lacks a 'layers' array");
  }
  std::vector<std::unique_ptr<Layer>> layers;
  for (const auto& lj : j["layers"]) layers.push_back(layer_from_json(lj));
  try {
    return Network(std::move(layers));
  } catch (const ConfigError& e) {
    throw ParseError(std::string("inconsistent network record: ") + e.what());
  }
}

UqLoss uq_loss(const Network& model, const Matrix& x, std::span<const int> labels, Rng& rng,
               double kl_weight, std::size_t n_data) {
  return model.loss_and_grad(x, labels, model.draw_noise(x.rows(), rng), kl_weight, n_data,
                             nullptr);
}

}  // namespace steal_lab
