#include "steal_lab/training.hpp"

#include <algorithm>
#include <cmath>

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"

namespace steal_lab {

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  return (n + batch_size - 1) / batch_size;
}

std::vector<EpochStats> train_network(Network& net, const Dataset& data,
                                      const TrainOptions& options, Rng& rng,
                                      const EpochCallback& on_epoch) {
  if (data.size() == 0) throw DomainError("train_network: empty dataset");
  if (data.dims() != net.input_dim()) {
    throw ShapeError("train_network: dataset has " + std::to_string(data.dims()) +
                     " features, network expects " + std::to_string(net.input_dim()));
  }
  if (data.num_classes != net.output_dim()) {
    throw ShapeError("train_network: dataset has " + std::to_string(data.num_classes) +
                     " classes, network outputs " + std::to_string(net.output_dim()));
  }

  const std::size_t n = data.size();
  const std::size_t nb = batches_per_epoch(n, options.batch_size);
  std::vector<AdamState> states(net.layer_count());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::vector<EpochStats> history;
  history.reserve(options.epochs);
  Gradients grads;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t begin = b * options.batch_size;
      const std::size_t end = std::min(n, begin + options.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix x = data.features.select_rows(idx);
      LabelVector y;
      y.reserve(idx.size());
      for (std::size_t i : idx) y.push_back(data.labels[i]);

      const NoiseDraw noise = net.draw_noise(x.rows(), rng);
      const UqLoss loss = net.loss_and_grad(x, y, noise, options.kl_weight, n, &grads);
      if (!std::isfinite(loss.total())) throw TrainingError("non-finite training loss", epoch);

      for (std::size_t li = 0; li < net.layer_count(); ++li) {
        if (net.layer(li).param_count() == 0) continue;
        adam_step(net.layer(li).params(), grads[li], states[li], options.adam);
      }
      stats.loss += loss.total();
      stats.nll += loss.nll;
      stats.reg += loss.reg;
    }
    stats.loss /= static_cast<double>(nb);
    stats.nll /= static_cast<double>(nb);
    stats.reg /= static_cast<double>(nb);
    for (std::size_t li = 0; li < net.layer_count(); ++li) {
      if (!all_finite(net.layer(li).params())) {
        throw TrainingError("parameters diverged", epoch);
      }
    }
    history.push_back(stats);
    if (on_epoch) on_epoch(epoch, net);
  }
  return history;
}

double accuracy(const Network& net, const Dataset& data, Rng& rng) {
  if (data.size() == 0) return 0.0;
  const LabelVector pred = argmax_rows(net.forward(data.features, rng));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace steal_lab
