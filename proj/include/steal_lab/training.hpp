#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "steal_lab/adam.hpp"
#include "steal_lab/datasets.hpp"
#include "steal_lab/network.hpp"
#include "steal_lab/rng.hpp"

namespace steal_lab {

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamOptions adam;
  // Weight of the layer penalties (KL / concrete regularizer) in each
  // minibatch loss.
  double kl_weight = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean minibatch total loss
  double nll = 0.0;
  double reg = 0.0;
};

/// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(std::size_t epoch, const Network& net)>;

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

/// Minibatch Adam on cross-entropy plus weighted layer penalties. Each
/// minibatch uses one noise draw. Throws TrainingError on a non-finite loss.
std::vector<EpochStats> train_network(Network& net, const Dataset& data,
                                      const TrainOptions& options, Rng& rng,
                                      const EpochCallback& on_epoch = {});

/// Fraction of rows whose argmax prediction (single forward) equals the label.
double accuracy(const Network& net, const Dataset& data, Rng& rng);

}  // namespace steal_lab
