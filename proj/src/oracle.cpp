#include "steal_lab/oracle.hpp"

#include <chrono>

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"

namespace steal_lab {

void OracleMetadata::validate() const {
  if (input_dim < 1) throw ConfigError("oracle input_dim must be at least 1");
  if (num_classes < 2) throw ConfigError("oracle num_classes must be at least 2");
}

void QueryLedger::record(std::size_t batch_size) {
  const double now = std::chrono::duration<double>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
  std::lock_guard lock(mutex_);
  total_ += batch_size;
  log_.push_back({now, batch_size});
}

std::size_t QueryLedger::total() const {
  std::lock_guard lock(mutex_);
  return total_;
}

std::vector<QueryRecord> QueryLedger::log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

LocalOracle::LocalOracle(Network target, std::string name, std::size_t max_batch)
    : target_(std::move(target)), max_batch_(max_batch) {
  if (target_.layer_count() == 0) throw ConfigError("oracle target has no layers");
  if (target_.stochastic()) throw ConfigError("oracle target must be deterministic");
  if (max_batch_ == 0) throw ConfigError("oracle max batch must be positive");
  metadata_ = {target_.input_dim(), target_.output_dim(), std::move(name)};
  metadata_.validate();
}

OracleMetadata LocalOracle::metadata() const { return metadata_; }

LabelVector LocalOracle::query(const Matrix& inputs) {
  if (inputs.cols() != metadata_.input_dim) {
    throw ProtocolError("dimension_mismatch",
                        "query rows have " + std::to_string(inputs.cols()) +
                            " columns, oracle expects " + std::to_string(metadata_.input_dim));
  }
  if (inputs.rows() > max_batch_) {
    throw ProtocolError("batch_too_large", "query batch of " + std::to_string(inputs.rows()) +
                                               " rows exceeds limit " + std::to_string(max_batch_));
  }
  if (!all_finite(inputs.data())) {
    throw ProtocolError("non_finite_input", "query inputs must be finite");
  }
  // The target is deterministic, so this RNG is never consumed.
  Rng unused(0);
  LabelVector labels = argmax_rows(target_.forward(inputs, unused));
  ledger_.record(inputs.rows());
  return labels;
}

LabelVector query_in_batches(Oracle& oracle, const Matrix& inputs, std::size_t max_batch) {
  if (max_batch == 0) throw ConfigError("max batch must be positive");
  LabelVector labels;
  labels.reserve(inputs.rows());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < inputs.rows(); begin += max_batch) {
    const std::size_t end = std::min(inputs.rows(), begin + max_batch);
    idx.clear();
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    const LabelVector part = oracle.query(inputs.select_rows(idx));
    if (part.size() != idx.size()) {
      throw ProtocolError("bad_response", "oracle returned " + std::to_string(part.size()) +
                                              " labels for " + std::to_string(idx.size()) + " rows");
    }
    labels.insert(labels.end(), part.begin(), part.end());
  }
  return labels;
}

}  // namespace steal_lab
