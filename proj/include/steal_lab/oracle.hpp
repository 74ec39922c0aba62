#pragma once

#include <cstddef>
#include <mutex>
#include <string>
#include <vector>

#include "steal_lab/matrix.hpp"
#include "steal_lab/network.hpp"

namespace steal_lab {

/// What an adversary is assumed to know about the black box.
struct OracleMetadata {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::string name;

  void validate() const;
  bool operator==(const OracleMetadata&) const = default;
};

struct QueryRecord {
  double timestamp = 0.0;  // seconds since the Unix epoch
  std::size_t batch_size = 0;
};

/// Thread-safe usage log. total() always equals the sum of recorded batch sizes.
class QueryLedger {
 public:
  void record(std::size_t batch_size);
  std::size_t total() const;
  std::vector<QueryRecord> log() const;

 private:
  mutable std::mutex mutex_;
  std::size_t total_ = 0;
  std::vector<QueryRecord> log_;
};

inline constexpr std::size_t kDefaultMaxBatch = 1024;

/// Hard-label black box. Implementations return class indices only; there is
/// deliberately no way to obtain probabilities through this interface.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual OracleMetadata metadata() const = 0;
  /// One label per input row, argmax with lowest-index tie-break.
  virtual LabelVector query(const Matrix& inputs) = 0;
  /// Rows answered so far through this oracle instance.
  virtual std::size_t total_queries() const = 0;
};

/// In-process oracle around a deterministic target network.
class LocalOracle : public Oracle {
 public:
  LocalOracle(Network target, std::string name, std::size_t max_batch = kDefaultMaxBatch);

  OracleMetadata metadata() const override;
  LabelVector query(const Matrix& inputs) override;
  std::size_t total_queries() const override { return ledger_.total(); }

  const QueryLedger& ledger() const { return ledger_; }
  std::size_t max_batch() const { return max_batch_; }

 private:
  Network target_;
  OracleMetadata metadata_;
  std::size_t max_batch_;
  QueryLedger ledger_;
};

/// Queries in chunks of at most `max_batch` rows and concatenates the labels.
LabelVector query_in_batches(Oracle& oracle, const Matrix& inputs,
                             std::size_t max_batch = kDefaultMaxBatch);

}  // namespace steal_lab
