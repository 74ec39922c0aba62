#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "steal_lab/matrix.hpp"
#include "steal_lab/network.hpp"
#include "steal_lab/rng.hpp"

namespace steal_lab {

enum class SamplerKind {
  deterministic,
  mc_dropout,
  concrete,
  variational,
  deep_ensemble,
  heterogeneous_ensemble,
};

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);

/// Source of parameter draws for Monte Carlo prediction: either one
/// stochastic network sampled M times, or an ensemble whose members are each
/// used exactly once.
class ParamSampler {
 public:
  /// Wraps a single network. Deterministic kinds require a deterministic net.
  static ParamSampler single(SamplerKind kind, Network net, std::size_t forward_passes);
  static ParamSampler ensemble(SamplerKind kind, std::vector<Network> members);

  SamplerKind kind() const { return kind_; }
  bool is_ensemble() const;
  const std::vector<Network>& members() const { return members_; }
  /// Effective M: member count for ensembles, 1 for deterministic samplers.
  std::size_t forward_passes() const;
  std::size_t input_dim() const { return members_.front().input_dim(); }
  std::size_t num_classes() const { return members_.front().output_dim(); }

  /// Copy with a different M; ensembles and deterministic samplers ignore it.
  ParamSampler with_forward_passes(std::size_t m) const;

  nlohmann::json to_json() const;
  static ParamSampler from_json(const nlohmann::json& j);

 private:
  ParamSampler(SamplerKind kind, std::vector<Network> members, std::size_t m);

  SamplerKind kind_ = SamplerKind::deterministic;
  std::vector<Network> members_;
  std::size_t forward_passes_ = 1;
};

/// Checkpoint container: JSON text, byte-stable for identical parameters.
void save_checkpoint(const ParamSampler& sampler, const std::filesystem::path& path);
ParamSampler load_checkpoint(const std::filesystem::path& path);

struct PredictiveResult {
  std::size_t samples = 0;
  Matrix mean_probs;  // N x k
  // Row i holds sample i's N x k probabilities flattened row-major. Empty when
  // samples were not retained.
  Matrix sample_probs;
  std::vector<double> per_point_variance;  // N

  Matrix sample(std::size_t i) const;
};

/// Aggregates per-sample probability matrices: arithmetic mean and
/// per-point variance (population variance per class, averaged over classes).
PredictiveResult summarize_samples(std::span<const Matrix> samples, bool keep_samples = true);

/// Monte Carlo predictive distribution. Sample i runs on a sub-stream derived
/// from (root, i), where root is one draw from `rng`, so the result does not
/// depend on execution order.
PredictiveResult mc_predict(const ParamSampler& sampler, const Matrix& x, Rng& rng,
                            bool keep_samples = true);

/// Dataset-level prediction variance: mean of per_point_variance. Zero for M = 1.
double prediction_variance(const PredictiveResult& result);

/// argmax of mean_probs per row, lowest index on ties.
LabelVector predict_labels(const ParamSampler& sampler, const Matrix& x, Rng& rng);

}  // namespace steal_lab
