#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "steal_lab/datasets.hpp"
#include "steal_lab/layers.hpp"
#include "steal_lab/network.hpp"
#include "steal_lab/oracle.hpp"
#include "steal_lab/predictive.hpp"

namespace steal_lab {

enum class TargetSize { small, medium, large };
enum class Family { baseline, mcd, cd, bnn, deep_ensemble, het_ensemble };

std::string to_string(TargetSize s);
std::string to_string(Family f);
TargetSize target_size_from_string(const std::string& s);
Family family_from_string(const std::string& s);

/// Trunk label used by the heterogeneous ensemble, whose members each have their own.
inline constexpr const char* kMixedTrunk = "mixed";

struct TargetSpec {
  TargetSize size = TargetSize::small;
  std::vector<std::size_t> hidden;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 32;

  void validate() const;
};

/// small [8], medium [16,16], large [32,32].
TargetSpec default_target_spec(TargetSize size);

/// Parameter count of a ReLU MLP with the given hidden widths.
std::size_t mlp_param_count(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                            std::size_t num_classes);

/// A named feature trunk: a stack of deterministic dense layers.
struct TrunkSpec {
  std::string name;
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;

  bool operator==(const TrunkSpec&) const = default;
};

/// The six member trunks of the heterogeneous ensemble.
std::vector<TrunkSpec> heterogeneous_trunks();

struct SurrogateSpec {
  Family family = Family::baseline;
  TrunkSpec trunk;               // ignored by het_ensemble
  std::vector<TrunkSpec> member_trunks;  // het_ensemble only, one per member
  std::size_t head_width = 16;
  std::size_t epochs = 30;
  std::size_t members = 6;       // ensembles only
  std::size_t forward_passes = 50;  // M used by the per-epoch variance probe
  double lr = 1e-3;
  std::size_t batch_size = 32;
  double dropout_rate = 0.5;
  // Penalty weight for cd / bnn. Unset: 1 for cd (its regularizer is already
  // divided by the data size), 1/minibatches-per-epoch for bnn.
  std::optional<double> kl_weight;
  double prior_std = 1.0;

  std::string trunk_name() const;
  void validate() const;
};

/// Epochs default to 50 for bnn and 30 otherwise; het_ensemble gets
/// heterogeneous_trunks().
SurrogateSpec default_surrogate_spec(Family family, TrunkSpec trunk);

/// Builds the (untrained) network of a single-network family or one ensemble member.
NetworkSpec surrogate_network_spec(const SurrogateSpec& spec, const TrunkSpec& trunk,
                                   std::size_t input_dim, std::size_t num_classes);

struct TrainedTarget {
  Network network;
  double test_accuracy = 0.0;
};

/// Trains a deterministic ReLU MLP with cross-entropy and Adam and reports its
/// accuracy on `test`.
TrainedTarget train_target(const TargetSpec& spec, const Dataset& train, const Dataset& test,
                           std::uint64_t seed);

/// Labels `inputs` through the oracle; the result carries hard labels only.
Dataset build_surrogate_set(Oracle& oracle, const Matrix& inputs, const std::string& name = "");

/// Prediction variance on the probe inputs after every epoch.
struct VarianceCurve {
  std::vector<double> variance;  // index e holds epoch e + 1
};

struct TrainedSurrogate {
  ParamSampler sampler;
  VarianceCurve curve;
  double train_seconds = 0.0;
};

/// Trains one surrogate family on oracle-labelled data. After every epoch the
/// sampler built so far is evaluated on `probe_inputs` with spec.forward_passes
/// samples. Ensemble members train independently from derived seeds.
TrainedSurrogate train_surrogate(const SurrogateSpec& spec, const Dataset& surrogate_data,
                                 const Matrix& probe_inputs, std::uint64_t seed);

/// Fraction of rows on which the two label vectors agree.
double label_agreement(const LabelVector& a, const LabelVector& b);

double evaluate_fidelity(const ParamSampler& sampler, Oracle& oracle, const Matrix& inputs,
                         Rng& rng);
/// Same with the oracle labels already collected.
double evaluate_fidelity(const ParamSampler& sampler, const LabelVector& oracle_labels,
                         const Matrix& inputs, Rng& rng);

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | spirals | csv
  std::size_t classes = 3;
  std::size_t dims = 2;
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  double spread = 0.4;  // blobs cluster std, spirals noise
  std::string train_path;  // csv only
  std::string test_path;   // csv only

  std::string name() const;
  void validate() const;
};

/// Train and test sets for one seed. Generated kinds derive distinct seeds
/// for the two sets; csv ignores the seed.
std::pair<Dataset, Dataset> make_datasets(const DatasetSpec& spec, std::uint64_t seed);

struct ExperimentPlan {
  DatasetSpec dataset;
  std::vector<TargetSpec> targets;
  std::vector<SurrogateSpec> surrogates;
  std::vector<std::size_t> forward_passes{50, 6};
  std::vector<std::uint64_t> seeds{0};
  std::size_t jobs = 1;

  void validate() const;
};

struct FidelityRow {
  std::string dataset;
  std::string target_size;
  std::string family;
  std::string trunk;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::optional<double> fidelity;  // empty when the cell failed
  std::optional<double> target_acc;
  std::size_t queries = 0;
};

struct TimingRow {
  std::string dataset;
  std::string target_size;
  std::string family;
  std::string trunk;
  std::uint64_t seed = 0;
  double train_seconds = 0.0;
};

struct CurveRow {
  std::string target_size;
  std::string family;
  std::string trunk;
  std::uint64_t seed = 0;
  VarianceCurve curve;
};

struct CellError {
  std::string target_size;
  std::string family;
  std::string trunk;
  std::uint64_t seed = 0;
  std::string message;
};

struct TrainedModel {
  std::string family;
  std::string trunk;
  ParamSampler sampler;
};

struct ExperimentResult {
  std::vector<FidelityRow> rows;
  std::vector<TimingRow> timings;
  std::vector<CurveRow> curves;
  std::vector<CellError> errors;
  std::vector<TrainedModel> models;  // filled only on request

  /// Sorts every table by its key so the result is independent of scheduling.
  void sort();
};

/// Everything an attacker holds for one stealing run against a fixed oracle.
struct AttackInputs {
  std::string dataset;
  std::string target_size;
  std::uint64_t seed = 0;
  std::optional<double> target_acc;
  Dataset surrogate_set;  // oracle-labelled
  Matrix fidelity_inputs;
  LabelVector fidelity_labels;  // oracle labels, used only for scoring
  std::size_t queries = 0;
};

/// Collects surrogate and fidelity labels from the oracle for a split.
AttackInputs prepare_attack(Oracle& oracle, const Dataset& train, const Dataset& test,
                            const SplitPlan& plan);

/// Receives one line per finished target or grid cell. Calls are serialized.
using ProgressFn = std::function<void(const std::string&)>;

/// Trains and scores every surrogate spec against prepared attack inputs.
/// Failing cells are recorded in `errors` and do not stop the others.
ExperimentResult run_attack(const AttackInputs& attack, const std::vector<SurrogateSpec>& specs,
                            const std::vector<std::size_t>& forward_passes, std::size_t jobs,
                            bool keep_models = false, const ProgressFn& progress = {});

/// Full grid: targets x surrogate specs x seeds, fidelity at every M.
ExperimentResult run_experiment(const ExperimentPlan& plan, const ProgressFn& progress = {});

/// Seed for one named grid cell; stable under reordering of the grid.
std::uint64_t cell_seed(std::uint64_t seed, const std::string& tag);

/// Runs tasks [0, count) on up to `jobs` threads. The first exception thrown
/// by a task is rethrown after all threads finish.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task);

}  // namespace steal_lab
