#include "steal_lab/extraction.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>
#include <tuple>

#include "steal_lab/errors.hpp"
#include "steal_lab/tensor.hpp"
#include "steal_lab/training.hpp"

namespace steal_lab {
namespace {

SamplerKind sampler_kind(Family f) {
  switch (f) {
    case Family::baseline: return SamplerKind::deterministic;
    case Family::mcd: return SamplerKind::mc_dropout;
    case Family::cd: return SamplerKind::concrete;
    case Family::bnn: return SamplerKind::variational;
    case Family::deep_ensemble: return SamplerKind::deep_ensemble;
    case Family::het_ensemble: return SamplerKind::heterogeneous_ensemble;
  }
  return SamplerKind::deterministic;
}

bool is_ensemble(Family f) { return f == Family::deep_ensemble || f == Family::het_ensemble; }

LayerSpec dense(std::size_t in, std::size_t out, Activation act) {
  LayerSpec s;
  s.in = in;
  s.out = out;
  s.activation = act;
  return s;
}

double penalty_weight(const SurrogateSpec& spec, std::size_t n) {
  if (spec.kl_weight) return *spec.kl_weight;
  switch (spec.family) {
    case Family::cd: return 1.0;
    case Family::bnn: return 1.0 / static_cast<double>(batches_per_epoch(n, spec.batch_size));
    default: return 0.0;
  }
}

TrainOptions train_options(const SurrogateSpec& spec, std::size_t n) {
  TrainOptions opt;
  opt.epochs = spec.epochs;
  opt.batch_size = spec.batch_size;
  opt.adam.lr = spec.lr;
  opt.kl_weight = penalty_weight(spec, n);
  return opt;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainedSurrogate train_single(const SurrogateSpec& spec, const Dataset& data, const Matrix& probe,
                              std::uint64_t seed) {
  Rng rng(seed);
  Network net(surrogate_network_spec(spec, spec.trunk, data.dims(), data.num_classes), rng);
  const SamplerKind kind = sampler_kind(spec.family);
  const std::size_t m = kind == SamplerKind::deterministic ? 1 : spec.forward_passes;
  Rng probe_rng(derive_seed(seed, 0x9806e));
  VarianceCurve curve;
  train_network(net, data, train_options(spec, data.size()), rng,
                [&](std::size_t, const Network& current) {
                  const ParamSampler s = ParamSampler::single(kind, current, m);
                  curve.variance.push_back(
                      prediction_variance(mc_predict(s, probe, probe_rng, false)));
                });
  return TrainedSurrogate{ParamSampler::single(kind, std::move(net), m), std::move(curve), 0.0};
}

TrainedSurrogate train_ensemble(const SurrogateSpec& spec, const Dataset& data,
                                const Matrix& probe, std::uint64_t seed) {
  std::vector<TrunkSpec> trunks;
  if (spec.family == Family::het_ensemble) {
    trunks = spec.member_trunks;
  } else {
    trunks.assign(spec.members, spec.trunk);
  }
  // probs[e][i]: member i's probe probabilities after epoch e + 1.
  std::vector<std::vector<Matrix>> probs(spec.epochs, std::vector<Matrix>(trunks.size()));
  std::vector<Network> members;
  for (std::size_t i = 0; i < trunks.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    Network net(surrogate_network_spec(spec, trunks[i], data.dims(), data.num_classes), rng);
    train_network(net, data, train_options(spec, data.size()), rng,
                  [&](std::size_t epoch, const Network& current) {
                    probs[epoch - 1][i] = current.predict_proba(probe, rng);
                  });
    members.push_back(std::move(net));
  }
  VarianceCurve curve;
  for (const auto& epoch_probs : probs) {
    curve.variance.push_back(prediction_variance(summarize_samples(epoch_probs, false)));
  }
  return TrainedSurrogate{ParamSampler::ensemble(sampler_kind(spec.family), std::move(members)),
                          std::move(curve), 0.0};
}

// One surrogate spec against one attack; appends to `out` under `mu`.
void run_cell(const AttackInputs& attack, const SurrogateSpec& spec,
              const std::vector<std::size_t>& forward_passes, ExperimentResult& out,
              std::mutex& mu, bool keep_model, const ProgressFn& progress) {
  const std::string family = to_string(spec.family);
  const std::string trunk = spec.trunk_name();
  const std::string label = attack.target_size + "/" + family + "/" + trunk;
  const std::uint64_t seed = cell_seed(attack.seed, label);

  std::vector<FidelityRow> rows;
  for (std::size_t m : forward_passes) {
    rows.push_back(FidelityRow{attack.dataset, attack.target_size, family, trunk, m, attack.seed,
                               std::nullopt, attack.target_acc, attack.queries});
  }
  try {
    spec.validate();
    TrainedSurrogate trained =
        train_surrogate(spec, attack.surrogate_set, attack.fidelity_inputs, seed);
    for (auto& row : rows) {
      Rng rng(cell_seed(seed, "fidelity/" + std::to_string(row.m)));
      row.fidelity = evaluate_fidelity(trained.sampler.with_forward_passes(row.m),
                                       attack.fidelity_labels, attack.fidelity_inputs, rng);
    }
    std::lock_guard lock(mu);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    out.timings.push_back(TimingRow{attack.dataset, attack.target_size, family, trunk,
                                    attack.seed, trained.train_seconds});
    out.curves.push_back(
        CurveRow{attack.target_size, family, trunk, attack.seed, std::move(trained.curve)});
    if (keep_model) out.models.push_back(TrainedModel{family, trunk, std::move(trained.sampler)});
    if (progress) {
      progress(label + " seed " + std::to_string(attack.seed) + ": fidelity " +
               std::to_string(*rows.front().fidelity) + " at M=" +
               std::to_string(rows.front().m));
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(mu);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
    out.errors.push_back(CellError{attack.target_size, family, trunk, attack.seed, e.what()});
    if (progress) progress(label + " seed " + std::to_string(attack.seed) + " failed: " + e.what());
  }
}

}  // namespace

std::string to_string(TargetSize s) {
  switch (s) {
    case TargetSize::small: return "small";
    case TargetSize::medium: return "medium";
    case TargetSize::large: return "large";
  }
  return "small";
}

std::string to_string(Family f) {
  switch (f) {
    case Family::baseline: return "baseline";
    case Family::mcd: return "mcd";
    case Family::cd: return "cd";
    case Family::bnn: return "bnn";
    case Family::deep_ensemble: return "deep_ensemble";
    case Family::het_ensemble: return "het_ensemble";
  }
  return "baseline";
}

TargetSize target_size_from_string(const std::string& s) {
  for (auto v : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown target size '" + s + "'");
}

Family family_from_string(const std::string& s) {
  for (auto v : {Family::baseline, Family::mcd, Family::cd, Family::bnn, Family::deep_ensemble,
                 Family::het_ensemble}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown surrogate family '" + s + "'");
}

void TargetSpec::validate() const {
  if (lr <= 0.0) throw ConfigError("target lr must be positive");
  if (batch_size == 0) throw ConfigError("target batch_size must be positive");
  for (std::size_t w : hidden) {
    if (w == 0) throw ConfigError("target hidden width must be positive");
  }
}

TargetSpec default_target_spec(TargetSize size) {
  TargetSpec t;
  t.size = size;
  switch (size) {
    case TargetSize::small: t.hidden = {8}; break;
    case TargetSize::medium: t.hidden = {16, 16}; break;
    case TargetSize::large: t.hidden = {32, 32}; break;
  }
  return t;
}

std::size_t mlp_param_count(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                            std::size_t num_classes) {
  std::size_t n = 0, in = input_dim;
  for (std::size_t w : hidden) {
    n += (in + 1) * w;
    in = w;
  }
  return n + (in + 1) * num_classes;
}

std::vector<TrunkSpec> heterogeneous_trunks() {
  return {
      {"he0", {32, 32}, Activation::relu}, {"he1", {48}, Activation::relu},
      {"he2", {24, 24, 24}, Activation::relu}, {"he3", {32}, Activation::tanh},
      {"he4", {16, 16}, Activation::tanh}, {"he5", {64}, Activation::relu},
  };
}

std::string SurrogateSpec::trunk_name() const {
  return family == Family::het_ensemble ? kMixedTrunk : trunk.name;
}

void SurrogateSpec::validate() const {
  if (head_width == 0) throw ConfigError("surrogate head_width must be positive");
  if (forward_passes == 0) throw ConfigError("surrogate forward_passes must be at least 1");
  if (lr <= 0.0) throw ConfigError("surrogate lr must be positive");
  if (batch_size == 0) throw ConfigError("surrogate batch_size must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("surrogate dropout_rate must lie in [0, 1)");
  }
  if (kl_weight && *kl_weight < 0.0) throw ConfigError("surrogate kl_weight must be >= 0");
  if (prior_std <= 0.0) throw ConfigError("surrogate prior_std must be positive");
  if (family == Family::deep_ensemble && members == 0) {
    throw ConfigError("deep ensemble needs at least one member");
  }
  if (family == Family::het_ensemble) {
    if (member_trunks.empty()) throw ConfigError("heterogeneous ensemble has no member trunks");
    if (members != member_trunks.size()) {
      throw ConfigError("heterogeneous ensemble members must equal its trunk count");
    }
    for (const auto& t : member_trunks) {
      for (std::size_t w : t.widths) {
        if (w == 0) throw ConfigError("trunk '" + t.name + "' has a zero width");
      }
    }
  } else {
    if (trunk.name.empty()) throw ConfigError("surrogate trunk needs a name");
    for (std::size_t w : trunk.widths) {
      if (w == 0) throw ConfigError("trunk '" + trunk.name + "' has a zero width");
    }
  }
}

SurrogateSpec default_surrogate_spec(Family family, TrunkSpec trunk) {
  SurrogateSpec s;
  s.family = family;
  s.trunk = std::move(trunk);
  s.epochs = family == Family::bnn ? 50 : 30;
  if (family == Family::het_ensemble) {
    s.member_trunks = heterogeneous_trunks();
    s.members = s.member_trunks.size();
  }
  return s;
}

NetworkSpec surrogate_network_spec(const SurrogateSpec& spec, const TrunkSpec& trunk,
                                   std::size_t input_dim, std::size_t num_classes) {
  NetworkSpec net;
  std::size_t in = input_dim;
  for (std::size_t w : trunk.widths) {
    net.layers.push_back(dense(in, w, trunk.activation));
    in = w;
  }
  const std::size_t h = spec.head_width;
  std::vector<LayerSpec> head{dense(in, h, Activation::relu), dense(h, h, Activation::relu),
                              dense(h, num_classes, Activation::identity)};
  switch (spec.family) {
    case Family::mcd:
    case Family::cd:
      // Stochastic input masks on the last two head layers.
      for (std::size_t i = 1; i < head.size(); ++i) {
        head[i].kind = spec.family == Family::mcd ? LayerKind::mc_dropout
                                                  : LayerKind::concrete_dropout;
        head[i].rate = spec.dropout_rate;
      }
      break;
    case Family::bnn:
      for (auto& l : head) {
        l.kind = LayerKind::variational;
        l.prior_std = spec.prior_std;
      }
      break;
    default:
      break;
  }
  net.layers.insert(net.layers.end(), head.begin(), head.end());
  return net;
}

TrainedTarget train_target(const TargetSpec& spec, const Dataset& train, const Dataset& test,
                           std::uint64_t seed) {
  spec.validate();
  NetworkSpec net_spec;
  std::size_t in = train.dims();
  for (std::size_t w : spec.hidden) {
    net_spec.layers.push_back(dense(in, w, Activation::relu));
    in = w;
  }
  net_spec.layers.push_back(dense(in, train.num_classes, Activation::identity));
  Rng rng(seed);
  Network net(net_spec, rng);
  TrainOptions opt;
  opt.epochs = spec.epochs;
  opt.batch_size = spec.batch_size;
  opt.adam.lr = spec.lr;
  train_network(net, train, opt, rng);
  const double acc = accuracy(net, test, rng);
  return TrainedTarget{std::move(net), acc};
}

Dataset build_surrogate_set(Oracle& oracle, const Matrix& inputs, const std::string& name) {
  Dataset d;
  d.features = inputs;
  d.labels = query_in_batches(oracle, inputs);
  d.num_classes = oracle.metadata().num_classes;
  d.name = name;
  return d;
}

TrainedSurrogate train_surrogate(const SurrogateSpec& spec, const Dataset& surrogate_data,
                                 const Matrix& probe_inputs, std::uint64_t seed) {
  spec.validate();
  if (probe_inputs.cols() != surrogate_data.dims()) {
    throw ShapeError("probe inputs do not match the surrogate data width");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainedSurrogate out = is_ensemble(spec.family)
                             ? train_ensemble(spec, surrogate_data, probe_inputs, seed)
                             : train_single(spec, surrogate_data, probe_inputs, seed);
  out.train_seconds = seconds_since(start);
  return out;
}

double label_agreement(const LabelVector& a, const LabelVector& b) {
  if (a.size() != b.size()) throw ShapeError("label vectors differ in length");
  if (a.empty()) throw DomainError("fidelity over an empty input set");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double evaluate_fidelity(const ParamSampler& sampler, Oracle& oracle, const Matrix& inputs,
                         Rng& rng) {
  return evaluate_fidelity(sampler, query_in_batches(oracle, inputs), inputs, rng);
}

double evaluate_fidelity(const ParamSampler& sampler, const LabelVector& oracle_labels,
                         const Matrix& inputs, Rng& rng) {
  return label_agreement(predict_labels(sampler, inputs, rng), oracle_labels);
}

std::string DatasetSpec::name() const {
  if (kind == "csv") return std::filesystem::path(train_path).stem().string();
  return kind;
}

void DatasetSpec::validate() const {
  if (kind == "csv") {
    if (train_path.empty() || test_path.empty()) {
      throw ConfigError("csv dataset needs train_path and test_path");
    }
    return;
  }
  if (kind != "blobs" && kind != "spirals") throw ConfigError("unknown dataset kind '" + kind + "'");
  if (classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (kind == "blobs" && (train_size < 10 * classes || test_size < 10 * classes)) {
    throw ConfigError("blobs need at least 10 points per class in train and test");
  }
  if (kind == "spirals") {
    if (classes > 3) throw ConfigError("spirals support 2 or 3 classes");
    if (dims != 2) throw ConfigError("spirals are 2-D");
    if (train_size < 50 * classes || test_size < 50 * classes) {
      throw ConfigError("spirals need at least 50 points per class in train and test");
    }
  }
  if (dims == 0) throw ConfigError("dataset dims must be positive");
  if (spread < 0.0) throw ConfigError("dataset spread must be non-negative");
}

std::pair<Dataset, Dataset> make_datasets(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind == "csv") {
    Dataset train = load_csv(spec.train_path);
    Dataset test = load_csv(spec.test_path, train.num_classes);
    if (test.dims() != train.dims()) throw ConfigError("train and test csv widths differ");
    return {std::move(train), std::move(test)};
  }
  const std::uint64_t s_train = derive_seed(seed, 1), s_test = derive_seed(seed, 2);
  if (spec.kind == "blobs") {
    return {gen_blobs(spec.classes, spec.dims, spec.train_size, spec.spread, s_train),
            gen_blobs(spec.classes, spec.dims, spec.test_size, spec.spread, s_test)};
  }
  return {gen_spirals(spec.classes, spec.train_size, spec.spread, s_train),
          gen_spirals(spec.classes, spec.test_size, spec.spread, s_test)};
}

void ExperimentPlan::validate() const {
  dataset.validate();
  if (targets.empty()) throw ConfigError("experiment has no targets");
  if (surrogates.empty()) throw ConfigError("experiment has no surrogates");
  if (forward_passes.empty()) throw ConfigError("experiment has no M values");
  if (seeds.empty()) throw ConfigError("experiment has no seeds");
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
  for (std::size_t m : forward_passes) {
    if (m == 0) throw ConfigError("M values must be at least 1");
  }
  for (const auto& t : targets) t.validate();
  for (const auto& s : surrogates) s.validate();
}

void ExperimentResult::sort() {
  std::sort(rows.begin(), rows.end(), [](const FidelityRow& a, const FidelityRow& b) {
    return std::tie(a.dataset, a.target_size, a.family, a.trunk, a.seed, a.m) <
           std::tie(b.dataset, b.target_size, b.family, b.trunk, b.seed, b.m);
  });
  std::sort(timings.begin(), timings.end(), [](const TimingRow& a, const TimingRow& b) {
    return std::tie(a.dataset, a.target_size, a.family, a.trunk, a.seed) <
           std::tie(b.dataset, b.target_size, b.family, b.trunk, b.seed);
  });
  std::sort(curves.begin(), curves.end(), [](const CurveRow& a, const CurveRow& b) {
    return std::tie(a.target_size, a.family, a.trunk, a.seed) <
           std::tie(b.target_size, b.family, b.trunk, b.seed);
  });
  std::sort(errors.begin(), errors.end(), [](const CellError& a, const CellError& b) {
    return std::tie(a.target_size, a.family, a.trunk, a.seed) <
           std::tie(b.target_size, b.family, b.trunk, b.seed);
  });
  std::sort(models.begin(), models.end(), [](const TrainedModel& a, const TrainedModel& b) {
    return std::tie(a.family, a.trunk) < std::tie(b.family, b.trunk);
  });
}

AttackInputs prepare_attack(Oracle& oracle, const Dataset& train, const Dataset& test,
                            const SplitPlan& plan) {
  AttackInputs a;
  const std::size_t before = oracle.total_queries();
  a.surrogate_set = build_surrogate_set(oracle, train.features.select_rows(plan.surrogate_query),
                                        train.name);
  a.queries = oracle.total_queries() - before;
  a.fidelity_inputs = test.features.select_rows(plan.fidelity_test);
  a.fidelity_labels = query_in_batches(oracle, a.fidelity_inputs);
  return a;
}

ExperimentResult run_attack(const AttackInputs& attack, const std::vector<SurrogateSpec>& specs,
                            const std::vector<std::size_t>& forward_passes, std::size_t jobs,
                            bool keep_models, const ProgressFn& progress) {
  ExperimentResult out;
  std::mutex mu;
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    run_cell(attack, specs[i], forward_passes, out, mu, keep_models, progress);
  });
  out.sort();
  return out;
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const ProgressFn& progress) {
  plan.validate();
  const std::string dataset = plan.dataset.name();

  // Stage 1: one target per (seed, size), plus the labels the attacker collects.
  struct TargetJob {
    std::uint64_t seed;
    const TargetSpec* spec;
    std::optional<AttackInputs> attack;
    std::string error;
  };
  ExperimentResult out;
  std::mutex mu;
  std::vector<TargetJob> targets;
  for (std::uint64_t seed : plan.seeds) {
    for (const auto& t : plan.targets) targets.push_back(TargetJob{seed, &t, std::nullopt, {}});
  }
  parallel_for(targets.size(), plan.jobs, [&](std::size_t i) {
    TargetJob& job = targets[i];
    const std::string size = to_string(job.spec->size);
    try {
      auto [train, test] = make_datasets(plan.dataset, job.seed);
      const SplitPlan split = split_halves(train, test, cell_seed(job.seed, "split"));
      TrainedTarget target =
          train_target(*job.spec, train.subset(split.target_train),
                       test.subset(split.target_test), cell_seed(job.seed, "target/" + size));
      LocalOracle oracle(std::move(target.network), dataset + "-" + size);
      AttackInputs a = prepare_attack(oracle, train, test, split);
      a.dataset = dataset;
      a.target_size = size;
      a.seed = job.seed;
      a.target_acc = target.test_accuracy;
      job.attack = std::move(a);
      if (progress) {
        std::lock_guard lock(mu);
        progress("target " + size + " seed " + std::to_string(job.seed) + ": test accuracy " +
                 std::to_string(target.test_accuracy));
      }
    } catch (const std::exception& e) {
      job.error = e.what();
      if (progress) {
        std::lock_guard lock(mu);
        progress("target " + size + " seed " + std::to_string(job.seed) + " failed: " + e.what());
      }
    }
  });

  // Stage 2: every surrogate cell of every prepared attack.
  std::vector<std::pair<const AttackInputs*, const SurrogateSpec*>> cells;
  for (const auto& job : targets) {
    if (!job.attack) {
      const std::string size = to_string(job.spec->size);
      for (const auto& s : plan.surrogates) {
        for (std::size_t m : plan.forward_passes) {
          out.rows.push_back(FidelityRow{dataset, size, to_string(s.family), s.trunk_name(), m,
                                         job.seed, std::nullopt, std::nullopt, 0});
        }
        out.errors.push_back(CellError{size, to_string(s.family), s.trunk_name(), job.seed,
                                       "target stage failed: " + job.error});
      }
      continue;
    }
    for (const auto& s : plan.surrogates) cells.emplace_back(&*job.attack, &s);
  }
  parallel_for(cells.size(), plan.jobs, [&](std::size_t i) {
    run_cell(*cells[i].first, *cells[i].second, plan.forward_passes, out, mu, false, progress);
  });
  out.sort();
  return out;
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& tag) {
  // FNV-1a of the tag, mixed with the run seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(seed, h);
}

void parallel_for(std::size_t count, std::size_t jobs,
                  const std::function<void(std::size_t)>& task) {
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace steal_lab
