#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "steal_lab/errors.hpp"
#include "steal_lab/extraction.hpp"
#include "steal_lab/oracle_http.hpp"
#include "steal_lab/tensor.hpp"
#include "steal_lab/training.hpp"

using namespace steal_lab;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Prepared {
  Dataset train, test;
  SplitPlan split;
};

Prepared prepare(const DatasetSpec& spec, std::uint64_t seed) {
  auto [train, test] = make_datasets(spec, seed);
  SplitPlan split = split_halves(train, test, seed);
  return {std::move(train), std::move(test), std::move(split)};
}

double target_accuracy(const TargetSpec& t, const DatasetSpec& d, std::uint64_t seed) {
  const Prepared p = prepare(d, seed);
  return train_target(t, p.train.subset(p.split.target_train), p.test.subset(p.split.target_test),
                      seed)
      .test_accuracy;
}

TrunkSpec arch_a() { return {"arch_A", {32, 32}, Activation::relu}; }

// Same weights with the output rows rotated, so it predicts (y + 1) mod k.
Network shift_classes(const Network& net) {
  Network shifted = net;
  Layer& out = shifted.layer(shifted.layer_count() - 1);
  const std::size_t k = out.out_dim(), in = out.in_dim();
  const std::vector<double> orig(out.params().begin(), out.params().end());
  auto p = out.params();
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t from = (c + k - 1) % k;
    for (std::size_t j = 0; j < in; ++j) p[c * in + j] = orig[from * in + j];
    p[k * in + c] = orig[k * in + from];
  }
  return shifted;
}

ExperimentPlan tiny_plan() {
  ExperimentPlan plan;
  plan.dataset.train_size = 400;
  plan.dataset.test_size = 200;
  TargetSpec t = default_target_spec(TargetSize::small);
  t.epochs = 10;
  t.lr = 0.01;
  plan.targets = {t};
  for (Family f : {Family::baseline, Family::mcd, Family::deep_ensemble}) {
    SurrogateSpec s = default_surrogate_spec(f, arch_a());
    s.epochs = 3;
    s.members = 2;
    s.forward_passes = 5;
    plan.surrogates.push_back(s);
  }
  plan.forward_passes = {5, 2};
  plan.seeds = {1, 2};
  return plan;
}

}  // namespace

TEST_CASE("target sizes strictly increase in parameter count") {
  std::size_t prev = 0;
  for (auto size : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
    const std::size_t n = mlp_param_count(2, default_target_spec(size).hidden, 3);
    CHECK(n > prev);
    prev = n;
  }
  CHECK(mlp_param_count(2, {8}, 3) == 51);
  CHECK(target_size_from_string("medium") == TargetSize::medium);
  CHECK_THROWS_AS(target_size_from_string("huge"), ConfigError);
  CHECK(family_from_string("het_ensemble") == Family::het_ensemble);
}

TEST_CASE("surrogate defaults and network layouts") {
  CHECK(default_surrogate_spec(Family::bnn, arch_a()).epochs == 50);
  CHECK(default_surrogate_spec(Family::mcd, arch_a()).epochs == 30);
  CHECK(default_surrogate_spec(Family::deep_ensemble, arch_a()).members == 6);
  const SurrogateSpec he = default_surrogate_spec(Family::het_ensemble, arch_a());
  CHECK(he.members == 6);
  CHECK(he.trunk_name() == kMixedTrunk);
  std::set<std::pair<std::vector<std::size_t>, Activation>> distinct;
  for (const auto& t : he.member_trunks) distinct.insert({t.widths, t.activation});
  CHECK(distinct.size() == 6);

  const SurrogateSpec mcd = default_surrogate_spec(Family::mcd, arch_a());
  const NetworkSpec net = surrogate_network_spec(mcd, mcd.trunk, 2, 3);
  REQUIRE(net.layers.size() == 5);
  CHECK(net.layers[0].kind == LayerKind::dense);
  CHECK(net.layers[2].kind == LayerKind::dense);
  CHECK(net.layers[3].kind == LayerKind::mc_dropout);
  CHECK(net.layers[4].kind == LayerKind::mc_dropout);
  CHECK(net.layers[3].rate == 0.5);
  CHECK(net.output_dim() == 3);

  const SurrogateSpec bnn = default_surrogate_spec(Family::bnn, arch_a());
  const NetworkSpec bnet = surrogate_network_spec(bnn, bnn.trunk, 2, 3);
  CHECK(bnet.layers[1].kind == LayerKind::dense);
  for (std::size_t i = 2; i < 5; ++i) CHECK(bnet.layers[i].kind == LayerKind::variational);

  SurrogateSpec bad = mcd;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("small target reaches 0.90 on blobs") {
  DatasetSpec d;  // blobs, 3 classes, 2-D, 2000 train points
  std::vector<double> acc;
  for (std::uint64_t s = 0; s < 10; ++s) {
    acc.push_back(target_accuracy(default_target_spec(TargetSize::small), d, s));
  }
  CHECK(median(acc) >= 0.90);
}

TEST_CASE("target accuracy grows with size on spirals") {
  DatasetSpec d;
  d.kind = "spirals";
  d.spread = 0.02;
  std::vector<double> med;
  for (auto size : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
    std::vector<double> acc;
    for (std::uint64_t s = 0; s < 10; ++s) {
      acc.push_back(target_accuracy(default_target_spec(size), d, s));
    }
    med.push_back(median(acc));
  }
  CHECK(med[0] <= med[1]);
  CHECK(med[1] <= med[2]);
}

TEST_CASE("untrained target is near chance") {
  DatasetSpec d;
  TargetSpec t = default_target_spec(TargetSize::small);
  t.epochs = 0;
  std::vector<double> acc;
  for (std::uint64_t s = 0; s < 10; ++s) acc.push_back(target_accuracy(t, d, s));
  CHECK(std::abs(median(acc) - 1.0 / 3.0) <= 0.1);
}

TEST_CASE("surrogate set holds the oracle's labels") {
  DatasetSpec d;
  d.train_size = 600;
  d.test_size = 300;
  const Prepared p = prepare(d, 3);
  TargetSpec ts = default_target_spec(TargetSize::small);
  ts.epochs = 5;
  TrainedTarget t = train_target(ts, p.train.subset(p.split.target_train),
                                 p.test.subset(p.split.target_test), 3);
  const Network net = t.network;
  LocalOracle oracle(net, "t");

  const Matrix own = p.train.features.select_rows(p.split.target_train);
  const Dataset self = build_surrogate_set(oracle, own);
  Rng rng(0);
  CHECK(self.labels == argmax_rows(net.forward(own, rng)));
  CHECK(self.size() == own.rows());
  CHECK(self.features == own);
  CHECK(oracle.total_queries() == own.rows());
  CHECK(self.num_classes == 3);
}

TEST_CASE("attack inputs never include target_train rows or fidelity labels in training") {
  DatasetSpec d;
  d.train_size = 600;
  d.test_size = 300;
  const Prepared p = prepare(d, 4);
  TargetSpec ts = default_target_spec(TargetSize::small);
  ts.epochs = 3;
  LocalOracle oracle(train_target(ts, p.train.subset(p.split.target_train),
                                  p.test.subset(p.split.target_test), 4)
                         .network,
                     "t");
  const AttackInputs a = prepare_attack(oracle, p.train, p.test, p.split);
  CHECK(a.queries == p.split.surrogate_query.size());
  CHECK(oracle.total_queries() == p.split.surrogate_query.size() + p.split.fidelity_test.size());
  CHECK(a.surrogate_set.features == p.train.features.select_rows(p.split.surrogate_query));
  CHECK(a.fidelity_inputs == p.test.features.select_rows(p.split.fidelity_test));
  std::vector<std::size_t> overlap;
  std::vector<std::size_t> tt = p.split.target_train, sq = p.split.surrogate_query;
  std::sort(tt.begin(), tt.end());
  std::sort(sq.begin(), sq.end());
  std::set_intersection(tt.begin(), tt.end(), sq.begin(), sq.end(), std::back_inserter(overlap));
  CHECK(overlap.empty());
}

TEST_CASE("remote and in-process oracles give identical surrogate sets") {
  DatasetSpec d;
  d.train_size = 600;
  d.test_size = 300;
  const Prepared p = prepare(d, 5);
  TargetSpec ts = default_target_spec(TargetSize::small);
  ts.epochs = 5;
  const Network net = train_target(ts, p.train.subset(p.split.target_train),
                                   p.test.subset(p.split.target_test), 5)
                          .network;
  OracleServer server(std::make_shared<LocalOracle>(net, "t"));
  const int port = server.bind("127.0.0.1", 0);
  server.start_background();
  RemoteOracle remote("http://127.0.0.1:" + std::to_string(port));
  LocalOracle local(net, "t");
  const AttackInputs ra = prepare_attack(remote, p.train, p.test, p.split);
  const AttackInputs la = prepare_attack(local, p.train, p.test, p.split);
  CHECK(ra.surrogate_set == la.surrogate_set);
  CHECK(ra.fidelity_labels == la.fidelity_labels);
  CHECK(ra.queries == la.queries);
}

TEST_CASE("fidelity") {
  SUBCASE("hand computed agreement") {
    CHECK(label_agreement({0, 1, 1, 2}, {0, 1, 2, 2}) == 0.75);
    CHECK_THROWS_AS(label_agreement({0}, {0, 1}), ShapeError);
    CHECK_THROWS_AS(label_agreement({}, {}), DomainError);
  }

  DatasetSpec d;
  d.train_size = 600;
  d.test_size = 300;
  const Prepared p = prepare(d, 6);
  TargetSpec ts = default_target_spec(TargetSize::small);
  ts.epochs = 10;
  const Network net = train_target(ts, p.train.subset(p.split.target_train),
                                   p.test.subset(p.split.target_test), 6)
                          .network;
  LocalOracle oracle(net, "t");
  const Matrix x = p.test.features.select_rows(p.split.fidelity_test);
  Rng rng(1);

  SUBCASE("target against itself is exactly 1") {
    CHECK(evaluate_fidelity(ParamSampler::single(SamplerKind::deterministic, net, 50), oracle, x,
                            rng) == 1.0);
  }
  SUBCASE("class-shifted surrogate never agrees") {
    const LabelVector truth = query_in_batches(oracle, x);
    const Network shifted = shift_classes(net);
    Rng r(0);
    const LabelVector pred = argmax_rows(shifted.forward(x, r));
    for (std::size_t i = 0; i < pred.size(); ++i) CHECK(pred[i] == (truth[i] + 1) % 3);
    CHECK(evaluate_fidelity(ParamSampler::single(SamplerKind::deterministic, shifted, 1), truth,
                            x, rng) == 0.0);
  }
  SUBCASE("row order does not matter") {
    const LabelVector truth = query_in_batches(oracle, x);
    std::vector<std::size_t> perm(x.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelVector permuted;
    for (std::size_t i : perm) permuted.push_back(truth[i]);

    Rng init(2);
    SurrogateSpec s = default_surrogate_spec(Family::baseline, arch_a());
    Network other(surrogate_network_spec(s, s.trunk, 2, 3), init);
    std::vector<Network> members{net, other, shift_classes(net)};
    for (const ParamSampler& sampler :
         {ParamSampler::single(SamplerKind::deterministic, other, 1),
          ParamSampler::ensemble(SamplerKind::deep_ensemble, members)}) {
      Rng a(3), b(3);
      CHECK(evaluate_fidelity(sampler, truth, x, a) ==
            evaluate_fidelity(sampler, permuted, x.select_rows(perm), b));
    }
  }
}

TEST_CASE("variance curves") {
  DatasetSpec d;
  const Prepared p = prepare(d, 7);
  TargetSpec ts = default_target_spec(TargetSize::small);
  LocalOracle oracle(train_target(ts, p.train.subset(p.split.target_train),
                                  p.test.subset(p.split.target_test), 7)
                         .network,
                     "t");
  const AttackInputs a = prepare_attack(oracle, p.train, p.test, p.split);

  SUBCASE("baseline is identically zero") {
    const SurrogateSpec s = default_surrogate_spec(Family::baseline, arch_a());
    const TrainedSurrogate t = train_surrogate(s, a.surrogate_set, a.fidelity_inputs, 1);
    REQUIRE(t.curve.variance.size() == s.epochs);
    for (double v : t.curve.variance) CHECK(v == 0.0);
    CHECK(t.sampler.kind() == SamplerKind::deterministic);
  }
  SUBCASE("ensembles record one entry per epoch") {
    SurrogateSpec s = default_surrogate_spec(Family::deep_ensemble, arch_a());
    s.epochs = 4;
    s.members = 3;
    const TrainedSurrogate t = train_surrogate(s, a.surrogate_set, a.fidelity_inputs, 1);
    CHECK(t.curve.variance.size() == 4);
    CHECK(t.sampler.members().size() == 3);
    for (double v : t.curve.variance) CHECK(v >= 0.0);
    CHECK(t.curve.variance.front() > 0.0);
  }
}

TEST_CASE("mcd variance decays after its peak") {
  std::vector<double> gap;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DatasetSpec d;
    d.train_size = 1000;
    d.test_size = 500;
    const Prepared p = prepare(d, seed);
    LocalOracle oracle(train_target(default_target_spec(TargetSize::small),
                                    p.train.subset(p.split.target_train),
                                    p.test.subset(p.split.target_test), seed)
                           .network,
                       "t");
    const AttackInputs a = prepare_attack(oracle, p.train, p.test, p.split);
    SurrogateSpec s = default_surrogate_spec(Family::mcd, arch_a());
    s.forward_passes = 20;
    const auto curve =
        train_surrogate(s, a.surrogate_set, a.fidelity_inputs, seed).curve.variance;
    gap.push_back(*std::max_element(curve.begin(), curve.end()) - curve.back());
  }
  CHECK(median(gap) > 0.0);
}

TEST_CASE("variational training loss trends down with the default penalty weight") {
  const Dataset data = gen_blobs(3, 2, 600, 0.4, 8);
  SurrogateSpec s = default_surrogate_spec(Family::bnn, arch_a());
  Rng rng(8);
  Network net(surrogate_network_spec(s, s.trunk, 2, 3), rng);
  TrainOptions opt;
  opt.epochs = 50;
  opt.kl_weight = 1.0 / static_cast<double>(batches_per_epoch(data.size(), opt.batch_size));
  const auto hist = train_network(net, data, opt, rng);
  auto window = [&](std::size_t begin) {
    double s = 0.0;
    for (std::size_t e = begin; e < begin + 5; ++e) s += hist[e].loss;
    return s / 5.0;
  };
  CHECK(window(45) < window(0));
}

TEST_CASE("experiment grid") {
  const ExperimentPlan plan = tiny_plan();
  const ExperimentResult a = run_experiment(plan);
  CHECK(a.errors.empty());
  CHECK(a.rows.size() == plan.seeds.size() * plan.targets.size() * plan.surrogates.size() *
                             plan.forward_passes.size());
  CHECK(a.timings.size() == plan.seeds.size() * plan.surrogates.size());
  CHECK(a.curves.size() == plan.seeds.size() * plan.surrogates.size());
  for (const auto& r : a.rows) {
    REQUIRE(r.fidelity);
    CHECK(*r.fidelity >= 0.0);
    CHECK(*r.fidelity <= 1.0);
    CHECK(r.queries == 200);
  }

  SUBCASE("repeatable and independent of the job count") {
    ExperimentPlan parallel = plan;
    parallel.jobs = 3;
    const ExperimentResult b = run_experiment(parallel);
    REQUIRE(b.rows.size() == a.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].family == b.rows[i].family);
      CHECK(a.rows[i].fidelity == b.rows[i].fidelity);
      CHECK(a.rows[i].target_acc == b.rows[i].target_acc);
    }
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
      CHECK(a.curves[i].curve.variance == b.curves[i].curve.variance);
    }
  }
  SUBCASE("a failing cell is recorded and the rest continue") {
    ExperimentPlan broken = plan;
    broken.surrogates[1].kl_weight = std::numeric_limits<double>::quiet_NaN();  // diverges
    ExperimentResult r = run_experiment(broken);
    CHECK(r.rows.size() == a.rows.size());
    CHECK(r.errors.size() == plan.seeds.size());
    for (const auto& e : r.errors) CHECK(e.family == "mcd");
    for (const auto& row : r.rows) CHECK(row.fidelity.has_value() == (row.family != "mcd"));
  }
}

TEST_CASE("cell seeds and the job runner") {
  CHECK(cell_seed(1, "a") == cell_seed(1, "a"));
  CHECK(cell_seed(1, "a") != cell_seed(1, "b"));
  CHECK(cell_seed(1, "a") != cell_seed(2, "a"));

  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 7) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}
