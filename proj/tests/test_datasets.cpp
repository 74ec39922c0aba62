#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "steal_lab/datasets.hpp"
#include "steal_lab/errors.hpp"
#include "steal_lab/training.hpp"

using namespace steal_lab;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// Oracle classifier: assign each point to the nearest class centroid.
double nearest_centroid_accuracy(const Dataset& ds) {
  Matrix centroids(ds.num_classes, ds.dims());
  std::vector<double> counts(ds.num_classes, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    counts[c] += 1;
    for (std::size_t j = 0; j < ds.dims(); ++j) centroids(c, j) += ds.features(i, j);
  }
  for (std::size_t c = 0; c < ds.num_classes; ++c)
    for (std::size_t j = 0; j < ds.dims(); ++j) centroids(c, j) /= counts[c];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < ds.dims(); ++j) {
        d += (ds.features(i, j) - centroids(c, j)) * (ds.features(i, j) - centroids(c, j));
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += static_cast<int>(best) == ds.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double train_and_score(const std::vector<std::size_t>& hidden, const Dataset& train,
                       const Dataset& test, std::uint64_t seed) {
  NetworkSpec spec;
  std::size_t in = train.dims();
  for (std::size_t w : hidden) {
    LayerSpec l;
    l.in = in;
    l.out = w;
    l.activation = Activation::relu;
    spec.layers.push_back(l);
    in = w;
  }
  LayerSpec out;
  out.in = in;
  out.out = train.num_classes;
  spec.layers.push_back(out);
  Rng rng(seed);
  Network net(spec, rng);
  TrainOptions opt;
  opt.epochs = 150;
  opt.adam.lr = 0.01;
  train_network(net, train, opt, rng);
  return accuracy(net, test, rng);
}

}  // namespace

TEST_CASE("gen_blobs") {
  const Dataset a = gen_blobs(3, 2, 300, 0.5, 11);
  CHECK(a == gen_blobs(3, 2, 300, 0.5, 11));
  CHECK(!(a == gen_blobs(3, 2, 300, 0.5, 12)));
  std::vector<int> counts(3, 0);
  for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
  CHECK(counts == std::vector<int>{100, 100, 100});
  CHECK_NOTHROW(a.validate());

  const Dataset odd = gen_blobs(4, 3, 103, 0.5, 1);
  std::vector<int> c4(4, 0);
  for (int y : odd.labels) ++c4[static_cast<std::size_t>(y)];
  CHECK(*std::max_element(c4.begin(), c4.end()) - *std::min_element(c4.begin(), c4.end()) <= 1);

  CHECK(nearest_centroid_accuracy(gen_blobs(3, 2, 600, 0.01, 5)) > 0.99);
  CHECK(nearest_centroid_accuracy(gen_blobs(4, 1, 400, 0.01, 5)) > 0.99);

  CHECK_THROWS_AS(gen_blobs(1, 2, 100, 0.1, 0), DomainError);
  CHECK_THROWS_AS(gen_blobs(3, 2, 29, 0.1, 0), DomainError);
}

TEST_CASE("gen_spirals lies on the arms without noise") {
  const Dataset s = gen_spirals(3, 300, 0.0, 4);
  CHECK(s == gen_spirals(3, 300, 0.0, 4));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = s.features(i, 0), y = s.features(i, 1);
    const double t = std::hypot(x, y);
    const double angle = spiral_angle(static_cast<std::size_t>(s.labels[i]), 3, t);
    CHECK(std::hypot(x - t * std::cos(angle), y - t * std::sin(angle)) < 1e-12);
  }
  CHECK_THROWS_AS(gen_spirals(4, 400, 0.0, 0), DomainError);
  CHECK_THROWS_AS(gen_spirals(2, 99, 0.0, 0), DomainError);
}

TEST_CASE("spirals need a nonlinear classifier") {
  const Dataset train = gen_spirals(2, 600, 0.02, 1);
  const Dataset test = gen_spirals(2, 400, 0.02, 2);
  const double linear = train_and_score({}, train, test, 3);
  const double mlp = train_and_score({32, 32}, train, test, 3);
  MESSAGE("linear " << linear << " mlp " << mlp);
  CHECK(linear < 0.7);
  CHECK(mlp > 0.9);
}

TEST_CASE("split_halves") {
  const Dataset train = gen_blobs(2, 2, 100, 0.3, 1);
  const Dataset test = gen_blobs(2, 2, 50, 0.3, 2);
  const SplitPlan plan = split_halves(train, test, 9);
  CHECK(plan.target_train.size() == 50);
  CHECK(plan.surrogate_query.size() == 50);
  CHECK(plan.target_test.size() == 25);
  CHECK(plan.fidelity_test.size() == 25);
  CHECK(plan.target_test.front() == 0);
  CHECK(plan.fidelity_test.front() == 25);
  CHECK(plan == split_halves(train, test, 9));
  CHECK(!(plan == split_halves(train, test, 10)));
}

TEST_CASE("split_halves partitions both index spaces for any size") {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n_train = 20 + rng() % 300, n_test = 20 + rng() % 200;
    const Dataset train = gen_blobs(2, 1, n_train, 0.1, trial);
    const Dataset test = gen_blobs(2, 1, n_test, 0.1, trial + 100);
    const SplitPlan plan = split_halves(train, test, trial);

    std::set<std::size_t> tr(plan.target_train.begin(), plan.target_train.end());
    std::set<std::size_t> sq(plan.surrogate_query.begin(), plan.surrogate_query.end());
    CHECK(tr.size() == plan.target_train.size());
    CHECK(sq.size() == plan.surrogate_query.size());
    for (std::size_t i : sq) CHECK(tr.count(i) == 0);
    CHECK(tr.size() + sq.size() == n_train);
    CHECK(plan.target_train.size() == (n_train + 1) / 2);

    std::set<std::size_t> tt(plan.target_test.begin(), plan.target_test.end());
    std::set<std::size_t> ft(plan.fidelity_test.begin(), plan.fidelity_test.end());
    for (std::size_t i : ft) CHECK(tt.count(i) == 0);
    CHECK(tt.size() + ft.size() == n_test);
    CHECK(*tt.rbegin() < *ft.begin());
  }
}

TEST_CASE("csv round trip and errors") {
  TempDir dir("steal_lab_csv_test");
  const Dataset blobs = gen_blobs(3, 2, 300, 0.7, 8);
  save_csv(blobs, dir.path / "blobs.csv");
  const Dataset back = load_csv(dir.path / "blobs.csv");
  CHECK(back == blobs);
  CHECK(back.name == "blobs");
  CHECK(load_csv(dir.path / "blobs.csv", 3) == blobs);

  auto expect_line = [&](const std::string& text, std::size_t line,
                         std::optional<std::size_t> k = std::nullopt) {
    write_file(dir.path / "bad.csv", text);
    try {
      load_csv(dir.path / "bad.csv", k);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == line);
    }
  };
  expect_line("f0,f1,label\n0.1,0.2,0\n0.3,0.4,1\n0.5,0.6,3\n", 4, 3);
  expect_line("f0,f1,label\n0.1,0.2,0\n0.3,0.4\n", 3);
  expect_line("f0,f1,label\n0.1,abc,0\n", 2);
  expect_line("f0,f1,label\n0.1,0.2,-1\n", 2);
  expect_line("", 1);
  expect_line("x,y,label\n1,2,0\n", 1);
  write_file(dir.path / "gap.csv", "f0,label\n0.1,0\n0.2,2\n");
  CHECK_THROWS_AS(load_csv(dir.path / "gap.csv"), ParseError);
  write_file(dir.path / "header_only.csv", "f0,label\n");
  CHECK_THROWS_AS(load_csv(dir.path / "header_only.csv"), ParseError);
}
