#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <thread>
#include <type_traits>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "steal_lab/datasets.hpp"
#include "steal_lab/errors.hpp"
#include "steal_lab/oracle.hpp"
#include "steal_lab/oracle_http.hpp"
#include "steal_lab/tensor.hpp"
#include "steal_lab/training.hpp"

using namespace steal_lab;

// Hard-label opacity: the only data path out of an oracle is a label vector.
static_assert(std::is_same_v<decltype(std::declval<Oracle&>().query(std::declval<const Matrix&>())),
                             LabelVector>);
static_assert(std::is_same_v<decltype(std::declval<RemoteOracle&>().query(
                                 std::declval<const Matrix&>())),
                             LabelVector>);
static_assert(std::is_same_v<decltype(std::declval<LocalOracle&>().query(
                                 std::declval<const Matrix&>())),
                             LabelVector>);
static_assert(std::is_abstract_v<Oracle>);

namespace {

Network fixed_probability_target(std::vector<double> probs, std::size_t input_dim) {
  LayerSpec s;
  s.in = input_dim;
  s.out = probs.size();
  DenseLayer layer(s);
  auto p = layer.params();
  std::fill(p.begin(), p.end(), 0.0);
  for (std::size_t j = 0; j < probs.size(); ++j) p[s.in * s.out + j] = std::log(probs[j]);
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(layer.clone());
  return Network(std::move(layers));
}

Network small_target(std::uint64_t seed, const Dataset& data, std::size_t epochs = 20) {
  NetworkSpec spec;
  LayerSpec h;
  h.in = data.dims();
  h.out = 8;
  h.activation = Activation::relu;
  LayerSpec o;
  o.in = 8;
  o.out = data.num_classes;
  spec.layers = {h, o};
  Rng rng(seed);
  Network net(spec, rng);
  TrainOptions opt;
  opt.epochs = epochs;
  opt.adam.lr = 0.01;
  train_network(net, data, opt, rng);
  return net;
}

struct Served {
  std::shared_ptr<LocalOracle> local;
  OracleServer server;
  std::string endpoint;

  explicit Served(std::shared_ptr<LocalOracle> oracle)
      : local(oracle), server(std::move(oracle)) {
    const int port = server.bind("127.0.0.1", 0);
    server.start_background();
    endpoint = "http://127.0.0.1:" + std::to_string(port);
  }
};

}  // namespace

TEST_CASE("query returns the argmax label") {
  LocalOracle oracle(fixed_probability_target({0.2, 0.5, 0.3}, 2), "fixed");
  CHECK(oracle.query(Matrix{{0, 0}, {5, -5}}) == LabelVector{1, 1});
  CHECK(oracle.total_queries() == 2);
  CHECK(oracle.ledger().log().size() == 1);

  LocalOracle tie(fixed_probability_target({0.4, 0.4, 0.2}, 1), "tie");
  CHECK(tie.query(Matrix{{1}}) == LabelVector{0});
}

TEST_CASE("query validates shape and batch size") {
  LocalOracle oracle(fixed_probability_target({0.5, 0.5}, 3), "t", 4);
  CHECK_THROWS_AS(oracle.query(Matrix(2, 2)), ProtocolError);
  CHECK_THROWS_AS(oracle.query(Matrix(5, 3)), ProtocolError);
  CHECK(oracle.total_queries() == 0);
  CHECK(query_in_batches(oracle, Matrix(10, 3), 4).size() == 10);
  CHECK(oracle.total_queries() == 10);
  CHECK(oracle.ledger().log().size() == 3);

  Rng rng(1);
  NetworkSpec stochastic;
  LayerSpec l;
  l.kind = LayerKind::mc_dropout;
  l.in = 2;
  l.out = 2;
  stochastic.layers = {l};
  CHECK_THROWS_AS(LocalOracle(Network(stochastic, rng), "s"), ConfigError);
}

TEST_CASE("oracle labels on the target's own training data match its training accuracy") {
  const Dataset data = gen_blobs(3, 2, 300, 0.5, 3);
  const Network target = small_target(4, data);
  Rng rng(0);
  const double acc = accuracy(target, data, rng);
  LocalOracle oracle(target, "blobs-small");
  const LabelVector labels = query_in_batches(oracle, data.features);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) agree += labels[i] == data.labels[i];
  CHECK(static_cast<double>(agree) / static_cast<double>(labels.size()) == acc);
}

TEST_CASE("batch splitting never changes labels") {
  const Dataset data = gen_blobs(3, 2, 200, 0.8, 5);
  LocalOracle oracle(small_target(6, data, 5), "split");
  const LabelVector whole = oracle.query(data.features);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cut = rng() % data.size();
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < data.size(); ++i) (i < cut ? a : b).push_back(i);
    LabelVector joined = oracle.query(data.features.select_rows(a));
    const LabelVector tail = oracle.query(data.features.select_rows(b));
    joined.insert(joined.end(), tail.begin(), tail.end());
    CHECK(joined == whole);
  }
}

TEST_CASE("remote oracle mirrors the in-process oracle") {
  const Dataset data = gen_blobs(3, 2, 400, 0.8, 7);
  const Network target = small_target(8, data);
  Served served(std::make_shared<LocalOracle>(target, "remote-target"));
  LocalOracle local(target, "remote-target");

  RemoteOracle remote(served.endpoint, OracleMetadata{2, 3, ""});
  CHECK(remote.metadata() == OracleMetadata{2, 3, "remote-target"});
  CHECK(remote.query(data.features) == local.query(data.features));
  CHECK(remote.total_queries() == 400);
  CHECK(remote.server_total_queries() == 400);

  // Values that need all 17 significant digits survive the text encoding.
  Matrix awkward{{0.1 + 0.2, -1.0 / 3.0}, {std::nextafter(1.0, 2.0), 1e-300}};
  CHECK(remote.query(awkward) == local.query(awkward));

  CHECK_THROWS_AS(RemoteOracle(served.endpoint, OracleMetadata{5, 3, ""}), ConfigError);
  CHECK_THROWS_AS(remote.query(Matrix(2, 3)), ProtocolError);
  try {
    remote.query(Matrix(1025, 2));
    FAIL("oversized batch accepted");
  } catch (const ProtocolError& e) {
    CHECK(e.code() == "batch_too_large");
  }
}

TEST_CASE("server protocol errors are machine readable") {
  Served served(std::make_shared<LocalOracle>(fixed_probability_target({0.3, 0.7}, 2), "p"));
  httplib::Client cli("127.0.0.1", served.server.port());

  auto md = cli.Get("/metadata");
  REQUIRE(md);
  CHECK(md->status == 200);
  CHECK(nlohmann::json::parse(md->body) ==
        nlohmann::json{{"input_dim", 2}, {"num_classes", 2}, {"name", "p"}});

  auto ok = cli.Post("/query", R"({"inputs": [[1, 2], [3, 4], [5, 6]]})", "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(nlohmann::json::parse(ok->body)["labels"] == nlohmann::json{1, 1, 1});

  auto expect = [&](const std::string& body, int status, const std::string& code) {
    auto res = cli.Post("/query", body, "application/json");
    REQUIRE(res);
    CHECK(res->status == status);
    CHECK(nlohmann::json::parse(res->body)["error"]["code"] == code);
  };
  expect("not json", 400, "malformed_json");
  expect(R"({"rows": []})", 400, "malformed_request");
  expect(R"({"inputs": [[1, 2, 3]]})", 400, "dimension_mismatch");
  expect(R"({"inputs": [[1, "x"]]})", 400, "malformed_request");

  auto missing = cli.Get("/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  auto stats = cli.Get("/stats");
  REQUIRE(stats);
  CHECK(nlohmann::json::parse(stats->body)["total_queries"] == 3);
}

TEST_CASE("ledger is conserved under 16 concurrent clients") {
  const Dataset data = gen_blobs(3, 2, 300, 0.8, 11);
  const Network target = small_target(12, data, 3);
  Served served(std::make_shared<LocalOracle>(target, "concurrent"));
  LocalOracle reference(target, "reference");
  const LabelVector expected = reference.query(data.features);

  std::atomic<std::size_t> sent{0};
  std::atomic<int> mismatches{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < 16; ++c) {
    clients.emplace_back([&, c] {
      RemoteOracle remote(served.endpoint);
      for (int b = 0; b < 100; ++b) {
        const std::size_t begin = static_cast<std::size_t>((c * 7 + b * 13) % 250);
        const std::size_t rows = 1 + static_cast<std::size_t>((c + b) % 50);
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < begin + rows; ++i) idx.push_back(i);
        const LabelVector got = remote.query(data.features.select_rows(idx));
        for (std::size_t i = 0; i < rows; ++i) mismatches += got[i] != expected[begin + i];
        sent += rows;
      }
    });
  }
  for (auto& t : clients) t.join();
  CHECK(mismatches == 0);
  CHECK(served.local->total_queries() == sent.load());
  CHECK(served.local->ledger().log().size() == 1600);
}

TEST_CASE("unreachable endpoints fail with a connection error") {
  // Bind a port without listening, then release it, so connects are refused.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  socklen_t len = sizeof addr;
  REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) == 0);
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  RemoteOptions fast;
  fast.connect_timeout_s = 0.2;
  CHECK_THROWS_AS(RemoteOracle("http://127.0.0.1:" + std::to_string(port), std::nullopt, fast),
                  ConnectionError);
  CHECK_THROWS_AS(parse_endpoint("ftp://x:1"), ConfigError);
  CHECK_THROWS_AS(parse_endpoint("localhost"), ConfigError);
  CHECK(parse_endpoint("http://localhost:8080/") == std::pair<std::string, int>{"localhost", 8080});
  CHECK(parse_endpoint("10.0.0.1:9") == std::pair<std::string, int>{"10.0.0.1", 9});
}
