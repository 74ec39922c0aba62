#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include "steal_lab/oracle.hpp"

namespace steal_lab {

// Wire protocol (JSON over HTTP/1.1):
//   GET  /metadata -> {"input_dim": d, "num_classes": k, "name": s}
//   POST /query    {"inputs": [[f64,...],...]} -> {"labels": [int,...]}
//   GET  /stats    -> {"total_queries": n}
// Errors are 4xx with {"error": {"code": c, "message": m}}.

struct ServerOptions {
  std::size_t worker_threads = 32;
};

/// Serves a LocalOracle over HTTP. The model is read-only after construction,
/// so concurrent requests cannot influence each other's labels.
class OracleServer {
 public:
  OracleServer(std::shared_ptr<LocalOracle> oracle, ServerOptions options = {});
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void listen();
  /// Serves on a background thread; returns once the server accepts requests.
  void start_background();
  void stop();

  int port() const { return port_; }
  const LocalOracle& oracle() const { return *oracle_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<LocalOracle> oracle_;
  int port_ = -1;
};

struct RemoteOptions {
  int retries = 3;
  double connect_timeout_s = 2.0;
  double read_timeout_s = 30.0;
};

/// HTTP client for an OracleServer, implementing the same Oracle interface.
class RemoteOracle : public Oracle {
 public:
  /// Fetches metadata on construction. Throws ConnectionError when the
  /// endpoint is unreachable and ConfigError when `expected` disagrees on
  /// input_dim or num_classes.
  explicit RemoteOracle(const std::string& endpoint,
                        std::optional<OracleMetadata> expected = std::nullopt,
                        RemoteOptions options = {});
  ~RemoteOracle() override;

  OracleMetadata metadata() const override { return metadata_; }
  LabelVector query(const Matrix& inputs) override;
  std::size_t total_queries() const override { return ledger_.total(); }

  /// Server-side query total from GET /stats.
  std::size_t server_total_queries();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  OracleMetadata metadata_;
  QueryLedger ledger_;
};

/// Splits "http://host:port" (scheme optional) into host and port.
std::pair<std::string, int> parse_endpoint(const std::string& endpoint);

}  // namespace steal_lab
