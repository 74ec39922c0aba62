#include "steal_lab/oracle_http.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(), kJson);
}

int status_for(const std::string& code) { return code == "batch_too_large" ? 413 : 400; }

Matrix parse_inputs(const json& body, std::size_t input_dim) {
  if (!body.is_object() || !body.contains("inputs") || !body["inputs"].is_array()) {
    throw ProtocolError("malformed_request", "body must be an object with an 'inputs' array");
  }
  const auto& rows = body["inputs"];
  Matrix x(rows.size(), input_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (!row.is_array()) {
      throw ProtocolError("malformed_request", "inputs[" + std::to_string(i) + "] is not an array");
    }
    if (row.size() != input_dim) {
      throw ProtocolError("dimension_mismatch", "inputs[" + std::to_string(i) + "] has " +
                                                    std::to_string(row.size()) +
                                                    " values, expected " +
                                                    std::to_string(input_dim));
    }
    for (std::size_t j = 0; j < input_dim; ++j) {
      if (!row[j].is_number()) {
        throw ProtocolError("malformed_request", "inputs[" + std::to_string(i) + "][" +
                                                     std::to_string(j) + "] is not a number");
      }
      x(i, j) = row[j].get<double>();
    }
  }
  return x;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Server

struct OracleServer::Impl {
  httplib::Server server;
  std::thread thread;
};

OracleServer::OracleServer(std::shared_ptr<LocalOracle> oracle, ServerOptions options)
    : impl_(std::make_unique<Impl>()), oracle_(std::move(oracle)) {
  if (!oracle_) throw ConfigError("server needs an oracle");
  const std::size_t workers = options.worker_threads;
  impl_->server.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };

  impl_->server.Get("/metadata", [this](const httplib::Request&, httplib::Response& res) {
    const auto md = oracle_->metadata();
    res.set_content(
        json{{"input_dim", md.input_dim}, {"num_classes", md.num_classes}, {"name", md.name}}
            .dump(),
        kJson);
  });

  impl_->server.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"total_queries", oracle_->total_queries()}}.dump(), kJson);
  });

  impl_->server.Post("/query", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      send_error(res, 400, "malformed_json", e.what());
      return;
    }
    try {
      const Matrix x = parse_inputs(body, oracle_->metadata().input_dim);
      const LabelVector labels = oracle_->query(x);
      res.set_content(json{{"labels", labels}}.dump(), kJson);
    } catch (const ProtocolError& e) {
      send_error(res, status_for(e.code()), e.code(), e.what());
    }
  });

  impl_->server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404) send_error(res, 404, "not_found", "unknown endpoint");
  });
}

OracleServer::~OracleServer() { stop(); }

int OracleServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) {
    throw ConnectionError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port_;
}

void OracleServer::listen() {
  if (port_ < 0) throw ConnectionError("server is not bound");
  impl_->server.listen_after_bind();
}

void OracleServer::start_background() {
  if (port_ < 0) throw ConnectionError("server is not bound");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void OracleServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------
// Client

std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
  std::string rest = endpoint;
  if (const auto pos = rest.find("://"); pos != std::string::npos) {
    if (rest.substr(0, pos) != "http") {
      throw ConfigError("unsupported endpoint scheme in '" + endpoint + "'");
    }
    rest = rest.substr(pos + 3);
  }
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
    throw ConfigError("endpoint '" + endpoint + "' must look like HOST:PORT");
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(rest.substr(colon + 1), &used);
    if (used != rest.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("endpoint '" + endpoint + "' has an invalid port");
  }
  if (port < 0 || port > 65535) throw ConfigError("endpoint port out of range");
  return {rest.substr(0, colon), port};
}

struct RemoteOracle::Impl {
  std::string host;
  int port = 0;
  RemoteOptions options;
  httplib::Client client;

  Impl(std::string h, int p, RemoteOptions o)
      : host(std::move(h)), port(p), options(o), client(host, port) {
    client.set_connection_timeout(std::chrono::microseconds(
        static_cast<long long>(options.connect_timeout_s * 1e6)));
    client.set_read_timeout(
        std::chrono::microseconds(static_cast<long long>(options.read_timeout_s * 1e6)));
    client.set_keep_alive(true);
  }

  // Retries transport failures only; HTTP error statuses are returned as-is.
  template <typename Call>
  httplib::Result with_retries(Call&& call) {
    httplib::Result res = call();
    for (int attempt = 0; !res && attempt < options.retries; ++attempt) res = call();
    if (!res) {
      throw ConnectionError("oracle at " + host + ":" + std::to_string(port) +
                            " unreachable: " + httplib::to_string(res.error()));
    }
    return res;
  }

  json get_json(const std::string& path) {
    auto res = with_retries([&] { return client.Get(path); });
    return decode(res);
  }

  static json decode(const httplib::Result& res) {
    json body;
    try {
      body = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError("bad_response", std::string("unparseable oracle response: ") + e.what());
    }
    if (res->status >= 400) {
      std::string code = "http_" + std::to_string(res->status), message = res->body;
      if (body.contains("error") && body["error"].is_object()) {
        code = body["error"].value("code", code);
        message = body["error"].value("message", message);
      }
      throw ProtocolError(code, message);
    }
    return body;
  }
};

RemoteOracle::RemoteOracle(const std::string& endpoint, std::optional<OracleMetadata> expected,
                           RemoteOptions options) {
  auto [host, port] = parse_endpoint(endpoint);
  impl_ = std::make_unique<Impl>(host, port, options);
  const json md = impl_->get_json("/metadata");
  try {
    metadata_.input_dim = md.at("input_dim").get<std::size_t>();
    metadata_.num_classes = md.at("num_classes").get<std::size_t>();
    metadata_.name = md.at("name").get<std::string>();
  } catch (const json::exception& e) {
    throw ProtocolError("bad_response", std::string("malformed metadata: ") + e.what());
  }
  metadata_.validate();
  if (expected && (expected->input_dim != metadata_.input_dim ||
                   expected->num_classes != metadata_.num_classes)) {
    throw ConfigError("oracle metadata mismatch: expected input_dim " +
                      std::to_string(expected->input_dim) + ", num_classes " +
                      std::to_string(expected->num_classes) + "; server reports " +
                      std::to_string(metadata_.input_dim) + ", " +
                      std::to_string(metadata_.num_classes));
  }
}

RemoteOracle::~RemoteOracle() = default;

LabelVector RemoteOracle::query(const Matrix& inputs) {
  if (inputs.cols() != metadata_.input_dim) {
    throw ProtocolError("dimension_mismatch",
                        "query rows have " + std::to_string(inputs.cols()) +
                            " columns, oracle expects " + std::to_string(metadata_.input_dim));
  }
  const std::string body = json{{"inputs", matrix_to_json(inputs)}}.dump();
  auto res = impl_->with_retries([&] { return impl_->client.Post("/query", body, kJson); });
  const json reply = Impl::decode(res);
  LabelVector labels;
  try {
    labels = reply.at("labels").get<LabelVector>();
  } catch (const json::exception& e) {
    throw ProtocolError("bad_response", std::string("malformed labels: ") + e.what());
  }
  if (labels.size() != inputs.rows()) {
    throw ProtocolError("bad_response", "oracle returned " + std::to_string(labels.size()) +
                                            " labels for " + std::to_string(inputs.rows()) +
                                            " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= metadata_.num_classes) {
      throw ProtocolError("bad_response", "label " + std::to_string(y) + " out of range");
    }
  }
  ledger_.record(inputs.rows());
  return labels;
}

std::size_t RemoteOracle::server_total_queries() {
  const json stats = impl_->get_json("/stats");
  try {
    return stats.at("total_queries").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ProtocolError("bad_response", std::string("malformed stats: ") + e.what());
  }
}

}  // namespace steal_lab
