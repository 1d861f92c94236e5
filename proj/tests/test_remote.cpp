#include "eco/remote.hpp"

#include <atomic>
#include <chrono>
#include <cstring>
#include <functional>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include "eco/detail/base64.hpp"

namespace backend = eco::backend;
using nlohmann::json;

namespace {

// In-process stand-in for an embeddings-in inference service.
class MockServer {
 public:
  explicit MockServer(std::function<void(const httplib::Request&,
                                         httplib::Response&)> handler) {
    server_.Post("/v1/generate_from_embeddings",
                 [handler = std::move(handler)](const httplib::Request& req,
                                                httplib::Response& res) {
                   handler(req, res);
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    while (!server_.is_running()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

backend::RemoteBackendConfig config_for(int port) {
  backend::RemoteBackendConfig config;
  config.host = "127.0.0.1";
  config.port = port;
  config.timeout_seconds = 2.0;
  config.retries = 1;
  return config;
}

eco::EmbeddingMatrix small_matrix() {
  eco::EmbeddingMatrix e(2, 3);
  e << 0.1, -0.5, 1.25, 2.0, 0.0, -3.5;
  return e;
}

}  // namespace

TEST_CASE("remote_generate round-trips the wire format") {
  json seen;
  MockServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    res.set_content(json{{"tokens", {"hello", "world"}},
                         {"logprobs", {-0.1, -0.2}},
                         {"model_id", "mock-1"}}
                        .dump(),
                    "application/json");
  });

  const auto result =
      backend::remote_generate(config_for(server.port()), small_matrix(), 8, 42);
  CHECK(result.tokens == eco::TokenList{"hello", "world"});
  CHECK(result.logprobs == std::vector<double>{-0.1, -0.2});

  CHECK(seen.at("rows") == 2);
  CHECK(seen.at("dims") == 3);
  CHECK(seen.at("max_tokens") == 8);
  CHECK(seen.at("seed") == 42);
  const auto bytes =
      eco::detail::base64_decode(seen.at("embeddings").get<std::string>());
  REQUIRE(bytes.size() == 6 * sizeof(float));
  float values[6];
  std::memcpy(values, bytes.data(), sizeof(values));
  CHECK(values[0] == doctest::Approx(0.1f));
  CHECK(values[5] == doctest::Approx(-3.5f));
}

TEST_CASE("malformed payload raises a protocol error naming the field") {
  MockServer server([](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"tokens", {"a"}}, {"model_id", "mock"}}.dump(),
                    "application/json");
  });
  try {
    backend::remote_generate(config_for(server.port()), small_matrix(), 4, 1);
    FAIL("expected ProtocolError");
  } catch (const backend::ProtocolError& e) {
    CHECK(std::string(e.what()).find("logprobs") != std::string::npos);
  }
}

TEST_CASE("non-success status raises a service error with the body") {
  MockServer server([](const httplib::Request&, httplib::Response& res) {
    res.status = 503;
    res.set_content("overloaded", "text/plain");
  });
  try {
    backend::remote_generate(config_for(server.port()), small_matrix(), 4, 1);
    FAIL("expected ServiceError");
  } catch (const backend::ServiceError& e) {
    CHECK(std::string(e.what()).find("503") != std::string::npos);
    CHECK(std::string(e.what()).find("overloaded") != std::string::npos);
  }
}

TEST_CASE("unreachable server retries then raises a transport error") {
  backend::RemoteBackendConfig config;
  config.host = "127.0.0.1";
  config.port = 1;  // nothing listens there
  config.timeout_seconds = 0.2;
  config.retries = 2;
  CHECK_THROWS_AS(
      backend::remote_generate(config, small_matrix(), 4, 1),
      backend::TransportError);
}

TEST_CASE("slow server times out, retries, then fails") {
  std::atomic<int> hits{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    res.set_content(json{{"tokens", json::array()},
                         {"logprobs", json::array()},
                         {"model_id", "slow"}}
                        .dump(),
                    "application/json");
  });
  backend::RemoteBackendConfig config = config_for(server.port());
  config.timeout_seconds = 0.15;
  config.retries = 1;
  CHECK_THROWS_AS(backend::remote_generate(config, small_matrix(), 4, 1),
                  backend::TransportError);
  CHECK(hits.load() >= 2);  // initial attempt plus one retry
}

TEST_CASE("RemoteBackend embeds locally and generates remotely") {
  MockServer server([](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    res.set_content(json{{"tokens", {"ok"}},
                         {"logprobs", {-1.0}},
                         {"model_id", "mock"}}
                        .dump(),
                    "application/json");
  });
  backend::KnowledgeTable vocab_source;
  vocab_source.add("alpha beta gamma", "delta epsilon");
  backend::ToyBackendConfig embedder;
  embedder.seed = 3;
  const backend::RemoteBackend remote(config_for(server.port()), embedder,
                                      vocab_source);
  const auto e = remote.embed(remote.tokenize("alpha beta"));
  CHECK(e.rows() == 2);
  const auto result = remote.generate_from_embeddings(e, 4, 9);
  CHECK(result.tokens == eco::TokenList{"ok"});
  CHECK_THROWS(remote.option_logits(e, {0, 1, 2, 3}));
  CHECK_THROWS(remote.score_continuation(e, {0}));
}
