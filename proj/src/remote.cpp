#include "eco/remote.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "eco/detail/base64.hpp"

namespace eco::backend {

namespace {

using nlohmann::json;

constexpr char kGeneratePath[] = "/v1/generate_from_embeddings";

json require_field(const json& body, const char* field) {
  if (!body.contains(field)) {
    throw ProtocolError(std::string("response missing field '") + field + "'");
  }
  return body.at(field);
}

GenerationResult parse_response(const std::string& body) {
  json parsed;
  try {
    parsed = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("response is not valid JSON: ") + e.what());
  }
  const json tokens = require_field(parsed, "tokens");
  const json logprobs = require_field(parsed, "logprobs");
  require_field(parsed, "model_id");
  if (!tokens.is_array() || !logprobs.is_array()) {
    throw ProtocolError("fields 'tokens' and 'logprobs' must be arrays");
  }
  if (tokens.size() != logprobs.size()) {
    throw ProtocolError("'tokens' and 'logprobs' lengths differ");
  }
  GenerationResult out;
  out.tokens.reserve(tokens.size());
  out.logprobs.reserve(logprobs.size());
  for (const auto& t : tokens) {
    if (!t.is_string()) throw ProtocolError("field 'tokens' must hold strings");
    out.tokens.push_back(t.get<std::string>());
  }
  for (const auto& lp : logprobs) {
    if (!lp.is_number()) throw ProtocolError("field 'logprobs' must hold numbers");
    out.logprobs.push_back(lp.get<double>());
  }
  return out;
}

}  // namespace

GenerationResult remote_generate(const RemoteBackendConfig& config,
                                 const EmbeddingMatrix& e, int max_tokens,
                                 std::uint64_t seed) {
  config.validate();
  if (e.rows() < 1 || e.cols() < 1) {
    throw std::invalid_argument("remote_generate: empty embedding matrix");
  }

  std::vector<float> packed(static_cast<std::size_t>(e.size()));
  std::size_t w = 0;
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    for (Eigen::Index k = 0; k < e.cols(); ++k) {
      packed[w++] = static_cast<float>(e(t, k));
    }
  }

  json request = {
      {"embeddings",
       detail::base64_encode(packed.data(), packed.size() * sizeof(float))},
      {"rows", e.rows()},
      {"dims", e.cols()},
      {"max_tokens", max_tokens},
      {"seed", seed},
  };
  const std::string body = request.dump();

  httplib::Client client(config.host, config.port);
  const auto timeout =
      std::chrono::microseconds(static_cast<long long>(config.timeout_seconds * 1e6));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config.auth_token_env.empty()) {
    if (const char* token = std::getenv(config.auth_token_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config.retries; ++attempt) {
    auto result = client.Post(kGeneratePath, headers, body, "application/json");
    if (!result) {
      last_error = httplib::to_string(result.error());
      continue;  // retryable transport failure
    }
    if (result->status < 200 || result->status >= 300) {
      throw ServiceError("server returned status " +
                         std::to_string(result->status) + ": " + result->body);
    }
    return parse_response(result->body);
  }
  throw TransportError("no response from " + config.host + ":" +
                       std::to_string(config.port) + " after " +
                       std::to_string(config.retries + 1) +
                       " attempts (last error: " + last_error + ")");
}

/// Counting semaphore bounding concurrent upstream requests.
class InflightLimiter {
 public:
  explicit InflightLimiter(int limit) : available_(limit) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int available_;
};

RemoteBackend::RemoteBackend(RemoteBackendConfig config,
                             ToyBackendConfig embedder_config,
                             KnowledgeTable embedder_vocab_source)
    : config_(std::move(config)),
      embedder_(std::move(embedder_config), std::move(embedder_vocab_source)),
      limiter_(std::make_unique<InflightLimiter>(config_.max_inflight)) {
  config_.validate();
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::model_id() const {
  return "remote:" + config_.host + ":" + std::to_string(config_.port);
}

TokenIdList RemoteBackend::tokenize(const std::string& prompt) const {
  return embedder_.tokenize(prompt);
}

EmbeddingMatrix RemoteBackend::embed(const TokenIdList& ids) const {
  return embedder_.embed(ids);
}

GenerationResult RemoteBackend::generate_from_embeddings(
    const EmbeddingMatrix& e, int max_tokens, std::uint64_t seed) const {
  limiter_->acquire();
  try {
    GenerationResult out = remote_generate(config_, e, max_tokens, seed);
    limiter_->release();
    return out;
  } catch (...) {
    limiter_->release();
    throw;
  }
}

std::array<double, 4> RemoteBackend::option_logits(
    const EmbeddingMatrix&, const std::array<TokenId, 4>&) const {
  throw std::runtime_error(
      "RemoteBackend: option_logits is not part of the wire protocol");
}

std::vector<double> RemoteBackend::score_continuation(
    const EmbeddingMatrix&, const TokenIdList&) const {
  throw std::runtime_error(
      "RemoteBackend: score_continuation is not part of the wire protocol");
}

}  // namespace eco::backend
