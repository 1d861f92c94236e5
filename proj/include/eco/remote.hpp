#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include "eco/backend.hpp"

namespace eco::backend {

/// Connection refused / timed out after the configured retries.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The server answered but the payload violates the wire schema.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The server answered with a non-success status.
struct ServiceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RemoteBackendConfig {
  std::string host = "127.0.0.1";
  int port = 8188;
  double timeout_seconds = 5.0;
  int retries = 2;
  /// Name of the environment variable holding the bearer token; empty
  /// disables auth.
  std::string auth_token_env;
  int max_inflight = 8;

  void validate() const {
    if (!(timeout_seconds > 0.0)) {
      throw std::invalid_argument("RemoteBackendConfig: timeout must be > 0");
    }
    if (retries < 0) {
      throw std::invalid_argument("RemoteBackendConfig: retries must be >= 0");
    }
    if (max_inflight < 1) {
      throw std::invalid_argument("RemoteBackendConfig: max_inflight must be >= 1");
    }
  }
};

/// One POST /v1/generate_from_embeddings round trip: float32 row-major
/// embeddings go out base64-encoded, tokens and logprobs come back. Retries
/// transport failures, validates the response against the wire schema.
GenerationResult remote_generate(const RemoteBackendConfig& config,
                                 const EmbeddingMatrix& e, int max_tokens,
                                 std::uint64_t seed);

/// ModelBackend over a remote embeddings-in inference service. The detached
/// embedding layer (vocabulary + seeded codebook) lives locally and must be
/// configured to match the upstream model; generation round-trips the wire
/// format. Option logits and continuation scoring are not part of the wire
/// protocol and throw.
class RemoteBackend : public ModelBackend {
 public:
  RemoteBackend(RemoteBackendConfig config, ToyBackendConfig embedder_config,
                KnowledgeTable embedder_vocab_source);
  ~RemoteBackend() override;

  std::string model_id() const override;
  TokenIdList tokenize(const std::string& prompt) const override;
  EmbeddingMatrix embed(const TokenIdList& ids) const override;
  GenerationResult generate_from_embeddings(const EmbeddingMatrix& e,
                                            int max_tokens,
                                            std::uint64_t seed) const override;
  std::array<double, 4> option_logits(
      const EmbeddingMatrix& e,
      const std::array<TokenId, 4>& options) const override;
  std::vector<double> score_continuation(
      const EmbeddingMatrix& e, const TokenIdList& continuation) const override;

  std::size_t vocab_size() const override { return embedder_.vocab_size(); }
  TokenId token_id(const std::string& token) const override {
    return embedder_.token_id(token);
  }
  const std::string& token_text(TokenId id) const override {
    return embedder_.token_text(id);
  }

 private:
  RemoteBackendConfig config_;
  ToyBackend embedder_;
  std::unique_ptr<class InflightLimiter> limiter_;
};

}  // namespace eco::backend
