#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "eco/backend.hpp"
#include "eco/gate.hpp"

namespace eco::gateway {

struct GenerateRequest {
  std::string prompt;
  int max_tokens = 32;
  std::optional<std::uint64_t> seed;
  bool echo_decision = false;

  void validate() const;
};

struct DecisionInfo {
  bool flagged = false;
  double p_forget = 0.0;
  std::string mode;
  std::optional<gate::PredictionSet> prediction_set;
  std::optional<CorruptionSpec> corruption;
};

struct LatencyBreakdown {
  double classify_ms = 0.0;
  double generate_ms = 0.0;
};

struct GenerateResult {
  std::string text;
  TokenList tokens;
  std::vector<double> logprobs;
  std::uint64_t seed = 0;  // echoed (server-generated when absent)
  DecisionInfo decision;   // always computed; exposure is server policy
  LatencyBreakdown latency;
};

struct GatewayOptions {
  std::string listen_address = "127.0.0.1";
  int port = 0;  // 0 binds an ephemeral port
  int concurrency_limit = 16;
  /// Server policy for exposing decision metadata; requests additionally
  /// opt in via echo_decision.
  bool expose_decision = false;
  double classify_budget_ms = 50.0;
};

/// Loaded artifacts plus the backend: everything a request needs, immutable
/// after construction.
struct GatewayState {
  std::shared_ptr<const gate::PromptScorer> scorer;
  gate::CalibrationArtifact calibration;
  CorruptionSpec spec;
  std::shared_ptr<const backend::ModelBackend> model;
  std::string classifier_fingerprint;
  std::string calibration_fingerprint;

  void validate() const;
};

/// Core request pipeline (embed -> score -> decide -> corrupt if flagged ->
/// generate), shared by the HTTP handler and in-process callers. Pure given
/// (state, request, seed).
GenerateResult handle_generate(const GatewayState& state,
                               const GenerateRequest& request);

struct GatewayMetrics {
  std::uint64_t requests_total = 0;
  std::uint64_t requests_flagged = 0;
  std::uint64_t requests_failed = 0;
  double classify_ms_max = 0.0;
  double generate_ms_max = 0.0;
};

/// HTTP face of the enforcement path: POST /v1/generate, GET /health,
/// GET /metrics. Shutdown drains in-flight requests before returning.
class Gateway {
 public:
  Gateway(GatewayState state, GatewayOptions options);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds and serves on a background thread; returns once the socket
  /// accepts connections. Throws when the port cannot be bound.
  void start();

  /// Stops accepting new requests, waits for in-flight ones.
  void stop();

  int port() const;
  GatewayMetrics metrics() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace eco::gateway
