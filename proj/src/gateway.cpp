#include "eco/gateway.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

// Deep accept queue so bursts of concurrent clients connect reliably.
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include "httplib.h"
#include "json.hpp"

#include "eco/corruption.hpp"
#include "eco/text.hpp"

namespace eco::gateway {

namespace {

using nlohmann::ordered_json;

constexpr std::size_t kMaxPromptBytes = 1 << 20;

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

// Fixed-edge latency histogram (milliseconds); the last bucket is open.
struct LatencyHistogram {
  static constexpr std::array<double, 8> kEdges = {0.1, 0.5, 1, 5,
                                                   10,  50,  100, 500};
  std::array<std::uint64_t, kEdges.size() + 1> counts{};
  double max_ms = 0.0;

  void record(double ms) {
    std::size_t bucket = kEdges.size();
    for (std::size_t i = 0; i < kEdges.size(); ++i) {
      if (ms <= kEdges[i]) {
        bucket = i;
        break;
      }
    }
    ++counts[bucket];
    max_ms = std::max(max_ms, ms);
  }

  ordered_json to_json() const {
    ordered_json buckets = ordered_json::array();
    for (std::size_t i = 0; i < kEdges.size(); ++i) {
      buckets.push_back({{"le_ms", kEdges[i]}, {"count", counts[i]}});
    }
    buckets.push_back({{"le_ms", "inf"}, {"count", counts[kEdges.size()]}});
    return {{"buckets", buckets}, {"max_ms", max_ms}};
  }
};

}  // namespace

void GenerateRequest::validate() const {
  if (prompt.empty()) {
    throw std::invalid_argument("request: prompt must be non-empty");
  }
  if (prompt.size() > kMaxPromptBytes) {
    throw std::invalid_argument("request: prompt exceeds size limit");
  }
  if (max_tokens < 1) {
    throw std::invalid_argument("request: max_tokens must be >= 1");
  }
}

void GatewayState::validate() const {
  if (!scorer) throw std::invalid_argument("gateway: scorer not loaded");
  if (!model) throw std::invalid_argument("gateway: backend not loaded");
  calibration.validate();
  spec.validate();
}

GenerateResult handle_generate(const GatewayState& state,
                               const GenerateRequest& request) {
  request.validate();
  GenerateResult result;
  result.seed = request.seed.value_or(0);

  const auto classify_start = std::chrono::steady_clock::now();
  const PromptScore score = state.scorer->score(request.prompt);
  const gate::GateDecision decision =
      gate::decide(score, state.calibration, state.spec);
  result.latency.classify_ms = elapsed_ms(classify_start);

  const auto generate_start = std::chrono::steady_clock::now();
  EmbeddingMatrix e = state.model->embed(state.model->tokenize(request.prompt));
  if (decision.flagged) {
    // Corruption stays in embedding space; the backend never sees the raw
    // flagged prompt tokens.
    e = corrupt(e, *decision.applied_spec);
  }
  const backend::GenerationResult generated =
      state.model->generate_from_embeddings(e, request.max_tokens, result.seed);
  result.latency.generate_ms = elapsed_ms(generate_start);

  result.tokens = generated.tokens;
  result.logprobs = generated.logprobs;
  result.text = text::join(generated.tokens);

  result.decision.flagged = decision.flagged;
  result.decision.p_forget = score.p_forget;
  result.decision.mode =
      state.calibration.mode == gate::DecisionMode::SimpleThreshold
          ? "simple"
          : "conformal";
  result.decision.prediction_set = decision.prediction_set;
  result.decision.corruption = decision.applied_spec;
  return result;
}

struct Gateway::Impl {
  GatewayState state;
  GatewayOptions options;
  httplib::Server server;
  std::thread serve_thread;
  std::atomic<int> bound_port{0};
  std::atomic<bool> running{false};

  // Monotone counters; the only mutable per-request state.
  std::atomic<std::uint64_t> requests_total{0};
  std::atomic<std::uint64_t> requests_flagged{0};
  std::atomic<std::uint64_t> requests_failed{0};
  std::mutex latency_mutex;
  LatencyHistogram classify_latency;
  LatencyHistogram generate_latency;

  // Counting semaphore enforcing the concurrency limit.
  std::mutex slots_mutex;
  std::condition_variable slots_cv;
  int slots_free = 0;

  std::mt19937_64 seed_source{std::random_device{}()};
  std::mutex seed_mutex;

  std::uint64_t fresh_seed() {
    std::lock_guard lock(seed_mutex);
    return seed_source();
  }

  bool acquire_slot() {
    std::unique_lock lock(slots_mutex);
    if (!slots_cv.wait_for(lock, std::chrono::seconds(30),
                           [&] { return slots_free > 0; })) {
      return false;
    }
    --slots_free;
    return true;
  }
  void release_slot() {
    {
      std::lock_guard lock(slots_mutex);
      ++slots_free;
    }
    slots_cv.notify_one();
  }

  void handle_post_generate(const httplib::Request& http_request,
                            httplib::Response& http_response) {
    requests_total.fetch_add(1);
    if (!acquire_slot()) {
      http_response.status = 503;
      http_response.set_header("Retry-After", "1");
      http_response.set_content(R"({"error":"concurrency limit"})",
                                "application/json");
      return;
    }
    struct SlotGuard {
      Impl* impl;
      ~SlotGuard() { impl->release_slot(); }
    } guard{this};

    GenerateRequest request;
    try {
      const auto body = ordered_json::parse(http_request.body);
      request.prompt = body.at("prompt").get<std::string>();
      request.max_tokens = body.value("max_tokens", 32);
      if (body.contains("seed")) {
        request.seed = body.at("seed").get<std::uint64_t>();
      }
      request.echo_decision = body.value("echo_decision", false);
      request.validate();
    } catch (const std::exception& e) {
      requests_failed.fetch_add(1);
      http_response.status = 400;
      http_response.set_content(
          ordered_json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    if (!request.seed) request.seed = fresh_seed();

    GenerateResult result;
    try {
      result = handle_generate(state, request);
    } catch (const std::exception& e) {
      requests_failed.fetch_add(1);
      http_response.status = 502;
      http_response.set_header("Retry-After", "1");
      http_response.set_content(
          ordered_json{{"error", std::string("upstream failure: ") + e.what()}}
              .dump(),
          "application/json");
      return;
    }

    if (result.decision.flagged) requests_flagged.fetch_add(1);
    {
      std::lock_guard lock(latency_mutex);
      classify_latency.record(result.latency.classify_ms);
      generate_latency.record(result.latency.generate_ms);
    }

    ordered_json response;
    response["text"] = result.text;
    response["tokens"] = result.tokens;
    response["logprobs"] = result.logprobs;
    response["seed"] = result.seed;
    if (request.echo_decision && options.expose_decision) {
      ordered_json d;
      d["flagged"] = result.decision.flagged;
      d["p_forget"] = result.decision.p_forget;
      d["mode"] = result.decision.mode;
      if (result.decision.prediction_set) {
        std::vector<std::string> labels;
        if (result.decision.prediction_set->retain) labels.push_back("retain");
        if (result.decision.prediction_set->forget) labels.push_back("forget");
        d["prediction_set"] = labels;
      }
      if (result.decision.corruption) {
        d["corruption"] = {{"kind", to_string(result.decision.corruption->kind)},
                           {"sigma", result.decision.corruption->sigma}};
      }
      response["decision"] = std::move(d);
    }
    response["latency"] = {{"classify_ms", result.latency.classify_ms},
                           {"generate_ms", result.latency.generate_ms}};
    http_response.set_content(response.dump(), "application/json");
  }

  void handle_health(const httplib::Request&, httplib::Response& out) {
    ordered_json body;
    body["status"] = "ok";
    body["mode"] = state.calibration.mode == gate::DecisionMode::SimpleThreshold
                       ? "simple"
                       : "conformal";
    body["classifier_fingerprint"] = state.classifier_fingerprint;
    body["calibration_fingerprint"] = state.calibration_fingerprint;
    body["model_id"] = state.model->model_id();
    out.set_content(body.dump(), "application/json");
  }

  void handle_metrics(const httplib::Request&, httplib::Response& out) {
    ordered_json body;
    body["requests_total"] = requests_total.load();
    body["requests_flagged"] = requests_flagged.load();
    body["requests_failed"] = requests_failed.load();
    const double total = static_cast<double>(requests_total.load());
    body["flag_rate"] =
        total == 0.0 ? 0.0 : static_cast<double>(requests_flagged.load()) / total;
    {
      std::lock_guard lock(latency_mutex);
      body["classify_ms"] = classify_latency.to_json();
      body["generate_ms"] = generate_latency.to_json();
      body["classify_ms_max"] = classify_latency.max_ms;
      body["generate_ms_max"] = generate_latency.max_ms;
      body["classify_budget_ms"] = options.classify_budget_ms;
      body["classify_within_budget"] =
          classify_latency.max_ms <= options.classify_budget_ms;
    }
    out.set_content(body.dump(), "application/json");
  }
};

Gateway::Gateway(GatewayState state, GatewayOptions options)
    : impl_(std::make_unique<Impl>()) {
  state.validate();
  if (options.concurrency_limit < 1) {
    throw std::invalid_argument("gateway: concurrency limit must be >= 1");
  }
  impl_->state = std::move(state);
  impl_->options = options;
  impl_->slots_free = options.concurrency_limit;
  const int pool = std::min(options.concurrency_limit, 16);
  impl_->server.new_task_queue = [pool] {
    return new httplib::ThreadPool(static_cast<std::size_t>(pool));
  };

  impl_->server.Post("/v1/generate",
                     [impl = impl_.get()](const httplib::Request& req,
                                          httplib::Response& res) {
                       impl->handle_post_generate(req, res);
                     });
  impl_->server.Get("/health", [impl = impl_.get()](const httplib::Request& req,
                                                    httplib::Response& res) {
    impl->handle_health(req, res);
  });
  impl_->server.Get("/metrics", [impl = impl_.get()](const httplib::Request& req,
                                                     httplib::Response& res) {
    impl->handle_metrics(req, res);
  });
}

Gateway::~Gateway() {
  try {
    stop();
  } catch (...) {
  }
}

void Gateway::start() {
  if (impl_->running.load()) return;
  int port = impl_->options.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->options.listen_address);
    if (port <= 0) {
      throw std::runtime_error("gateway: failed to bind an ephemeral port");
    }
  } else {
    if (!impl_->server.bind_to_port(impl_->options.listen_address, port)) {
      throw std::runtime_error("gateway: failed to bind port " +
                               std::to_string(port));
    }
  }
  impl_->bound_port.store(port);
  impl_->running.store(true);
  impl_->serve_thread = std::thread([impl = impl_.get()] {
    impl->server.listen_after_bind();
  });
  while (!impl_->server.is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

void Gateway::stop() {
  if (!impl_->running.exchange(false)) return;
  impl_->server.stop();  // closes the listener, drains worker tasks
  if (impl_->serve_thread.joinable()) impl_->serve_thread.join();
}

int Gateway::port() const { return impl_->bound_port.load(); }

GatewayMetrics Gateway::metrics() const {
  GatewayMetrics m;
  m.requests_total = impl_->requests_total.load();
  m.requests_flagged = impl_->requests_flagged.load();
  m.requests_failed = impl_->requests_failed.load();
  std::lock_guard lock(impl_->latency_mutex);
  m.classify_ms_max = impl_->classify_latency.max_ms;
  m.generate_ms_max = impl_->generate_latency.max_ms;
  return m;
}

}  // namespace eco::gateway
