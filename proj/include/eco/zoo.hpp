#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "eco/metrics.hpp"

namespace eco::zoo {

/// Black-box map sigma -> metric gap. Counts its own evaluations so budget
/// accounting stays exact. Implementations must tolerate two concurrent
/// evaluations and, when built on a corruption pipeline, are responsible for
/// clamping probe inputs to their own domain.
class DistanceOracle {
 public:
  explicit DistanceOracle(std::function<double(double)> fn)
      : fn_(std::move(fn)) {}

  double operator()(double sigma) {
    ++calls_;
    const double d = fn_(sigma);
    if (!std::isfinite(d) || d < 0.0) {
      throw std::runtime_error("DistanceOracle: non-finite or negative value at sigma=" +
                               std::to_string(sigma));
    }
    return d;
  }

  std::uint64_t calls() const { return calls_; }

 private:
  std::function<double(double)> fn_;
  std::uint64_t calls_ = 0;
};

/// Target the corrupted model is steered toward: either per-metric surrogate
/// values (a single "*" entry broadcasts to every metric) or template
/// responses for the task-agnostic mode.
struct SurrogateTarget {
  std::map<std::string, double> metric_targets;
  std::vector<std::string> template_responses;

  static SurrogateTarget broadcast(double value) {
    SurrogateTarget t;
    t.metric_targets["*"] = value;
    return t;
  }

  bool is_template_mode() const { return !template_responses.empty(); }

  void validate() const {
    if (metric_targets.empty() && template_responses.empty()) {
      throw std::invalid_argument("SurrogateTarget: no target present");
    }
  }
};

/// Mean absolute gap between the measured metrics and their surrogate
/// targets: (1/|M|) * sum_i |m_i - v_i|.
inline double distance(const metrics::MetricVector& metric_values,
                       const SurrogateTarget& target) {
  target.validate();
  if (metric_values.entries.empty()) {
    throw std::invalid_argument("distance: empty metric vector");
  }
  const auto broadcast = target.metric_targets.find("*");
  double sum = 0.0;
  for (const auto& [name, entry] : metric_values.entries) {
    double v;
    if (broadcast != target.metric_targets.end()) {
      v = broadcast->second;
    } else {
      const auto it = target.metric_targets.find(name);
      if (it == target.metric_targets.end()) {
        throw std::invalid_argument("distance: no target for metric '" + name +
                                    "'");
      }
      v = it->second;
    }
    sum += std::abs(entry.value - v);
  }
  return sum / static_cast<double>(metric_values.entries.size());
}

/// Task-agnostic mode: mean gap between generated texts and the closest-in-
/// expectation template response, measured as 1 - ROUGE-L recall against
/// each template and averaged. Minimizing it pushes outputs toward the
/// templates.
inline double template_distance(const std::vector<TokenList>& generated,
                                const std::vector<TokenList>& templates) {
  if (generated.empty() || templates.empty()) {
    throw std::invalid_argument("template_distance: empty input");
  }
  double sum = 0.0;
  for (const auto& gen : generated) {
    double per = 0.0;
    for (const auto& tmpl : templates) {
      per += 1.0 - metrics::rouge_l_recall(tmpl, gen);
    }
    sum += per / static_cast<double>(templates.size());
  }
  return sum / static_cast<double>(generated.size());
}

struct ZooConfig {
  double sigma0 = 1.0;
  double eta = 0.5;
  double mu = 0.05;
  int max_iters = 100;
  double tol = 1e-4;
  double clamp_min = 0.0;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("ZooConfig: eta must be > 0");
    if (!(mu > 0.0)) throw std::invalid_argument("ZooConfig: mu must be > 0");
    if (max_iters < 1) {
      throw std::invalid_argument("ZooConfig: max_iters must be >= 1");
    }
    if (tol < 0.0) throw std::invalid_argument("ZooConfig: tol must be >= 0");
  }
};

enum class ZooStop { Converged, MaxIters, OracleError };

inline const char* to_string(ZooStop stop) {
  switch (stop) {
    case ZooStop::Converged: return "converged";
    case ZooStop::MaxIters: return "max_iters";
    case ZooStop::OracleError: return "oracle_error";
  }
  return "?";
}

struct ZooTrace {
  struct Step {
    int k = 0;
    double sigma = 0.0;
    double d_forward = 0.0;
    double d_backward = 0.0;
    double gradient = 0.0;
    double sigma_next = 0.0;
  };

  std::vector<Step> steps;
  ZooStop stop = ZooStop::MaxIters;
  std::uint64_t oracle_calls = 0;
};

struct ZooResult {
  double sigma_star = 0.0;
  double best_distance = 0.0;
  ZooTrace trace;
};

/// Central-difference estimate (d(sigma+mu) - d(sigma-mu)) / (2 mu) with a
/// deterministic scalar perturbation. Exactly two oracle calls.
inline double estimate_gradient(DistanceOracle& oracle, double sigma,
                                double mu) {
  if (!(mu > 0.0)) {
    throw std::invalid_argument("estimate_gradient: mu must be > 0");
  }
  const double forward = oracle(sigma + mu);
  const double backward = oracle(sigma - mu);
  return (forward - backward) / (2.0 * mu);
}

/// Gradient-free descent on the scalar corruption strength. Iterates
/// sigma_{k+1} = clamp(sigma_k - eta * grad) until the step size falls to
/// tol or max_iters is hit. Returns the visited sigma with the lowest
/// observed distance, where each iterate's distance is estimated as the mean
/// of its two probe evaluations (the only observations the 2-call budget
/// affords) and sigma0 is seeded with one direct evaluation.
inline ZooResult optimize_sigma(DistanceOracle& oracle,
                                const ZooConfig& config) {
  config.validate();
  ZooResult result;
  ZooTrace& trace = result.trace;

  double sigma = std::max(config.sigma0, config.clamp_min);
  try {
    result.sigma_star = sigma;
    result.best_distance = oracle(sigma);

    for (int k = 0; k < config.max_iters; ++k) {
      const double forward = oracle(sigma + config.mu);
      const double backward = oracle(sigma - config.mu);
      const double grad = (forward - backward) / (2.0 * config.mu);
      const double next =
          std::max(sigma - config.eta * grad, config.clamp_min);

      trace.steps.push_back({k, sigma, forward, backward, grad, next});

      const double estimate = (forward + backward) / 2.0;
      if (estimate < result.best_distance) {
        result.best_distance = estimate;
        result.sigma_star = sigma;
      }

      const bool converged = std::abs(next - sigma) <= config.tol;
      sigma = next;
      if (converged) {
        trace.stop = ZooStop::Converged;
        break;
      }
      if (k + 1 == config.max_iters) trace.stop = ZooStop::MaxIters;
    }
  } catch (const std::exception&) {
    trace.stop = ZooStop::OracleError;
  }
  trace.oracle_calls = oracle.calls();
  return result;
}

}  // namespace eco::zoo
