#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eco/corruption.hpp"
#include "eco/types.hpp"

namespace eco::gate {

/// Anything that maps a prompt to p_forget in [0, 1] can drive the gate;
/// remote transformer classifiers plug in behind this interface.
class PromptScorer {
 public:
  virtual ~PromptScorer() = default;
  virtual PromptScore score(const std::string& prompt) const = 0;
};

struct TrainConfig {
  std::size_t hash_buckets = std::size_t{1} << 18;
  int ngram_min = 3;
  int ngram_max = 5;
  int epochs = 400;
  double learning_rate = 4.0;
  double l2 = 1e-6;
  std::uint64_t seed = 0;
  /// Prompts longer than this many normalized characters are scored by a
  /// sliding window (stride = half window, aggregate = max).
  std::size_t context_budget_chars = 512;
};

/// Logistic model over hashed character n-grams of the normalized prompt.
/// Immutable after construction; score() is safe for concurrent callers.
class ReferenceClassifier : public PromptScorer {
 public:
  ReferenceClassifier() = default;
  ReferenceClassifier(TrainConfig config, Eigen::VectorXd weights, double bias,
                      double class_weight_forget, double class_weight_retain,
                      std::uint64_t train_fingerprint);

  PromptScore score(const std::string& prompt) const override;

  const TrainConfig& config() const { return config_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  double bias() const { return bias_; }
  double class_weight_forget() const { return class_weight_forget_; }
  double class_weight_retain() const { return class_weight_retain_; }
  std::uint64_t train_fingerprint() const { return train_fingerprint_; }

  /// Sparse hashed n-gram features of one normalized window, L2-normalized.
  std::vector<std::pair<std::size_t, double>> featurize(
      const std::string& normalized) const;

 private:
  double window_score(const std::string& normalized) const;

  TrainConfig config_;
  Eigen::VectorXd weights_;
  double bias_ = 0.0;
  double class_weight_forget_ = 1.0;
  double class_weight_retain_ = 1.0;
  std::uint64_t train_fingerprint_ = 0;
};

/// Weighted logistic regression on hashed n-gram features, full-batch
/// gradient descent with inverse-frequency class weights. Deterministic.
ReferenceClassifier train_reference_classifier(
    const std::vector<std::string>& forget_corpus,
    const std::vector<std::string>& retain_corpus,
    const TrainConfig& config = {});

struct LabeledScore {
  PromptScore score;
  bool is_forget = false;
};

/// Threshold minimizing FPR + FNR over candidate cuts (midpoints of adjacent
/// distinct sorted scores plus 0 and 1). Ties resolve to the candidate with
/// the widest separating score gap, then to the smallest threshold.
double calibrate_threshold(const std::vector<LabeledScore>& cal_scores);

/// The k-th smallest nonconformity score s_i = 1 - p(y_i | x_i) with
/// k = ceil((n+1)(1-alpha)); +infinity when k > n.
double conformal_calibrate(const std::vector<LabeledScore>& cal_scores,
                           double alpha);

struct PredictionSet {
  bool retain = false;
  bool forget = false;

  int size() const { return (retain ? 1 : 0) + (forget ? 1 : 0); }
  bool operator==(const PredictionSet&) const = default;
};

/// Labels whose nonconformity 1 - p(y | x) is at most q_hat.
PredictionSet prediction_set(const PromptScore& score, double q_hat);

enum class DecisionMode { SimpleThreshold, Conformal };

struct CalibrationArtifact {
  DecisionMode mode = DecisionMode::SimpleThreshold;
  double tau = 0.5;     // SimpleThreshold
  double alpha = 0.05;  // Conformal
  double q_hat = std::numeric_limits<double>::infinity();
  std::size_t n_cal = 0;
  std::string version = "1";
  std::string data_fingerprint;

  void validate() const;
};

struct GateDecision {
  bool flagged = false;
  PromptScore score;
  std::optional<PredictionSet> prediction_set;  // Conformal only
  std::optional<CorruptionSpec> applied_spec;   // present iff flagged
};

/// Pure corrupt/pass decision. SimpleThreshold flags p_forget >= tau.
/// Conformal flags whenever forget is in the prediction set; empty sets are
/// flagged too (conservative handling of fully non-conforming prompts).
GateDecision decide(const PromptScore& score,
                    const CalibrationArtifact& artifact,
                    const CorruptionSpec& spec);

}  // namespace eco::gate
