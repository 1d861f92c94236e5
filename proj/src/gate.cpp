#include "eco/gate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "eco/rng.hpp"
#include "eco/text.hpp"

namespace eco::gate {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ReferenceClassifier::ReferenceClassifier(TrainConfig config,
                                         Eigen::VectorXd weights, double bias,
                                         double class_weight_forget,
                                         double class_weight_retain,
                                         std::uint64_t train_fingerprint)
    : config_(config),
      weights_(std::move(weights)),
      bias_(bias),
      class_weight_forget_(class_weight_forget),
      class_weight_retain_(class_weight_retain),
      train_fingerprint_(train_fingerprint) {
  if (static_cast<std::size_t>(weights_.size()) != config_.hash_buckets) {
    throw std::invalid_argument(
        "ReferenceClassifier: weight vector does not match hash_buckets");
  }
  if (!weights_.allFinite() || !std::isfinite(bias_)) {
    throw std::invalid_argument("ReferenceClassifier: non-finite weights");
  }
}

std::vector<std::pair<std::size_t, double>> ReferenceClassifier::featurize(
    const std::string& normalized) const {
  std::unordered_map<std::size_t, double> counts;
  const std::size_t len = normalized.size();
  for (int n = config_.ngram_min; n <= config_.ngram_max; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (len < un) break;
    for (std::size_t i = 0; i + un <= len; ++i) {
      const std::uint64_t h =
          text::fnv1a({normalized.data() + i, un},
                      0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(n));
      counts[h % config_.hash_buckets] += 1.0;
    }
  }
  std::vector<std::pair<std::size_t, double>> features(counts.begin(),
                                                       counts.end());
  std::sort(features.begin(), features.end());
  double norm_sq = 0.0;
  for (const auto& [idx, v] : features) norm_sq += v * v;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& [idx, v] : features) v *= inv;
  }
  return features;
}

double ReferenceClassifier::window_score(const std::string& normalized) const {
  double z = bias_;
  for (const auto& [idx, v] : featurize(normalized)) {
    z += weights_(static_cast<Eigen::Index>(idx)) * v;
  }
  return sigmoid(z);
}

PromptScore ReferenceClassifier::score(const std::string& prompt) const {
  const std::string normalized = text::normalize(prompt);
  if (normalized.empty()) {
    throw std::invalid_argument("score: prompt empty after normalization");
  }
  const std::size_t budget = config_.context_budget_chars;
  if (normalized.size() <= budget || budget == 0) {
    return PromptScore{window_score(normalized)};
  }
  // Long prompts: max over half-overlapping windows, so a flagged span
  // anywhere in the prompt flags the whole prompt.
  const std::size_t stride = std::max<std::size_t>(1, budget / 2);
  double best = 0.0;
  for (std::size_t start = 0;; start += stride) {
    const std::size_t width = std::min(budget, normalized.size() - start);
    best = std::max(best, window_score(normalized.substr(start, width)));
    if (start + width >= normalized.size()) break;
  }
  return PromptScore{best};
}

ReferenceClassifier train_reference_classifier(
    const std::vector<std::string>& forget_corpus,
    const std::vector<std::string>& retain_corpus, const TrainConfig& config) {
  if (forget_corpus.empty() || retain_corpus.empty()) {
    throw std::invalid_argument(
        "train_reference_classifier: both corpora must be non-empty");
  }

  std::uint64_t fingerprint = rng::mix(config.seed);
  ReferenceClassifier featurizer(config,
                                 Eigen::VectorXd::Zero(static_cast<Eigen::Index>(
                                     config.hash_buckets)),
                                 0.0, 1.0, 1.0, 0);

  struct Doc {
    std::vector<std::pair<std::size_t, double>> features;
    double label;   // 1 = forget
    double weight;  // inverse-frequency class weight
  };

  const double n_total =
      static_cast<double>(forget_corpus.size() + retain_corpus.size());
  const double w_forget = n_total / (2.0 * static_cast<double>(forget_corpus.size()));
  const double w_retain = n_total / (2.0 * static_cast<double>(retain_corpus.size()));

  std::vector<Doc> docs;
  docs.reserve(forget_corpus.size() + retain_corpus.size());
  const auto add_docs = [&](const std::vector<std::string>& corpus,
                            double label, double weight) {
    for (const auto& raw : corpus) {
      const std::string normalized = text::normalize(raw);
      fingerprint = text::fnv1a(normalized, fingerprint);
      fingerprint = text::fnv1a(label > 0.5 ? "\x01" : "\x00", fingerprint);
      docs.push_back({featurizer.featurize(normalized), label, weight});
    }
  };
  add_docs(forget_corpus, 1.0, w_forget);
  add_docs(retain_corpus, 0.0, w_retain);

  double weight_sum = 0.0;
  for (const auto& doc : docs) weight_sum += doc.weight;

  Eigen::VectorXd w =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config.hash_buckets));
  double bias = 0.0;

  Eigen::VectorXd grad(w.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    grad.setZero();
    double grad_bias = 0.0;
    for (const auto& doc : docs) {
      double z = bias;
      for (const auto& [idx, v] : doc.features) {
        z += w(static_cast<Eigen::Index>(idx)) * v;
      }
      const double residual = doc.weight * (sigmoid(z) - doc.label);
      for (const auto& [idx, v] : doc.features) {
        grad(static_cast<Eigen::Index>(idx)) += residual * v;
      }
      grad_bias += residual;
    }
    const double scale = config.learning_rate / weight_sum;
    if (config.l2 > 0.0) {
      w *= 1.0 - config.learning_rate * config.l2;
    }
    w -= scale * grad;
    bias -= scale * grad_bias;
  }

  return ReferenceClassifier(config, std::move(w), bias, w_forget, w_retain,
                             fingerprint);
}

double calibrate_threshold(const std::vector<LabeledScore>& cal_scores) {
  std::size_t n_forget = 0;
  std::size_t n_retain = 0;
  for (const auto& s : cal_scores) (s.is_forget ? n_forget : n_retain)++;
  if (n_forget == 0 || n_retain == 0) {
    throw std::invalid_argument(
        "calibrate_threshold: calibration set needs both labels");
  }

  std::vector<double> sorted;
  sorted.reserve(cal_scores.size());
  for (const auto& s : cal_scores) sorted.push_back(s.score.p_forget);
  std::sort(sorted.begin(), sorted.end());

  struct Candidate {
    double tau;
    double gap;
  };
  std::vector<Candidate> candidates;
  candidates.push_back({0.0, sorted.front() - 0.0});
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    if (sorted[i + 1] > sorted[i]) {
      candidates.push_back(
          {(sorted[i] + sorted[i + 1]) / 2.0, sorted[i + 1] - sorted[i]});
    }
  }
  candidates.push_back({1.0, 1.0 - sorted.back()});

  const auto cost = [&](double tau) {
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (const auto& s : cal_scores) {
      const bool flagged = s.score.p_forget >= tau;
      if (flagged && !s.is_forget) ++fp;
      if (!flagged && s.is_forget) ++fn;
    }
    return static_cast<double>(fp) / static_cast<double>(n_retain) +
           static_cast<double>(fn) / static_cast<double>(n_forget);
  };

  double best_cost = std::numeric_limits<double>::infinity();
  double best_tau = 0.5;
  double best_gap = -1.0;
  for (const auto& c : candidates) {
    const double k = cost(c.tau);
    const bool better =
        k < best_cost - 1e-12 ||
        (std::abs(k - best_cost) <= 1e-12 &&
         (c.gap > best_gap + 1e-12 ||
          (std::abs(c.gap - best_gap) <= 1e-12 && c.tau < best_tau)));
    if (better) {
      best_cost = k;
      best_tau = c.tau;
      best_gap = c.gap;
    }
  }
  return best_tau;
}

double conformal_calibrate(const std::vector<LabeledScore>& cal_scores,
                           double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("conformal_calibrate: alpha must be in (0,1)");
  }
  if (cal_scores.empty()) {
    throw std::invalid_argument("conformal_calibrate: empty calibration set");
  }
  std::vector<double> nonconformity;
  nonconformity.reserve(cal_scores.size());
  for (const auto& s : cal_scores) {
    nonconformity.push_back(1.0 - s.score.p_of(s.is_forget));
  }
  std::sort(nonconformity.begin(), nonconformity.end());
  const auto n = nonconformity.size();
  const auto k = static_cast<std::size_t>(
      std::ceil(static_cast<double>(n + 1) * (1.0 - alpha)));
  if (k > n) return std::numeric_limits<double>::infinity();
  return nonconformity[k - 1];
}

PredictionSet prediction_set(const PromptScore& score, double q_hat) {
  PredictionSet set;
  set.retain = 1.0 - score.p_retain() <= q_hat;
  set.forget = 1.0 - score.p_forget <= q_hat;
  return set;
}

void CalibrationArtifact::validate() const {
  if (mode == DecisionMode::SimpleThreshold) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
      throw std::invalid_argument("CalibrationArtifact: tau outside [0,1]");
    }
  } else {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw std::invalid_argument("CalibrationArtifact: alpha outside (0,1)");
    }
    const bool inf = std::isinf(q_hat) && q_hat > 0.0;
    if (!inf && !(q_hat >= 0.0 && q_hat <= 1.0)) {
      throw std::invalid_argument(
          "CalibrationArtifact: q_hat outside [0,1] and not +inf");
    }
  }
}

GateDecision decide(const PromptScore& score,
                    const CalibrationArtifact& artifact,
                    const CorruptionSpec& spec) {
  artifact.validate();
  GateDecision decision;
  decision.score = score;
  if (artifact.mode == DecisionMode::SimpleThreshold) {
    decision.flagged = score.p_forget >= artifact.tau;
  } else {
    const PredictionSet set = prediction_set(score, artifact.q_hat);
    decision.prediction_set = set;
    decision.flagged = set.forget || set.size() == 0;
  }
  if (decision.flagged) decision.applied_spec = spec;
  return decision;
}

}  // namespace eco::gate
