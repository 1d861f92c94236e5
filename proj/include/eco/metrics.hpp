#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eco/types.hpp"

namespace eco::metrics {

enum class Orientation { HigherBetter, LowerBetter };

/// Named metric values with their preferred direction. The evaluation report
/// and the distance oracle both consume this shape.
struct MetricVector {
  struct Entry {
    double value = 0.0;
    Orientation orientation = Orientation::HigherBetter;
  };

  std::map<std::string, Entry> entries;

  void set(const std::string& name, double value,
           Orientation orientation = Orientation::HigherBetter) {
    entries[name] = Entry{value, orientation};
  }
  double at(const std::string& name) const;
  bool has(const std::string& name) const {
    return entries.count(name) != 0;
  }
};

/// LCS(reference, candidate) / |reference|.
double rouge_l_recall(const TokenList& reference, const TokenList& candidate);

/// Longest common subsequence length (exposed for the symmetry property).
std::size_t lcs_length(const TokenList& a, const TokenList& b);

/// Brevity-penalized geometric mean of clipped n-gram precisions for
/// n = 1..max_n. Orders n >= 2 with zero matches get add-one smoothing
/// ((m+1)/(t+1)); a zero unigram match count is not smoothed and yields 0.
/// Orders longer than the candidate are skipped.
double ngram_precision_bleu(const TokenList& reference,
                            const TokenList& candidate, int max_n = 4);

/// |set(tokens)| / |tokens|.
double unique_token_ratio(const TokenList& tokens);

/// exp(-mean(logprobs)); logprobs are natural-log token probabilities.
double perplexity(std::span<const double> logprobs);

/// Length-normalized answer probability exp(logprob_sum / answer_len).
double answer_probability(double answer_logprob_sum, std::size_t answer_len);

/// correct / sum(perturbed), all inputs already length-normalized.
double answer_probability_ratio(double correct,
                                std::span<const double> perturbed);

struct TruthRatioInputs {
  std::vector<double> perturbed_probs;  // normalized, in (0, 1]
  double paraphrased_prob = 0.0;        // normalized, in (0, 1]
};

/// geomean(perturbed normalized probs) / paraphrased normalized prob.
double truth_ratio(const TruthRatioInputs& inputs);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test. D is the exact sup-norm ECDF gap;
/// the p-value uses the asymptotic Kolmogorov series at
/// lambda = sqrt(|a||b| / (|a|+|b|)) * D, truncated once terms drop below
/// 1e-12.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);

/// KS p-value of the two truth-ratio samples.
double forget_quality(std::span<const double> unlearned_truth_ratios,
                      std::span<const double> retained_truth_ratios);

/// Harmonic mean of exactly nine values; 0 if any value is 0.
double model_utility(std::span<const double> nine_values);

/// Mean absolute difference between same-named entries of the two vectors.
double average_similarity_gap(const MetricVector& unlearned,
                              const MetricVector& retained);

/// Per-question option logits, exactly four per row.
using OptionLogits = Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;

/// Fraction of questions whose argmax logit (ties to the lowest index)
/// equals the gold index.
double mc_accuracy(const OptionLogits& logits,
                   std::span<const int> gold);

struct ProbeConfig {
  int epochs = 300;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

/// Trains a multinomial logistic probe on (train_features, train_labels) by
/// full-batch gradient descent and returns held-out accuracy on the test
/// split. Deterministic under the config seed.
double probe_evaluate(const Eigen::MatrixXd& train_features,
                      std::span<const int> train_labels,
                      const Eigen::MatrixXd& test_features,
                      std::span<const int> test_labels, int classes = 4,
                      const ProbeConfig& config = {});

}  // namespace eco::metrics
