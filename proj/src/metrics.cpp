#include "eco/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "eco/rng.hpp"

namespace eco::metrics {

double MetricVector::at(const std::string& name) const {
  const auto it = entries.find(name);
  if (it == entries.end()) {
    throw std::invalid_argument("MetricVector: no metric named '" + name + "'");
  }
  return it->second.value;
}

std::size_t lcs_length(const TokenList& a, const TokenList& b) {
  if (a.empty() || b.empty()) return 0;
  // Two-row dynamic program.
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_recall(const TokenList& reference, const TokenList& candidate) {
  if (reference.empty()) {
    throw std::invalid_argument("rouge_l_recall: empty reference");
  }
  return static_cast<double>(lcs_length(reference, candidate)) /
         static_cast<double>(reference.size());
}

namespace {

// n-gram multiset counter keyed by joined tokens.
std::unordered_map<std::string, int> ngram_counts(const TokenList& tokens,
                                                  std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) {
      key.push_back('\x1f');
      key.append(tokens[i + k]);
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double ngram_precision_bleu(const TokenList& reference,
                            const TokenList& candidate, int max_n) {
  if (candidate.empty()) {
    throw std::invalid_argument("ngram_precision_bleu: empty candidate");
  }
  if (max_n < 1) {
    throw std::invalid_argument("ngram_precision_bleu: max_n must be >= 1");
  }
  const int effective_n =
      std::min<int>(max_n, static_cast<int>(candidate.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= effective_n; ++n) {
    const auto cand = ngram_counts(candidate, static_cast<std::size_t>(n));
    const auto ref = ngram_counts(reference, static_cast<std::size_t>(n));
    long long total = 0;
    long long matched = 0;
    for (const auto& [key, count] : cand) {
      total += count;
      const auto it = ref.find(key);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (matched > 0) {
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else if (n >= 2) {
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      return 0.0;  // no unigram overlap
    }
    log_sum += std::log(precision);
  }
  const double geo = std::exp(log_sum / effective_n);
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return brevity * geo;
}

double unique_token_ratio(const TokenList& tokens) {
  if (tokens.empty()) {
    throw std::invalid_argument("unique_token_ratio: empty token list");
  }
  std::unordered_set<std::string> unique(tokens.begin(), tokens.end());
  return static_cast<double>(unique.size()) /
         static_cast<double>(tokens.size());
}

double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) {
    throw std::invalid_argument("perplexity: empty logprob list");
  }
  double sum = 0.0;
  for (const double lp : logprobs) {
    if (lp > 0.0) {
      throw std::invalid_argument("perplexity: positive logprob");
    }
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double answer_probability(double answer_logprob_sum, std::size_t answer_len) {
  if (answer_len == 0) {
    throw std::invalid_argument("answer_probability: zero answer length");
  }
  if (answer_logprob_sum > 0.0) {
    throw std::invalid_argument("answer_probability: positive logprob sum");
  }
  return std::exp(answer_logprob_sum / static_cast<double>(answer_len));
}

double answer_probability_ratio(double correct,
                                std::span<const double> perturbed) {
  if (perturbed.empty()) {
    throw std::invalid_argument("answer_probability_ratio: empty perturbed list");
  }
  double denom = 0.0;
  for (const double p : perturbed) denom += p;
  if (denom <= 0.0) {
    throw std::invalid_argument("answer_probability_ratio: zero denominator");
  }
  return correct / denom;
}

double truth_ratio(const TruthRatioInputs& inputs) {
  if (inputs.perturbed_probs.empty()) {
    throw std::invalid_argument("truth_ratio: empty perturbed list");
  }
  if (inputs.paraphrased_prob <= 0.0) {
    throw std::invalid_argument("truth_ratio: zero paraphrased probability");
  }
  double log_sum = 0.0;
  for (const double p : inputs.perturbed_probs) {
    if (p <= 0.0) {
      throw std::invalid_argument("truth_ratio: non-positive perturbed probability");
    }
    log_sum += std::log(p);
  }
  const double geomean =
      std::exp(log_sum / static_cast<double>(inputs.perturbed_probs.size()));
  return geomean / inputs.paraphrased_prob;
}

namespace {

// Complementary CDF of the Kolmogorov distribution,
// Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100000; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    if (term < 1e-12) break;
    sum += sign * term;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("ks_two_sample: empty sample");
  }
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  const std::size_t n = sa.size();
  const std::size_t m = sb.size();
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < n && j < m) {
    const double x = std::min(sa[i], sb[j]);
    while (i < n && sa[i] <= x) ++i;
    while (j < m && sb[j] <= x) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(n);
    const double fb = static_cast<double>(j) / static_cast<double>(m);
    d = std::max(d, std::abs(fa - fb));
  }

  const double ne = static_cast<double>(n) * static_cast<double>(m) /
                    static_cast<double>(n + m);
  const double p = d == 0.0 ? 1.0 : kolmogorov_survival(std::sqrt(ne) * d);
  return {d, p};
}

double forget_quality(std::span<const double> unlearned_truth_ratios,
                      std::span<const double> retained_truth_ratios) {
  return ks_two_sample(unlearned_truth_ratios, retained_truth_ratios).p_value;
}

double model_utility(std::span<const double> nine_values) {
  if (nine_values.size() != 9) {
    throw std::invalid_argument("model_utility: expected exactly 9 values");
  }
  double reciprocal_sum = 0.0;
  for (const double v : nine_values) {
    if (v < 0.0) {
      throw std::invalid_argument("model_utility: negative input");
    }
    if (v == 0.0) return 0.0;
    reciprocal_sum += 1.0 / v;
  }
  return 9.0 / reciprocal_sum;
}

double average_similarity_gap(const MetricVector& unlearned,
                              const MetricVector& retained) {
  if (unlearned.entries.size() != retained.entries.size() ||
      unlearned.entries.empty()) {
    throw std::invalid_argument("average_similarity_gap: metric sets differ");
  }
  double sum = 0.0;
  for (const auto& [name, entry] : unlearned.entries) {
    if (!retained.has(name)) {
      throw std::invalid_argument("average_similarity_gap: missing metric '" +
                                  name + "'");
    }
    sum += std::abs(entry.value - retained.at(name));
  }
  return sum / static_cast<double>(unlearned.entries.size());
}

double mc_accuracy(const OptionLogits& logits, std::span<const int> gold) {
  if (static_cast<std::size_t>(logits.rows()) != gold.size()) {
    throw std::invalid_argument("mc_accuracy: row/gold count mismatch");
  }
  if (logits.rows() == 0) {
    throw std::invalid_argument("mc_accuracy: no questions");
  }
  std::size_t hits = 0;
  for (Eigen::Index q = 0; q < logits.rows(); ++q) {
    int best = 0;
    for (int o = 1; o < 4; ++o) {
      if (logits(q, o) > logits(q, best)) best = o;
    }
    const int g = gold[static_cast<std::size_t>(q)];
    if (g < 0 || g > 3) {
      throw std::invalid_argument("mc_accuracy: gold index out of range");
    }
    if (best == g) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

double probe_evaluate(const Eigen::MatrixXd& train_features,
                      std::span<const int> train_labels,
                      const Eigen::MatrixXd& test_features,
                      std::span<const int> test_labels, int classes,
                      const ProbeConfig& config) {
  const Eigen::Index n = train_features.rows();
  const Eigen::Index dim = train_features.cols();
  if (static_cast<std::size_t>(n) != train_labels.size() ||
      static_cast<std::size_t>(test_features.rows()) != test_labels.size()) {
    throw std::invalid_argument("probe_evaluate: feature/label count mismatch");
  }
  if (n == 0 || test_features.rows() == 0) {
    throw std::invalid_argument("probe_evaluate: empty split");
  }
  if (test_features.cols() != dim) {
    throw std::invalid_argument("probe_evaluate: feature width mismatch");
  }

  std::vector<int> seen(static_cast<std::size_t>(classes), 0);
  for (const int y : train_labels) {
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("probe_evaluate: label out of range");
    }
    seen[static_cast<std::size_t>(y)] = 1;
  }
  for (int c = 0; c < classes; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) {
      throw std::invalid_argument("probe_evaluate: class " + std::to_string(c) +
                                  " absent from training split");
    }
  }

  // Weights include a bias column; tiny seeded init breaks exact zero ties.
  Eigen::MatrixXd w(classes, dim + 1);
  for (Eigen::Index c = 0; c < classes; ++c) {
    for (Eigen::Index k = 0; k <= dim; ++k) {
      const auto counter = static_cast<std::uint64_t>(c * (dim + 1) + k);
      w(c, k) = 1e-3 * (rng::unit_at(config.seed, counter) - 0.5);
    }
  }

  Eigen::MatrixXd x(n, dim + 1);
  x.leftCols(dim) = train_features;
  x.col(dim).setOnes();

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    onehot(i, train_labels[static_cast<std::size_t>(i)]) = 1.0;
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::MatrixXd z = x * w.transpose();                  // n x classes
    z.colwise() -= z.rowwise().maxCoeff();
    Eigen::MatrixXd p = z.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    const Eigen::MatrixXd grad =
        (p - onehot).transpose() * x / static_cast<double>(n);
    w -= config.learning_rate * grad;
  }

  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < test_features.rows(); ++i) {
    Eigen::VectorXd f(dim + 1);
    f.head(dim) = test_features.row(i);
    f(dim) = 1.0;
    Eigen::VectorXd scores = w * f;
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    const int y = test_labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("probe_evaluate: test label out of range");
    }
    if (static_cast<int>(best) == y) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(test_features.rows());
}

}  // namespace eco::metrics
