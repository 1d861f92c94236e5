#pragma once

// Brute-force reference implementations, independent of the library code
// paths they check. Kept deliberately naive: full-table recursions, O(n^2)
// sweeps, direct formula evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace oracles {

// LCS by full-table recursion with memoization (the library uses a rolling
// two-row iterative table).
inline std::size_t lcs_recursive(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b,
                                 std::size_t i, std::size_t j,
                                 std::vector<std::vector<long long>>& memo) {
  if (i == 0 || j == 0) return 0;
  auto& slot = memo[i][j];
  if (slot >= 0) return static_cast<std::size_t>(slot);
  std::size_t value;
  if (a[i - 1] == b[j - 1]) {
    value = lcs_recursive(a, b, i - 1, j - 1, memo) + 1;
  } else {
    value = std::max(lcs_recursive(a, b, i - 1, j, memo),
                     lcs_recursive(a, b, i, j - 1, memo));
  }
  slot = static_cast<long long>(value);
  return value;
}

inline std::size_t lcs(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::vector<std::vector<long long>> memo(
      a.size() + 1, std::vector<long long>(b.size() + 1, -1));
  return lcs_recursive(a, b, a.size(), b.size(), memo);
}

inline double rouge_l_recall(const std::vector<std::string>& reference,
                             const std::vector<std::string>& candidate) {
  return static_cast<double>(lcs(reference, candidate)) /
         static_cast<double>(reference.size());
}

// n-gram listing by explicit subsequence copies.
inline std::vector<std::vector<std::string>> list_ngrams(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::vector<std::vector<std::string>> grams;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    grams.emplace_back(tokens.begin() + static_cast<long>(i),
                       tokens.begin() + static_cast<long>(i + n));
  }
  return grams;
}

// Clipped n-gram precision BLEU with add-one smoothing on zero-match orders
// n >= 2; zero unigram matches give 0. Orders longer than the candidate are
// skipped. Brevity penalty exp(1 - r/c) when the candidate is shorter.
inline double bleu(const std::vector<std::string>& reference,
                   const std::vector<std::string>& candidate, int max_n = 4) {
  const int effective_n = std::min<int>(max_n, static_cast<int>(candidate.size()));
  double log_sum = 0.0;
  for (int n = 1; n <= effective_n; ++n) {
    const auto cand_grams = list_ngrams(candidate, static_cast<std::size_t>(n));
    const auto ref_grams = list_ngrams(reference, static_cast<std::size_t>(n));
    std::map<std::vector<std::string>, long long> cand_counts, ref_counts;
    for (const auto& g : cand_grams) ++cand_counts[g];
    for (const auto& g : ref_grams) ++ref_counts[g];
    long long matched = 0;
    long long total = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (matched > 0) {
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else if (n >= 2) {
      precision = 1.0 / static_cast<double>(total + 1);
    } else {
      return 0.0;
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / effective_n);
}

// KS statistic by an O(n^2) sweep over every pooled point: the ECDFs are
// evaluated by direct counting.
inline double ks_statistic(const std::vector<double>& a,
                           const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  double d = 0.0;
  for (const double x : pooled) {
    const auto below = [&](const std::vector<double>& v) {
      std::size_t count = 0;
      for (const double y : v) {
        if (y <= x) ++count;
      }
      return static_cast<double>(count) / static_cast<double>(v.size());
    };
    d = std::max(d, std::abs(below(a) - below(b)));
  }
  return d;
}

// Reference evaluation of the asymptotic Kolmogorov survival series at
// lambda = sqrt(nm/(n+m)) * D, pairing terms rather than truncating on
// magnitude.
inline double ks_p_value(double d, std::size_t n, std::size_t m) {
  if (d <= 0.0) return 1.0;
  const double ne = static_cast<double>(n) * static_cast<double>(m) /
                    static_cast<double>(n + m);
  const double lambda = std::sqrt(ne) * d;
  double sum = 0.0;
  for (int j = 1; j < 100001; j += 2) {
    const double positive = std::exp(-2.0 * j * j * lambda * lambda);
    const double negative = std::exp(-2.0 * (j + 1.0) * (j + 1.0) * lambda * lambda);
    sum += positive - negative;
    if (positive < 1e-14) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// Tiny deterministic generator for randomized comparisons (xorshift-style,
// unrelated to the library's splitmix stream).
class SimpleRng {
 public:
  explicit SimpleRng(std::uint64_t seed) : state_(seed ? seed : 1) {}

  std::uint64_t next() {
    state_ ^= state_ << 13;
    state_ ^= state_ >> 7;
    state_ ^= state_ << 17;
    return state_;
  }
  double uniform() {
    return static_cast<double>(next() >> 11) / 9007199254740992.0;
  }
  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

 private:
  std::uint64_t state_;
};

}  // namespace oracles
