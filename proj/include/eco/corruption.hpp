#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "eco/rng.hpp"
#include "eco/types.hpp"

namespace eco {

enum class CorruptionKind { RandomNoise, ZeroOut, SignFlip, Reverse, Shuffle };

inline const char* to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::RandomNoise: return "random_noise";
    case CorruptionKind::ZeroOut: return "zero_out";
    case CorruptionKind::SignFlip: return "sign_flip";
    case CorruptionKind::Reverse: return "reverse";
    case CorruptionKind::Shuffle: return "shuffle";
  }
  return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
  if (s == "random_noise") return CorruptionKind::RandomNoise;
  if (s == "zero_out") return CorruptionKind::ZeroOut;
  if (s == "sign_flip") return CorruptionKind::SignFlip;
  if (s == "reverse") return CorruptionKind::Reverse;
  if (s == "shuffle") return CorruptionKind::Shuffle;
  throw std::invalid_argument("unknown corruption kind: " + s);
}

/// Which coordinates of each embedding row get corrupted.
struct DimSelect {
  enum class Rule { FirstN, TopK, RandomN };

  Rule rule = Rule::FirstN;
  Eigen::Index count = 1;
  std::uint64_t seed = 0;  // RandomN only

  static DimSelect first_n(Eigen::Index n) { return {Rule::FirstN, n, 0}; }
  static DimSelect top_k(Eigen::Index k) { return {Rule::TopK, k, 0}; }
  static DimSelect random_n(Eigen::Index n, std::uint64_t seed) {
    return {Rule::RandomN, n, seed};
  }
};

inline const char* to_string(DimSelect::Rule rule) {
  switch (rule) {
    case DimSelect::Rule::FirstN: return "first_n";
    case DimSelect::Rule::TopK: return "top_k";
    case DimSelect::Rule::RandomN: return "random_n";
  }
  return "?";
}

/// Full corruption recipe. Reverse and Shuffle operate on whole rows and
/// ignore both sigma and the dimension rule; ZeroOut ignores sigma (it is
/// parameterized by how many entries it clears, not by a magnitude).
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::RandomNoise;
  double sigma = 1.0;
  DimSelect dims = DimSelect::first_n(1);
  std::uint64_t noise_seed = 0;  // RandomNoise and Shuffle

  void validate() const {
    if (!(sigma >= 0.0)) {
      throw std::invalid_argument("CorruptionSpec: sigma must be >= 0");
    }
    if (dims.count < 0) {
      throw std::invalid_argument("CorruptionSpec: dim count must be >= 0");
    }
  }

  CorruptionSpec with_sigma(double s) const {
    CorruptionSpec out = *this;
    out.sigma = s;
    return out;
  }
};

/// Indices of the entries to corrupt in one embedding row.
///
/// FirstN(n)      -> {0, ..., n-1}
/// TopK(k)        -> k largest-magnitude entries, ties broken by lowest index
/// RandomN(n, s)  -> n distinct indices from the seeded generator; a pure
///                   function of the rule, so every row of a matrix gets the
///                   same draw
template <class Derived>
std::vector<Eigen::Index> select_dims(const Eigen::MatrixBase<Derived>& row,
                                      const DimSelect& rule) {
  const Eigen::Index d = row.size();
  if (rule.count > d) {
    throw std::invalid_argument("select_dims: rule count " +
                                std::to_string(rule.count) +
                                " exceeds dimension " + std::to_string(d));
  }
  std::vector<Eigen::Index> idx;
  switch (rule.rule) {
    case DimSelect::Rule::FirstN: {
      idx.resize(static_cast<std::size_t>(rule.count));
      std::iota(idx.begin(), idx.end(), Eigen::Index{0});
      break;
    }
    case DimSelect::Rule::TopK: {
      std::vector<Eigen::Index> all(static_cast<std::size_t>(d));
      std::iota(all.begin(), all.end(), Eigen::Index{0});
      std::stable_sort(all.begin(), all.end(),
                       [&](Eigen::Index a, Eigen::Index b) {
                         const double ma = std::abs(static_cast<double>(row(a)));
                         const double mb = std::abs(static_cast<double>(row(b)));
                         if (ma != mb) return ma > mb;
                         return a < b;
                       });
      all.resize(static_cast<std::size_t>(rule.count));
      std::sort(all.begin(), all.end());
      idx = std::move(all);
      break;
    }
    case DimSelect::Rule::RandomN: {
      std::vector<Eigen::Index> pool(static_cast<std::size_t>(d));
      std::iota(pool.begin(), pool.end(), Eigen::Index{0});
      rng::Stream stream(rule.seed);
      for (Eigen::Index i = 0; i < rule.count; ++i) {
        const auto j = i + static_cast<Eigen::Index>(stream.next_below(
                               static_cast<std::uint64_t>(d - i)));
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(j)]);
      }
      pool.resize(static_cast<std::size_t>(rule.count));
      std::sort(pool.begin(), pool.end());
      idx = std::move(pool);
      break;
    }
  }
  return idx;
}

namespace detail {

/// Applies fn(row, dim_index, noise_counter_slot) to every selected entry in
/// row-major order. The counter slot enumerates corrupted entries, so the
/// RandomNoise stream is addressable per (row, index).
template <class Fn>
void for_each_selected(const EmbeddingMatrix& e, const DimSelect& rule,
                       Fn&& fn) {
  std::uint64_t slot = 0;
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    const auto idx = select_dims(e.row(t), rule);
    for (const Eigen::Index j : idx) fn(t, j, slot++);
  }
}

}  // namespace detail

/// Returns a corrupted copy of `e`; the input is never mutated. Identical
/// (e, spec) pairs produce bit-identical results, including the seeded
/// RandomNoise and Shuffle variants.
inline EmbeddingMatrix corrupt(const EmbeddingMatrix& e,
                               const CorruptionSpec& spec) {
  if (!is_finite(e)) {
    throw std::invalid_argument("corrupt: input has non-finite entries");
  }
  spec.validate();
  EmbeddingMatrix out = e;
  switch (spec.kind) {
    case CorruptionKind::RandomNoise: {
      if (spec.sigma == 0.0) break;  // exact identity
      detail::for_each_selected(
          e, spec.dims, [&](Eigen::Index t, Eigen::Index j, std::uint64_t s) {
            out(t, j) += spec.sigma * rng::normal_at(spec.noise_seed, s);
          });
      break;
    }
    case CorruptionKind::ZeroOut: {
      detail::for_each_selected(
          e, spec.dims,
          [&](Eigen::Index t, Eigen::Index j, std::uint64_t) { out(t, j) = 0.0; });
      break;
    }
    case CorruptionKind::SignFlip: {
      detail::for_each_selected(
          e, spec.dims,
          [&](Eigen::Index t, Eigen::Index j, std::uint64_t) { out(t, j) = -out(t, j); });
      break;
    }
    case CorruptionKind::Reverse: {
      for (Eigen::Index t = 0; t < e.rows(); ++t) {
        out.row(t) = e.row(e.rows() - 1 - t);
      }
      break;
    }
    case CorruptionKind::Shuffle: {
      const auto perm = rng::permutation(static_cast<std::size_t>(e.rows()),
                                         spec.noise_seed);
      for (Eigen::Index t = 0; t < e.rows(); ++t) {
        out.row(t) = e.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(t)]));
      }
      break;
    }
  }
  return out;
}

}  // namespace eco
