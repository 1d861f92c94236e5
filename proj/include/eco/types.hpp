#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace eco {

/// Dense token-embedding block: one row per prompt token, one column per
/// embedding dimension. Row-major so that row-wise corruption streams map
/// onto contiguous memory.
template <class Scalar>
using EmbeddingMatrixT =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using EmbeddingMatrix = EmbeddingMatrixT<double>;

using TokenId = std::int32_t;
using TokenIdList = std::vector<TokenId>;

/// Whitespace token sequence used by the text metrics and the toy backend.
using TokenList = std::vector<std::string>;

/// Classifier output for one prompt. p_retain is always 1 - p_forget.
struct PromptScore {
  double p_forget = 0.0;

  double p_retain() const { return 1.0 - p_forget; }
  double p_of(bool forget_label) const {
    return forget_label ? p_forget : p_retain();
  }
};

inline bool is_finite(const EmbeddingMatrix& e) { return e.allFinite(); }

}  // namespace eco
