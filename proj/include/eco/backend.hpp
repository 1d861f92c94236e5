#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "eco/types.hpp"

namespace eco::backend {

struct GenerationResult {
  TokenList tokens;
  std::vector<double> logprobs;  // natural log, one per token, all <= 0
};

/// Model abstraction the gate, optimizer, gateway and harness run against.
/// embed() is the detached input embedding map; generate_from_embeddings()
/// and option_logits() consume embeddings directly so corrupted prompts
/// never pass through token space. score_continuation() exposes per-token
/// logprobs of a forced continuation, the quantity the truth-ratio metrics
/// are built on.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual std::string model_id() const = 0;
  virtual TokenIdList tokenize(const std::string& prompt) const = 0;
  virtual EmbeddingMatrix embed(const TokenIdList& ids) const = 0;
  virtual GenerationResult generate_from_embeddings(const EmbeddingMatrix& e,
                                                    int max_tokens,
                                                    std::uint64_t seed) const = 0;
  virtual std::array<double, 4> option_logits(
      const EmbeddingMatrix& e, const std::array<TokenId, 4>& options) const = 0;
  virtual std::vector<double> score_continuation(
      const EmbeddingMatrix& e, const TokenIdList& continuation) const = 0;

  virtual std::size_t vocab_size() const = 0;
  virtual TokenId token_id(const std::string& token) const = 0;
  virtual const std::string& token_text(TokenId id) const = 0;

  GenerationResult generate(const std::string& prompt, int max_tokens,
                            std::uint64_t seed) const {
    return generate_from_embeddings(embed(tokenize(prompt)), max_tokens, seed);
  }
};

/// Prompt-key -> answer text. Keys are canonicalized to single-space token
/// joins so embedding round trips hit the same entry.
struct KnowledgeTable {
  std::map<std::string, std::string> entries;

  void add(const std::string& key, const std::string& answer);
  const std::string* find(const std::string& key) const;
};

struct ToyBackendConfig {
  int dim = 16;
  std::uint64_t seed = 0;
  /// Scale of the degradation law: per-token corruption probability is
  /// min(1, ||e~ - e||_F / (kappa * sqrt(T d))).
  double kappa = 1.0;
  /// Floor on the noise share of the scoring emission mixture; keeps every
  /// continuation logprob finite.
  double score_floor = 0.02;
  std::string fallback_text =
      "wolo huno wohu hupo wono hulo wopo huwo wolu hono wuho holo";
  std::string model_id = "toy";
};

/// Deterministic stand-in for a language model: a seeded per-token codebook
/// plays the embedding layer, a knowledge table plays the weights, and a
/// Frobenius-norm degradation law converts embedding damage into output
/// damage. Immutable after construction; all operations are safe for
/// concurrent callers.
class ToyBackend : public ModelBackend {
 public:
  ToyBackend(ToyBackendConfig config, KnowledgeTable table);

  std::string model_id() const override { return config_.model_id; }
  TokenIdList tokenize(const std::string& prompt) const override;
  EmbeddingMatrix embed(const TokenIdList& ids) const override;
  GenerationResult generate_from_embeddings(const EmbeddingMatrix& e,
                                            int max_tokens,
                                            std::uint64_t seed) const override;
  std::array<double, 4> option_logits(
      const EmbeddingMatrix& e,
      const std::array<TokenId, 4>& options) const override;
  std::vector<double> score_continuation(
      const EmbeddingMatrix& e, const TokenIdList& continuation) const override;

  std::size_t vocab_size() const override { return vocab_.size(); }
  TokenId token_id(const std::string& token) const override;
  const std::string& token_text(TokenId id) const override;

  const ToyBackendConfig& config() const { return config_; }
  const KnowledgeTable& table() const { return table_; }

  /// Nearest-codebook token per row (ties to the lowest id).
  TokenIdList decode(const EmbeddingMatrix& e) const;

  /// Degradation probability of `e` relative to its nearest clean
  /// reconstruction.
  double corruption_probability(const EmbeddingMatrix& e) const;

 private:
  struct Lookup {
    std::string key;
    TokenList stored;  // table answer, or the fallback continuation
    bool known = false;
    double p_corrupt = 0.0;
  };
  Lookup look_up(const EmbeddingMatrix& e) const;

  ToyBackendConfig config_;
  KnowledgeTable table_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> vocab_index_;
  EmbeddingMatrix codebook_;  // vocab_size x dim
  TokenList fallback_tokens_;
};

}  // namespace eco::backend
