#include "eco/backend.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "eco/rng.hpp"
#include "eco/text.hpp"

namespace eco::backend {

namespace {

constexpr char kUnknownToken[] = "<unk>";

// Stream tags keep the independent draw families of one generation apart.
constexpr std::uint64_t kMaskTag = 0x6d61736bULL;    // which positions resample
constexpr std::uint64_t kNoiseTag = 0x6e6f6973ULL;   // replacement tokens
constexpr std::uint64_t kJitterTag = 0x6a697474ULL;  // clean option logits

std::string canonical_key(const std::string& raw) {
  return text::join(text::split_ws(raw));
}

}  // namespace

void KnowledgeTable::add(const std::string& key, const std::string& answer) {
  entries[canonical_key(key)] = answer;
}

const std::string* KnowledgeTable::find(const std::string& key) const {
  const auto it = entries.find(key);
  return it == entries.end() ? nullptr : &it->second;
}

ToyBackend::ToyBackend(ToyBackendConfig config, KnowledgeTable table)
    : config_(std::move(config)), table_(std::move(table)) {
  if (config_.dim < 1) {
    throw std::invalid_argument("ToyBackend: dim must be >= 1");
  }
  if (!(config_.kappa > 0.0)) {
    throw std::invalid_argument("ToyBackend: kappa must be > 0");
  }
  if (!(config_.score_floor > 0.0 && config_.score_floor <= 1.0)) {
    throw std::invalid_argument("ToyBackend: score_floor must be in (0, 1]");
  }

  std::set<std::string> words;
  words.insert(kUnknownToken);
  for (const auto& tok : text::split_ws(config_.fallback_text)) {
    words.insert(tok);
  }
  for (const auto& [key, answer] : table_.entries) {
    for (const auto& tok : text::split_ws(key)) words.insert(tok);
    for (const auto& tok : text::split_ws(answer)) words.insert(tok);
  }

  vocab_.assign(words.begin(), words.end());
  vocab_index_.reserve(vocab_.size());
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    vocab_index_[vocab_[i]] = static_cast<TokenId>(i);
  }

  // Codebook rows hash the token text, not its id, so two backends with the
  // same (seed, dim) embed shared tokens identically even when their
  // vocabularies differ.
  codebook_.resize(static_cast<Eigen::Index>(vocab_.size()), config_.dim);
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const std::uint64_t token_seed =
        rng::combine(config_.seed, text::fnv1a(vocab_[i]));
    for (int k = 0; k < config_.dim; ++k) {
      codebook_(static_cast<Eigen::Index>(i), k) =
          2.0 * rng::unit_at(token_seed, static_cast<std::uint64_t>(k)) - 1.0;
    }
  }

  fallback_tokens_ = text::split_ws(config_.fallback_text);
  if (fallback_tokens_.empty()) {
    throw std::invalid_argument("ToyBackend: fallback text must be non-empty");
  }
}

TokenId ToyBackend::token_id(const std::string& token) const {
  const auto it = vocab_index_.find(token);
  if (it == vocab_index_.end()) {
    return vocab_index_.at(kUnknownToken);
  }
  return it->second;
}

const std::string& ToyBackend::token_text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw std::invalid_argument("ToyBackend: token id out of range");
  }
  return vocab_[static_cast<std::size_t>(id)];
}

TokenIdList ToyBackend::tokenize(const std::string& prompt) const {
  TokenIdList ids;
  for (const auto& tok : text::split_ws(prompt)) {
    ids.push_back(token_id(tok));
  }
  return ids;
}

EmbeddingMatrix ToyBackend::embed(const TokenIdList& ids) const {
  if (ids.empty()) {
    throw std::invalid_argument("ToyBackend::embed: empty token list");
  }
  EmbeddingMatrix e(static_cast<Eigen::Index>(ids.size()), config_.dim);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const TokenId id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
      throw std::invalid_argument("ToyBackend::embed: token id out of range");
    }
    e.row(static_cast<Eigen::Index>(t)) = codebook_.row(id);
  }
  return e;
}

TokenIdList ToyBackend::decode(const EmbeddingMatrix& e) const {
  if (e.cols() != config_.dim) {
    throw std::invalid_argument("ToyBackend::decode: dimension mismatch");
  }
  // argmin_v ||row - codebook_v||^2 == argmin_v (||v||^2 - 2 row.v)
  const Eigen::VectorXd cb_norms = codebook_.rowwise().squaredNorm();
  TokenIdList ids(static_cast<std::size_t>(e.rows()));
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    Eigen::VectorXd scores = cb_norms - 2.0 * (codebook_ * e.row(t).transpose());
    Eigen::Index best = 0;
    scores.minCoeff(&best);
    ids[static_cast<std::size_t>(t)] = static_cast<TokenId>(best);
  }
  return ids;
}

ToyBackend::Lookup ToyBackend::look_up(const EmbeddingMatrix& e) const {
  if (!is_finite(e)) {
    throw std::invalid_argument("ToyBackend: non-finite embeddings");
  }
  const TokenIdList ids = decode(e);
  TokenList tokens;
  tokens.reserve(ids.size());
  for (const TokenId id : ids) tokens.push_back(token_text(id));

  Lookup lookup;
  lookup.key = text::join(tokens);

  const EmbeddingMatrix reference = embed(ids);
  const double delta = (e - reference).norm();
  const double scale =
      config_.kappa *
      std::sqrt(static_cast<double>(e.rows()) * static_cast<double>(e.cols()));
  lookup.p_corrupt = std::min(1.0, delta / scale);

  if (const std::string* answer = table_.find(lookup.key)) {
    lookup.stored = text::split_ws(*answer);
    lookup.known = true;
  } else {
    lookup.stored = fallback_tokens_;
  }
  return lookup;
}

double ToyBackend::corruption_probability(const EmbeddingMatrix& e) const {
  return look_up(e).p_corrupt;
}

GenerationResult ToyBackend::generate_from_embeddings(
    const EmbeddingMatrix& e, int max_tokens, std::uint64_t seed) const {
  if (max_tokens < 0) {
    throw std::invalid_argument("ToyBackend: max_tokens must be >= 0");
  }
  GenerationResult out;
  if (max_tokens == 0) return out;

  const Lookup lookup = look_up(e);
  const std::uint64_t key_seed = rng::combine(seed, text::fnv1a(lookup.key));
  const std::uint64_t mask_seed = rng::combine(key_seed, kMaskTag);
  const std::uint64_t noise_seed = rng::combine(key_seed, kNoiseTag);
  const double log_uniform = -std::log(static_cast<double>(vocab_.size()));

  const std::size_t n =
      std::min<std::size_t>(static_cast<std::size_t>(max_tokens),
                            lookup.stored.size());
  out.tokens.reserve(n);
  out.logprobs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool resample = rng::unit_at(mask_seed, i) < lookup.p_corrupt;
    if (resample) {
      const auto pick = rng::at(noise_seed, i) % vocab_.size();
      out.tokens.push_back(vocab_[pick]);
      out.logprobs.push_back(log_uniform);
    } else {
      out.tokens.push_back(lookup.stored[i]);
      out.logprobs.push_back(0.0);
    }
  }
  return out;
}

std::vector<double> ToyBackend::score_continuation(
    const EmbeddingMatrix& e, const TokenIdList& continuation) const {
  if (continuation.empty()) {
    throw std::invalid_argument("ToyBackend: empty continuation");
  }
  const Lookup lookup = look_up(e);
  const double noise_share = std::max(lookup.p_corrupt, config_.score_floor);
  const double v = static_cast<double>(vocab_.size());

  std::vector<double> logprobs;
  logprobs.reserve(continuation.size());
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    double p;
    if (j >= lookup.stored.size()) {
      p = 1.0 / v;
    } else if (token_text(continuation[j]) == lookup.stored[j]) {
      p = (1.0 - noise_share) + noise_share / v;
    } else {
      p = noise_share / v;
    }
    logprobs.push_back(std::log(p));
  }
  return logprobs;
}

std::array<double, 4> ToyBackend::option_logits(
    const EmbeddingMatrix& e, const std::array<TokenId, 4>& options) const {
  const Lookup lookup = look_up(e);

  int gold = -1;
  if (lookup.known && !lookup.stored.empty()) {
    for (int o = 0; o < 4; ++o) {
      if (token_text(options[static_cast<std::size_t>(o)]) ==
          lookup.stored.front()) {
        gold = o;
        break;
      }
    }
  }

  const std::uint64_t jitter_seed =
      rng::combine(rng::combine(config_.seed, text::fnv1a(lookup.key)), kJitterTag);
  std::uint64_t content_hash = 0xcbf29ce484222325ULL;
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    for (Eigen::Index k = 0; k < e.cols(); ++k) {
      const double value = e(t, k);
      content_hash = text::fnv1a(
          {reinterpret_cast<const char*>(&value), sizeof(value)}, content_hash);
    }
  }

  const double p = lookup.p_corrupt;
  std::array<double, 4> logits{};
  for (int o = 0; o < 4; ++o) {
    const auto uo = static_cast<std::uint64_t>(o);
    const double jitter = rng::unit_at(jitter_seed, uo);
    const double clean = (o == gold ? 6.0 : 0.0) + jitter;
    const double noise = 6.0 * rng::unit_at(content_hash, uo);
    logits[static_cast<std::size_t>(o)] = (1.0 - p) * clean + p * noise;
  }
  return logits;
}

}  // namespace eco::backend
