#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "eco/types.hpp"

namespace eco::text {

/// Canonical form used by the classifier and the text metrics: ASCII
/// lowercase, runs of whitespace collapsed to single spaces, trimmed.
inline std::string normalize(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (const char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(
        static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

/// Whitespace split, case preserved. Backend vocabularies are keyed on the
/// raw tokens.
inline TokenList split_ws(std::string_view raw) {
  TokenList tokens;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() &&
           std::isspace(static_cast<unsigned char>(raw[i]))) {
      ++i;
    }
    std::size_t start = i;
    while (i < raw.size() &&
           !std::isspace(static_cast<unsigned char>(raw[i]))) {
      ++i;
    }
    if (i > start) tokens.emplace_back(raw.substr(start, i - start));
  }
  return tokens;
}

/// Tokenization for the similarity metrics: normalize, then split.
inline TokenList metric_tokens(std::string_view raw) {
  return split_ws(normalize(raw));
}

inline std::string join(const TokenList& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

/// FNV-1a 64-bit. Used for feature hashing and artifact fingerprints.
inline constexpr std::uint64_t fnv1a(std::string_view bytes,
                                     std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace eco::text
