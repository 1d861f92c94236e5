#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace eco::detail {

inline constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::string out;
  out.reserve(((size + 2) / 3) * 4);
  for (std::size_t i = 0; i < size; i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < size) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < size) chunk |= static_cast<std::uint32_t>(bytes[i + 2]);
    out.push_back(kBase64Alphabet[(chunk >> 18) & 0x3f]);
    out.push_back(kBase64Alphabet[(chunk >> 12) & 0x3f]);
    out.push_back(i + 1 < size ? kBase64Alphabet[(chunk >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < size ? kBase64Alphabet[chunk & 0x3f] : '=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view encoded) {
  const auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (encoded.size() % 4 != 0) {
    throw std::invalid_argument("base64: length not a multiple of 4");
  }
  std::vector<unsigned char> out;
  out.reserve(encoded.size() / 4 * 3);
  for (std::size_t i = 0; i < encoded.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = encoded[i + static_cast<std::size_t>(k)];
      if (c == '=' && k >= 2 && i + 4 == encoded.size()) {
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = value_of(c);
        if (vals[k] < 0) throw std::invalid_argument("base64: invalid character");
      }
    }
    const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                (static_cast<std::uint32_t>(vals[1]) << 12) |
                                (static_cast<std::uint32_t>(vals[2]) << 6) |
                                static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(chunk & 0xff));
  }
  return out;
}

}  // namespace eco::detail
