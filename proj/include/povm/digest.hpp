#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <openssl/evp.h>

namespace povm {

using Digest256 = std::array<std::uint8_t, 32>;

inline constexpr Digest256 kZeroDigest{};

inline Digest256 sha256(std::span<const std::uint8_t> data) {
  Digest256 out{};
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

inline std::string to_hex(const Digest256& d) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : d) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

inline std::optional<Digest256> from_hex(std::string_view s) {
  if (s.size() != 64) return std::nullopt;
  Digest256 d{};
  for (std::size_t i = 0; i < 32; ++i) {
    auto nib = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    int hi = nib(s[2 * i]), lo = nib(s[2 * i + 1]);
    if (hi < 0 || lo < 0) return std::nullopt;
    d[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return d;
}

}  // namespace povm
