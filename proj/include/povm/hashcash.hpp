#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "povm/bytes.hpp"
#include "povm/digest.hpp"

namespace povm {

// Difficulty as a count of required leading zero bits; equivalent to a
// big-endian threshold T = 2^(256 - leading_zero_bits).
struct Difficulty {
  std::uint32_t leading_zero_bits = 0;  // 0..255
};

inline bool meets_target(const Digest256& digest, Difficulty d) {
  std::uint32_t bits = d.leading_zero_bits;
  std::size_t i = 0;
  while (bits >= 8) {
    if (digest[i] != 0) return false;
    ++i;
    bits -= 8;
  }
  if (bits > 0) {
    std::uint8_t mask = static_cast<std::uint8_t>(0xFF << (8 - bits));
    if (digest[i] & mask) return false;
  }
  return true;
}

struct MiningOutcome {
  std::uint64_t nonce = 0;
  Digest256 digest{};
  std::uint64_t attempts = 0;  // digest evaluations, the PoW energy unit
};

inline Digest256 hashcash_digest(std::span<const std::uint8_t> block_bytes, std::uint64_t nonce) {
  std::vector<std::uint8_t> buf(block_bytes.begin(), block_bytes.end());
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(nonce >> (8 * i)));
  return sha256(buf);
}

// Sequential scan from nonce_start; returns nullopt after max_attempts
// digests without success.
inline std::optional<MiningOutcome> mine(std::span<const std::uint8_t> block_bytes, Difficulty d,
                                         std::uint64_t nonce_start, std::uint64_t max_attempts) {
  std::vector<std::uint8_t> buf(block_bytes.begin(), block_bytes.end());
  buf.resize(buf.size() + 8);
  std::uint64_t nonce = nonce_start;
  for (std::uint64_t attempt = 1; attempt <= max_attempts; ++attempt, ++nonce) {
    for (int i = 0; i < 8; ++i)
      buf[buf.size() - 8 + i] = static_cast<std::uint8_t>(nonce >> (8 * i));
    Digest256 h = sha256(buf);
    if (meets_target(h, d)) return MiningOutcome{nonce, h, attempt};
  }
  return std::nullopt;
}

// E[attempts] = 2^d for an ideal digest; d capped at 62 to stay in range.
inline std::optional<std::uint64_t> expected_attempts(Difficulty d) {
  if (d.leading_zero_bits > 62) return std::nullopt;
  return std::uint64_t{1} << d.leading_zero_bits;
}

}  // namespace povm
