// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

#include "rsedit/image.hpp"

namespace rsedit {

/// 64-bit FNV-1a. Identifies content, not a security primitive.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) {
    for (std::uint8_t b : bytes) {
      hash_ ^= b;
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update_u64(std::uint64_t v) {
    std::uint8_t bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<std::uint8_t>(v >> (8 * i));
    update(bytes);
  }
  std::uint64_t value() const { return hash_; }
  std::string hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(hash_ >> (4 * i)) & 0xF];
    return out;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string digest_bytes(std::span<const std::uint8_t> bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

/// Digest over dims, channel count and the little-endian IEEE bits of every value.
inline std::string image_digest(const Image<float>& img) {
  Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(img.height()));
  h.update_u64(static_cast<std::uint64_t>(img.width()));
  h.update_u64(static_cast<std::uint64_t>(img.channels()));
  for (float v : img.data()) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h.update_u64(bits);
  }
  return h.hex();
}

}  // namespace rsedit
