// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

/// Seeded generator with platform-independent normal and integer draws
/// (std::normal_distribution output differs between standard libraries, so
/// checkpointed runs would not resume identically across toolchains).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi], unbiased by rejection.
  int uniform_int(int lo, int hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int>(v % range);
  }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename T>
  Image<T> normal_image(Dims dims, int channels = 3) {
    Image<T> img(dims, channels);
    for (T& v : img.data()) v = static_cast<T>(normal());
    return img;
  }

  std::string state() const {
    std::ostringstream out;
    out << engine_ << ' ' << has_spare_ << ' ';
    out.precision(17);
    out << std::hexfloat << spare_;
    return out.str();
  }

  void restore(const std::string& text) {
    std::istringstream in(text);
    std::mt19937_64 engine;
    bool has_spare = false;
    std::string spare_text;
    in >> engine >> has_spare >> spare_text;
    if (!in && !in.eof()) throw ParseError("malformed generator state");
    engine_ = engine;
    has_spare_ = has_spare;
    spare_ = std::strtod(spare_text.c_str(), nullptr);
  }

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && has_spare_ == other.has_spare_ && spare_ == other.spare_;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rsedit
