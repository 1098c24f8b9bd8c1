// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

namespace detail {

// Keys cubic convolution kernel with a = -0.5.
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

// Half-pixel-centred sampling positions with edge clamping.
inline std::vector<Taps> cubic_taps(int in_size, int out_size) {
  std::vector<Taps> taps(out_size);
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[o].index[k] = std::clamp(base - 1 + k, 0, in_size - 1);
      taps[o].weight[k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Bicubic resize to `target`. Values are not clipped; resizing to the
/// current dims returns an exact copy.
template <typename T>
Image<T> resample(const Image<T>& image, Dims target) {
  if (target.height <= 0 || target.width <= 0) {
    throw InvalidInput("resample: target dims must be positive, got " + to_string(target));
  }
  if (image.empty()) throw InvalidInput("resample: empty source image");
  if (target == image.dims()) return image;

  const auto col_taps = detail::cubic_taps(image.width(), target.width);
  const auto row_taps = detail::cubic_taps(image.height(), target.height);

  Image<T> out(target, image.channels());
  std::vector<double> horizontal(static_cast<std::size_t>(image.height()) * target.width);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < target.width; ++x) {
        const auto& tap = col_taps[x];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tap.weight[k] * image.at(c, y, tap.index[k]);
        horizontal[static_cast<std::size_t>(y) * target.width + x] = acc;
      }
    }
    for (int y = 0; y < target.height; ++y) {
      const auto& tap = row_taps[y];
      for (int x = 0; x < target.width; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
          acc += tap.weight[k] * horizontal[static_cast<std::size_t>(tap.index[k]) * target.width + x];
        }
        out.at(c, y, x) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

}  // namespace rsedit
