// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/resample.hpp"

namespace rsedit {

struct PyramidConfig {
  double factor = 4.0 / 3.0;
  int min_dim = 24;
};

/// Per-scale dims, coarsest first. Each coarser level is the finer one
/// divided by `factor` with round-half-up, and the chain stops before the
/// smaller side drops under `min_dim` (or when rounding stops shrinking it).
inline std::vector<Dims> pyramid_dims(Dims finest, const PyramidConfig& config) {
  if (!(config.factor > 1.0) || !std::isfinite(config.factor)) {
    throw InvalidConfig("pyramid factor must be > 1");
  }
  if (config.min_dim < 1) throw InvalidConfig("pyramid min_dim must be >= 1");
  if (finest.min_side() < config.min_dim) {
    throw InvalidInput("image " + to_string(finest) + " is smaller than the minimum scale of " +
                       std::to_string(config.min_dim) + " px");
  }
  auto shrink = [&](int v) { return static_cast<int>(std::floor(v / config.factor + 0.5)); };

  std::vector<Dims> dims{finest};
  for (;;) {
    const Dims next{shrink(dims.back().height), shrink(dims.back().width)};
    if (next.min_side() < config.min_dim || next == dims.back()) break;
    dims.push_back(next);
  }
  return {dims.rbegin(), dims.rend()};
}

/// Clean pyramid plus its blurry counterpart; index 0 is the coarsest scale.
template <typename T = float>
struct ImagePyramid {
  std::vector<Image<T>> scales;
  std::vector<Image<T>> blurry;
  double factor = 4.0 / 3.0;

  int num_scales() const { return static_cast<int>(scales.size()); }
  Dims dims(int s) const { return scales.at(s).dims(); }
  std::vector<Dims> all_dims() const {
    std::vector<Dims> out;
    for (const auto& img : scales) out.push_back(img.dims());
    return out;
  }
};

template <typename T>
ImagePyramid<T> build_pyramid(const Image<T>& image, const PyramidConfig& config = {}) {
  require_finite(image, "source image");
  const auto dims = pyramid_dims(image.dims(), config);
  const int n = static_cast<int>(dims.size());

  ImagePyramid<T> pyramid;
  pyramid.factor = config.factor;
  pyramid.scales.resize(n);
  pyramid.scales[n - 1] = image;
  for (int s = 0; s < n - 1; ++s) pyramid.scales[s] = resample(image, dims[s]);

  pyramid.blurry.resize(n);
  pyramid.blurry[0] = pyramid.scales[0];
  for (int s = 1; s < n; ++s) pyramid.blurry[s] = resample(pyramid.scales[s - 1], dims[s]);
  return pyramid;
}

}  // namespace rsedit
