// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsedit/digest.hpp"
#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/rng.hpp"

namespace rsedit {

/// Unit-norm embedding. Construction normalizes; a zero vector is rejected.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  static EmbeddingVector normalized(std::vector<double> values) {
    const double norm = l2_norm<double>(values);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidInput("cannot normalize a zero or non-finite embedding");
    for (double& v : values) v /= norm;
    EmbeddingVector e;
    e.values_ = std::move(values);
    return e;
  }

  std::size_t dimension() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double norm() const { return l2_norm<double>(values_); }
  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("embedding dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// One square root over the product of squared norms keeps cos(a, a) == 1 and
/// cos(a, -a) == -1 exact in floating point.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double aa = dot(a, a);
  const double bb = dot(b, b);
  if (!(aa > 0.0) || !(bb > 0.0)) throw InvalidInput("cosine similarity of a zero vector");
  return std::clamp(dot(a, b) / std::sqrt(aa * bb), -1.0, 1.0);
}

/// Joint image/text embedder. The image branch must be differentiable:
/// `image_pullback` maps d(loss)/d(embedding) to d(loss)/d(pixels), where the
/// embedding is the normalized output of `embed_image`.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingVector embed_text(std::string_view text) const = 0;
  virtual EmbeddingVector embed_image(const Image<double>& image) const = 0;
  virtual Image<double> image_pullback(const Image<double>& image, std::span<const double> upstream) const = 0;
};

/// Lower-cased alphanumeric tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Deterministic stand-in for a vision-language model.
///
/// Text: sum of per-token Gaussian vectors seeded by a hash of the token, so
/// the result is a bag of words (word order is ignored).
/// Image: fixed random linear map of [1, per-channel means, per-channel
/// variances, 4x4 grid of mean luminance], then normalized.
class MockEmbedder final : public Embedder {
 public:
  static constexpr int kGrid = 4;
  static constexpr int kChannels = 3;
  static constexpr int kFeatures = 1 + 2 * kChannels + kGrid * kGrid;

  explicit MockEmbedder(std::size_t dimension = 32, std::uint64_t seed = 0x5eed) : dim_(dimension), seed_(seed) {
    if (dimension < 2) throw InvalidConfig("mock embedder dimension must be >= 2");
    Rng rng(seed);
    projection_.resize(dim_ * kFeatures);
    for (double& w : projection_) w = rng.normal();
  }

  std::string id() const override { return "mock-" + std::to_string(dim_); }
  std::size_t dimension() const override { return dim_; }

  EmbeddingVector embed_text(std::string_view text) const override {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw InvalidInput("cannot embed empty text");
    std::vector<double> acc(dim_, 0.0);
    for (const auto& token : tokens) {
      Fnv1a h;
      h.update({reinterpret_cast<const std::uint8_t*>(token.data()), token.size()});
      Rng rng(h.value() ^ seed_);
      for (double& v : acc) v += rng.normal();
    }
    return EmbeddingVector::normalized(std::move(acc));
  }

  std::vector<double> features(const Image<double>& image) const {
    check(image);
    std::vector<double> f(kFeatures, 0.0);
    const double n = static_cast<double>(image.pixel_count());
    f[0] = 1.0;
    for (int c = 0; c < kChannels; ++c) {
      double mean = 0.0;
      for (double v : image.plane(c)) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : image.plane(c)) var += (v - mean) * (v - mean);
      f[1 + c] = mean;
      f[1 + kChannels + c] = var / n;
    }
    std::vector<double> cell_count(kGrid * kGrid, 0.0);
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const int cell = grid_cell(y, x, image.dims());
        f[1 + 2 * kChannels + cell] += luminance(image, y, x);
        cell_count[cell] += 1.0;
      }
    }
    for (int cell = 0; cell < kGrid * kGrid; ++cell) f[1 + 2 * kChannels + cell] /= cell_count[cell];
    return f;
  }

  /// Projection before normalization.
  std::vector<double> raw_embedding(const Image<double>& image) const {
    const auto f = features(image);
    std::vector<double> u(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (int j = 0; j < kFeatures; ++j) u[i] += projection_[i * kFeatures + j] * f[j];
    }
    return u;
  }

  EmbeddingVector embed_image(const Image<double>& image) const override {
    return EmbeddingVector::normalized(raw_embedding(image));
  }

  Image<double> image_pullback(const Image<double>& image, std::span<const double> upstream) const override {
    if (upstream.size() != dim_) throw InvalidInput("upstream gradient has the wrong dimension");
    const auto u = raw_embedding(image);
    const double norm = l2_norm<double>(u);
    if (!(norm > 0.0)) throw InvalidInput("degenerate image embedding");

    // e = u / |u|  =>  dL/du = (g - e (e . g)) / |u|
    double e_dot_g = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) e_dot_g += u[i] / norm * upstream[i];
    std::vector<double> d_u(dim_);
    for (std::size_t i = 0; i < dim_; ++i) d_u[i] = (upstream[i] - u[i] / norm * e_dot_g) / norm;

    std::vector<double> d_f(kFeatures, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      for (int j = 0; j < kFeatures; ++j) d_f[j] += projection_[i * kFeatures + j] * d_u[i];
    }

    const auto f = features(image);
    const double n = static_cast<double>(image.pixel_count());
    std::vector<double> cell_count(kGrid * kGrid, 0.0);
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) cell_count[grid_cell(y, x, image.dims())] += 1.0;
    }

    Image<double> grad(image.dims(), image.channels());
    for (int c = 0; c < kChannels; ++c) {
      const double mean = f[1 + c];
      const double w_lum = kLuminance[c];
      for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
          const int cell = grid_cell(y, x, image.dims());
          grad.at(c, y, x) = d_f[1 + c] / n + d_f[1 + kChannels + c] * 2.0 * (image.at(c, y, x) - mean) / n +
                             d_f[1 + 2 * kChannels + cell] * w_lum / cell_count[cell];
        }
      }
    }
    return grad;
  }

 private:
  static constexpr double kLuminance[kChannels] = {0.299, 0.587, 0.114};

  static int grid_cell(int y, int x, Dims d) {
    const int gy = static_cast<int>(static_cast<long long>(y) * kGrid / d.height);
    const int gx = static_cast<int>(static_cast<long long>(x) * kGrid / d.width);
    return gy * kGrid + gx;
  }

  static double luminance(const Image<double>& image, int y, int x) {
    return kLuminance[0] * image.at(0, y, x) + kLuminance[1] * image.at(1, y, x) + kLuminance[2] * image.at(2, y, x);
  }

  static void check(const Image<double>& image) {
    if (image.channels() != kChannels) throw InvalidInput("mock embedder expects 3-channel images");
    if (image.height() < kGrid || image.width() < kGrid) {
      throw InvalidInput("mock embedder needs images of at least 4x4 pixels");
    }
    require_finite(image, "embedder input");
  }

  std::size_t dim_;
  std::uint64_t seed_;
  std::vector<double> projection_;  // dim_ x kFeatures, row-major
};

/// Slot for a remote-sensing pretrained vision-language model. This build
/// ships no weights or runtime for it, so every call reports that plainly.
class RemoteClipAdapter final : public Embedder {
 public:
  std::string id() const override { return "remoteclip"; }
  std::size_t dimension() const override { return 0; }
  EmbeddingVector embed_text(std::string_view) const override { unavailable(); }
  EmbeddingVector embed_image(const Image<double>&) const override { unavailable(); }
  Image<double> image_pullback(const Image<double>&, std::span<const double>) const override { unavailable(); }

 private:
  [[noreturn]] static void unavailable() {
    throw Unavailable("the remoteclip embedder is not available in this build; use the mock embedder");
  }
};

inline std::unique_ptr<Embedder> make_embedder(const std::string& name) {
  if (name == "mock") return std::make_unique<MockEmbedder>();
  if (name == "remoteclip") return std::make_unique<RemoteClipAdapter>();
  throw InvalidConfig("unknown embedder '" + name + "' (expected mock or remoteclip)");
}

}  // namespace rsedit
