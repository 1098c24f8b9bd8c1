// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rsedit/error.hpp"

namespace rsedit {

/// Allocates on 64-byte boundaries. Vectorized reductions peel a number of
/// leading elements that depends on the buffer's alignment, so fixing it
/// keeps floating-point results reproducible from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

struct Dims {
  int height = 0;
  int width = 0;

  int min_side() const { return std::min(height, width); }
  std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool operator==(const Dims&) const = default;
};

inline std::string to_string(Dims d) {
  return std::to_string(d.height) + "x" + std::to_string(d.width);
}

/// Planar (channel-major) image. Pixel values live in [-1, 1] by convention,
/// but nothing here enforces that: intermediates of the sampler are allowed
/// to overshoot.
template <typename T = float>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(Dims dims, int channels = 3, T fill = T(0))
      : dims_(dims), channels_(channels), data_(static_cast<std::size_t>(channels) * dims.area(), fill) {
    if (dims.height < 0 || dims.width < 0 || channels < 0) {
      throw InvalidInput("negative image dimensions");
    }
  }
  Image(int height, int width, int channels = 3, T fill = T(0))
      : Image(Dims{height, width}, channels, fill) {}

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  int channels() const { return channels_; }
  Dims dims() const { return dims_; }
  std::size_t pixel_count() const { return dims_.area(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::span<T> plane(int c) { return std::span<T>(data_).subspan(c * pixel_count(), pixel_count()); }
  std::span<const T> plane(int c) const {
    return std::span<const T>(data_).subspan(c * pixel_count(), pixel_count());
  }

  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(dims_, channels_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * dims_.height + y) * dims_.width + x;
  }

  Dims dims_{};
  int channels_ = 0;
  AlignedVector<T> data_;
};

template <typename T>
bool all_finite(const Image<T>& img) {
  return std::all_of(img.data().begin(), img.data().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_finite(const Image<T>& img, const char* what) {
  if (!all_finite(img)) throw InvalidInput(std::string(what) + " contains non-finite values");
}

template <typename A, typename B>
void require_same_shape(const Image<A>& a, const Image<B>& b, const char* what) {
  if (a.dims() != b.dims() || a.channels() != b.channels()) {
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + to_string(a.dims()) + "x" +
                       std::to_string(a.channels()) + " vs " + to_string(b.dims()) + "x" +
                       std::to_string(b.channels()) + ")");
  }
}

/// Mask images are single channel and only need to agree spatially.
template <typename A, typename B>
void require_same_dims(const Image<A>& a, const Image<B>& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + to_string(a.dims()) + " vs " +
                       to_string(b.dims()) + ")");
  }
}

template <typename T>
Image<T> clipped(Image<T> img, T lo = T(-1), T hi = T(1)) {
  for (T& v : img.data()) v = std::clamp(v, lo, hi);
  return img;
}

template <typename T>
double l2_norm(std::span<const T> values) {
  double acc = 0.0;
  for (T v : values) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace rsedit
