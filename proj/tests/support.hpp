// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>

#include "rsedit/image.hpp"
#include "rsedit/rng.hpp"
#include "rsedit/sampler.hpp"
#include "rsedit/train_config.hpp"

namespace rsedit::test {

/// Smooth colour pattern in [-0.9, 0.9].
inline Image<float> pattern_image(Dims d, double phase = 0.0) {
  Image<float> img(d, 3);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      img.at(0, y, x) = static_cast<float>(0.9 * std::sin(0.21 * x + phase));
      img.at(1, y, x) = static_cast<float>(0.9 * std::cos(0.17 * y - phase));
      img.at(2, y, x) = static_cast<float>(0.9 * std::sin(0.05 * (x + y) + 0.5));
    }
  }
  return img;
}

inline Image<float> constant_image(Dims d, float r, float g, float b) {
  Image<float> img(d, 3);
  const float v[3] = {r, g, b};
  for (int c = 0; c < 3; ++c) {
    for (float& p : img.plane(c)) p = v[c];
  }
  return img;
}

template <typename T = float>
Image<T> random_image(Dims d, int channels, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Image<T> img(d, channels);
  for (T& v : img.data()) v = static_cast<T>(scale * rng.normal());
  return img;
}

/// Small model used where the default width would make tests slow.
inline ModelConfig small_model(int coarse_steps = 100) {
  ModelConfig m;
  m.denoiser.num_blocks = 4;
  m.denoiser.channels = 16;
  m.denoiser.embed_dim = 32;
  m.schedule.coarse_steps = coarse_steps;
  return m;
}

inline TrainConfig small_train(int epochs, std::uint64_t seed = 7) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch = 4;
  t.seed = seed;
  return t;
}

/// Untrained model with small random weights on a two-scale 34x32 pattern.
inline DiffusionModel toy_model(std::uint64_t seed = 1, int coarse_steps = 10) {
  DenoiserConfig dc;
  dc.num_blocks = 1;
  dc.channels = 4;
  dc.embed_dim = 8;
  Denoiser<float> net(dc, seed);
  Rng rng(seed + 100);
  for (float& p : net.parameters()) p = static_cast<float>(0.1 * rng.normal());
  ScheduleConfig sc;
  sc.coarse_steps = coarse_steps;
  auto pyramid = build_pyramid(pattern_image({34, 32}), PyramidConfig{});
  auto schedule = DiffusionSchedule::make(sc, pyramid.num_scales());
  return DiffusionModel{std::move(net), std::move(schedule), std::move(pyramid)};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "rsedit") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace rsedit::test
