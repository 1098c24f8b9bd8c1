// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

struct ScheduleConfig {
  int coarse_steps = 100;  ///< T[0]
  int fine_steps = 0;      ///< T[s] for s > 0; 0 selects ceil(0.8 * coarse_steps)
  double beta_min = 1e-4;
  double beta_max = 0.02;
  bool stochastic = false;  ///< ancestral sigmas instead of the deterministic sampler

  int resolved_fine_steps() const {
    return fine_steps > 0 ? fine_steps : static_cast<int>(std::ceil(0.8 * coarse_steps));
  }
  bool operator==(const ScheduleConfig&) const = default;
};

/// Linear-beta DDPM schedule shared by all scales, with per-scale step counts,
/// blur-mixing weights and sampling sigmas. Timesteps are 1-based; t = 0
/// denotes the clean image (alpha_bar(0) == 1, gamma(s, 0) == 0).
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  static DiffusionSchedule make(const ScheduleConfig& config, int num_scales) {
    const int t0 = config.coarse_steps;
    const int ts = config.resolved_fine_steps();
    if (t0 < 1) throw InvalidConfig("coarse step count must be >= 1");
    if (ts < 1 || ts > t0) throw InvalidConfig("fine step count must lie in [1, coarse steps]");
    if (num_scales < 1) throw InvalidConfig("schedule needs at least one scale");
    if (!(config.beta_min > 0.0) || config.beta_min > config.beta_max || !(config.beta_max < 1.0)) {
      throw InvalidConfig("betas must satisfy 0 < beta_min <= beta_max < 1");
    }

    std::vector<double> betas(t0);
    for (int t = 1; t <= t0; ++t) {
      const double frac = t0 == 1 ? 0.0 : static_cast<double>(t - 1) / (t0 - 1);
      betas[t - 1] = config.beta_min + (config.beta_max - config.beta_min) * frac;
    }
    return build(config, betas, num_scales);
  }

  /// Schedule from explicit betas (beta_1..beta_T0). Fine scales use
  /// `fine_steps` of them (0: ceil(0.8 * T0)).
  static DiffusionSchedule from_betas(const std::vector<double>& betas, int num_scales, int fine_steps = 0,
                                      bool stochastic = false) {
    if (betas.empty()) throw InvalidConfig("schedule needs at least one beta");
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) throw InvalidConfig("betas must lie in (0, 1)");
    }
    ScheduleConfig config;
    config.coarse_steps = static_cast<int>(betas.size());
    config.fine_steps = fine_steps;
    config.beta_min = *std::min_element(betas.begin(), betas.end());
    config.beta_max = *std::max_element(betas.begin(), betas.end());
    config.stochastic = stochastic;
    const int ts = config.resolved_fine_steps();
    if (ts < 1 || ts > config.coarse_steps) throw InvalidConfig("fine step count must lie in [1, coarse steps]");
    if (num_scales < 1) throw InvalidConfig("schedule needs at least one scale");
    return build(config, betas, num_scales);
  }

  const ScheduleConfig& config() const { return config_; }
  int num_scales() const { return static_cast<int>(steps_.size()); }
  int steps(int s) const { return steps_.at(s); }
  const std::vector<int>& steps_per_scale() const { return steps_; }

  double beta(int t) const { return betas_.at(t); }
  double alpha(int t) const { return 1.0 - betas_.at(t); }
  double alpha_bar(int t) const { return alpha_bars_.at(t); }
  double gamma(int s, int t) const { return gammas_.at(s).at(t); }
  double sigma(int s, int t) const { return sigmas_.at(s).at(t); }

  /// DDPM posterior standard deviation for the step t -> t-1.
  double ancestral_sigma(int t) const {
    const double ab = alpha_bars_.at(t);
    const double ab_prev = alpha_bars_.at(t - 1);
    if (ab >= 1.0) return 0.0;
    return std::sqrt(std::max(0.0, (1.0 - ab_prev) / (1.0 - ab) * betas_.at(t)));
  }

  void require_step(int s, int t) const {
    if (s < 0 || s >= num_scales()) throw InvalidInput("scale index " + std::to_string(s) + " out of range");
    if (t < 1 || t > steps_[s]) {
      throw InvalidInput("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_[s]) +
                         "] at scale " + std::to_string(s));
    }
  }

 private:
  static DiffusionSchedule build(const ScheduleConfig& config, const std::vector<double>& betas, int num_scales) {
    const int t0 = config.coarse_steps;
    DiffusionSchedule sched;
    sched.config_ = config;
    sched.steps_.assign(num_scales, config.resolved_fine_steps());
    sched.steps_[0] = t0;

    sched.betas_.resize(t0 + 1, 0.0);
    sched.alpha_bars_.resize(t0 + 1, 1.0);
    for (int t = 1; t <= t0; ++t) {
      sched.betas_[t] = betas[t - 1];
      sched.alpha_bars_[t] = sched.alpha_bars_[t - 1] * (1.0 - sched.betas_[t]);
    }

    sched.gammas_.resize(num_scales);
    sched.sigmas_.resize(num_scales);
    for (int s = 0; s < num_scales; ++s) {
      const int steps = sched.steps_[s];
      auto& gamma = sched.gammas_[s];
      auto& sigma = sched.sigmas_[s];
      gamma.resize(steps + 1);
      sigma.resize(steps + 1, 0.0);
      for (int t = 0; t <= steps; ++t) {
        // The coarsest blurry image equals the clean one, so mixing is inert there.
        gamma[t] = s == 0 ? 0.0 : static_cast<double>(t) / steps;
        if (config.stochastic && t >= 1) sigma[t] = sched.ancestral_sigma(t);
      }
    }
    return sched;
  }

  ScheduleConfig config_;
  std::vector<int> steps_;
  std::vector<double> betas_;       // index 0 unused
  std::vector<double> alpha_bars_;  // alpha_bars_[0] == 1
  std::vector<std::vector<double>> gammas_;
  std::vector<std::vector<double>> sigmas_;
};

/// sqrt(alpha_bar) * [gamma * blurry + (1 - gamma) * clean] + sqrt(1 - alpha_bar) * noise
template <typename T>
Image<T> forward_blend(const Image<T>& clean, const Image<T>& blurry, double alpha_bar, double gamma,
                       const Image<T>& noise) {
  require_same_shape(clean, blurry, "forward_sample blurry");
  require_same_shape(clean, noise, "forward_sample noise");
  const double signal = std::sqrt(alpha_bar);
  const double spread = std::sqrt(1.0 - alpha_bar);

  Image<T> out(clean.dims(), clean.channels());
  auto x = clean.data();
  auto xb = blurry.data();
  auto eps = noise.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double mixed = gamma * xb[i] + (1.0 - gamma) * x[i];
    dst[i] = static_cast<T>(signal * mixed + spread * eps[i]);
  }
  return out;
}

/// Closed-form multi-scale forward process at (s, t). No clipping.
template <typename T>
Image<T> forward_sample(const Image<T>& clean, const Image<T>& blurry, int t, int s, const Image<T>& noise,
                        const DiffusionSchedule& schedule) {
  schedule.require_step(s, t);
  return forward_blend(clean, blurry, schedule.alpha_bar(t), schedule.gamma(s, t), noise);
}

}  // namespace rsedit
