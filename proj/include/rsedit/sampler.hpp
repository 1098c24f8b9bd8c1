// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "rsedit/checkpoint.hpp"
#include "rsedit/denoiser.hpp"
#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/pyramid.hpp"
#include "rsedit/resample.hpp"
#include "rsedit/rng.hpp"
#include "rsedit/schedule.hpp"

namespace rsedit {

/// Threshold above which the blur weight is treated as 1 and the clean
/// estimate is taken from the mixed estimate without deblending.
inline constexpr double kDeblendGuard = 1.0 - 1e-4;

struct StepContext {
  int scale = 0;
  int timestep = 0;
  int num_scales = 1;
};

/// Noise terms of one reverse step, exposed so that hooks can re-noise other
/// images "with the same noise".
struct StepNoise {
  const Image<float>* predicted = nullptr;  ///< direction (x_t - sqrt(ab_t) x_mix) / sqrt(1 - ab_t)
  const Image<float>* fresh = nullptr;      ///< the N(0, I) draw scaled by sigma
  double direction_weight = 0.0;            ///< sqrt(1 - ab_{t-1} - sigma^2)
  double sigma = 0.0;
};

/// Extension points the sampler calls during a reverse pass. The default
/// implementation is the identity.
class SamplerHook {
 public:
  virtual ~SamplerHook() = default;

  /// Whether this step should use the ancestral variance instead of the schedule's sigma.
  virtual bool wants_ancestral(const StepContext&) const { return false; }

  /// Edits the clean estimate in place. `previous` is the estimate from the
  /// previous timestep at the same scale, if any.
  virtual void on_clean_estimate(Image<float>& /*estimate*/, const Image<float>* /*previous*/,
                                 const StepContext&) {}

  /// Adjusts x_{t-1} after it is formed.
  virtual void on_step_end(Image<float>& /*next*/, const StepNoise&, const StepContext&) {}
};

struct SamplerState {
  int scale = 0;
  int timestep = 0;
  Image<float> noisy;           ///< x_t at the current scale
  Image<float> blurry;          ///< anchor the clean estimate is mixed with
  Image<float> clean_estimate;  ///< latest clean estimate at this scale
  bool has_estimate = false;
};

/// Undoes the blur mixing: (mix - gamma * blurry) / (1 - gamma). For gamma
/// at or above kDeblendGuard the mixed estimate is returned unchanged.
inline Image<float> deblend(const Image<float>& mixed, const Image<float>& blurry, double gamma) {
  require_same_shape(mixed, blurry, "deblend");
  if (gamma >= kDeblendGuard) return mixed;
  Image<float> out(mixed.dims(), mixed.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<float>((mixed.data()[i] - gamma * blurry.data()[i]) / (1.0 - gamma));
  }
  return out;
}

inline Image<float> reblend(const Image<float>& clean, const Image<float>& blurry, double gamma) {
  require_same_shape(clean, blurry, "reblend");
  Image<float> out(clean.dims(), clean.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<float>(gamma * blurry.data()[i] + (1.0 - gamma) * clean.data()[i]);
  }
  return out;
}

/// One reverse step t -> t-1 given the model's noise prediction.
inline void reverse_step_with_prediction(SamplerState& state, const Image<float>& predicted_noise,
                                         const DiffusionSchedule& schedule, Rng& rng, SamplerHook* hook = nullptr,
                                         int num_scales = 0) {
  const int s = state.scale;
  const int t = state.timestep;
  schedule.require_step(s, t);
  require_same_shape(state.noisy, predicted_noise, "reverse_step noise");
  const StepContext ctx{s, t, num_scales > 0 ? num_scales : schedule.num_scales()};

  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double sqrt_ab = std::sqrt(ab);
  const double sqrt_one_minus_ab = std::sqrt(1.0 - ab);

  Image<float> mixed(state.noisy.dims(), state.noisy.channels());
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    mixed.data()[i] =
        static_cast<float>((state.noisy.data()[i] - sqrt_one_minus_ab * predicted_noise.data()[i]) / sqrt_ab);
  }

  Image<float> estimate = deblend(mixed, state.blurry, schedule.gamma(s, t));
  if (hook) {
    hook->on_clean_estimate(estimate, state.has_estimate ? &state.clean_estimate : nullptr, ctx);
    if (!all_finite(estimate)) throw GuidanceError(s, t, "guided clean estimate is not finite");
  }

  const Image<float> mixed_prev = reblend(estimate, state.blurry, schedule.gamma(s, t - 1));

  const double sigma = hook && hook->wants_ancestral(ctx) ? schedule.ancestral_sigma(t) : schedule.sigma(s, t);
  const double direction_weight = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  const Image<float> fresh = rng.normal_image<float>(state.noisy.dims(), state.noisy.channels());

  // Noise direction implied by the model, i.e. the original prediction.
  Image<float> direction(state.noisy.dims(), state.noisy.channels());
  for (std::size_t i = 0; i < direction.size(); ++i) {
    direction.data()[i] =
        static_cast<float>((state.noisy.data()[i] - sqrt_ab * mixed.data()[i]) / sqrt_one_minus_ab);
  }

  const double sqrt_ab_prev = std::sqrt(ab_prev);
  Image<float> next(state.noisy.dims(), state.noisy.channels());
  for (std::size_t i = 0; i < next.size(); ++i) {
    next.data()[i] = static_cast<float>(sqrt_ab_prev * mixed_prev.data()[i] +
                                        direction_weight * direction.data()[i] + sigma * fresh.data()[i]);
  }
  if (hook) hook->on_step_end(next, StepNoise{&direction, &fresh, direction_weight, sigma}, ctx);

  state.noisy = std::move(next);
  state.clean_estimate = std::move(estimate);
  state.has_estimate = true;
  state.timestep = t - 1;
}

inline void reverse_step(SamplerState& state, const Denoiser<float>& denoiser, const DiffusionSchedule& schedule,
                         Rng& rng, SamplerHook* hook = nullptr) {
  const Image<float> predicted = denoiser.predict_noise(state.noisy, state.timestep, state.scale);
  reverse_step_with_prediction(state, predicted, schedule, rng, hook);
}

/// Moves a finished scale to the next one: the final image is upsampled to
/// `next_dims`, becomes the blurry anchor there, and is noised to level
/// T[next scale].
inline SamplerState ascend_scale(const Image<float>& finished, Dims next_dims, int next_scale,
                                 const DiffusionSchedule& schedule, Rng& rng) {
  if (next_scale < 1 || next_scale >= schedule.num_scales()) {
    throw InvalidInput("ascend_scale: no scale " + std::to_string(next_scale) + " to move to");
  }
  SamplerState next;
  next.scale = next_scale;
  next.timestep = schedule.steps(next_scale);
  next.blurry = resample(finished, next_dims);
  const Image<float> noise = rng.normal_image<float>(next_dims, finished.channels());
  const double ab = schedule.alpha_bar(next.timestep);
  next.noisy = Image<float>(next_dims, finished.channels());
  for (std::size_t i = 0; i < next.noisy.size(); ++i) {
    next.noisy.data()[i] =
        static_cast<float>(std::sqrt(ab) * next.blurry.data()[i] + std::sqrt(1.0 - ab) * noise.data()[i]);
  }
  return next;
}

/// Read-only model bundle used for sampling and editing.
struct DiffusionModel {
  Denoiser<float> denoiser;
  DiffusionSchedule schedule;
  ImagePyramid<float> source;  ///< pyramid of the training image

  static DiffusionModel from_checkpoint(const Checkpoint& ck) {
    DiffusionModel model{Denoiser<float>(ck.model.denoiser, ck.parameters), {}, build_pyramid(ck.source, ck.model.pyramid)};
    if (model.source.all_dims() != ck.pyramid.dims) {
      throw ParseError("checkpoint pyramid metadata does not match its source image");
    }
    model.schedule = DiffusionSchedule::make(ck.model.schedule, model.source.num_scales());
    return model;
  }

  int num_scales() const { return source.num_scales(); }
  Dims dims(int s) const { return source.dims(s); }
};

using SampleProgress = std::function<void(double fraction)>;

/// Full coarse-to-fine reverse pass from pure noise at the coarsest scale.
/// Output has the training image's dims and is clipped to [-1, 1].
inline Image<float> sample(const DiffusionModel& model, std::uint64_t seed, SamplerHook* hook = nullptr,
                           const SampleProgress& progress = {}) {
  Rng rng(seed);
  const int n = model.num_scales();
  const int channels = model.source.scales.back().channels();

  int total_steps = 0;
  for (int s = 0; s < n; ++s) total_steps += model.schedule.steps(s);
  int done = 0;

  SamplerState state;
  state.scale = 0;
  state.timestep = model.schedule.steps(0);
  state.noisy = rng.normal_image<float>(model.dims(0), channels);
  // Mixing is inert at the coarsest scale; the anchor only has to have the right shape.
  state.blurry = Image<float>(model.dims(0), channels);

  for (int s = 0;; ++s) {
    while (state.timestep >= 1) {
      const Image<float> predicted = model.denoiser.predict_noise(state.noisy, state.timestep, s);
      reverse_step_with_prediction(state, predicted, model.schedule, rng, hook, n);
      ++done;
      if (progress) progress(static_cast<double>(done) / total_steps);
    }
    if (s == n - 1) break;
    state = ascend_scale(state.noisy, model.dims(s + 1), s + 1, model.schedule, rng);
  }
  return clipped(std::move(state.noisy));
}

}  // namespace rsedit
