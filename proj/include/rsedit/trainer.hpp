// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rsedit/checkpoint.hpp"
#include "rsedit/denoiser.hpp"
#include "rsedit/digest.hpp"
#include "rsedit/pyramid.hpp"
#include "rsedit/rng.hpp"
#include "rsedit/schedule.hpp"
#include "rsedit/train_config.hpp"

namespace rsedit {

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  Adam(std::size_t size, double learning_rate) : lr_(learning_rate), m_(size, 0.0f), v_(size, 0.0f) {}
  Adam(const AdamState& state, double learning_rate)
      : lr_(learning_rate), step_(state.step), m_(state.first_moment), v_(state.second_moment) {}

  void update(std::span<float> params, std::span<const float> grad) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++step_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = static_cast<float>(b1 * m_[i] + (1.0 - b1) * g);
      v_[i] = static_cast<float>(b2 * v_[i] + (1.0 - b2) * g * g);
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] = static_cast<float>(params[i] - lr_ * m_hat / (std::sqrt(v_hat) + eps));
    }
  }

  AdamState state() const { return {step_, m_, v_}; }

 private:
  double lr_;
  std::uint64_t step_ = 0;
  std::vector<float> m_, v_;
};

/// Batch residual loss and its gradient w.r.t. the predictions.
/// L1: mean |eps - pred|; L2: mean (eps - pred)^2. Means run over every
/// element of every batch item.
template <typename T>
double noise_loss(std::span<const Image<T>> noise, std::span<const Image<T>> predicted, LossKind kind,
                  std::vector<Image<T>>* grad_predicted = nullptr) {
  std::size_t count = 0;
  for (const auto& n : noise) count += n.size();
  double total = 0.0;
  if (grad_predicted) grad_predicted->clear();
  for (std::size_t b = 0; b < noise.size(); ++b) {
    require_same_shape(noise[b], predicted[b], "loss operands");
    auto eps = noise[b].data();
    auto pred = predicted[b].data();
    Image<T> g;
    if (grad_predicted) g = Image<T>(noise[b].dims(), noise[b].channels());
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const double r = static_cast<double>(eps[i]) - static_cast<double>(pred[i]);
      if (kind == LossKind::L1) {
        total += std::abs(r);
        if (grad_predicted) g.data()[i] = static_cast<T>((r > 0 ? -1.0 : (r < 0 ? 1.0 : 0.0)) / count);
      } else {
        total += r * r;
        if (grad_predicted) g.data()[i] = static_cast<T>(-2.0 * r / count);
      }
    }
    if (grad_predicted) grad_predicted->push_back(std::move(g));
  }
  return total / static_cast<double>(count);
}

/// What one optimizer step saw; lets callers recompute the loss independently.
struct StepTrace {
  int scale = 0;
  std::vector<int> timesteps;
  std::vector<Image<float>> noise;
  std::vector<Image<float>> predicted;
  double loss = 0.0;
};

/// Single-image trainer: each step draws one scale, a batch of timesteps at
/// that scale, and fresh noise, then applies one Adam update.
class Trainer {
 public:
  Trainer(const Image<float>& image, const ModelConfig& model, const TrainConfig& train)
      : model_config_(model),
        train_config_(train),
        pyramid_(build_pyramid(image, model.pyramid)),
        schedule_(DiffusionSchedule::make(model.schedule, pyramid_.num_scales())),
        denoiser_(model.denoiser, train.seed),
        optimizer_(denoiser_.parameter_count(), train.learning_rate),
        rng_(train.seed ^ 0x9e3779b97f4a7c15ULL),
        digest_(image_digest(image)) {
    train.validate();
    if (image.channels() != model.denoiser.image_channels) {
      throw InvalidInput("training image channel count does not match the denoiser");
    }
  }

  /// Continues from a checkpoint; `image` must be the image it was trained on.
  static Trainer resume(const Checkpoint& ck, const Image<float>& image) {
    if (image_digest(image) != ck.source_digest) {
      throw DigestMismatch("refusing to resume: image digest " + image_digest(image) +
                           " does not match the checkpoint's training image " + ck.source_digest);
    }
    return Trainer(ck);
  }

  explicit Trainer(const Checkpoint& ck)
      : model_config_(ck.model),
        train_config_(ck.train),
        pyramid_(build_pyramid(ck.source, ck.model.pyramid)),
        schedule_(DiffusionSchedule::make(ck.model.schedule, pyramid_.num_scales())),
        denoiser_(ck.model.denoiser, ck.parameters),
        optimizer_(ck.optimizer, ck.train.learning_rate),
        digest_(ck.source_digest),
        step_(ck.step),
        loss_history_(ck.loss_history) {
    if (image_digest(ck.source) != ck.source_digest) {
      throw DigestMismatch("checkpoint source image does not match its recorded digest");
    }
    rng_.restore(ck.rng_state);
  }

  double step(StepTrace* trace = nullptr) {
    const int scale = rng_.uniform_int(0, pyramid_.num_scales() - 1);
    const int steps = schedule_.steps(scale);
    const Image<float>& clean = pyramid_.scales[scale];
    const Image<float>& blurry = pyramid_.blurry[scale];

    std::vector<int> timesteps(train_config_.batch);
    std::vector<Image<float>> noise(train_config_.batch), predicted(train_config_.batch);
    std::vector<Denoiser<float>::Tape> tapes(train_config_.batch);
    for (int b = 0; b < train_config_.batch; ++b) {
      timesteps[b] = rng_.uniform_int(1, steps);
      noise[b] = rng_.normal_image<float>(clean.dims(), clean.channels());
      const Image<float> noisy = forward_sample(clean, blurry, timesteps[b], scale, noise[b], schedule_);
      predicted[b] = denoiser_.forward(noisy, timesteps[b], scale, tapes[b]);
    }

    std::vector<Image<float>> grad_pred;
    const double loss = noise_loss<float>(noise, predicted, train_config_.loss, &grad_pred);
    ++step_;
    if (!std::isfinite(loss)) throw TrainingDivergence(step_, "training loss is not finite");

    AlignedVector<float> grad(denoiser_.parameter_count(), 0.0f);
    for (int b = 0; b < train_config_.batch; ++b) denoiser_.backward(tapes[b], grad_pred[b], grad);
    optimizer_.update(denoiser_.parameters(), grad);
    loss_history_.push_back(loss);

    if (trace) {
      trace->scale = scale;
      trace->timesteps = std::move(timesteps);
      trace->noise = std::move(noise);
      trace->predicted = std::move(predicted);
      trace->loss = loss;
    }
    return loss;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.model = model_config_;
    ck.train = train_config_;
    const auto params = denoiser_.parameters();
    ck.parameters.assign(params.begin(), params.end());
    ck.optimizer = optimizer_.state();
    ck.pyramid.factor = model_config_.pyramid.factor;
    ck.pyramid.min_dim = model_config_.pyramid.min_dim;
    ck.pyramid.dims = pyramid_.all_dims();
    ck.source = pyramid_.scales.back();
    ck.source_digest = digest_;
    ck.step = step_;
    ck.rng_state = rng_.state();
    ck.loss_history = loss_history_;
    return ck;
  }

  /// Raises (or lowers) the step budget, e.g. when continuing a run.
  void set_epochs(int epochs) {
    train_config_.epochs = epochs;
    train_config_.validate();
  }

  std::uint64_t steps_done() const { return step_; }
  const std::vector<double>& loss_history() const { return loss_history_; }
  const ImagePyramid<float>& pyramid() const { return pyramid_; }
  const DiffusionSchedule& schedule() const { return schedule_; }
  const Denoiser<float>& denoiser() const { return denoiser_; }
  Denoiser<float>& denoiser() { return denoiser_; }
  const TrainConfig& train_config() const { return train_config_; }

 private:
  ModelConfig model_config_;
  TrainConfig train_config_;
  ImagePyramid<float> pyramid_;
  DiffusionSchedule schedule_;
  Denoiser<float> denoiser_;
  Adam optimizer_;
  Rng rng_;
  std::string digest_;
  std::uint64_t step_ = 0;
  std::vector<double> loss_history_;
};

/// Detects a plateau on an exponential moving average of the loss.
class PlateauDetector {
 public:
  PlateauDetector(int patience, double tolerance) : patience_(patience), tolerance_(tolerance) {}

  bool observe(double loss) {
    ema_ = ema_ ? 0.99 * *ema_ + 0.01 * loss : loss;
    if (*ema_ < best_ * (1.0 - tolerance_)) {
      best_ = *ema_;
      since_best_ = 0;
    } else {
      ++since_best_;
    }
    return since_best_ >= patience_;
  }

 private:
  int patience_;
  double tolerance_;
  std::optional<double> ema_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

using TrainProgress = std::function<void(std::uint64_t step, int total, double loss)>;

/// Runs the configured number of steps (continuing `trainer` from wherever it
/// is), writing periodic checkpoints when requested.
inline Checkpoint run_training(Trainer& trainer, const TrainProgress& progress = {}) {
  const TrainConfig& cfg = trainer.train_config();
  PlateauDetector plateau(cfg.patience, cfg.plateau_tolerance);
  while (trainer.steps_done() < static_cast<std::uint64_t>(cfg.epochs)) {
    const double loss = trainer.step();
    if (progress) progress(trainer.steps_done(), cfg.epochs, loss);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        trainer.steps_done() % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
      save_checkpoint(trainer.checkpoint(), cfg.checkpoint_path);
    }
    if (cfg.early_stop && plateau.observe(loss)) break;
  }
  Checkpoint ck = trainer.checkpoint();
  if (!cfg.checkpoint_path.empty()) save_checkpoint(ck, cfg.checkpoint_path);
  return ck;
}

inline Checkpoint train(const Image<float>& image, const ModelConfig& model, const TrainConfig& config,
                        const TrainProgress& progress = {}) {
  Trainer trainer(image, model, config);
  return run_training(trainer, progress);
}

}  // namespace rsedit
