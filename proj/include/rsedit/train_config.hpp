// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "rsedit/denoiser.hpp"
#include "rsedit/error.hpp"
#include "rsedit/pyramid.hpp"
#include "rsedit/schedule.hpp"

namespace rsedit {

/// Residual norm used by the noise-prediction objective.
enum class LossKind { L1, L2 };

inline const char* to_string(LossKind k) { return k == LossKind::L1 ? "l1" : "l2"; }

inline LossKind parse_loss_kind(const std::string& text) {
  if (text == "l1") return LossKind::L1;
  if (text == "l2") return LossKind::L2;
  throw InvalidConfig("unknown loss '" + text + "' (expected l1 or l2)");
}

/// Everything that shapes the model and its diffusion process.
struct ModelConfig {
  DenoiserConfig denoiser;
  ScheduleConfig schedule;
  PyramidConfig pyramid;

  bool operator==(const ModelConfig& o) const {
    return denoiser == o.denoiser && schedule == o.schedule && pyramid.factor == o.pyramid.factor &&
           pyramid.min_dim == o.pyramid.min_dim;
  }
};

struct TrainConfig {
  int epochs = 12000;  ///< optimizer steps; one batch from a single scale per step
  int batch = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::L1;

  bool early_stop = false;
  int patience = 500;
  double plateau_tolerance = 1e-3;

  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::string checkpoint_path;

  void validate() const {
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (batch < 1) throw InvalidConfig("batch must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning rate must be positive");
    if (patience < 1) throw InvalidConfig("patience must be >= 1");
    if (checkpoint_every < 0) throw InvalidConfig("checkpoint interval must be >= 0");
  }

  bool operator==(const TrainConfig&) const = default;
};

}  // namespace rsedit
