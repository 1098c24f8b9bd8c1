// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsedit/embedder.hpp"
#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/pyramid.hpp"
#include "rsedit/resample.hpp"
#include "rsedit/sampler.hpp"
#include "rsedit/schedule.hpp"

namespace rsedit {

enum class GuidanceMode { TextFull, TextRoi, RoiContent };

inline std::string to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::TextFull: return "text-full";
    case GuidanceMode::TextRoi: return "text-roi";
    case GuidanceMode::RoiContent: return "roi-content";
  }
  return "?";
}

inline GuidanceMode parse_guidance_mode(const std::string& text) {
  if (text == "text-full") return GuidanceMode::TextFull;
  if (text == "text-roi") return GuidanceMode::TextRoi;
  if (text == "roi-content") return GuidanceMode::RoiContent;
  throw InvalidConfig("unknown mode '" + text + "' (expected text-full, text-roi or roi-content)");
}

inline bool is_text_mode(GuidanceMode m) { return m != GuidanceMode::RoiContent; }
inline bool uses_mask(GuidanceMode m) { return m != GuidanceMode::TextFull; }

/// How the masked text update treats the estimate inside the mask.
///  Descent: x - eta * delta * grad (a gradient step).
///  Literal: eta * delta * grad, i.e. the update as printed without the base
///           term. Only useful for comparisons.
enum class UpdateForm { Descent, Literal };

/// Negative cosine similarity, in [-1, 1].
inline double clip_loss(std::span<const double> image_embedding, std::span<const double> text_embedding) {
  return -cosine_similarity(image_embedding, text_embedding);
}

struct ClipLossGradient {
  double loss = 0.0;
  Image<double> gradient;  ///< d(loss)/d(pixels)
};

inline ClipLossGradient clip_loss_gradient(const Embedder& embedder, const Image<double>& image,
                                           const EmbeddingVector& text) {
  const EmbeddingVector e = embedder.embed_image(image);
  ClipLossGradient out;
  out.loss = clip_loss(e.values(), text.values());
  // Both operands are unit vectors, so d(loss)/d(e) = -text.
  std::vector<double> upstream(text.values().begin(), text.values().end());
  for (double& v : upstream) v = -v;
  out.gradient = embedder.image_pullback(image, upstream);
  return out;
}

namespace detail {

inline void require_unit_interval(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw InvalidConfig(std::string(name) + " must lie in [0, 1]");
}

template <typename T>
double masked_norm(const Image<T>& img, const Image<float>& mask) {
  double acc = 0.0;
  for (int c = 0; c < img.channels(); ++c) {
    auto plane = img.plane(c);
    auto m = mask.plane(0);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      const double v = static_cast<double>(plane[i]) * m[i];
      acc += v * v;
    }
  }
  return std::sqrt(acc);
}

}  // namespace detail

/// Masked, normalized gradient step with momentum outside the mask:
///   inside:  x - eta * delta * grad,   delta = |x * m| / |grad * m| (0 if the denominator is 0)
///   outside: lambda * x + (1 - lambda) * previous
template <typename G>
Image<float> text_guided_update(const Image<float>& estimate, const Image<G>& grad, const Image<float>& mask,
                                double strength, double momentum, const Image<float>& previous,
                                UpdateForm form = UpdateForm::Descent) {
  require_same_shape(estimate, grad, "text_guided_update gradient");
  require_same_shape(estimate, previous, "text_guided_update previous estimate");
  require_same_dims(estimate, mask, "text_guided_update mask");
  detail::require_unit_interval(strength, "guidance strength");
  detail::require_unit_interval(momentum, "momentum");
  if (!all_finite(grad)) throw InvalidInput("guidance gradient is not finite");

  const double grad_norm = detail::masked_norm(grad, mask);
  const double delta = grad_norm > 0.0 ? detail::masked_norm(estimate, mask) / grad_norm : 0.0;

  Image<float> out(estimate.dims(), estimate.channels());
  auto m = mask.plane(0);
  for (int c = 0; c < estimate.channels(); ++c) {
    auto x = estimate.plane(c);
    auto g = grad.plane(c);
    auto prev = previous.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double step = strength * delta * static_cast<double>(g[i]);
      const double inside = form == UpdateForm::Descent ? x[i] - step : step;
      const double outside = momentum * x[i] + (1.0 - momentum) * prev[i];
      dst[i] = static_cast<float>(m[i] * inside + (1.0 - m[i]) * outside);
    }
  }
  return out;
}

/// Inside the mask: (1 - eta) * x + eta * target; outside: x.
inline Image<float> roi_content_update(const Image<float>& estimate, const Image<float>& target,
                                       const Image<float>& mask, double strength) {
  require_same_shape(estimate, target, "roi_content_update target");
  require_same_dims(estimate, mask, "roi_content_update mask");
  detail::require_unit_interval(strength, "guidance strength");
  Image<float> out = estimate;
  auto m = mask.plane(0);
  for (int c = 0; c < estimate.channels(); ++c) {
    auto x = estimate.plane(c);
    auto y = target.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m[i] != 0.0f) dst[i] = static_cast<float>((1.0 - strength) * x[i] + strength * y[i]);
    }
  }
  return out;
}

enum class MaskProvenance { UserDrawn, Computed };

/// Binary ROI masks (single channel, values 0 or 1) for every scale.
struct ROIMask {
  std::vector<Image<float>> masks;  ///< coarsest first
  Image<float> base;                ///< finest-scale mask as supplied
  MaskProvenance provenance = MaskProvenance::UserDrawn;

  const Image<float>& at(int s) const { return masks.at(s); }
};

inline bool is_binary_mask(const Image<float>& mask) {
  if (mask.channels() != 1) return false;
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) return false;
  }
  return true;
}

/// Resizes the finest-scale mask to every pyramid level (bicubic, then
/// threshold at 0.5). The result is fixed for the whole sampling run.
inline ROIMask mask_pyramid(const Image<float>& base, const std::vector<Dims>& dims,
                            MaskProvenance provenance = MaskProvenance::UserDrawn) {
  if (dims.empty()) throw InvalidInput("mask_pyramid: no scales");
  if (!is_binary_mask(base)) throw InvalidInput("ROI mask must be single channel with values 0 or 1");
  if (base.dims() != dims.back()) {
    throw InvalidInput("ROI mask dims " + to_string(base.dims()) + " differ from the image dims " +
                       to_string(dims.back()));
  }
  ROIMask roi;
  roi.base = base;
  roi.provenance = provenance;
  for (const Dims& d : dims) {
    Image<float> m = resample(base, d);
    for (float& v : m.data()) v = v >= 0.5f ? 1.0f : 0.0f;
    roi.masks.push_back(std::move(m));
  }
  return roi;
}

/// Inclusive range of scales at which guidance updates run.
struct ScaleRange {
  int first = 0;
  int last = -1;

  bool empty() const { return first > last; }
  bool contains(int s) const { return s >= first && s <= last; }
  bool operator==(const ScaleRange&) const = default;
};

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::TextFull;
  std::optional<EmbeddingVector> text_embedding;
  std::optional<Image<float>> target;  ///< finest-scale content image for roi-content
  double strength = 0.3;               ///< eta
  double momentum = 0.05;              ///< lambda
  std::optional<ScaleRange> scales;    ///< default: every scale except the finest
  UpdateForm form = UpdateForm::Descent;
  bool ancestral_when_guided = true;

  ScaleRange resolved_scales(int num_scales) const {
    return scales ? *scales : ScaleRange{0, num_scales - 2};
  }

  void validate(int num_scales, bool has_mask) const {
    detail::require_unit_interval(strength, "guidance strength");
    detail::require_unit_interval(momentum, "momentum");
    if (is_text_mode(mode) && !text_embedding) throw InvalidConfig("text guidance needs a text embedding");
    if (mode == GuidanceMode::RoiContent && !target) throw InvalidConfig("roi-content guidance needs a target image");
    if (uses_mask(mode) && !has_mask) throw InvalidConfig("mode " + to_string(mode) + " needs an ROI mask");
    const ScaleRange r = resolved_scales(num_scales);
    if (r.empty()) throw InvalidConfig("guided scale range is empty");
    if (r.first < 0 || r.last > num_scales - 1) throw InvalidConfig("guided scale range outside [0, N-1]");
  }
};

/// Guided step record: loss of the estimate before and after the update.
struct GuidanceRecord {
  int scale = 0;
  int timestep = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Sampler hook implementing the three edit modes. In the ROI modes the
/// source image is re-noised with the step's own noise and pasted outside
/// the mask after every step, at every scale, so unedited regions follow the
/// source.
class EditGuidance final : public SamplerHook {
 public:
  EditGuidance(GuidanceSpec spec, const Embedder* embedder, std::optional<ROIMask> mask,
               const ImagePyramid<float>& source, const DiffusionSchedule& schedule)
      : spec_(std::move(spec)), embedder_(embedder), mask_(std::move(mask)), source_(source), schedule_(schedule) {
    const int n = source_.num_scales();
    range_ = spec_.resolved_scales(n);
    if (is_text_mode(spec_.mode) && !embedder_) throw InvalidConfig("text guidance needs an embedder");
    if (uses_mask(spec_.mode) && !mask_) throw InvalidConfig("mode " + to_string(spec_.mode) + " needs an ROI mask");
    if (mask_ && static_cast<int>(mask_->masks.size()) != n) throw InvalidInput("mask pyramid depth mismatch");
    for (int s = 0; s < n; ++s) {
      if (spec_.mode == GuidanceMode::TextFull) full_masks_.emplace_back(source_.dims(s), 1, 1.0f);
      if (spec_.mode == GuidanceMode::RoiContent) {
        if (!spec_.target) throw InvalidConfig("roi-content guidance needs a target image");
        targets_.push_back(resample(*spec_.target, source_.dims(s)));
      }
    }
  }

  bool wants_ancestral(const StepContext& ctx) const override {
    return is_text_mode(spec_.mode) && spec_.ancestral_when_guided && range_.contains(ctx.scale);
  }

  void on_clean_estimate(Image<float>& estimate, const Image<float>* previous, const StepContext& ctx) override {
    if (!range_.contains(ctx.scale)) return;
    if (spec_.mode == GuidanceMode::RoiContent) {
      estimate = roi_content_update(estimate, targets_.at(ctx.scale), mask_->at(ctx.scale), spec_.strength);
      return;
    }
    const Image<float>& mask = spec_.mode == GuidanceMode::TextFull ? full_masks_.at(ctx.scale) : mask_->at(ctx.scale);
    const Image<double> x = estimate.cast<double>();
    ClipLossGradient lg;
    try {
      lg = clip_loss_gradient(*embedder_, x, *spec_.text_embedding);
    } catch (const InvalidInput& e) {
      throw GuidanceError(ctx.scale, ctx.timestep, e.what());
    }
    if (!all_finite(lg.gradient)) throw GuidanceError(ctx.scale, ctx.timestep, "guidance gradient is not finite");
    estimate = text_guided_update(estimate, lg.gradient, mask, spec_.strength, spec_.momentum,
                                  previous ? *previous : estimate, spec_.form);
    GuidanceRecord record{ctx.scale, ctx.timestep, lg.loss, 0.0};
    if (all_finite(estimate)) {
      record.loss_after = clip_loss(embedder_->embed_image(estimate.cast<double>()).values(),
                                    spec_.text_embedding->values());
    }
    records_.push_back(record);
  }

  void on_step_end(Image<float>& next, const StepNoise& noise, const StepContext& ctx) override {
    if (!uses_mask(spec_.mode)) return;
    const int s = ctx.scale;
    const int t = ctx.timestep;
    const Image<float> source_mix = reblend(source_.scales.at(s), source_.blurry.at(s), schedule_.gamma(s, t - 1));
    const double signal = std::sqrt(schedule_.alpha_bar(t - 1));
    auto m = mask_->at(s).plane(0);
    for (int c = 0; c < next.channels(); ++c) {
      auto dst = next.plane(c);
      auto src = source_mix.plane(c);
      auto dir = noise.predicted->plane(c);
      auto fresh = noise.fresh->plane(c);
      for (std::size_t i = 0; i < dst.size(); ++i) {
        if (m[i] != 0.0f) continue;
        dst[i] = static_cast<float>(signal * src[i] + noise.direction_weight * dir[i] + noise.sigma * fresh[i]);
      }
    }
  }

  const std::vector<GuidanceRecord>& records() const { return records_; }
  ScaleRange scale_range() const { return range_; }

 private:
  GuidanceSpec spec_;
  const Embedder* embedder_;
  std::optional<ROIMask> mask_;
  const ImagePyramid<float>& source_;
  const DiffusionSchedule& schedule_;
  ScaleRange range_;
  std::vector<Image<float>> full_masks_;
  std::vector<Image<float>> targets_;
  std::vector<GuidanceRecord> records_;
};

}  // namespace rsedit
