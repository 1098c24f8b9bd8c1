// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsedit/checkpoint.hpp"
#include "rsedit/embedder.hpp"
#include "rsedit/error.hpp"
#include "rsedit/guidance.hpp"
#include "rsedit/image_io.hpp"
#include "rsedit/llm_client.hpp"
#include "rsedit/prompts.hpp"
#include "rsedit/sampler.hpp"
#include "rsedit/tile.hpp"

namespace rsedit {

/// Content copy for roi-content: the source rect is resampled into every
/// destination rect.
struct RegionCopy {
  Rect source;
  std::vector<Rect> destinations;
  bool operator==(const RegionCopy&) const = default;
};

/// "sx,sy,sw,sh:dx,dy,dw,dh[;dx,dy,dw,dh...]", several copies separated by '|'.
inline std::vector<RegionCopy> parse_regions(const std::string& text) {
  std::vector<RegionCopy> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto bar = text.find('|', start);
    const std::string item = text.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidInput("region '" + item + "' needs 'source:destination'");
    RegionCopy copy{parse_rect(item.substr(0, colon)), {}};
    std::size_t d = colon + 1;
    while (true) {
      const auto semi = item.find(';', d);
      copy.destinations.push_back(parse_rect(item.substr(d, semi == std::string::npos ? std::string::npos : semi - d)));
      if (semi == std::string::npos) break;
      d = semi + 1;
    }
    out.push_back(std::move(copy));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

inline std::string format_regions(const std::vector<RegionCopy>& regions) {
  std::string out;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (i) out += '|';
    out += to_string(regions[i].source) + ':';
    for (std::size_t j = 0; j < regions[i].destinations.size(); ++j) {
      if (j) out += ';';
      out += to_string(regions[i].destinations[j]);
    }
  }
  return out;
}

/// Content target and destination mask for a set of region copies.
inline std::pair<Image<float>, Image<float>> region_target(const Image<float>& source,
                                                           const std::vector<RegionCopy>& regions) {
  Image<float> target = source;
  Image<float> mask(source.dims(), 1);
  for (const auto& copy : regions) {
    require_within(copy.source, source.dims(), "region source");
    const Image<float> patch = crop(source, copy.source);
    for (const Rect& dst : copy.destinations) {
      require_within(dst, source.dims(), "region destination");
      stitch(target, resample(patch, dst.dims()), dst, 0);
      stitch(mask, Image<float>(dst.dims(), 1, 1.0f), dst, 0);
    }
  }
  return {std::move(target), std::move(mask)};
}

struct FieldError {
  std::string field;
  std::string message;
};

struct EditRequest {
  std::string checkpoint;
  GuidanceMode mode = GuidanceMode::TextFull;
  std::vector<std::string> prompts;
  bool prompt_ensemble = false;
  int ensemble_size = 5;
  std::string mask;     ///< path of a {0,255} mask image
  std::string regions;  ///< roi-content copies, see parse_regions
  double strength = 0.3;
  double momentum = 0.05;
  std::optional<ScaleRange> scales;
  std::uint64_t seed = 0;
  std::string output;
  std::string embedder = "mock";
  std::string llm_url;    ///< chat endpoint for prompt variants; empty uses the template bank
  std::string templates;  ///< template bank file; empty uses the built-in bank

  bool operator==(const EditRequest&) const = default;

  /// Field-level problems that can be found without touching the file system.
  std::vector<FieldError> validate() const {
    std::vector<FieldError> errors;
    if (checkpoint.empty()) errors.push_back({"checkpoint", "a checkpoint is required"});
    bool has_prompt = false;
    for (const auto& p : prompts) has_prompt = has_prompt || !detail::trim(p).empty();
    if (is_text_mode(mode) && !has_prompt) errors.push_back({"prompt", "mode " + to_string(mode) + " needs a prompt"});
    if (mode == GuidanceMode::TextRoi && mask.empty()) errors.push_back({"mask", "mode text-roi needs a mask"});
    if (mode == GuidanceMode::RoiContent) {
      if (regions.empty()) {
        errors.push_back({"regions", "mode roi-content needs a target-region spec"});
      } else {
        try {
          parse_regions(regions);
        } catch (const Error& e) {
          errors.push_back({"regions", e.what()});
        }
      }
    }
    if (prompt_ensemble && (ensemble_size < 1 || ensemble_size > 16)) {
      errors.push_back({"k", "ensemble size must lie in [1, 16]"});
    }
    if (!(strength >= 0.0 && strength <= 1.0)) errors.push_back({"eta", "must lie in [0, 1]"});
    if (!(momentum >= 0.0 && momentum <= 1.0)) errors.push_back({"lambda", "must lie in [0, 1]"});
    if (scales && (scales->empty() || scales->first < 0)) errors.push_back({"scales", "scale range is empty"});
    if (embedder != "mock" && embedder != "remoteclip") {
      errors.push_back({"embedder", "unknown embedder '" + embedder + "'"});
    }
    return errors;
  }

  void require_valid() const {
    const auto errors = validate();
    if (!errors.empty()) throw InvalidConfig(errors.front().field + ": " + errors.front().message);
  }
};

inline void to_json(nlohmann::json& j, const EditRequest& r) {
  j = {{"checkpoint", r.checkpoint},
       {"mode", to_string(r.mode)},
       {"prompts", r.prompts},
       {"pe", r.prompt_ensemble},
       {"k", r.ensemble_size},
       {"mask", r.mask},
       {"regions", r.regions},
       {"eta", r.strength},
       {"lambda", r.momentum},
       {"seed", r.seed},
       {"output", r.output},
       {"embedder", r.embedder},
       {"llm_url", r.llm_url},
       {"templates", r.templates}};
  if (r.scales) j["scales"] = {r.scales->first, r.scales->last};
}

/// Missing keys keep their defaults; "prompt" is accepted as a single prompt.
inline void from_json(const nlohmann::json& j, EditRequest& r) {
  if (!j.is_object()) throw ParseError("edit request must be an object");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key) && !j.at(key).is_null()) j.at(key).get_to(field);
  };
  get("checkpoint", r.checkpoint);
  if (j.contains("mode")) r.mode = parse_guidance_mode(j.at("mode").get<std::string>());
  get("prompts", r.prompts);
  if (j.contains("prompt") && j.at("prompt").is_string()) r.prompts.insert(r.prompts.begin(), j.at("prompt").get<std::string>());
  get("pe", r.prompt_ensemble);
  get("k", r.ensemble_size);
  get("mask", r.mask);
  get("regions", r.regions);
  get("eta", r.strength);
  get("lambda", r.momentum);
  get("seed", r.seed);
  get("output", r.output);
  get("embedder", r.embedder);
  get("llm_url", r.llm_url);
  get("templates", r.templates);
  if (j.contains("scales") && !j.at("scales").is_null()) {
    const auto& s = j.at("scales");
    if (!s.is_array() || s.size() != 2) throw ParseError("scales must be [first, last]");
    r.scales = ScaleRange{s.at(0).get<int>(), s.at(1).get<int>()};
  }
}

/// Parses "a:b" (inclusive).
inline ScaleRange parse_scale_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const int s = std::stoi(text);
      return {s, s};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw InvalidInput("malformed scale range '" + text + "' (expected first:last)");
  }
}

struct EditOptions {
  const Embedder* embedder = nullptr;    ///< overrides request.embedder
  VariantSource* variant_source = nullptr;  ///< overrides llm_url / templates
  std::optional<Image<float>> mask;         ///< overrides the mask file
  SampleProgress progress;
  WarningSink warn = default_warning;
};

struct EditResult {
  Image<float> image;
  std::vector<std::string> texts;  ///< prompts that were embedded
  std::vector<GuidanceRecord> records;
};

/// Texts for the request's prompts, expanded with variants when PE is on.
inline std::vector<std::string> request_texts(const EditRequest& request, VariantSource* source,
                                              const WarningSink& warn = default_warning) {
  std::vector<std::string> texts;
  for (const auto& p : request.prompts) {
    if (!detail::trim(p).empty()) texts.push_back(detail::collapse_spaces(detail::trim(p)));
  }
  if (texts.empty() || !request.prompt_ensemble) return texts;

  std::unique_ptr<VariantSource> owned;
  std::unique_ptr<VariantSource> fallback;
  if (!source) {
    if (!request.llm_url.empty()) {
      owned = std::make_unique<ChatVariantSource>(ChatClientConfig{request.llm_url});
    } else {
      owned = std::make_unique<TemplateBank>(request.templates.empty() ? TemplateBank::builtin()
                                                                         : TemplateBank::load(request.templates));
    }
    source = owned.get();
  }
  if (!request.llm_url.empty()) {
    fallback = std::make_unique<TemplateBank>(request.templates.empty() ? TemplateBank::builtin()
                                                                          : TemplateBank::load(request.templates));
  }
  std::vector<std::string> out = generate_variants(texts.front(), *source, request.ensemble_size, fallback.get(), warn);
  for (std::size_t i = 1; i < texts.size(); ++i) out.push_back(texts[i]);
  return out;
}

/// Runs one edit against a loaded checkpoint.
inline EditResult run_edit(const EditRequest& request, const Checkpoint& checkpoint, const EditOptions& options = {}) {
  request.require_valid();
  const DiffusionModel model = DiffusionModel::from_checkpoint(checkpoint);
  const int n = model.num_scales();

  if (uses_mask(request.mode) && !request.mask.empty() && !options.mask &&
      !std::filesystem::exists(request.mask)) {
    throw IoError("mask file not found: " + request.mask);
  }
  std::unique_ptr<Embedder> owned_embedder;
  const Embedder* embedder = options.embedder;
  if (!embedder && is_text_mode(request.mode)) {
    owned_embedder = make_embedder(request.embedder);
    embedder = owned_embedder.get();
  }

  GuidanceSpec spec;
  spec.mode = request.mode;
  spec.strength = request.strength;
  spec.momentum = request.momentum;
  spec.scales = request.scales;

  EditResult result;
  if (is_text_mode(request.mode)) {
    result.texts = request_texts(request, options.variant_source, options.warn);
    spec.text_embedding = ensemble_embed(result.texts, *embedder);
  }

  std::optional<ROIMask> roi;
  const Image<float>& source = model.source.scales.back();
  if (request.mode == GuidanceMode::RoiContent) {
    auto [target, region_mask] = region_target(source, parse_regions(request.regions));
    spec.target = std::move(target);
    if (request.mask.empty()) {
      roi = mask_pyramid(region_mask, model.source.all_dims(), MaskProvenance::Computed);
    }
  }
  if (options.mask) {
    roi = mask_pyramid(*options.mask, model.source.all_dims());
  } else if (!request.mask.empty()) {
    roi = mask_pyramid(load_mask(request.mask), model.source.all_dims());
  }

  spec.validate(n, roi.has_value());
  EditGuidance hook(spec, embedder, std::move(roi), model.source, model.schedule);
  result.image = sample(model, request.seed, &hook, options.progress);
  result.records = hook.records();
  return result;
}

inline EditResult run_edit(const EditRequest& request, const EditOptions& options = {}) {
  request.require_valid();
  return run_edit(request, load_checkpoint(request.checkpoint), options);
}

}  // namespace rsedit
