// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rsedit/checkpoint.hpp"
#include "rsedit/edit.hpp"
#include "rsedit/embedder.hpp"
#include "rsedit/error.hpp"
#include "rsedit/eval.hpp"
#include "rsedit/image_io.hpp"
#include "rsedit/prompts.hpp"
#include "rsedit/sampler.hpp"
#include "rsedit/tile.hpp"
#include "rsedit/trainer.hpp"

namespace rsedit {

namespace cli {

/// Raised for request validation failures; rendered with per-field messages.
class FieldErrors : public Error {
 public:
  explicit FieldErrors(std::vector<FieldError> fields)
      : Error("invalid-request", describe(fields)), fields_(std::move(fields)) {}
  const std::vector<FieldError>& fields() const { return fields_; }

 private:
  static std::string describe(const std::vector<FieldError>& fields) {
    std::string out;
    for (const auto& f : fields) out += (out.empty() ? "" : "; ") + f.field + ": " + f.message;
    return out;
  }
  std::vector<FieldError> fields_;
};

inline nlohmann::json error_json(const Error& e) {
  nlohmann::json j = {{"error", e.kind()}, {"message", e.what()}};
  if (const auto* f = dynamic_cast<const FieldErrors*>(&e)) {
    j["fields"] = nlohmann::json::array();
    for (const auto& fe : f->fields()) j["fields"].push_back({{"field", fe.field}, {"message", fe.message}});
  }
  return j;
}

struct TrainArgs {
  std::string image;
  std::string out;
  std::string resume;
  ModelConfig model;
  TrainConfig train;
  std::string loss = "l1";
};

struct EditArgs {
  EditRequest request;
  std::string mode = "text-full";
  std::string scales;
};

struct TileArgs {
  std::string image;
  std::vector<std::string> rects;
  int feather = 8;
  bool train_tile = false;
};

inline void add_model_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--blocks", a.model.denoiser.num_blocks, "residual blocks");
  cmd->add_option("--channels", a.model.denoiser.channels, "feature channels");
  cmd->add_option("--kernel", a.model.denoiser.kernel_size, "convolution kernel size");
  cmd->add_option("--embed-dim", a.model.denoiser.embed_dim, "positional embedding width");
  cmd->add_option("--coarse-steps", a.model.schedule.coarse_steps, "diffusion steps at the coarsest scale");
  cmd->add_option("--fine-steps", a.model.schedule.fine_steps, "diffusion steps at finer scales (0: 80% of coarse)");
  cmd->add_option("--beta-min", a.model.schedule.beta_min, "first beta of the linear schedule");
  cmd->add_option("--beta-max", a.model.schedule.beta_max, "last beta of the linear schedule");
  cmd->add_flag("--stochastic", a.model.schedule.stochastic, "ancestral sampling noise");
  cmd->add_option("--factor", a.model.pyramid.factor, "pyramid scale factor");
  cmd->add_option("--min-dim", a.model.pyramid.min_dim, "smallest side of the coarsest scale");
  cmd->add_option("--epochs", a.train.epochs, "optimizer steps");
  cmd->add_option("--batch", a.train.batch, "timesteps per step");
  cmd->add_option("--lr", a.train.learning_rate, "Adam learning rate");
  cmd->add_option("--loss", a.loss, "l1 or l2")->check(CLI::IsMember({"l1", "l2"}));
  cmd->add_flag("--early-stop", a.train.early_stop, "stop when the loss plateaus");
  cmd->add_option("--patience", a.train.patience, "steps without improvement before early stop");
  cmd->add_option("--checkpoint-every", a.train.checkpoint_every, "save every N steps (0: only at the end)");
}

inline void add_edit_options(CLI::App* cmd, EditArgs& a, bool with_checkpoint_required) {
  auto* ck = cmd->add_option("--checkpoint", a.request.checkpoint, "trained checkpoint");
  if (with_checkpoint_required) ck->required();
  cmd->add_option("--mode", a.mode, "text-full, text-roi or roi-content")
      ->check(CLI::IsMember({"text-full", "text-roi", "roi-content"}));
  cmd->add_option("--prompt", a.request.prompts, "prompt text (repeat to ensemble several)");
  cmd->add_flag("--pe", a.request.prompt_ensemble, "expand the prompt with paraphrases and ensemble");
  cmd->add_option("-k,--k", a.request.ensemble_size, "number of prompts in the ensemble");
  cmd->add_option("--mask", a.request.mask, "{0,255} ROI mask");
  cmd->add_option("--regions", a.request.regions, "roi-content copies: sx,sy,w,h:dx,dy,w,h[;...]");
  cmd->add_option("--eta", a.request.strength, "guidance strength");
  cmd->add_option("--lambda", a.request.momentum, "momentum outside the ROI");
  cmd->add_option("--scales", a.scales, "guided scales first:last");
  cmd->add_option("--embedder", a.request.embedder, "mock or remoteclip");
  cmd->add_option("--llm-url", a.request.llm_url, "chat endpoint for paraphrases");
  cmd->add_option("--templates", a.request.templates, "paraphrase template bank");
  cmd->add_option("-o,--out", a.request.output, "output image")->required();
}

inline EditRequest finish_edit_request(EditArgs& a) {
  EditRequest r = a.request;
  r.mode = parse_guidance_mode(a.mode);
  if (!a.scales.empty()) r.scales = parse_scale_range(a.scales);
  return r;
}

inline void require_fields(const EditRequest& r) {
  auto errors = r.validate();
  if (!errors.empty()) throw FieldErrors(std::move(errors));
}

inline void print_json(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n'; }

/// Reads a flat config file: one `key = value` per line, keys named like the
/// long flags (with or without the leading dashes), '#' starts a comment.
/// Repeated keys give repeated flags; `true`/`false` toggle boolean flags.
inline std::vector<std::pair<std::string, std::string>> read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = rsedit::detail::trim(line);
    if (t.empty() || t.front() == '#' || t.front() == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = rsedit::detail::trim(t.substr(0, eq));
    std::string value = rsedit::detail::trim(t.substr(eq + 1));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

/// Splices `--config FILE` entries into the argument list right after the
/// subcommand. Flags given on the command line take precedence.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  auto given = [&](const std::string& key) {
    for (const auto& a : args) {
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  // Insert right after the subcommand name (the first non-flag argument).
  std::size_t insert_at = 1;
  while (insert_at < args.size() && args[insert_at].rfind("-", 0) == 0) ++insert_at;
  insert_at = std::min(args.size(), insert_at + 1);
  std::vector<std::string> extra;
  for (const auto& [key, value] : read_config(path)) {
    if (given(key)) continue;
    if (value == "true") {
      extra.push_back("--" + key);
    } else if (value != "false") {
      extra.push_back("--" + key);
      extra.push_back(value);
    }
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert_at), extra.begin(), extra.end());
  return args;
}

}  // namespace cli

/// Command-line entry point. Returns 0 on success, 1 on a failed or invalid
/// request (structured error on `err`), 2 on a usage error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Single-image diffusion editing for remote-sensing scenes", "rsedit"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::uint64_t seed = 0;
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value file with option defaults");
    cmd->add_option("--seed", seed, "random seed");
  };

  cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on one image");
  add_common(train_cmd);
  train_cmd->add_option("--image", train.image, "training image")->required();
  train_cmd->add_option("-o,--out", train.out, "checkpoint to write")->required();
  train_cmd->add_option("--resume", train.resume, "continue from this checkpoint");
  cli::add_model_options(train_cmd, train);

  std::string sample_ck, sample_out;
  auto* sample_cmd = app.add_subcommand("sample", "draw an unconditional sample");
  add_common(sample_cmd);
  sample_cmd->add_option("--checkpoint", sample_ck, "trained checkpoint")->required();
  sample_cmd->add_option("-o,--out", sample_out, "output image")->required();

  cli::EditArgs edit;
  auto* edit_cmd = app.add_subcommand("edit", "edit the training image");
  add_common(edit_cmd);
  cli::add_edit_options(edit_cmd, edit, false);

  std::vector<std::string> score_images;
  std::string score_prompt, score_embedder = "mock", score_report;
  double omega = 1.0;
  auto* score_cmd = app.add_subcommand("score", "CLIP score of images against a prompt");
  add_common(score_cmd);
  score_cmd->add_option("--image", score_images, "image to score (repeatable)")->required();
  score_cmd->add_option("--prompt", score_prompt, "prompt text")->required();
  score_cmd->add_option("--embedder", score_embedder, "mock or remoteclip");
  score_cmd->add_option("--omega", omega, "score scale");
  score_cmd->add_option("--report", score_report, "write the report here instead of stdout");

  cli::EditArgs tile_edit_args;
  cli::TileArgs tile;
  cli::TrainArgs tile_train;
  auto* tile_cmd = app.add_subcommand("tile-edit", "edit tiles of a large scene and stitch them back");
  add_common(tile_cmd);
  tile_cmd->add_option("--image", tile.image, "large scene")->required();
  tile_cmd->add_option("--rect", tile.rects, "tile x,y,w,h (repeat for several disjoint tiles)")->required();
  tile_cmd->add_option("--feather", tile.feather, "blend ramp width in pixels");
  tile_cmd->add_flag("--train-tile", tile.train_tile, "train a model on each tile first");
  cli::add_edit_options(tile_cmd, tile_edit_args, false);
  cli::add_model_options(tile_cmd, tile_train);

  std::string variants_prompt, variants_llm, variants_templates;
  int variants_k = 5;
  auto* variants_cmd = app.add_subcommand("variants", "print the prompt ensemble");
  add_common(variants_cmd);
  variants_cmd->add_option("--prompt", variants_prompt, "prompt text")->required();
  variants_cmd->add_option("-k,--k", variants_k, "number of prompts, original included");
  variants_cmd->add_option("--llm-url", variants_llm, "chat endpoint for paraphrases");
  variants_cmd->add_option("--templates", variants_templates, "paraphrase template bank");

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = cli::expand_config(std::move(args));
  } catch (const Error& e) {
    err << cli::error_json(e).dump() << '\n';
    return 1;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'rsedit --help' for usage\n";
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      train.train.loss = parse_loss_kind(train.loss);
      train.train.seed = seed;
      train.train.checkpoint_path = train.out;
      const Image<float> image = load_rgb(train.image);
      Checkpoint ck;
      if (!train.resume.empty()) {
        Trainer trainer = Trainer::resume(load_checkpoint(train.resume), image);
        trainer.set_epochs(train.train.epochs);
        ck = run_training(trainer);
        save_checkpoint(ck, train.out);
      } else {
        ck = rsedit::train(image, train.model, train.train);
      }
      cli::print_json(out, {{"checkpoint", train.out},
                            {"steps", ck.step},
                            {"scales", ck.pyramid.dims.size()},
                            {"final_loss", ck.loss_history.empty() ? 0.0 : ck.loss_history.back()}});
    } else if (sample_cmd->parsed()) {
      const DiffusionModel model = DiffusionModel::from_checkpoint(load_checkpoint(sample_ck));
      save_rgb(sample_out, sample(model, seed));
      cli::print_json(out, {{"output", sample_out}});
    } else if (edit_cmd->parsed()) {
      EditRequest request = cli::finish_edit_request(edit);
      request.seed = seed;
      if (request.output.empty()) request.output = "edited.png";
      cli::require_fields(request);
      const EditResult result = run_edit(request);
      save_rgb(request.output, result.image);
      cli::print_json(out, {{"output", request.output}, {"prompts", result.texts}});
    } else if (score_cmd->parsed()) {
      const auto embedder = make_embedder(score_embedder);
      ScoreReport report{embedder->id(), omega, {}};
      for (const auto& path : score_images) {
        const double c = clip_score(load_rgb(path).cast<double>(), score_prompt, *embedder, omega);
        report.records.push_back({path, score_prompt, c});
      }
      if (score_report.empty()) {
        write_score_report(report, out);
      } else {
        write_score_report(report, std::filesystem::path(score_report));
        cli::print_json(out, {{"report", score_report}, {"mean", report.mean()}});
      }
    } else if (tile_cmd->parsed()) {
      EditRequest request = cli::finish_edit_request(tile_edit_args);
      request.seed = seed;
      const bool need_checkpoint = !tile.train_tile;
      if (!need_checkpoint && request.checkpoint.empty()) request.checkpoint = "(trained per tile)";
      cli::require_fields(request);
      const Image<float> scene = load_rgb(tile.image);
      std::optional<Image<float>> scene_mask;
      if (uses_mask(request.mode) && !request.mask.empty()) {
        scene_mask = load_mask(request.mask);
        require_same_dims(*scene_mask, scene, "tile-edit mask");
      }
      std::vector<Rect> rects;
      for (const auto& r : tile.rects) rects.push_back(parse_rect(r));
      if (rects.size() > 1 && !tile.train_tile) {
        throw InvalidConfig("several tiles need --train-tile (one checkpoint covers one tile)");
      }
      std::optional<Checkpoint> shared;
      if (!tile.train_tile) shared = load_checkpoint(request.checkpoint);
      tile_train.train.loss = parse_loss_kind(tile_train.loss);
      tile_train.train.seed = seed;

      const TileEditor editor = [&](const Image<float>& crop_img, const Rect& rect) {
        Checkpoint ck;
        if (shared) {
          if (shared->source.dims() != crop_img.dims()) {
            throw InvalidInput("checkpoint was trained on " + to_string(shared->source.dims()) +
                               " images but the tile is " + to_string(crop_img.dims()) + "; pass --train-tile");
          }
          if (shared->source_digest != image_digest(crop_img)) {
            throw DigestMismatch("checkpoint was trained on a different image than tile " + to_string(rect) +
                                 "; pass --train-tile");
          }
          ck = *shared;
        } else {
          ck = rsedit::train(crop_img, tile_train.model, tile_train.train);
        }
        EditOptions options;
        options.warn = [&err](const std::string& m) { err << "warning: " << m << '\n'; };
        if (scene_mask) options.mask = crop(*scene_mask, rect);
        return run_edit(request, ck, options).image;
      };
      save_rgb(request.output, tile_edit_many(scene, rects, editor, tile.feather));
      cli::print_json(out, {{"output", request.output}, {"tiles", rects.size()}});
    } else if (variants_cmd->parsed()) {
      EditRequest r;
      r.prompts = {variants_prompt};
      r.prompt_ensemble = true;
      r.ensemble_size = variants_k;
      r.llm_url = variants_llm;
      r.templates = variants_templates;
      for (const auto& t : request_texts(r, nullptr, [&err](const std::string& m) { err << "warning: " << m << '\n'; })) {
        out << t << '\n';
      }
    }
  } catch (const Error& e) {
    err << cli::error_json(e).dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace rsedit
