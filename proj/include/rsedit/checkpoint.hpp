// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsedit/digest.hpp"
#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/train_config.hpp"

namespace rsedit {

/// Scale layout of the training pyramid (coarsest first).
struct PyramidMeta {
  double factor = 4.0 / 3.0;
  int min_dim = 24;
  std::vector<Dims> dims;
  bool operator==(const PyramidMeta&) const = default;
};

struct AdamState {
  std::uint64_t step = 0;
  std::vector<float> first_moment;
  std::vector<float> second_moment;
  bool operator==(const AdamState&) const = default;
};

/// A trained (or partially trained) single-image model together with what is
/// needed to edit its image and to resume training bit-exactly.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  std::vector<float> parameters;
  AdamState optimizer;
  PyramidMeta pyramid;
  Image<float> source;
  std::string source_digest;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<double> loss_history;

  bool operator==(const Checkpoint& o) const {
    return model == o.model && train == o.train && parameters == o.parameters && optimizer == o.optimizer &&
           pyramid == o.pyramid && source == o.source && source_digest == o.source_digest && step == o.step &&
           rng_state == o.rng_state && loss_history == o.loss_history;
  }
};

// ---------------------------------------------------------------------------
// JSON mapping of the configuration structs.

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"num_blocks", c.num_blocks},
       {"channels", c.channels},
       {"kernel_size", c.kernel_size},
       {"embed_dim", c.embed_dim},
       {"image_channels", c.image_channels}};
}
inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  j.at("num_blocks").get_to(c.num_blocks);
  j.at("channels").get_to(c.channels);
  j.at("kernel_size").get_to(c.kernel_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("image_channels").get_to(c.image_channels);
}

inline void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"coarse_steps", c.coarse_steps},
       {"fine_steps", c.fine_steps},
       {"beta_min", c.beta_min},
       {"beta_max", c.beta_max},
       {"stochastic", c.stochastic}};
}
inline void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  j.at("coarse_steps").get_to(c.coarse_steps);
  j.at("fine_steps").get_to(c.fine_steps);
  j.at("beta_min").get_to(c.beta_min);
  j.at("beta_max").get_to(c.beta_max);
  j.at("stochastic").get_to(c.stochastic);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"denoiser", c.denoiser},
       {"schedule", c.schedule},
       {"pyramid", {{"factor", c.pyramid.factor}, {"min_dim", c.pyramid.min_dim}}}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("denoiser").get_to(c.denoiser);
  j.at("schedule").get_to(c.schedule);
  j.at("pyramid").at("factor").get_to(c.pyramid.factor);
  j.at("pyramid").at("min_dim").get_to(c.pyramid.min_dim);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch", c.batch},
       {"learning_rate", c.learning_rate},
       {"seed", c.seed},
       {"loss", to_string(c.loss)},
       {"early_stop", c.early_stop},
       {"patience", c.patience},
       {"plateau_tolerance", c.plateau_tolerance},
       {"checkpoint_every", c.checkpoint_every},
       {"checkpoint_path", c.checkpoint_path}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch").get_to(c.batch);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("seed").get_to(c.seed);
  c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  j.at("early_stop").get_to(c.early_stop);
  j.at("patience").get_to(c.patience);
  j.at("plateau_tolerance").get_to(c.plateau_tolerance);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("checkpoint_path").get_to(c.checkpoint_path);
}

// ---------------------------------------------------------------------------
// File container.
//
//   bytes 0..7     magic "RSEDITCK"
//   bytes 8..11    format version, u32 little-endian
//   bytes 12..19   header length H, u64 little-endian
//   next H bytes   UTF-8 JSON header (configs, metadata, array table)
//   payload        arrays back to back, little-endian, at the offsets listed
//                  in header["arrays"] (relative to the payload start)
//   last 8 bytes   FNV-1a 64 of everything before it, u64 little-endian

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'D', 'I', 'T', 'C', 'K'};

template <typename U>
void append_le(std::string& out, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U read_le(const std::string& in, std::size_t at) {
  if (at + sizeof(U) > in.size()) throw ParseError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return value;
}

template <typename F, typename A>
void append_floats(std::string& out, const std::vector<F, A>& values) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  for (F v : values) append_le(out, std::bit_cast<Bits>(v));
}

template <typename F>
std::vector<F> read_floats(const std::string& payload, std::size_t offset, std::size_t count) {
  using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  if (offset > payload.size() || count > (payload.size() - offset) / sizeof(F)) {
    throw ParseError("checkpoint array extends past the end of the file");
  }
  std::vector<F> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<F>(read_le<Bits>(payload, offset + i * sizeof(F)));
  return out;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using nlohmann::json;
  std::string payload;
  json arrays = json::array();
  auto add = [&](const char* name, const auto& values) {
    using F = typename std::decay_t<decltype(values)>::value_type;
    arrays.push_back({{"name", name},
                      {"dtype", sizeof(F) == 4 ? "f32" : "f64"},
                      {"offset", payload.size()},
                      {"count", values.size()}});
    detail::append_floats(payload, values);
  };
  add("parameters", ck.parameters);
  add("adam_m", ck.optimizer.first_moment);
  add("adam_v", ck.optimizer.second_moment);
  add("source", ck.source.storage());
  add("loss_history", ck.loss_history);

  json dims = json::array();
  for (const Dims& d : ck.pyramid.dims) dims.push_back({d.height, d.width});

  const json header = {
      {"model", ck.model},
      {"train", ck.train},
      {"pyramid", {{"factor", ck.pyramid.factor}, {"min_dim", ck.pyramid.min_dim}, {"dims", dims}}},
      {"source", {{"height", ck.source.height()}, {"width", ck.source.width()}, {"channels", ck.source.channels()}}},
      {"source_digest", ck.source_digest},
      {"step", ck.step},
      {"adam_step", ck.optimizer.step},
      {"rng_state", ck.rng_state},
      {"arrays", arrays}};
  const std::string header_text = header.dump();

  std::string out(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  detail::append_le<std::uint32_t>(out, Checkpoint::kFormatVersion);
  detail::append_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;
  Fnv1a checksum;
  checksum.update({reinterpret_cast<const std::uint8_t*>(out.data()), out.size()});
  detail::append_le<std::uint64_t>(out, checksum.value());
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  using nlohmann::json;
  constexpr std::size_t kPrefix = sizeof detail::kCheckpointMagic + 4 + 8;
  if (bytes.size() < kPrefix + 8 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 8) != 0) {
    throw ParseError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::read_le<std::uint32_t>(bytes, 8);
  if (version != Checkpoint::kFormatVersion) {
    throw IncompatibleVersion("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  const auto stored_checksum = detail::read_le<std::uint64_t>(bytes, bytes.size() - 8);
  Fnv1a checksum;
  checksum.update({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size() - 8});
  if (checksum.value() != stored_checksum) throw ParseError("checkpoint checksum mismatch (file corrupted)");

  const auto header_len = detail::read_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrefix - 8) throw ParseError("checkpoint header length out of range");
  const std::string payload = bytes.substr(kPrefix + header_len, bytes.size() - kPrefix - header_len - 8);

  try {
    const json header = json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + header_len);
    Checkpoint ck;
    header.at("model").get_to(ck.model);
    header.at("train").get_to(ck.train);
    header.at("pyramid").at("factor").get_to(ck.pyramid.factor);
    header.at("pyramid").at("min_dim").get_to(ck.pyramid.min_dim);
    for (const auto& d : header.at("pyramid").at("dims")) ck.pyramid.dims.push_back({d.at(0), d.at(1)});
    header.at("source_digest").get_to(ck.source_digest);
    header.at("step").get_to(ck.step);
    header.at("adam_step").get_to(ck.optimizer.step);
    header.at("rng_state").get_to(ck.rng_state);

    auto array = [&](const std::string& name, const char* dtype) -> const json& {
      for (const auto& a : header.at("arrays")) {
        if (a.at("name") == name) {
          if (a.at("dtype") != dtype) throw ParseError("checkpoint array '" + name + "' has unexpected dtype");
          return a;
        }
      }
      throw ParseError("checkpoint is missing array '" + name + "'");
    };
    auto floats = [&](const std::string& name) {
      const auto& a = array(name, "f32");
      return detail::read_floats<float>(payload, a.at("offset"), a.at("count"));
    };
    ck.parameters = floats("parameters");
    ck.optimizer.first_moment = floats("adam_m");
    ck.optimizer.second_moment = floats("adam_v");
    const auto& hist = array("loss_history", "f64");
    ck.loss_history = detail::read_floats<double>(payload, hist.at("offset"), hist.at("count"));

    const auto& src = header.at("source");
    ck.source = Image<float>(src.at("height").get<int>(), src.at("width").get<int>(), src.at("channels").get<int>());
    const auto pixels = floats("source");
    if (pixels.size() != ck.source.size()) throw ParseError("checkpoint source image has the wrong size");
    std::copy(pixels.begin(), pixels.end(), ck.source.data().begin());
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace rsedit
