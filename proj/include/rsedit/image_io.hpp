// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

// Decodes a PNG into 8-bit samples with `channels` (1 = gray, 3 = RGB) interleaved.
inline std::vector<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes, int channels, Dims& dims) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ParseError(std::string("not a readable PNG: ") + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ParseError(std::string("PNG decode failed: ") + image.message);
  }
  dims = {static_cast<int>(image.height), static_cast<int>(image.width)};
  return pixels;
}

inline std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels, Dims dims, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(dims.width);
  image.height = static_cast<png_uint_32>(dims.height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace detail

inline float byte_to_unit(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

inline std::uint8_t unit_to_byte(float v) {
  const double scaled = std::round((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

/// RGB PNG bytes -> planar image in [-1, 1].
inline Image<float> decode_rgb(const std::vector<std::uint8_t>& bytes) {
  Dims dims;
  const auto pixels = detail::decode_png(bytes, 3, dims);
  Image<float> img(dims, 3);
  for (int y = 0; y < dims.height; ++y) {
    for (int x = 0; x < dims.width; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = byte_to_unit(pixels[(static_cast<std::size_t>(y) * dims.width + x) * 3 + c]);
    }
  }
  return img;
}

inline std::vector<std::uint8_t> encode_rgb(const Image<float>& img) {
  if (img.channels() != 3) throw InvalidInput("encode_rgb expects a 3-channel image");
  std::vector<std::uint8_t> pixels(img.pixel_count() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) pixels[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] = unit_to_byte(img.at(c, y, x));
    }
  }
  return detail::encode_png(pixels, img.dims(), 3);
}

/// Mask PNG (single channel, every value 0 or 255) -> {0, 1} mask.
inline Image<float> decode_mask(const std::vector<std::uint8_t>& bytes) {
  Dims dims;
  const auto pixels = detail::decode_png(bytes, 1, dims);
  Image<float> mask(dims, 1);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] != 0 && pixels[i] != 255) {
      throw InvalidInput("mask values must be 0 or 255, found " + std::to_string(pixels[i]));
    }
    mask.data()[i] = pixels[i] == 255 ? 1.0f : 0.0f;
  }
  return mask;
}

inline std::vector<std::uint8_t> encode_mask(const Image<float>& mask) {
  if (mask.channels() != 1) throw InvalidInput("encode_mask expects a single-channel mask");
  std::vector<std::uint8_t> pixels(mask.pixel_count());
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = mask.data()[i] >= 0.5f ? 255 : 0;
  return detail::encode_png(pixels, mask.dims(), 1);
}

inline Image<float> load_rgb(const std::filesystem::path& path) { return decode_rgb(detail::read_file_bytes(path)); }
inline Image<float> load_mask(const std::filesystem::path& path) { return decode_mask(detail::read_file_bytes(path)); }
inline void save_rgb(const std::filesystem::path& path, const Image<float>& img) {
  detail::write_file_bytes(path, encode_rgb(img));
}
inline void save_mask(const std::filesystem::path& path, const Image<float>& mask) {
  detail::write_file_bytes(path, encode_mask(mask));
}

}  // namespace rsedit
