// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"

namespace rsedit {

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  Dims dims() const { return {height, width}; }
  bool operator==(const Rect&) const = default;
  bool within(Dims d) const {
    return x >= 0 && y >= 0 && width > 0 && height > 0 && x + width <= d.width && y + height <= d.height;
  }
  bool overlaps(const Rect& o) const {
    return x < o.x + o.width && o.x < x + width && y < o.y + o.height && o.y < y + height;
  }
};

inline std::string to_string(const Rect& r) {
  return std::to_string(r.x) + "," + std::to_string(r.y) + "," + std::to_string(r.width) + "," +
         std::to_string(r.height);
}

/// Parses "x,y,w,h".
inline Rect parse_rect(const std::string& text) {
  Rect r;
  std::size_t used = 0;
  int values[4];
  std::string rest = text;
  for (int i = 0; i < 4; ++i) {
    try {
      values[i] = std::stoi(rest, &used);
    } catch (const std::exception&) {
      throw InvalidInput("malformed rect '" + text + "' (expected x,y,w,h)");
    }
    rest = rest.substr(used);
    if (i < 3) {
      if (rest.empty() || rest.front() != ',') throw InvalidInput("malformed rect '" + text + "' (expected x,y,w,h)");
      rest = rest.substr(1);
    }
  }
  if (!rest.empty()) throw InvalidInput("malformed rect '" + text + "' (expected x,y,w,h)");
  r = {values[0], values[1], values[2], values[3]};
  if (r.width <= 0 || r.height <= 0) throw InvalidInput("rect '" + text + "' has no area");
  return r;
}

inline void require_within(const Rect& r, Dims d, const char* what) {
  if (!r.within(d)) {
    throw InvalidInput(std::string(what) + " " + to_string(r) + " is outside the " + to_string(d) + " image");
  }
}

template <typename T>
Image<T> crop(const Image<T>& image, const Rect& r) {
  require_within(r, image.dims(), "crop rect");
  Image<T> out(r.dims(), image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) out.at(c, y, x) = image.at(c, r.y + y, r.x + x);
    }
  }
  return out;
}

/// Blend weight of the edited tile at (y, x) inside `r`: rises linearly from
/// the tile border over `feather` pixels. Sides touching the image border are
/// not feathered, so a full-image tile is pasted as is.
inline double feather_weight(const Rect& r, Dims image, int y, int x, int feather) {
  if (feather <= 0) return 1.0;
  int d = feather;
  if (r.x > 0) d = std::min(d, x);
  if (r.y > 0) d = std::min(d, y);
  if (r.x + r.width < image.width) d = std::min(d, r.width - 1 - x);
  if (r.y + r.height < image.height) d = std::min(d, r.height - 1 - y);
  return std::min(1.0, static_cast<double>(d + 1) / (feather + 1));
}

/// Writes `tile` back into `image` at `r`. Pixels outside `r` are not touched.
template <typename T>
void stitch(Image<T>& image, const Image<T>& tile, const Rect& r, int feather = 8) {
  require_within(r, image.dims(), "stitch rect");
  if (tile.dims() != r.dims() || tile.channels() != image.channels()) {
    throw InvalidInput("tile shape does not match its rect " + to_string(r));
  }
  if (feather < 0) throw InvalidConfig("feather width must be >= 0");
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const double w = feather_weight(r, image.dims(), y, x, feather);
      for (int c = 0; c < image.channels(); ++c) {
        T& dst = image.at(c, r.y + y, r.x + x);
        dst = w == 1.0 ? tile.at(c, y, x) : static_cast<T>(w * tile.at(c, y, x) + (1.0 - w) * dst);
      }
    }
  }
}

using TileEditor = std::function<Image<float>(const Image<float>& tile, const Rect& rect)>;

/// Crop, edit, stitch.
inline Image<float> tile_edit(const Image<float>& image, const Rect& rect, const TileEditor& editor, int feather = 8) {
  const Image<float> tile = crop(image, rect);
  const Image<float> edited = editor(tile, rect);
  Image<float> out = image;
  stitch(out, edited, rect, feather);
  return out;
}

/// Edits disjoint tiles concurrently and stitches them in the given order.
inline Image<float> tile_edit_many(const Image<float>& image, const std::vector<Rect>& rects, const TileEditor& editor,
                                   int feather = 8) {
  for (std::size_t i = 0; i < rects.size(); ++i) {
    require_within(rects[i], image.dims(), "tile rect");
    for (std::size_t j = 0; j < i; ++j) {
      if (rects[i].overlaps(rects[j])) throw InvalidInput("tile rects must be disjoint");
    }
  }
  std::vector<std::future<Image<float>>> jobs;
  for (const Rect& r : rects) {
    jobs.push_back(std::async(std::launch::async, [&image, &editor, r] { return editor(crop(image, r), r); }));
  }
  Image<float> out = image;
  for (std::size_t i = 0; i < rects.size(); ++i) stitch(out, jobs[i].get(), rects[i], feather);
  return out;
}

}  // namespace rsedit
