// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rsedit/error.hpp"
#include "rsedit/image.hpp"
#include "rsedit/rng.hpp"

namespace rsedit {

struct DenoiserConfig {
  int num_blocks = 4;
  int channels = 64;
  int kernel_size = 3;
  int embed_dim = 64;  ///< length of each sinusoidal code (t and s get one each)
  int image_channels = 3;

  /// Width of the joint time-scale vector produced by the two FC layers.
  int hidden_width() const { return channels; }

  void validate() const {
    if (num_blocks < 1) throw InvalidConfig("denoiser needs at least one block");
    if (channels < 1) throw InvalidConfig("denoiser channel count must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw InvalidConfig("kernel size must be odd and positive");
    if (embed_dim < 2 || embed_dim % 2 != 0) throw InvalidConfig("embedding dimension must be even and >= 2");
    if (image_channels < 1) throw InvalidConfig("image channel count must be positive");
  }
  bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal code: entry 2i = sin(v / 10000^(2i/d)), entry 2i+1 = cos(...).
template <typename T = double>
std::vector<T> spe_embed(int value, int d) {
  if (d < 2 || d % 2 != 0) throw InvalidConfig("sinusoidal embedding dimension must be even and >= 2");
  if (value < 0) throw InvalidInput("sinusoidal embedding expects a non-negative value");
  std::vector<T> out(d);
  for (int i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d);
    out[2 * i] = static_cast<T>(std::sin(value * freq));
    out[2 * i + 1] = static_cast<T>(std::cos(value * freq));
  }
  return out;
}

namespace detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

/// Source pixel of every (kernel tap, output pixel) pair under reflect padding.
struct ConvGeometry {
  int height = 0;
  int width = 0;
  int kernel = 0;
  std::vector<int> source;  // [tap * pixels + pixel]

  ConvGeometry(int h, int w, int k) : height(h), width(w), kernel(k) {
    const int pad = k / 2;
    const int pixels = h * w;
    source.resize(static_cast<std::size_t>(k) * k * pixels);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        int* row = source.data() + static_cast<std::size_t>(ky * k + kx) * pixels;
        for (int y = 0; y < h; ++y) {
          const int sy = reflect_index(y + ky - pad, h);
          for (int x = 0; x < w; ++x) row[y * w + x] = sy * w + reflect_index(x + kx - pad, w);
        }
      }
    }
  }
  int pixels() const { return height * width; }
  int taps() const { return kernel * kernel; }
};

template <typename T>
Mat<T> im2col(const Mat<T>& input, const ConvGeometry& geo) {
  const int pixels = geo.pixels();
  const int taps = geo.taps();
  Mat<T> col(input.rows() * taps, pixels);
  for (Eigen::Index c = 0; c < input.rows(); ++c) {
    const T* in = input.row(c).data();
    for (int tap = 0; tap < taps; ++tap) {
      T* dst = col.row(c * taps + tap).data();
      const int* src = geo.source.data() + static_cast<std::size_t>(tap) * pixels;
      for (int p = 0; p < pixels; ++p) dst[p] = in[src[p]];
    }
  }
  return col;
}

template <typename T>
void col2im_add(const Mat<T>& col, const ConvGeometry& geo, Mat<T>& grad_input) {
  const int pixels = geo.pixels();
  const int taps = geo.taps();
  for (Eigen::Index c = 0; c < grad_input.rows(); ++c) {
    T* dst = grad_input.row(c).data();
    for (int tap = 0; tap < taps; ++tap) {
      const T* src_row = col.row(c * taps + tap).data();
      const int* src = geo.source.data() + static_cast<std::size_t>(tap) * pixels;
      for (int p = 0; p < pixels; ++p) dst[src[p]] += src_row[p];
    }
  }
}

}  // namespace detail

/// Fully-convolutional noise predictor conditioned on a joint time-scale
/// embedding. All parameters live in one flat array so that optimizers,
/// checkpoints and finite-difference checks can treat them uniformly.
///
/// Layout: embedding FC1/FC2, head conv (image -> features), `num_blocks`
/// residual blocks (conv, GeLU, additive projected embedding, conv) and a
/// zero-initialised tail conv back to image channels. Convs use reflect
/// padding and keep spatial size.
template <typename T = float>
class Denoiser {
 public:
  using Mat = detail::Mat<T>;
  using Vec = detail::Vec<T>;

  /// Per-sample activations kept for the backward pass.
  struct Tape {
    Vec embed_in, fc1_out, fc1_act, ts, ts_act;
    Mat head_col;
    std::vector<Mat> conv1_col, conv1_out, conv2_col;
    Mat tail_col;
    Dims dims;
  };

  explicit Denoiser(const DenoiserConfig& config = {}, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    build_layout();
    params_.assign(total_, T(0));
    initialize(seed);
  }

  Denoiser(const DenoiserConfig& config, std::vector<T> params) : config_(config) {
    config_.validate();
    build_layout();
    if (params.size() != total_) {
      throw InvalidInput("parameter array has " + std::to_string(params.size()) + " entries, expected " +
                         std::to_string(total_));
    }
    params_.assign(params.begin(), params.end());
  }

  const DenoiserConfig& config() const { return config_; }
  std::size_t parameter_count() const { return total_; }
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }

  template <typename U>
  Denoiser<U> cast() const {
    std::vector<U> converted(params_.begin(), params_.end());
    return Denoiser<U>(config_, std::move(converted));
  }

  /// ts = FC2(GeLU(FC1([SPE(t); SPE(s)])))
  std::vector<T> time_scale_embed(int t, int s) const {
    Tape tape;
    embed(t, s, tape);
    return {tape.ts.data(), tape.ts.data() + tape.ts.size()};
  }

  Image<T> predict_noise(const Image<T>& x, int t, int s) const {
    Tape tape;
    return forward(x, t, s, tape);
  }

  Image<T> forward(const Image<T>& x, int t, int s, Tape& tape) const {
    check_input(x);
    const int c = config_.channels;
    const int pixels = static_cast<int>(x.pixel_count());
    const detail::ConvGeometry geo(x.height(), x.width(), config_.kernel_size);
    tape.dims = x.dims();

    embed(t, s, tape);

    Eigen::Map<const Mat> input(x.data().data(), x.channels(), pixels);
    tape.head_col = detail::im2col<T>(input, geo);
    Mat h = weight(head_w_, c, config_.image_channels * geo.taps()) * tape.head_col;
    h.colwise() += bias(head_b_, c);

    tape.conv1_col.resize(config_.num_blocks);
    tape.conv1_out.resize(config_.num_blocks);
    tape.conv2_col.resize(config_.num_blocks);
    for (int b = 0; b < config_.num_blocks; ++b) {
      const auto& blk = blocks_[b];
      tape.conv1_col[b] = detail::im2col<T>(h, geo);
      tape.conv1_out[b] = weight(blk.conv1_w, c, c * geo.taps()) * tape.conv1_col[b];
      tape.conv1_out[b].colwise() += bias(blk.conv1_b, c);
      Mat act = tape.conv1_out[b].unaryExpr([](T v) { return detail::gelu(v); });
      const Vec inject = weight(blk.proj_w, c, config_.hidden_width()) * tape.ts_act + bias(blk.proj_b, c);
      act.colwise() += inject;
      tape.conv2_col[b] = detail::im2col<T>(act, geo);
      Mat z2 = weight(blk.conv2_w, c, c * geo.taps()) * tape.conv2_col[b];
      z2.colwise() += bias(blk.conv2_b, c);
      h += z2;
    }

    tape.tail_col = detail::im2col<T>(h, geo);
    Mat out = weight(tail_w_, config_.image_channels, c * geo.taps()) * tape.tail_col;
    out.colwise() += bias(tail_b_, config_.image_channels);

    Image<T> result(x.dims(), config_.image_channels);
    std::copy(out.data(), out.data() + out.size(), result.data().begin());
    return result;
  }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  void backward(const Tape& tape, const Image<T>& grad_out, std::span<T> grad) const {
    if (grad.size() != total_) throw InvalidInput("gradient buffer has the wrong size");
    if (grad_out.dims() != tape.dims || grad_out.channels() != config_.image_channels) {
      throw InvalidInput("output gradient does not match the recorded forward pass");
    }
    const int c = config_.channels;
    const int hidden = config_.hidden_width();
    const detail::ConvGeometry geo(tape.dims.height, tape.dims.width, config_.kernel_size);
    const int pixels = geo.pixels();
    const int taps = geo.taps();

    Eigen::Map<const Mat> d_out(grad_out.data().data(), config_.image_channels, pixels);
    grad_weight(grad, tail_w_, config_.image_channels, c * taps) += d_out * tape.tail_col.transpose();
    grad_bias(grad, tail_b_, config_.image_channels) += d_out.rowwise().sum();
    Mat d_h = Mat::Zero(c, pixels);
    detail::col2im_add<T>(weight(tail_w_, config_.image_channels, c * taps).transpose() * d_out, geo, d_h);

    Vec d_ts_act = Vec::Zero(hidden);
    for (int b = config_.num_blocks - 1; b >= 0; --b) {
      const auto& blk = blocks_[b];
      // Residual: d_h flows straight through and also into conv2.
      grad_weight(grad, blk.conv2_w, c, c * taps) += d_h * tape.conv2_col[b].transpose();
      grad_bias(grad, blk.conv2_b, c) += d_h.rowwise().sum();
      Mat d_act = Mat::Zero(c, pixels);
      detail::col2im_add<T>(weight(blk.conv2_w, c, c * taps).transpose() * d_h, geo, d_act);

      const Vec d_inject = d_act.rowwise().sum();
      grad_weight(grad, blk.proj_w, c, hidden) += d_inject * tape.ts_act.transpose();
      grad_bias(grad, blk.proj_b, c) += d_inject;
      d_ts_act += weight(blk.proj_w, c, hidden).transpose() * d_inject;

      const Mat d_z1 = d_act.cwiseProduct(tape.conv1_out[b].unaryExpr([](T v) { return detail::gelu_grad(v); }));
      grad_weight(grad, blk.conv1_w, c, c * taps) += d_z1 * tape.conv1_col[b].transpose();
      grad_bias(grad, blk.conv1_b, c) += d_z1.rowwise().sum();
      detail::col2im_add<T>(weight(blk.conv1_w, c, c * taps).transpose() * d_z1, geo, d_h);
    }

    grad_weight(grad, head_w_, c, config_.image_channels * taps) += d_h * tape.head_col.transpose();
    grad_bias(grad, head_b_, c) += d_h.rowwise().sum();

    const Vec d_ts = d_ts_act.cwiseProduct(tape.ts.unaryExpr([](T v) { return detail::gelu_grad(v); }));
    grad_weight(grad, fc2_w_, hidden, hidden) += d_ts * tape.fc1_act.transpose();
    grad_bias(grad, fc2_b_, hidden) += d_ts;
    const Vec d_fc1_act = weight(fc2_w_, hidden, hidden).transpose() * d_ts;
    const Vec d_fc1 = d_fc1_act.cwiseProduct(tape.fc1_out.unaryExpr([](T v) { return detail::gelu_grad(v); }));
    grad_weight(grad, fc1_w_, hidden, 2 * config_.embed_dim) += d_fc1 * tape.embed_in.transpose();
    grad_bias(grad, fc1_b_, hidden) += d_fc1;
  }

 private:
  struct BlockOffsets {
    std::size_t conv1_w, conv1_b, proj_w, proj_b, conv2_w, conv2_b;
  };

  void build_layout() {
    const std::size_t c = config_.channels;
    const std::size_t k2 = static_cast<std::size_t>(config_.kernel_size) * config_.kernel_size;
    const std::size_t hidden = config_.hidden_width();
    const std::size_t ic = config_.image_channels;
    std::size_t next = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = next;
      next += n;
      return at;
    };
    fc1_w_ = take(hidden * 2 * config_.embed_dim);
    fc1_b_ = take(hidden);
    fc2_w_ = take(hidden * hidden);
    fc2_b_ = take(hidden);
    head_w_ = take(c * ic * k2);
    head_b_ = take(c);
    blocks_.clear();
    for (int b = 0; b < config_.num_blocks; ++b) {
      BlockOffsets blk{};
      blk.conv1_w = take(c * c * k2);
      blk.conv1_b = take(c);
      blk.proj_w = take(c * hidden);
      blk.proj_b = take(c);
      blk.conv2_w = take(c * c * k2);
      blk.conv2_b = take(c);
      blocks_.push_back(blk);
    }
    tail_w_ = take(ic * c * k2);
    tail_b_ = take(ic);
    total_ = next;
  }

  // Fan-in scaled normal weights, zero biases, zero tail so that a fresh
  // model predicts zero noise.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
      const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<T>(rng.normal() * std_dev);
    };
    const std::size_t c = config_.channels;
    const std::size_t k2 = static_cast<std::size_t>(config_.kernel_size) * config_.kernel_size;
    const std::size_t hidden = config_.hidden_width();
    fill(fc1_w_, hidden * 2 * config_.embed_dim, 2 * config_.embed_dim);
    fill(fc2_w_, hidden * hidden, hidden);
    fill(head_w_, c * config_.image_channels * k2, config_.image_channels * k2);
    for (const auto& blk : blocks_) {
      fill(blk.conv1_w, c * c * k2, c * k2);
      fill(blk.proj_w, c * hidden, hidden);
      fill(blk.conv2_w, c * c * k2, c * k2);
    }
  }

  void embed(int t, int s, Tape& tape) const {
    const int d = config_.embed_dim;
    const int hidden = config_.hidden_width();
    const auto code_t = spe_embed<T>(t, d);
    const auto code_s = spe_embed<T>(s, d);
    tape.embed_in.resize(2 * d);
    for (int i = 0; i < d; ++i) {
      tape.embed_in[i] = code_t[i];
      tape.embed_in[d + i] = code_s[i];
    }
    tape.fc1_out = weight(fc1_w_, hidden, 2 * d) * tape.embed_in + bias(fc1_b_, hidden);
    tape.fc1_act = tape.fc1_out.unaryExpr([](T v) { return detail::gelu(v); });
    tape.ts = weight(fc2_w_, hidden, hidden) * tape.fc1_act + bias(fc2_b_, hidden);
    tape.ts_act = tape.ts.unaryExpr([](T v) { return detail::gelu(v); });
  }

  void check_input(const Image<T>& x) const {
    if (x.channels() != config_.image_channels) {
      throw InvalidInput("denoiser expects " + std::to_string(config_.image_channels) + " channels, got " +
                         std::to_string(x.channels()));
    }
    if (x.height() < 1 || x.width() < 1) throw InvalidInput("denoiser input is empty");
    require_finite(x, "denoiser input");
  }

  Eigen::Map<const Mat> weight(std::size_t offset, int rows, int cols) const {
    return Eigen::Map<const Mat>(params_.data() + offset, rows, cols);
  }
  Eigen::Map<const Vec> bias(std::size_t offset, int rows) const {
    return Eigen::Map<const Vec>(params_.data() + offset, rows);
  }
  static Eigen::Map<Mat> grad_weight(std::span<T> grad, std::size_t offset, int rows, int cols) {
    return Eigen::Map<Mat>(grad.data() + offset, rows, cols);
  }
  static Eigen::Map<Vec> grad_bias(std::span<T> grad, std::size_t offset, int rows) {
    return Eigen::Map<Vec>(grad.data() + offset, rows);
  }

  DenoiserConfig config_;
  AlignedVector<T> params_;
  std::size_t total_ = 0;
  std::size_t fc1_w_ = 0, fc1_b_ = 0, fc2_w_ = 0, fc2_b_ = 0, head_w_ = 0, head_b_ = 0, tail_w_ = 0, tail_b_ = 0;
  std::vector<BlockOffsets> blocks_;
};

}  // namespace rsedit
