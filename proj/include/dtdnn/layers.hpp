// Copyright 2026 The dtdnn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Standard and deformable time-delay (1-D convolution) layers.
//
// Both layers use "same" zero padding: output frame i is centred on input
// frame i * stride, and the output has ceil(T / stride) frames. Convolution is
// lowered to a column matrix of shape (C_in * N, T_out) followed by one GEMM;
// column row ci * N + n holds the sample that kernel tap n reads from input
// channel ci. The deformable variant fills the same matrix from fractional
// positions, so with zero offsets it reproduces the standard layer exactly.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "dtdnn/core.hpp"
#include "dtdnn/errors.hpp"

namespace dtdnn {

struct GridSpec {
  Index kernel_size = 1;
  Index dilation = 1;
  Index stride = 1;

  void validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("kernel_size must be a positive odd integer, got " +
                        std::to_string(kernel_size));
    }
    if (dilation < 1) {
      throw ConfigError("dilation must be >= 1, got " + std::to_string(dilation));
    }
    if (stride < 1) {
      throw ConfigError("stride must be >= 1, got " + std::to_string(stride));
    }
  }

  // Relative position of tap n on the symmetric grid.
  Index tap(Index n) const { return dilation * (n - (kernel_size - 1) / 2); }
  Index reach() const { return dilation * ((kernel_size - 1) / 2); }
  Index output_length(Index input_length) const {
    return (input_length + stride - 1) / stride;
  }
};

template <typename Scalar>
struct ConvParams {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // C_out x (C_in * N); column ci * N + n is w[.][ci][n].
  Matrix weight;
  Vector bias;
  Index in_channels = 0;
  Index kernel_size = 1;

  static ConvParams zeros(Index out_channels, Index in_channels,
                          Index kernel_size) {
    ConvParams p;
    p.weight = Matrix::Zero(out_channels, in_channels * kernel_size);
    p.bias = Vector::Zero(out_channels);
    p.in_channels = in_channels;
    p.kernel_size = kernel_size;
    return p;
  }

  Index out_channels() const { return weight.rows(); }
  Index size() const { return weight.size() + bias.size(); }

  Scalar& w(Index co, Index ci, Index n) { return weight(co, ci * kernel_size + n); }
  Scalar w(Index co, Index ci, Index n) const {
    return weight(co, ci * kernel_size + n);
  }

  bool all_finite() const { return weight.allFinite() && bias.allFinite(); }
};

// Uniform in +-sqrt(1 / (C_in * N)); bias zero.
template <typename Scalar>
void init_uniform(ConvParams<Scalar>& p, Rng& rng) {
  const double bound =
      std::sqrt(1.0 / static_cast<double>(p.in_channels * p.kernel_size));
  for (Index j = 0; j < p.weight.cols(); ++j)
    for (Index i = 0; i < p.weight.rows(); ++i)
      p.weight(i, j) = Scalar(rng.uniform(-bound, bound));
  p.bias.setZero();
}

/// Fractional per-tap offsets, shape (N, T_out). Shared by every channel.
template <typename Scalar>
struct OffsetField {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix data;

  OffsetField() = default;
  explicit OffsetField(Matrix m) : data(std::move(m)) {}
  static OffsetField zeros(Index taps, Index length) {
    return OffsetField(Matrix::Zero(taps, length));
  }

  Index taps() const { return data.rows(); }
  Index length() const { return data.cols(); }
  Scalar operator()(Index n, Index i) const { return data(n, i); }
  Scalar& operator()(Index n, Index i) { return data(n, i); }
};

/// The auxiliary convolution that predicts offsets from the layer input.
/// Kernel N' (default 5), dilation 1, the main layer's stride, and N outputs.
template <typename Scalar>
struct OffsetPredictor {
  ConvParams<Scalar> params;

  static OffsetPredictor zeros(Index in_channels, Index taps,
                               Index kernel_size = 5) {
    return {ConvParams<Scalar>::zeros(taps, in_channels, kernel_size)};
  }

  Index kernel_size() const { return params.kernel_size; }
  Index size() const { return params.size(); }
  GridSpec grid(const GridSpec& main) const {
    return {params.kernel_size, 1, main.stride};
  }
};

enum class ClipMode { none, latency_controlled };

inline std::string to_string(ClipMode m) {
  return m == ClipMode::none ? "none" : "latency_controlled";
}

inline ClipMode parse_clip_mode(const std::string& s) {
  if (s == "none") return ClipMode::none;
  if (s == "latency_controlled") return ClipMode::latency_controlled;
  throw ConfigError("clip_mode must be 'none' or 'latency_controlled', got '" +
                    s + "'");
}

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

template <typename Derived, typename Scalar>
void check_conv_shapes(const Eigen::MatrixBase<Derived>& x,
                       const ConvParams<Scalar>& p, const GridSpec& g) {
  g.validate();
  require(x.rows() == p.in_channels,
          "input has " + std::to_string(x.rows()) +
              " channels but layer expects " + std::to_string(p.in_channels));
  require(x.cols() >= 1, "input sequence must have at least one frame");
  require(p.kernel_size == g.kernel_size,
          "weight kernel size " + std::to_string(p.kernel_size) +
              " does not match grid kernel size " +
              std::to_string(g.kernel_size));
  require(p.weight.cols() == p.in_channels * p.kernel_size &&
              p.bias.size() == p.weight.rows(),
          "convolution parameter arrays have inconsistent shapes");
}

template <typename Scalar>
void check_offsets(const OffsetField<Scalar>& f, const GridSpec& g,
                   Index out_len) {
  require(f.taps() == g.kernel_size && f.length() == out_len,
          "offset field is (" + std::to_string(f.taps()) + ", " +
              std::to_string(f.length()) + ") but layer needs (" +
              std::to_string(g.kernel_size) + ", " + std::to_string(out_len) +
              ")");
  require(f.data.allFinite(), "offset field contains non-finite values");
}

}  // namespace detail

/// Column matrix of integer-grid samples, shape (C_in * N, T_out).
template <typename Derived>
FeatureSeq<typename Derived::Scalar> im2col(const Eigen::MatrixBase<Derived>& x,
                                            const GridSpec& g) {
  using Scalar = typename Derived::Scalar;
  const Index channels = x.rows(), len = x.cols(), taps = g.kernel_size;
  const Index out_len = g.output_length(len);
  FeatureSeq<Scalar> cols = FeatureSeq<Scalar>::Zero(channels * taps, out_len);
  for (Index i = 0; i < out_len; ++i) {
    for (Index n = 0; n < taps; ++n) {
      const Index k = i * g.stride + g.tap(n);
      if (k < 0 || k >= len) continue;
      for (Index ci = 0; ci < channels; ++ci) cols(ci * taps + n, i) = x(ci, k);
    }
  }
  return cols;
}

/// Column matrix of interpolated samples at i * s + t_n + offset(n, i).
template <typename Derived>
FeatureSeq<typename Derived::Scalar> deformable_im2col(
    const Eigen::MatrixBase<Derived>& x, const GridSpec& g,
    const OffsetField<typename Derived::Scalar>& f) {
  using Scalar = typename Derived::Scalar;
  const Index channels = x.rows(), len = x.cols(), taps = g.kernel_size;
  const Index out_len = f.length();
  FeatureSeq<Scalar> cols = FeatureSeq<Scalar>::Zero(channels * taps, out_len);
  for (Index i = 0; i < out_len; ++i) {
    for (Index n = 0; n < taps; ++n) {
      const Scalar t = Scalar(i * g.stride + g.tap(n)) + f(n, i);
      const SampleTaps<Scalar> s = sample_taps(t);
      const bool lo_in = s.lo >= 0 && s.lo < len;
      const bool hi_in = s.w_hi != Scalar(0) && s.lo + 1 >= 0 && s.lo + 1 < len;
      for (Index ci = 0; ci < channels; ++ci) {
        Scalar v(0);
        if (lo_in) v = s.w_hi == Scalar(0) ? x(ci, s.lo) : x(ci, s.lo) * s.w_lo;
        if (hi_in) v += x(ci, s.lo + 1) * s.w_hi;
        cols(ci * taps + n, i) = v;
      }
    }
  }
  return cols;
}

// Adds column-matrix gradients back onto integer frames (inverse of im2col).
template <typename Scalar>
void col2im_add(const FeatureSeq<Scalar>& grad_cols, const GridSpec& g,
                FeatureSeq<Scalar>& grad_x) {
  const Index channels = grad_x.rows(), len = grad_x.cols(), taps = g.kernel_size;
  for (Index i = 0; i < grad_cols.cols(); ++i) {
    for (Index n = 0; n < taps; ++n) {
      const Index k = i * g.stride + g.tap(n);
      if (k < 0 || k >= len) continue;
      for (Index ci = 0; ci < channels; ++ci)
        grad_x(ci, k) += grad_cols(ci * taps + n, i);
    }
  }
}

template <typename Derived>
FeatureSeq<typename Derived::Scalar> tdnn_forward(
    const Eigen::MatrixBase<Derived>& x,
    const ConvParams<typename Derived::Scalar>& p, const GridSpec& g) {
  detail::check_conv_shapes(x, p, g);
  FeatureSeq<typename Derived::Scalar> y = p.weight * im2col(x, g);
  y.colwise() += p.bias;
  return y;
}

template <typename Scalar>
struct TdnnGrads {
  FeatureSeq<Scalar> grad_x;
  ConvParams<Scalar> grad_p;
};

/// Gradients of sum(grad_y .* tdnn_forward(x, p, g)).
template <typename Scalar>
TdnnGrads<Scalar> tdnn_backward(const FeatureSeq<Scalar>& x,
                                const ConvParams<Scalar>& p, const GridSpec& g,
                                const std::type_identity_t<FeatureSeq<Scalar>>& grad_y) {
  detail::check_conv_shapes(x, p, g);
  detail::require(grad_y.rows() == p.out_channels() &&
                      grad_y.cols() == g.output_length(x.cols()),
                  "grad_y shape does not match the layer output");
  const FeatureSeq<Scalar> cols = im2col(x, g);
  TdnnGrads<Scalar> out;
  out.grad_p = ConvParams<Scalar>::zeros(p.out_channels(), p.in_channels,
                                         p.kernel_size);
  out.grad_p.weight.noalias() = grad_y * cols.transpose();
  out.grad_p.bias = grad_y.rowwise().sum();
  const FeatureSeq<Scalar> grad_cols = p.weight.transpose() * grad_y;
  out.grad_x = FeatureSeq<Scalar>::Zero(x.rows(), x.cols());
  col2im_add(grad_cols, g, out.grad_x);
  return out;
}

template <typename Derived>
OffsetField<typename Derived::Scalar> offset_predict(
    const Eigen::MatrixBase<Derived>& x,
    const OffsetPredictor<typename Derived::Scalar>& op, const GridSpec& g) {
  g.validate();
  detail::require(op.params.out_channels() == g.kernel_size,
                  "offset predictor emits " +
                      std::to_string(op.params.out_channels()) +
                      " taps but layer kernel has " +
                      std::to_string(g.kernel_size));
  return OffsetField<typename Derived::Scalar>(
      tdnn_forward(x, op.params, op.grid(g)));
}

template <typename Scalar>
OffsetField<Scalar> clip_offsets(const OffsetField<Scalar>& f, ClipMode m) {
  if (m == ClipMode::none) return f;
  return OffsetField<Scalar>(f.data.cwiseMin(Scalar(0)));
}

// Subgradient of min(d, 0): passes 1 where d <= 0.
template <typename Scalar>
OffsetField<Scalar> clip_offsets_backward(const OffsetField<Scalar>& raw,
                                          const OffsetField<Scalar>& grad_used,
                                          ClipMode m) {
  if (m == ClipMode::none) return grad_used;
  return OffsetField<Scalar>(
      (raw.data.array() <= Scalar(0)).select(grad_used.data, Scalar(0)));
}

// Symmetric magnitude bound; infinite means unbounded.
template <typename Scalar>
OffsetField<Scalar> clamp_offsets(const OffsetField<Scalar>& f,
                                  Scalar max_offset) {
  if (!std::isfinite(max_offset)) return f;
  return OffsetField<Scalar>(f.data.cwiseMax(-max_offset).cwiseMin(max_offset));
}

template <typename Scalar>
OffsetField<Scalar> clamp_offsets_backward(const OffsetField<Scalar>& raw,
                                           const OffsetField<Scalar>& grad,
                                           Scalar max_offset) {
  if (!std::isfinite(max_offset)) return grad;
  return OffsetField<Scalar>(
      (raw.data.array().abs() <= max_offset).select(grad.data, Scalar(0)));
}

template <typename Derived>
FeatureSeq<typename Derived::Scalar> deformable_forward(
    const Eigen::MatrixBase<Derived>& x,
    const ConvParams<typename Derived::Scalar>& p, const GridSpec& g,
    const OffsetField<typename Derived::Scalar>& f) {
  detail::check_conv_shapes(x, p, g);
  detail::check_offsets(f, g, g.output_length(x.cols()));
  FeatureSeq<typename Derived::Scalar> y = p.weight * deformable_im2col(x, g, f);
  y.colwise() += p.bias;
  return y;
}

template <typename Scalar>
struct DeformableGrads {
  FeatureSeq<Scalar> grad_x;
  ConvParams<Scalar> grad_p;
  OffsetField<Scalar> grad_f;
};

/// Gradients of sum(grad_y .* deformable_forward(x, p, g, f)).
///
/// Input gradients scatter the interpolation weights onto the two integer
/// frames around each sampling position; frames outside [0, T) receive
/// nothing. Offset gradients use the interpolation slope x(lo+1) - x(lo).
template <typename Scalar>
DeformableGrads<Scalar> deformable_backward(const FeatureSeq<Scalar>& x,
                                            const ConvParams<Scalar>& p,
                                            const GridSpec& g,
                                            const OffsetField<Scalar>& f,
                                            const std::type_identity_t<FeatureSeq<Scalar>>& grad_y) {
  detail::check_conv_shapes(x, p, g);
  const Index out_len = g.output_length(x.cols());
  detail::check_offsets(f, g, out_len);
  detail::require(grad_y.rows() == p.out_channels() && grad_y.cols() == out_len,
                  "grad_y shape does not match the layer output");

  const Index channels = x.rows(), len = x.cols(), taps = g.kernel_size;
  DeformableGrads<Scalar> out;
  out.grad_p = ConvParams<Scalar>::zeros(p.out_channels(), channels, taps);
  out.grad_p.weight.noalias() = grad_y * deformable_im2col(x, g, f).transpose();
  out.grad_p.bias = grad_y.rowwise().sum();
  const FeatureSeq<Scalar> grad_cols = p.weight.transpose() * grad_y;

  out.grad_x = FeatureSeq<Scalar>::Zero(channels, len);
  out.grad_f = OffsetField<Scalar>::zeros(taps, out_len);
  for (Index i = 0; i < out_len; ++i) {
    for (Index n = 0; n < taps; ++n) {
      const Scalar t = Scalar(i * g.stride + g.tap(n)) + f(n, i);
      const SampleTaps<Scalar> s = sample_taps(t);
      const Index hi = s.lo + 1;
      const bool lo_in = s.lo >= 0 && s.lo < len;
      const bool hi_in = hi >= 0 && hi < len;
      Scalar df(0);
      for (Index ci = 0; ci < channels; ++ci) {
        const Scalar gc = grad_cols(ci * taps + n, i);
        const Scalar x_lo = lo_in ? x(ci, s.lo) : Scalar(0);
        const Scalar x_hi = hi_in ? x(ci, hi) : Scalar(0);
        if (lo_in) out.grad_x(ci, s.lo) += gc * s.w_lo;
        if (hi_in && s.w_hi != Scalar(0)) out.grad_x(ci, hi) += gc * s.w_hi;
        df += gc * (x_hi - x_lo);
      }
      out.grad_f(n, i) = df;
    }
  }
  return out;
}

/// A deformable TDNN layer: offset prediction, optional clamp and latency
/// clip, then convolution at the deformed positions.
template <typename Scalar>
struct DeformableLayer {
  ConvParams<Scalar> params;
  GridSpec grid;
  OffsetPredictor<Scalar> predictor;
  ClipMode clip = ClipMode::none;
  Scalar max_offset = std::numeric_limits<Scalar>::infinity();

  // Zero-initialised predictor around existing main-layer parameters.
  static DeformableLayer fresh(ConvParams<Scalar> params, GridSpec grid,
                               Index predictor_kernel = 5,
                               ClipMode clip = ClipMode::none) {
    DeformableLayer layer;
    layer.predictor = OffsetPredictor<Scalar>::zeros(params.in_channels,
                                                     grid.kernel_size,
                                                     predictor_kernel);
    layer.params = std::move(params);
    layer.grid = grid;
    layer.clip = clip;
    return layer;
  }
};

template <typename Scalar>
struct DeformableOutput {
  FeatureSeq<Scalar> y;
  OffsetField<Scalar> f_used;
};

// Predicted offsets after the optional magnitude clamp and latency clip.
template <typename Scalar>
OffsetField<Scalar> used_offsets(const FeatureSeq<Scalar>& x,
                                 const OffsetPredictor<Scalar>& predictor,
                                 const GridSpec& g, ClipMode clip,
                                 Scalar max_offset,
                                 OffsetField<Scalar>* raw = nullptr) {
  OffsetField<Scalar> predicted = offset_predict(x, predictor, g);
  OffsetField<Scalar> used =
      clip_offsets(clamp_offsets(predicted, max_offset), clip);
  if (raw != nullptr) *raw = std::move(predicted);
  return used;
}

// Maps a gradient on the used offsets back to the raw predictor output.
template <typename Scalar>
OffsetField<Scalar> used_offsets_backward(const OffsetField<Scalar>& raw,
                                          const OffsetField<Scalar>& grad_used,
                                          ClipMode clip, Scalar max_offset) {
  const OffsetField<Scalar> clamped = clamp_offsets(raw, max_offset);
  return clamp_offsets_backward(
      raw, clip_offsets_backward(clamped, grad_used, clip), max_offset);
}

template <typename Scalar>
OffsetField<Scalar> layer_offsets(const FeatureSeq<Scalar>& x,
                                  const DeformableLayer<Scalar>& layer,
                                  OffsetField<Scalar>* raw = nullptr) {
  return used_offsets(x, layer.predictor, layer.grid, layer.clip,
                      layer.max_offset, raw);
}

template <typename Scalar>
DeformableOutput<Scalar> deformable_layer_apply(
    const FeatureSeq<Scalar>& x, const DeformableLayer<Scalar>& layer) {
  DeformableOutput<Scalar> out;
  out.f_used = layer_offsets(x, layer);
  out.y = deformable_forward(x, layer.params, layer.grid, out.f_used);
  return out;
}

template <typename Scalar>
struct DeformableLayerGrads {
  FeatureSeq<Scalar> grad_x;
  ConvParams<Scalar> grad_p;
  ConvParams<Scalar> grad_predictor;
};

// Backward through convolution, clip, clamp and the offset predictor.
template <typename Scalar>
DeformableLayerGrads<Scalar> deformable_layer_backward(
    const FeatureSeq<Scalar>& x, const DeformableLayer<Scalar>& layer,
    const std::type_identity_t<FeatureSeq<Scalar>>& grad_y) {
  OffsetField<Scalar> raw;
  const OffsetField<Scalar> used = layer_offsets(x, layer, &raw);
  DeformableGrads<Scalar> conv =
      deformable_backward(x, layer.params, layer.grid, used, grad_y);
  const OffsetField<Scalar> grad_raw =
      used_offsets_backward(raw, conv.grad_f, layer.clip, layer.max_offset);
  TdnnGrads<Scalar> pred = tdnn_backward(x, layer.predictor.params,
                                         layer.predictor.grid(layer.grid),
                                         grad_raw.data);
  return {conv.grad_x + pred.grad_x, std::move(conv.grad_p),
          std::move(pred.grad_p)};
}

struct LayerDescription {
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel_size = 1;
  bool deformable = false;
  Index predictor_kernel = 5;
};

struct ParamCount {
  long long main = 0;
  long long offset = 0;
  long long total() const { return main + offset; }
};

// main = C_out * C_in * N + C_out; offset = N * C_in * N' + N when deformable.
inline ParamCount param_count(const LayerDescription& d) {
  ParamCount c;
  c.main = static_cast<long long>(d.out_channels) * d.in_channels * d.kernel_size +
           d.out_channels;
  if (d.deformable) {
    c.offset = static_cast<long long>(d.kernel_size) * d.in_channels *
                   d.predictor_kernel +
               d.kernel_size;
  }
  return c;
}

}  // namespace dtdnn
