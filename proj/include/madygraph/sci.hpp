// Copyright 2026 The MadyGraph Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or  implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================
//
// Snapshot compressive imaging system model: coding masks, the snapshot
// measurement Y = sum_b X_b * M_b + Z, per-frame re-masking, and a
// training-free GAP-TV reconstruction used as a coarse backbone.
//
// Videos, masks and per-frame quantities are (H, W, B) tensors.

#pragma once

#include <optional>
#include <random>

#include "madygraph/diagnostics.hpp"
#include "madygraph/ops.hpp"

namespace mdg::sci {

enum class CubeRole { ground_truth, coarse, fine };
enum class MaskKind { binary, real };

template <std::floating_point T>
struct VideoCube {
  Tensor<T> frames;  // (H, W, B)
  CubeRole role = CubeRole::ground_truth;

  std::size_t height() const { return frames.dim(0); }
  std::size_t width() const { return frames.dim(1); }
  std::size_t depth() const { return frames.dim(2); }
};

template <std::floating_point T>
struct MaskSet {
  Tensor<T> masks;  // (H, W, B)
  MaskKind kind = MaskKind::binary;

  std::size_t depth() const { return masks.dim(2); }
};

template <std::floating_point T>
struct Measurement {
  Tensor<T> y;  // (H, W)
  double noise_sigma = 0;
};

inline constexpr double kMaskEpsilon = 1e-6;

namespace detail {

template <std::floating_point T>
void require_cube(const Tensor<T>& t, const std::string& what) {
  mdg::detail::require_shape(t.ndim() == 3, what + " must be (H,W,B), got " + to_string(t.shape()));
}

template <std::floating_point T>
void require_pair(const Tensor<T>& video, const Tensor<T>& masks, const std::string& op) {
  require_cube(video, op + ": video");
  require_cube(masks, op + ": masks");
  mdg::detail::require_shape(video.shape() == masks.shape(), op + ": video " + to_string(video.shape()) +
                                                                 " and masks " + to_string(masks.shape()) +
                                                                 " differ");
}

}  // namespace detail

/// i.i.d. Bernoulli(density) binary masks, reproducible from `seed`.
template <std::floating_point T = float>
MaskSet<T> generate_masks(std::size_t h, std::size_t w, std::size_t b, std::uint64_t seed, double density = 0.5) {
  mdg::detail::require(h > 0 && w > 0 && b > 0, "generate_masks: dimensions must be positive");
  mdg::detail::require(density > 0.0 && density <= 1.0, "generate_masks: density must lie in (0, 1]");
  std::mt19937_64 rng(mix_seed(seed, 0x6d61736b));
  MaskSet<T> m{Tensor<T>({h, w, b}), MaskKind::binary};
  for (auto& v : m.masks.data()) v = unit_uniform(rng) < density ? T(1) : T(0);
  return m;
}

/// Y = sum_b X_b * M_b + Z, Z ~ N(0, sigma^2) drawn from `noise_seed`.
template <std::floating_point T>
Measurement<T> forward_measure(const VideoCube<T>& video, const MaskSet<T>& masks, double noise_sigma = 0,
                               std::uint64_t noise_seed = 0) {
  detail::require_pair(video.frames, masks.masks, "forward_measure");
  mdg::detail::require(noise_sigma >= 0, "forward_measure: noise_sigma must be >= 0");
  const std::size_t h = video.height(), w = video.width(), b = video.depth();
  Measurement<T> m{Tensor<T>({h, w}), noise_sigma};
  const T* x = video.frames.ptr();
  const T* mk = masks.masks.ptr();
  for (std::size_t p = 0; p < h * w; ++p) {
    T acc = 0;
    for (std::size_t t = 0; t < b; ++t) acc += x[p * b + t] * mk[p * b + t];
    m.y[p] = acc;
  }
  if (noise_sigma > 0) {
    std::mt19937_64 rng(mix_seed(noise_seed, 0x6e6f6973));
    for (auto& v : m.y.data()) v += static_cast<T>(noise_sigma * standard_normal(rng));
  }
  return m;
}

/// Differentiable noiseless measurement of a (H, W, B) video.
template <std::floating_point T>
Var<T> measure(const Var<T>& video, const Tensor<T>& masks) {
  detail::require_pair(video.value(), masks, "measure");
  return sum(mul(video, constant(masks)), {2});
}

/// X^re_b = Y - sum_{t != b} X^co_t * M_t, differentiable in the coarse video.
template <std::floating_point T>
Var<T> remask(const Tensor<T>& y, const Var<T>& coarse, const Tensor<T>& masks) {
  detail::require_pair(coarse.value(), masks, "remask");
  mdg::detail::require(masks.dim(2) > 0, "remask: B must be >= 1");
  mdg::detail::require_shape(y.shape() == Shape{masks.dim(0), masks.dim(1)},
                             "remask: measurement " + to_string(y.shape()) + " does not match masks " +
                                 to_string(masks.shape()));
  const std::size_t b = masks.dim(2);
  auto modulated = mul(coarse, constant(masks));
  auto others = sub(expand_last(sum(modulated, {2}), b), modulated);
  return sub(expand_last(constant(y), b), others);
}

template <std::floating_point T>
Tensor<T> remask(const Measurement<T>& m, const VideoCube<T>& coarse, const MaskSet<T>& masks) {
  detail::require_pair(coarse.frames, masks.masks, "remask");
  mdg::detail::require(masks.depth() > 0, "remask: B must be >= 1");
  mdg::detail::require_shape(m.y.shape() == Shape{coarse.height(), coarse.width()},
                             "remask: measurement does not match video");
  const std::size_t hw = coarse.height() * coarse.width(), b = coarse.depth();
  Tensor<T> out(coarse.frames.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    T total = 0;
    for (std::size_t t = 0; t < b; ++t) total += coarse.frames[p * b + t] * masks.masks[p * b + t];
    for (std::size_t t = 0; t < b; ++t)
      out[p * b + t] = m.y[p] - (total - coarse.frames[p * b + t] * masks.masks[p * b + t]);
  }
  return out;
}

/// RMSE between the noiseless measurement of `video` and `m.y`.
template <std::floating_point T>
double measurement_consistency(const VideoCube<T>& video, const MaskSet<T>& masks, const Measurement<T>& m) {
  const auto predicted = forward_measure(video, masks, 0.0);
  mdg::detail::require_shape(predicted.y.shape() == m.y.shape(), "measurement_consistency: shape mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < m.y.numel(); ++i) {
    const double d = double(predicted.y[i]) - double(m.y[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(m.y.numel()));
}

struct GapTvOptions {
  int iterations = 50;
  double tv_weight = 0.07;
  int tv_inner = 5;
  double epsilon = kMaskEpsilon;
};

template <std::floating_point T>
struct GapTvResult {
  VideoCube<T> video;
  std::vector<double> consistency;  // RMSE after every outer iteration
};

namespace detail {

// Anisotropic TV denoising of one H x W frame (stride `stride` within `x`)
// by projected gradient on the box-constrained dual, warm-started from p.
template <std::floating_point T>
void tv_denoise_frame(T* x, std::size_t h, std::size_t w, std::size_t stride, double lambda, int inner,
                      std::vector<double>& px, std::vector<double>& py) {
  if (lambda <= 0 || inner <= 0) return;
  const std::size_t n = h * w;
  std::vector<double> v(n), u(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = x[i * stride];
  auto divergence = [&](std::size_t r, std::size_t c) {
    const std::size_t i = r * w + c;
    double d = 0;
    d += (c + 1 < w ? px[i] : 0.0) - (c > 0 ? px[i - 1] : 0.0);
    d += (r + 1 < h ? py[i] : 0.0) - (r > 0 ? py[i - w] : 0.0);
    return d;
  };
  const double step = 1.0 / (8.0 * lambda);
  for (int it = 0; it < inner; ++it) {
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) u[r * w + c] = v[r * w + c] + lambda * divergence(r, c);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t i = r * w + c;
        const double gx = c + 1 < w ? u[i + 1] - u[i] : 0.0;
        const double gy = r + 1 < h ? u[i + w] - u[i] : 0.0;
        px[i] = std::clamp(px[i] + step * gx, -1.0, 1.0);
        py[i] = std::clamp(py[i] + step * gy, -1.0, 1.0);
      }
  }
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) x[(r * w + c) * stride] = static_cast<T>(v[r * w + c] + lambda * divergence(r, c));
}

}  // namespace detail

/// Generalized alternating projection with total-variation denoising,
/// starting from the zero video:
///   v <- x + M^T (Y - A x) / (sum_b M_b^2 + eps);  x <- TV-denoise(v).
template <std::floating_point T>
GapTvResult<T> gap_tv_reconstruct(const Measurement<T>& m, const MaskSet<T>& masks, const GapTvOptions& opt = {}) {
  detail::require_cube(masks.masks, "gap_tv: masks");
  mdg::detail::require(opt.iterations >= 1, "gap_tv: iterations must be >= 1");
  const std::size_t h = masks.masks.dim(0), w = masks.masks.dim(1), b = masks.depth();
  mdg::detail::require_shape(m.y.shape() == Shape{h, w}, "gap_tv: measurement does not match masks");

  std::vector<double> norm(h * w, 0.0);
  std::size_t empty = 0;
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t t = 0; t < b; ++t) norm[p] += double(masks.masks[p * b + t]) * masks.masks[p * b + t];
    if (norm[p] == 0) ++empty;
    norm[p] += opt.epsilon;
  }
  if (empty) warn("gap_tv: " + std::to_string(empty) + " pixel(s) have an all-zero mask column");

  GapTvResult<T> r{VideoCube<T>{Tensor<T>({h, w, b}), CubeRole::coarse}, {}};
  Tensor<T>& x = r.video.frames;
  std::vector<std::vector<double>> px(b, std::vector<double>(h * w, 0.0)), py = px;
  for (int it = 0; it < opt.iterations; ++it) {
    for (std::size_t p = 0; p < h * w; ++p) {
      double ax = 0;
      for (std::size_t t = 0; t < b; ++t) ax += double(x[p * b + t]) * masks.masks[p * b + t];
      const double resid = (double(m.y[p]) - ax) / norm[p];
      for (std::size_t t = 0; t < b; ++t) x[p * b + t] = static_cast<T>(x[p * b + t] + masks.masks[p * b + t] * resid);
    }
    for (std::size_t t = 0; t < b; ++t)
      detail::tv_denoise_frame(x.ptr() + t, h, w, b, opt.tv_weight, opt.tv_inner, px[t], py[t]);
    r.consistency.push_back(measurement_consistency(r.video, masks, m));
  }
  return r;
}

}  // namespace mdg::sci
