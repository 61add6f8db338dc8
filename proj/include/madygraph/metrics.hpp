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

#pragma once

#include <array>
#include <cmath>

#include "madygraph/tensor.hpp"

namespace mdg::metrics {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

template <class T>
void require_same_video(const Tensor<T>& a, const Tensor<T>& b, const std::string& op) {
  mdg::detail::require_shape(a.ndim() == 3, op + ": expected (H,W,B), got " + to_string(a.shape()));
  mdg::detail::require_shape(a.shape() == b.shape(),
                             op + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace detail

/// PSNR of one frame; zero error maps to kPsnrCap.
template <class T>
double psnr_frame(const Tensor<T>& a, const Tensor<T>& b, std::size_t frame, double peak = 1.0) {
  const std::size_t n = a.dim(0) * a.dim(1), depth = a.dim(2);
  double se = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double d = double(a[p * depth + frame]) - double(b[p * depth + frame]);
    se += d * d;
  }
  const double mse = se / double(n);
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

/// Mean over frames of the per-frame PSNR in dB.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  detail::require_same_video(a, b, "psnr");
  double total = 0;
  for (std::size_t f = 0; f < a.dim(2); ++f) total += psnr_frame(a, b, f, peak);
  return total / double(a.dim(2));
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double mid = double(n - 1) / 2;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += g[i] = std::exp(-(double(i) - mid) * (double(i) - mid) / (2 * sigma * sigma));
  for (auto& v : g) v /= total;
  return g;
}

// 'valid' separable filtering of an h x w image: (h-n+1) x (w-n+1).
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t n = g.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow), out(oh * ow);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += g[k] * img[r * w + c + k];
      rows[r * ow + c] = acc;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += g[k] * rows[(r + k) * ow + c];
      out[r * ow + c] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM of one frame over the valid window positions.
template <class T>
double ssim_frame(const Tensor<T>& a, const Tensor<T>& b, std::size_t frame, const SsimParams& p = {}) {
  const std::size_t h = a.dim(0), w = a.dim(1), depth = a.dim(2);
  std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    x[i] = double(a[i * depth + frame]);
    y[i] = double(b[i * depth + frame]);
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto g = detail::gaussian_kernel(p.window, p.sigma);
  const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
  const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g),
             sxy = detail::filter_valid(xy, h, w, g);
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak), c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / double(mx.size());
}

/// Mean over frames of the per-frame SSIM (11x11 Gaussian window, sigma 1.5).
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
  detail::require_same_video(a, b, "ssim");
  mdg::detail::require_shape(a.dim(0) >= p.window && a.dim(1) >= p.window,
                             "ssim: frames " + std::to_string(a.dim(0)) + "x" + std::to_string(a.dim(1)) +
                                 " are smaller than the " + std::to_string(p.window) + "x" +
                                 std::to_string(p.window) + " window");
  double total = 0;
  for (std::size_t f = 0; f < a.dim(2); ++f) total += ssim_frame(a, b, f, p);
  return total / double(a.dim(2));
}

}  // namespace mdg::metrics
