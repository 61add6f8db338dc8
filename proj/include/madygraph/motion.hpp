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
// Dense optical flow between adjacent frames (coarse-to-fine Horn-Schunck
// with warping) and the per-frame flow stack used by the dynamic graph.
//
// A FlowField stores (u, v) = (column, row) displacement in pixels and points
// from frame a to frame b, so warp(frame_b, flow) ~ frame_a.

#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>

#include "madygraph/diagnostics.hpp"
#include "madygraph/parallel.hpp"
#include "madygraph/sci.hpp"
#include "madygraph/tns.hpp"

namespace mdg::motion {

template <std::floating_point T>
struct FlowField {
  Tensor<T> uv;  // (H, W, 2)

  std::size_t height() const { return uv.dim(0); }
  std::size_t width() const { return uv.dim(1); }
  T u(std::size_t r, std::size_t c) const { return uv.at(r, c, 0); }
  T v(std::size_t r, std::size_t c) const { return uv.at(r, c, 1); }
};

template <std::floating_point T>
struct FlowStack {
  std::vector<FlowField<T>> fields;  // F_1 .. F_B

  std::size_t size() const { return fields.size(); }
  std::size_t height() const { return fields.empty() ? 0 : fields.front().height(); }
  std::size_t width() const { return fields.empty() ? 0 : fields.front().width(); }
};

struct FlowParams {
  int levels = 3;
  double alpha = 10.0;  // smoothness, in 8-bit intensity units
  int iterations = 50;  // per pyramid level
  int warps = 2;        // linearizations per level
  double max_displacement = 8.0;
};

inline constexpr std::size_t kMinPyramidSize = 8;

/// Largest level count <= requested whose coarsest level keeps both sides
/// >= kMinPyramidSize (at least 1). Warns when the request is reduced.
inline int resolve_levels(std::size_t h, std::size_t w, int requested, bool emit_warning = true) {
  mdg::detail::require(requested >= 1, "flow: pyramid levels must be >= 1");
  int levels = 1;
  while (levels < requested && std::min(h, w) >> levels >= kMinPyramidSize) ++levels;
  if (levels < requested && emit_warning)
    warn("flow: " + std::to_string(h) + "x" + std::to_string(w) + " frame supports " + std::to_string(levels) +
         " pyramid level(s), " + std::to_string(requested) + " requested");
  return levels;
}

namespace detail {

struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> px;

  Image() = default;
  Image(std::size_t h_, std::size_t w_) : h(h_), w(w_), px(h_ * w_, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return px[r * w + c]; }
  double operator()(std::size_t r, std::size_t c) const { return px[r * w + c]; }
  double clamped(std::ptrdiff_t r, std::ptrdiff_t c) const {
    r = std::clamp<std::ptrdiff_t>(r, 0, std::ptrdiff_t(h) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, std::ptrdiff_t(w) - 1);
    return px[std::size_t(r) * w + std::size_t(c)];
  }
  // Bilinear sample with border clamping.
  double sample(double r, double c) const {
    r = std::clamp(r, 0.0, double(h - 1));
    c = std::clamp(c, 0.0, double(w - 1));
    const auto r0 = std::size_t(r), c0 = std::size_t(c);
    const std::size_t r1 = std::min(r0 + 1, h - 1), c1 = std::min(c0 + 1, w - 1);
    const double fr = r - double(r0), fc = c - double(c0);
    return (1 - fr) * ((1 - fc) * (*this)(r0, c0) + fc * (*this)(r0, c1)) +
           fr * ((1 - fc) * (*this)(r1, c0) + fc * (*this)(r1, c1));
  }
};

template <std::floating_point T>
Image to_image(const Tensor<T>& frame, double gain) {
  Image im(frame.dim(0), frame.dim(1));
  for (std::size_t i = 0; i < im.px.size(); ++i) im.px[i] = gain * double(frame[i]);
  return im;
}

// [1 2 1]/4 blur followed by 2x decimation.
inline Image downsample(const Image& in) {
  Image out(std::max<std::size_t>(1, in.h / 2), std::max<std::size_t>(1, in.w / 2));
  for (std::size_t r = 0; r < out.h; ++r)
    for (std::size_t c = 0; c < out.w; ++c) {
      const auto rr = std::ptrdiff_t(2 * r), cc = std::ptrdiff_t(2 * c);
      double acc = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) acc += (2 - std::abs(dr)) * (2 - std::abs(dc)) * in.clamped(rr + dr, cc + dc);
      out(r, c) = acc / 16.0;
    }
  return out;
}

// Bilinear resize of a flow component to (h, w), rescaling magnitudes.
inline Image upsample_flow(const Image& f, std::size_t h, std::size_t w, double scale) {
  Image out(h, w);
  const double sr = double(f.h) / double(h), sc = double(f.w) / double(w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = scale * f.sample((r + 0.5) * sr - 0.5, (c + 0.5) * sc - 0.5);
  return out;
}

inline void clamp_flow(Image& u, Image& v, double bound) {
  for (auto& x : u.px) x = std::clamp(x, -bound, bound);
  for (auto& x : v.px) x = std::clamp(x, -bound, bound);
}

// One pyramid level: repeated linearization around (u, v), each followed by
// Jacobi sweeps of the Horn-Schunck equations for the full flow.
inline void refine_level(const Image& a, const Image& b, Image& u, Image& v, const FlowParams& p) {
  const std::size_t h = a.h, w = a.w;
  const double alpha2 = p.alpha * p.alpha;
  Image ix(h, w), iy(h, w), it(h, w), u0, v0, un(h, w), vn(h, w);
  for (int k = 0; k < p.warps; ++k) {
    Image bw(h, w);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) bw(r, c) = b.sample(double(r) + v(r, c), double(c) + u(r, c));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const auto rr = std::ptrdiff_t(r), cc = std::ptrdiff_t(c);
        const double gx_a = (a.clamped(rr, cc + 1) - a.clamped(rr, cc - 1)) * 0.5;
        const double gy_a = (a.clamped(rr + 1, cc) - a.clamped(rr - 1, cc)) * 0.5;
        const double gx_b = (bw.clamped(rr, cc + 1) - bw.clamped(rr, cc - 1)) * 0.5;
        const double gy_b = (bw.clamped(rr + 1, cc) - bw.clamped(rr - 1, cc)) * 0.5;
        ix(r, c) = 0.5 * (gx_a + gx_b);
        iy(r, c) = 0.5 * (gy_a + gy_b);
        it(r, c) = bw(r, c) - a(r, c);
      }
    u0 = u;
    v0 = v;
    for (int iter = 0; iter < p.iterations; ++iter) {
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const auto rr = std::ptrdiff_t(r), cc = std::ptrdiff_t(c);
          const double ub = (u.clamped(rr - 1, cc) + u.clamped(rr + 1, cc) + u.clamped(rr, cc - 1) + u.clamped(rr, cc + 1)) / 6.0 +
                            (u.clamped(rr - 1, cc - 1) + u.clamped(rr - 1, cc + 1) + u.clamped(rr + 1, cc - 1) +
                             u.clamped(rr + 1, cc + 1)) / 12.0;
          const double vb = (v.clamped(rr - 1, cc) + v.clamped(rr + 1, cc) + v.clamped(rr, cc - 1) + v.clamped(rr, cc + 1)) / 6.0 +
                            (v.clamped(rr - 1, cc - 1) + v.clamped(rr - 1, cc + 1) + v.clamped(rr + 1, cc - 1) +
                             v.clamped(rr + 1, cc + 1)) / 12.0;
          const double gx = ix(r, c), gy = iy(r, c);
          const double resid = it(r, c) + gx * (ub - u0(r, c)) + gy * (vb - v0(r, c));
          const double k2 = resid / (alpha2 + gx * gx + gy * gy);
          un(r, c) = ub - gx * k2;
          vn(r, c) = vb - gy * k2;
        }
      std::swap(u.px, un.px);
      std::swap(v.px, vn.px);
    }
    clamp_flow(u, v, p.max_displacement);
  }
}

}  // namespace detail

/// Flow from `frame_a` to `frame_b`, both (H, W) with values in [0, 1].
template <std::floating_point T>
FlowField<T> estimate_flow(const Tensor<T>& frame_a, const Tensor<T>& frame_b, const FlowParams& params = {}) {
  mdg::detail::require_shape(frame_a.ndim() == 2 && frame_a.shape() == frame_b.shape(),
                             "estimate_flow: frames " + to_string(frame_a.shape()) + " and " +
                                 to_string(frame_b.shape()) + " must be matching (H,W)");
  mdg::detail::require(params.iterations >= 0 && params.warps >= 1 && params.alpha > 0 && params.max_displacement >= 0,
                       "estimate_flow: invalid parameters");
  const std::size_t h = frame_a.dim(0), w = frame_a.dim(1);
  const int levels = resolve_levels(h, w, params.levels);

  std::vector<detail::Image> pa{detail::to_image(frame_a, 255.0)}, pb{detail::to_image(frame_b, 255.0)};
  for (int l = 1; l < levels; ++l) {
    pa.push_back(detail::downsample(pa.back()));
    pb.push_back(detail::downsample(pb.back()));
  }
  detail::Image u(pa.back().h, pa.back().w), v = u;
  for (int l = levels - 1; l >= 0; --l) {
    const auto& a = pa[std::size_t(l)];
    if (u.h != a.h || u.w != a.w) {
      const double sr = double(a.h) / double(u.h), sc = double(a.w) / double(u.w);
      u = detail::upsample_flow(u, a.h, a.w, sc);
      v = detail::upsample_flow(v, a.h, a.w, sr);
    }
    detail::refine_level(a, pb[std::size_t(l)], u, v, params);
  }

  FlowField<T> f{Tensor<T>({h, w, 2})};
  for (std::size_t i = 0; i < h * w; ++i) {
    f.uv[2 * i] = static_cast<T>(u.px[i]);
    f.uv[2 * i + 1] = static_cast<T>(v.px[i]);
  }
  return f;
}

/// Frame b of an (H, W, B) cube as an (H, W) tensor.
template <std::floating_point T>
Tensor<T> frame_of(const Tensor<T>& cube, std::size_t b) {
  mdg::detail::require_shape(cube.ndim() == 3 && b < cube.dim(2), "frame_of: bad cube or frame index");
  const std::size_t hw = cube.dim(0) * cube.dim(1), depth = cube.dim(2);
  Tensor<T> f({cube.dim(0), cube.dim(1)});
  for (std::size_t p = 0; p < hw; ++p) f[p] = cube[p * depth + b];
  return f;
}

/// F_b = flow(X_b -> X_{b+1}) for b < B and F_B = flow(X_B -> X_{B-1}).
template <std::floating_point T>
FlowStack<T> build_flow_stack(const sci::VideoCube<T>& coarse, FlowParams params = {}) {
  sci::detail::require_cube(coarse.frames, "build_flow_stack: video");
  const std::size_t depth = coarse.depth();
  mdg::detail::require(depth >= 2, "build_flow_stack: B must be >= 2 to define motion");
  params.levels = resolve_levels(coarse.height(), coarse.width(), params.levels);
  std::vector<Tensor<T>> frames;
  for (std::size_t b = 0; b < depth; ++b) frames.push_back(frame_of(coarse.frames, b));
  FlowStack<T> s;
  s.fields.resize(depth);
  parallel_for(0, std::int64_t(depth), [&](std::int64_t i) {
    const auto b = std::size_t(i);
    const std::size_t next = b + 1 < depth ? b + 1 : b - 1;
    s.fields[b] = estimate_flow(frames[b], frames[next], params);
  });
  return s;
}

/// Backward bilinear warp with border clamping: out(r, c) = frame(r + v, c + u).
template <std::floating_point T>
Tensor<T> warp(const Tensor<T>& frame, const FlowField<T>& flow) {
  mdg::detail::require_shape(frame.ndim() == 2 && flow.uv.ndim() == 3 && flow.uv.dim(2) == 2 &&
                                 flow.height() == frame.dim(0) && flow.width() == frame.dim(1),
                             "warp: frame " + to_string(frame.shape()) + " and flow " + to_string(flow.uv.shape()) +
                                 " are inconsistent");
  const auto im = detail::to_image(frame, 1.0);
  Tensor<T> out(frame.shape());
  for (std::size_t r = 0; r < im.h; ++r)
    for (std::size_t c = 0; c < im.w; ++c)
      out.at(r, c) = static_cast<T>(im.sample(double(r) + double(flow.v(r, c)), double(c) + double(flow.u(r, c))));
  return out;
}

/// File layout (H, W, 2, B).
template <std::floating_point T>
Tensor<T> to_file_tensor(const FlowStack<T>& s) {
  mdg::detail::require(s.size() >= 1, "flow stack is empty");
  const std::size_t h = s.height(), w = s.width(), depth = s.size();
  Tensor<T> t({h, w, 2, depth});
  for (std::size_t b = 0; b < depth; ++b)
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < 2; ++k) t[(p * 2 + k) * depth + b] = s.fields[b].uv[p * 2 + k];
  return t;
}

/// Model layout (H, W, B, 2).
template <std::floating_point T>
Tensor<T> to_model_tensor(const FlowStack<T>& s) {
  mdg::detail::require(s.size() >= 1, "flow stack is empty");
  const std::size_t h = s.height(), w = s.width(), depth = s.size();
  Tensor<T> t({h, w, depth, 2});
  for (std::size_t b = 0; b < depth; ++b)
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < 2; ++k) t[(p * depth + b) * 2 + k] = s.fields[b].uv[p * 2 + k];
  return t;
}

template <std::floating_point T>
FlowStack<T> from_file_tensor(const Tensor<T>& t, std::optional<double> max_displacement = std::nullopt) {
  if (t.ndim() != 4 || t.dim(2) != 2 || t.dim(3) < 1)
    throw FormatError("flow stack must have shape (H,W,2,B), got " + to_string(t.shape()));
  if (!t.all_finite()) throw FormatError("flow stack contains non-finite values");
  if (max_displacement)
    for (T x : t.data())
      if (std::abs(double(x)) > *max_displacement)
        throw FormatError("flow stack exceeds max displacement " + std::to_string(*max_displacement));
  const std::size_t h = t.dim(0), w = t.dim(1), depth = t.dim(3);
  FlowStack<T> s;
  for (std::size_t b = 0; b < depth; ++b) {
    FlowField<T> f{Tensor<T>({h, w, 2})};
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t k = 0; k < 2; ++k) f.uv[p * 2 + k] = t[(p * 2 + k) * depth + b];
    s.fields.push_back(std::move(f));
  }
  return s;
}

template <std::floating_point T>
void export_flow_stack(const FlowStack<T>& s, const std::filesystem::path& path) {
  tns::save(to_file_tensor(s), path);
}

template <std::floating_point T = float>
FlowStack<T> import_flow_stack(const std::filesystem::path& path,
                               std::optional<double> max_displacement = std::nullopt) {
  const auto t = tns::load<T>(path);
  try {
    return from_file_tensor(t, max_displacement);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mdg::motion
