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
// Differentiable primitives. Tensors are channel-last and row-major; there
// is no implicit broadcasting.

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "madygraph/autodiff.hpp"
#include "madygraph/conv.hpp"

namespace mdg {

namespace detail {

template <std::floating_point T>
void require_same(const std::string& op, const Var<T>& a, const Var<T>& b) {
  require_shape(a.shape() == b.shape(),
                op + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <std::floating_point T, class Fwd, class Deriv>
Var<T> unary(const std::string& name, const Var<T>& a, Fwd fwd, Deriv deriv) {
  check_finite(name, {&a});
  Tensor<T> out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(x[i]);
  return make_result<T>(std::move(out), {&a}, name, [a, deriv](Node<T>& self) {
    if (auto* g = grad_sink(a)) {
      const auto& x = a.value();
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * deriv(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

template <std::floating_point T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same("add", a, b);
  detail::check_finite<T>("add", {&a, &b});
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result<T>(std::move(out), {&a, &b}, "add", [a, b](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(b))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same("sub", a, b);
  detail::check_finite<T>("sub", {&a, &b});
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_result<T>(std::move(out), {&a, &b}, "sub", [a, b](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(b))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
  });
}

/// Hadamard product.
template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same("mul", a, b);
  detail::check_finite<T>("mul", {&a, &b});
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result<T>(std::move(out), {&a, &b}, "mul", [a, b](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * b.value()[i];
    if (auto* g = detail::grad_sink(b))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * a.value()[i];
  });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>(
      "scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary<T>(
      "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// log(1 + e^x), evaluated without overflow.
template <std::floating_point T>
T softplus_value(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <std::floating_point T>
T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <std::floating_point T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary<T>(
      "softplus", a, [](T x) { return softplus_value(x); }, [](T x, T) { return sigmoid_value(x); });
}

template <std::floating_point T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary<T>(
      "leaky_relu", a, [slope](T x) { return x >= T(0) ? x : slope * x; },
      [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

/// Elementwise clamp to [lo, hi]; the gradient passes only strictly inside.
template <std::floating_point T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <std::floating_point T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return detail::make_result<T>(std::move(out), {&a}, "reshape", [a](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

/// Sum of every element, accumulated in double.
template <std::floating_point T>
Var<T> sum(const Var<T>& a) {
  detail::check_finite<T>("sum", {&a});
  double acc = 0;
  for (T v : a.value().data()) acc += v;
  return detail::make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {&a}, "sum", [a](Node<T>& self) {
    if (auto* g = detail::grad_sink(a)) {
      const T s = self.grad[0];
      for (auto& v : g->data()) v += s;
    }
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& a) {
  const auto n = static_cast<T>(a.value().numel());
  return scale(sum(a), T(1) / n);
}

namespace detail {

struct AxisMap {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // flat input index -> flat output index
};

inline AxisMap reduce_map(const Shape& in, const std::vector<std::size_t>& axes) {
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    require_shape(ax < in.size(), "reduction axis " + std::to_string(ax) + " out of range for " + to_string(in));
    reduced[ax] = true;
  }
  AxisMap m;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (!reduced[d]) m.out_shape.push_back(in[d]);
  const std::size_t n = numel(in);
  m.out_index.resize(n);
  std::vector<std::size_t> idx(in.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < in.size(); ++d)
      if (!reduced[d]) o = o * in[d] + idx[d];
    m.out_index[i] = o;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < in[d]) break;
      idx[d] = 0;
    }
  }
  return m;
}

}  // namespace detail

/// Sum over the listed axes (removed from the result shape).
template <std::floating_point T>
Var<T> sum(const Var<T>& a, const std::vector<std::size_t>& axes) {
  detail::check_finite<T>("sum", {&a});
  auto map = std::make_shared<detail::AxisMap>(detail::reduce_map(a.shape(), axes));
  std::vector<double> acc(numel(map->out_shape), 0.0);
  for (std::size_t i = 0; i < a.value().numel(); ++i) acc[map->out_index[i]] += a.value()[i];
  Tensor<T> out(map->out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
  return detail::make_result<T>(std::move(out), {&a}, "sum_axes", [a, map](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[map->out_index[i]];
  });
}

template <std::floating_point T>
Var<T> mean(const Var<T>& a, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (auto ax : axes) count *= a.shape().at(ax);
  return scale(sum(a, axes), T(1) / static_cast<T>(count));
}

namespace detail {

// Splits `shape` around `axis` into (outer, extent, inner).
inline std::array<std::size_t, 3> split_axis(const Shape& shape, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  return {outer, shape[axis], inner};
}

}  // namespace detail

template <std::floating_point T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  detail::require_shape(axis < ref.size(), "concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    detail::require_shape(p.shape().size() == ref.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      detail::require_shape(d == axis || p.shape()[d] == ref[d],
                            "concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
    out_shape[axis] += p.shape()[axis];
    detail::check_finite<T>("concat", {&p});
  }
  const auto [outer, total, inner] = detail::split_axis(out_shape, axis);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().ptr() + o * ext * inner, ext * inner, out.ptr() + (o * total + offset) * inner);
    offset += ext;
  }
  return detail::make_result_n<T>(
      std::move(out), parts, "concat", [parts, axis, outer = outer, total = total, inner = inner](Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
          const std::size_t ext = p.shape()[axis];
          if (auto* g = detail::grad_sink(p))
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < ext * inner; ++i)
                g->ptr()[o * ext * inner + i] += self.grad.ptr()[(o * total + off) * inner + i];
          off += ext;
        }
      });
}

/// Elements [begin, end) along `axis`.
template <std::floating_point T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  detail::require_shape(axis < a.shape().size(), "slice: axis out of range");
  detail::require_shape(begin <= end && end <= a.shape()[axis], "slice: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const auto [outer, ext, inner] = detail::split_axis(a.shape(), axis);
  const std::size_t len = end - begin;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.value().ptr() + (o * ext + begin) * inner, len * inner, out.ptr() + o * len * inner);
  return detail::make_result<T>(std::move(out), {&a}, "slice",
                                [a, outer = outer, ext = ext, inner = inner, begin, len](Node<T>& self) {
                                  if (auto* g = detail::grad_sink(a))
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < len * inner; ++i)
                                        g->ptr()[(o * ext + begin) * inner + i] += self.grad.ptr()[o * len * inner + i];
                                });
}

/// Replicates `a` along a new trailing axis of extent n: (...) -> (..., n).
template <std::floating_point T>
Var<T> expand_last(const Var<T>& a, std::size_t n) {
  Shape s = a.shape();
  s.push_back(n);
  Tensor<T> out(s);
  for (std::size_t i = 0; i < a.value().numel(); ++i) std::fill_n(out.ptr() + i * n, n, a.value()[i]);
  return detail::make_result<T>(std::move(out), {&a}, "expand_last", [a, n](Node<T>& self) {
    if (auto* g = detail::grad_sink(a))
      for (std::size_t i = 0; i < g->numel(); ++i) {
        T acc = 0;
        for (std::size_t k = 0; k < n; ++k) acc += self.grad[i * n + k];
        (*g)[i] += acc;
      }
  });
}

// ---------------------------------------------------------------------------
// Convolutions

/// 3D convolution of x (H, W, D, Cin) with w (kh, kw, kd, Cin, Cout) and bias
/// (Cout), stride 1, zero "same" padding.
template <std::floating_point T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require_shape(x.shape().size() == 4, "conv3d: input must be (H,W,D,C), got " + to_string(x.shape()));
  detail::require_shape(w.shape().size() == 5, "conv3d: weight must be (kh,kw,kd,Cin,Cout), got " + to_string(w.shape()));
  conv::Geometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(4), w.dim(0), w.dim(1), w.dim(2)};
  detail::require_shape(w.dim(3) == g.cin, "conv3d: weight expects " + std::to_string(w.dim(3)) +
                                                 " input channels, input has " + std::to_string(g.cin));
  detail::require_shape(g.kh % 2 == 1 && g.kw % 2 == 1 && g.kd % 2 == 1, "conv3d: kernel extents must be odd");
  detail::require_shape(!b.defined() || b.shape() == Shape{g.cout}, "conv3d: bias must be (Cout)");
  detail::check_finite<T>("conv3d", {&x, &w, &b});
  Tensor<T> out(Shape{g.h, g.w, g.d, g.cout});
  conv::forward(x.value().ptr(), w.value().ptr(), b.defined() ? b.value().ptr() : nullptr, out.ptr(), g);
  return detail::make_result<T>(std::move(out), {&x, &w, &b}, "conv3d", [x, w, b, g](Node<T>& self) {
    auto* gw = detail::grad_sink(w);
    auto* gb = b.defined() ? detail::grad_sink(b) : nullptr;
    if (gw || gb)
      conv::backward_params(x.value().ptr(), self.grad.ptr(), gw ? gw->ptr() : nullptr, gb ? gb->ptr() : nullptr, g);
    if (auto* gx = detail::grad_sink(x)) conv::backward_input(self.grad.ptr(), w.value().ptr(), gx->ptr(), g);
  });
}

/// 2D convolution of x (H, W, Cin) with w (kh, kw, Cin, Cout).
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require_shape(x.shape().size() == 3, "conv2d: input must be (H,W,C), got " + to_string(x.shape()));
  detail::require_shape(w.shape().size() == 4, "conv2d: weight must be (kh,kw,Cin,Cout), got " + to_string(w.shape()));
  const Shape& ws = w.shape();
  auto y = conv3d(reshape(x, {x.dim(0), x.dim(1), 1, x.dim(2)}), reshape(w, {ws[0], ws[1], 1, ws[2], ws[3]}), b);
  return reshape(y, {x.dim(0), x.dim(1), ws[3]});
}

/// Per-voxel linear map over the trailing channel axis: (..., Cin) -> (..., Cout)
/// with w (Cin, Cout).
template <std::floating_point T>
Var<T> pointwise_linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::require_shape(w.shape().size() == 2, "pointwise_linear: weight must be (Cin,Cout)");
  detail::require_shape(!x.shape().empty() && x.shape().back() == w.dim(0),
                        "pointwise_linear: input channels " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  const std::size_t cin = w.dim(0), cout = w.dim(1);
  const std::size_t rows = x.value().numel() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  auto y = conv3d(reshape(x, {rows, 1, 1, cin}), reshape(w, {1, 1, 1, cin, cout}), b);
  return reshape(y, out_shape);
}

// ---------------------------------------------------------------------------
// Bilinear sampling

/// Corner indices and weights of a bilinear read at (row, col) from an H x W
/// grid. Coordinates are clamped to [0, H-1] x [0, W-1]; the upper corner is
/// clamped too, so on-grid reads use the cell to the lower-right
/// (right-continuous derivative).
template <std::floating_point T>
struct BilinearTap {
  std::size_t r0, r1, c0, c1;
  T fr, fc;          // fractional parts
  bool row_inside;   // unclamped coordinate strictly inside the range
  bool col_inside;

  BilinearTap(T row, T col, std::size_t h, std::size_t w) {
    const T hr = static_cast<T>(h - 1), wc = static_cast<T>(w - 1);
    row_inside = row >= T(0) && row <= hr;
    col_inside = col >= T(0) && col <= wc;
    const T r = std::clamp(row, T(0), hr), c = std::clamp(col, T(0), wc);
    r0 = std::min(static_cast<std::size_t>(std::floor(r)), h - 1);
    c0 = std::min(static_cast<std::size_t>(std::floor(c)), w - 1);
    r1 = std::min(r0 + 1, h - 1);
    c1 = std::min(c0 + 1, w - 1);
    fr = r - static_cast<T>(r0);
    fc = c - static_cast<T>(c0);
  }
};

/// Samples feature map f (H, W, C) at positions (..., 2) holding (row, col)
/// pairs; returns (..., C). Differentiable in both the map and the positions.
template <std::floating_point T>
Var<T> grid_sample(const Var<T>& f, const Var<T>& pos) {
  detail::require_shape(f.shape().size() == 3, "grid_sample: feature map must be (H,W,C), got " + to_string(f.shape()));
  detail::require_shape(!pos.shape().empty() && pos.shape().back() == 2,
                        "grid_sample: positions must end in a 2-vector, got " + to_string(pos.shape()));
  detail::check_finite<T>("grid_sample", {&f, &pos});
  const std::size_t h = f.dim(0), w = f.dim(1), c = f.dim(2);
  const std::size_t n = pos.value().numel() / 2;
  Shape out_shape(pos.shape().begin(), pos.shape().end() - 1);
  out_shape.push_back(c);
  Tensor<T> out(out_shape);
  const T* fm = f.value().ptr();
  for (std::size_t i = 0; i < n; ++i) {
    BilinearTap<T> t(pos.value()[2 * i], pos.value()[2 * i + 1], h, w);
    const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc, w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
    const T *a = fm + (t.r0 * w + t.c0) * c, *b = fm + (t.r0 * w + t.c1) * c, *cc = fm + (t.r1 * w + t.c0) * c,
            *d = fm + (t.r1 * w + t.c1) * c;
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = w00 * a[k] + w01 * b[k] + w10 * cc[k] + w11 * d[k];
  }
  return detail::make_result<T>(std::move(out), {&f, &pos}, "grid_sample", [f, pos, h, w, c, n](Node<T>& self) {
    auto* gf = detail::grad_sink(f);
    auto* gp = detail::grad_sink(pos);
    const T* fm = f.value().ptr();
    for (std::size_t i = 0; i < n; ++i) {
      BilinearTap<T> t(pos.value()[2 * i], pos.value()[2 * i + 1], h, w);
      const T* go = self.grad.ptr() + i * c;
      const std::size_t ia = (t.r0 * w + t.c0) * c, ib = (t.r0 * w + t.c1) * c, ic = (t.r1 * w + t.c0) * c,
                        id = (t.r1 * w + t.c1) * c;
      if (gf) {
        const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc, w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
        T* g = gf->ptr();
        for (std::size_t k = 0; k < c; ++k) {
          g[ia + k] += w00 * go[k];
          g[ib + k] += w01 * go[k];
          g[ic + k] += w10 * go[k];
          g[id + k] += w11 * go[k];
        }
      }
      if (gp) {
        T dr = 0, dc = 0;
        for (std::size_t k = 0; k < c; ++k) {
          const T a = fm[ia + k], b = fm[ib + k], cc = fm[ic + k], d = fm[id + k];
          dr += go[k] * ((1 - t.fc) * (cc - a) + t.fc * (d - b));
          dc += go[k] * ((1 - t.fr) * (b - a) + t.fr * (d - cc));
        }
        if (t.row_inside) (*gp)[2 * i] += dr;
        if (t.col_inside) (*gp)[2 * i + 1] += dc;
      }
    }
  });
}

}  // namespace mdg
