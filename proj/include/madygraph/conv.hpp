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
// Stride-1 "same" convolution over channel-last volumes (H, W, D, C) with
// odd kernels (kh, kw, kd). Weights are laid out (kh, kw, kd, Cin, Cout) so
// the flattened weight is exactly the (taps*Cin) x Cout GEMM operand that
// multiplies an im2col row.
//
// The volume is processed one H-slice at a time. Every output element is
// produced by the same GEMM regardless of the number of threads, and weight
// gradients are reduced slice by slice in a fixed order.

#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include "madygraph/parallel.hpp"
#include "madygraph/tensor.hpp"

namespace mdg::conv {

struct Geometry {
  std::size_t h = 0, w = 0, d = 0;
  std::size_t cin = 0, cout = 0;
  std::size_t kh = 1, kw = 1, kd = 1;

  std::size_t taps() const { return kh * kw * kd; }
  std::size_t col_width() const { return taps() * cin; }
  std::size_t slice_rows() const { return w * d; }
  std::size_t voxels() const { return h * w * d; }
  bool pointwise() const { return kh == 1 && kw == 1 && kd == 1; }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Fills the im2col rows of H-slice `hi`: one row per (w, d) voxel, each row
// the concatenation over taps of the Cin input channels (zero outside).
template <class T>
void im2col_slice(const T* x, const Geometry& g, std::size_t hi, T* col) {
  const auto ph = static_cast<std::int64_t>(g.kh / 2), pw = static_cast<std::int64_t>(g.kw / 2),
             pd = static_cast<std::int64_t>(g.kd / 2);
  const std::size_t cw = g.col_width();
  for (std::size_t wi = 0; wi < g.w; ++wi) {
    for (std::size_t di = 0; di < g.d; ++di) {
      T* row = col + (wi * g.d + di) * cw;
      std::size_t tap = 0;
      for (std::size_t a = 0; a < g.kh; ++a) {
        const std::int64_t y = static_cast<std::int64_t>(hi) + static_cast<std::int64_t>(a) - ph;
        for (std::size_t b = 0; b < g.kw; ++b) {
          const std::int64_t xx = static_cast<std::int64_t>(wi) + static_cast<std::int64_t>(b) - pw;
          for (std::size_t c = 0; c < g.kd; ++c, ++tap) {
            const std::int64_t z = static_cast<std::int64_t>(di) + static_cast<std::int64_t>(c) - pd;
            T* dst = row + tap * g.cin;
            if (y < 0 || xx < 0 || z < 0 || y >= static_cast<std::int64_t>(g.h) ||
                xx >= static_cast<std::int64_t>(g.w) || z >= static_cast<std::int64_t>(g.d)) {
              std::fill(dst, dst + g.cin, T(0));
            } else {
              const T* src = x + ((static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(xx)) * g.d +
                                  static_cast<std::size_t>(z)) *
                                     g.cin;
              std::copy(src, src + g.cin, dst);
            }
          }
        }
      }
    }
  }
}

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

/// y = conv(x, w) + b. `b` may be null.
template <class T>
void forward(const T* x, const T* w, const T* b, T* y, const Geometry& g) {
  const std::size_t rows = g.slice_rows(), cw = g.col_width();
  Eigen::Map<const RowMat<T>> wm(w, static_cast<Eigen::Index>(cw), static_cast<Eigen::Index>(g.cout));
  parallel_for(0, static_cast<std::int64_t>(g.h), [&](std::int64_t hi) {
    Eigen::Map<RowMat<T>> ym(y + static_cast<std::size_t>(hi) * rows * g.cout, static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(g.cout));
    if (g.pointwise()) {
      Eigen::Map<const RowMat<T>> xm(x + static_cast<std::size_t>(hi) * rows * g.cin,
                                     static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(g.cin));
      ym.noalias() = xm * wm;
    } else {
      auto& col = detail::scratch<T>();
      col.resize(rows * cw);
      detail::im2col_slice(x, g, static_cast<std::size_t>(hi), col.data());
      Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cw));
      ym.noalias() = cm * wm;
    }
    if (b) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b, static_cast<Eigen::Index>(g.cout));
      ym.rowwise() += bv;
    }
  });
}

/// gw += dL/dw and gb += dL/db given gy = dL/dy. Either sink may be null.
template <class T>
void backward_params(const T* x, const T* gy, T* gw, T* gb, const Geometry& g) {
  const std::size_t rows = g.slice_rows(), cw = g.col_width();
  if (gw) {
    std::vector<T> partial(g.h * cw * g.cout);
    parallel_for(0, static_cast<std::int64_t>(g.h), [&](std::int64_t hi) {
      const std::size_t h = static_cast<std::size_t>(hi);
      Eigen::Map<const RowMat<T>> gym(gy + h * rows * g.cout, static_cast<Eigen::Index>(rows),
                                      static_cast<Eigen::Index>(g.cout));
      Eigen::Map<RowMat<T>> pm(partial.data() + h * cw * g.cout, static_cast<Eigen::Index>(cw),
                               static_cast<Eigen::Index>(g.cout));
      if (g.pointwise()) {
        Eigen::Map<const RowMat<T>> xm(x + h * rows * g.cin, static_cast<Eigen::Index>(rows),
                                       static_cast<Eigen::Index>(g.cin));
        pm.noalias() = xm.transpose() * gym;
      } else {
        auto& col = detail::scratch<T>();
        col.resize(rows * cw);
        detail::im2col_slice(x, g, h, col.data());
        Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cw));
        pm.noalias() = cm.transpose() * gym;
      }
    });
    for (std::size_t h = 0; h < g.h; ++h) {
      const T* p = partial.data() + h * cw * g.cout;
      for (std::size_t i = 0; i < cw * g.cout; ++i) gw[i] += p[i];
    }
  }
  if (gb) {
    const std::size_t n = g.voxels();
    std::vector<double> acc(g.cout, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t o = 0; o < g.cout; ++o) acc[o] += gy[r * g.cout + o];
    for (std::size_t o = 0; o < g.cout; ++o) gb[o] += static_cast<T>(acc[o]);
  }
}

/// gx += dL/dx, computed as a convolution of gy with the spatially flipped,
/// channel-transposed kernel.
template <class T>
void backward_input(const T* gy, const T* w, T* gx, const Geometry& g) {
  Geometry t = g;
  std::swap(t.cin, t.cout);
  std::vector<T> wt(g.taps() * g.cin * g.cout);
  const std::size_t taps = g.taps();
  for (std::size_t tap = 0; tap < taps; ++tap) {
    const std::size_t flipped = taps - 1 - tap;  // (a,b,c) -> (kh-1-a, kw-1-b, kd-1-c)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t co = 0; co < g.cout; ++co)
        wt[(flipped * g.cout + co) * g.cin + ci] = w[(tap * g.cin + ci) * g.cout + co];
  }
  std::vector<T> tmp(g.voxels() * g.cin);
  forward<T>(gy, wt.data(), nullptr, tmp.data(), t);
  for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
}

}  // namespace mdg::conv
