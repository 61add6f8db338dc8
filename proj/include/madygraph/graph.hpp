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
// Sparse spatio-temporal neighbourhoods. Every node (x, y, b_q) is connected
// to K points at each of S dilations in every frame b. The points start on a
// dilated grid around (x, y) and are moved by learned walks predicted from the
// features of frame b and the flow around it. Walks for target frame b are
// read at the query's own (x, y), so all query frames at one pixel share
// their neighbour positions.
//
// Layouts: features (H, W, B, C); offsets and positions (H, W, B, S, K, 2)
// holding (row, col), indexed by target frame.

#pragma once

#include <fstream>
#include <iomanip>

#include "madygraph/motion.hpp"

namespace mdg::graph {

struct SamplingGrid {
  std::vector<int> dilations{1, 7, 13};
  std::vector<std::array<int, 2>> base_offsets = default_offsets();

  static std::vector<std::array<int, 2>> default_offsets() {
    std::vector<std::array<int, 2>> o;
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) o.push_back({dr, dc});
    return o;
  }

  std::size_t scales() const { return dilations.size(); }
  std::size_t neighbors() const { return base_offsets.size(); }
  int max_dilation() const { return dilations.empty() ? 0 : dilations.back(); }

  void validate() const {
    mdg::detail::require(!dilations.empty() && !base_offsets.empty(), "sampling grid: empty dilations or offsets");
    for (std::size_t s = 0; s < dilations.size(); ++s)
      mdg::detail::require(dilations[s] > 0 && (s == 0 || dilations[s] > dilations[s - 1]),
                           "sampling grid: dilations must be positive and strictly increasing");
  }
};

/// Ablation switches: dynamic walks, cross-scale sampling, motion awareness.
struct Toggles {
  bool dynamic_walks = true;
  bool cross_scale = true;
  bool motion_aware = true;
};

/// The grid actually used under `t`: cross-scale off keeps dilation 1 only.
inline SamplingGrid effective_grid(const SamplingGrid& g, const Toggles& t) {
  if (t.cross_scale) return g;
  SamplingGrid one = g;
  one.dilations = {1};
  return one;
}

/// Default bound on walk magnitude: twice the largest dilation.
inline double default_walk_clamp(const SamplingGrid& g) { return 2.0 * g.max_dilation(); }

/// Pre-clamp positions for one query: (B, S, K, 2), the same pattern in every
/// frame.
template <std::floating_point T = double>
Tensor<T> initial_grid(const SamplingGrid& grid, std::array<double, 2> query, std::size_t frames) {
  grid.validate();
  const std::size_t s_n = grid.scales(), k_n = grid.neighbors();
  Tensor<T> p({frames, s_n, k_n, 2});
  for (std::size_t b = 0; b < frames; ++b)
    for (std::size_t s = 0; s < s_n; ++s)
      for (std::size_t k = 0; k < k_n; ++k) {
        p.at(b, s, k, 0) = static_cast<T>(query[0] + grid.dilations[s] * grid.base_offsets[k][0]);
        p.at(b, s, k, 1) = static_cast<T>(query[1] + grid.dilations[s] * grid.base_offsets[k][1]);
      }
  return p;
}

/// Initial positions of every node: (H, W, B, S, K, 2).
template <std::floating_point T>
Tensor<T> initial_positions(const SamplingGrid& grid, std::size_t h, std::size_t w, std::size_t frames) {
  grid.validate();
  const std::size_t s_n = grid.scales(), k_n = grid.neighbors();
  Tensor<T> p({h, w, frames, s_n, k_n, 2});
  T* out = p.ptr();
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t b = 0; b < frames; ++b)
        for (std::size_t s = 0; s < s_n; ++s)
          for (std::size_t k = 0; k < k_n; ++k) {
            *out++ = static_cast<T>(double(r) + grid.dilations[s] * grid.base_offsets[k][0]);
            *out++ = static_cast<T>(double(c) + grid.dilations[s] * grid.base_offsets[k][1]);
          }
  return p;
}

/// Per-frame flow context (H, W, B, 6) = [F_{b-1}, F_b, F_{b+1}] with edge
/// replication at both ends; all zeros when motion awareness is off.
template <std::floating_point T>
Tensor<T> flow_context(const Tensor<T>& flow, std::size_t h, std::size_t w, std::size_t frames, bool motion_aware) {
  Tensor<T> ctx({h, w, frames, 6});
  if (!motion_aware) return ctx;
  mdg::detail::require_shape(flow.shape() == Shape{h, w, frames, 2},
                             "flow context: flow must be " + to_string(Shape{h, w, frames, 2}) + ", got " +
                                 to_string(flow.shape()));
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t b = 0; b < frames; ++b) {
      const std::size_t prev = b == 0 ? 0 : b - 1, next = std::min(b + 1, frames - 1);
      const std::size_t src[3] = {prev, b, next};
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 2; ++k)
          ctx[(p * frames + b) * 6 + 2 * j + k] = flow[(p * frames + src[j]) * 2 + k];
    }
  return ctx;
}

/// One 3x3 convolution per frame over [H_b, F_{b-1}, F_b, F_{b+1}].
template <std::floating_point T>
struct WalkHead {
  Parameter<T> weight;  // (3, 3, 1, C + 6, S * K * 2)
  Parameter<T> bias;    // (S * K * 2)

  WalkHead() = default;
  /// Zero-initialized: walks start at 0, i.e. at the initial grid.
  WalkHead(std::size_t channels, std::size_t scales, std::size_t neighbors)
      : weight(Tensor<T>({3, 3, 1, channels + 6, scales * neighbors * 2})),
        bias(Tensor<T>({scales * neighbors * 2})) {}

  std::size_t in_channels() const { return weight.shape()[3] - 6; }
  std::size_t out_channels() const { return weight.shape()[4]; }
};

/// Walks (H, W, B, S, K, 2) in pixels, clamped to +-walk_clamp.
template <std::floating_point T>
Var<T> predict_walks(const Var<T>& features, const Tensor<T>& flow_ctx, WalkHead<T>& head, std::size_t scales,
                     std::size_t neighbors, double walk_clamp) {
  mdg::detail::require_shape(features.shape().size() == 4, "predict_walks: features must be (H,W,B,C)");
  const std::size_t h = features.dim(0), w = features.dim(1), frames = features.dim(2), c = features.dim(3);
  mdg::detail::require_shape(head.in_channels() == c, "predict_walks: head expects " +
                                                          std::to_string(head.in_channels()) +
                                                          " feature channels, got " + std::to_string(c));
  mdg::detail::require_shape(head.out_channels() == scales * neighbors * 2,
                             "predict_walks: head emits " + std::to_string(head.out_channels()) +
                                 " channels, grid needs " + std::to_string(scales * neighbors * 2));
  auto input = concat<T>({features, constant(flow_ctx)}, 3);
  auto raw = conv3d(input, head.weight.var(), head.bias.var());
  auto clamped = clamp(raw, static_cast<T>(-walk_clamp), static_cast<T>(walk_clamp));
  return reshape(clamped, {h, w, frames, scales, neighbors, 2});
}

/// Samples a (H, W, C) map at (..., 2) positions; border-clamped bilinear.
template <std::floating_point T>
Var<T> bilinear_sample(const Var<T>& feature_map, const Var<T>& positions) {
  return grid_sample(feature_map, positions);
}

struct GraphConfig {
  SamplingGrid grid;
  Toggles toggles;
  std::optional<double> walk_clamp;  // default 2 * max dilation of the effective grid
};

template <std::floating_point T>
struct Neighborhood {
  Var<T> positions;  // (H, W, B, S, K, 2), unclamped
  std::size_t scales = 0, neighbors = 0;

  std::size_t height() const { return positions.dim(0); }
  std::size_t width() const { return positions.dim(1); }
  std::size_t frames() const { return positions.dim(2); }

  /// Positions after border clamping, as used by the sampler.
  Tensor<T> clamped_positions() const {
    Tensor<T> p = positions.value();
    const T hr = T(height() - 1), wc = T(width() - 1);
    for (std::size_t i = 0; i < p.numel(); i += 2) {
      p[i] = std::clamp(p[i], T(0), hr);
      p[i + 1] = std::clamp(p[i + 1], T(0), wc);
    }
    return p;
  }

  /// Neighbour features of every query pixel: (H, W, B, S, K, C), sampled from
  /// frame b of `features` (H, W, B, C). Independent of the query frame.
  Var<T> features(const Var<T>& maps) const {
    const std::size_t h = height(), w = width(), frames = this->frames(), c = maps.dim(3);
    mdg::detail::require_shape(maps.shape() == Shape{h, w, frames, c}, "neighborhood: feature maps do not match");
    std::vector<Var<T>> per_frame;
    for (std::size_t b = 0; b < frames; ++b) {
      auto map_b = reshape(slice(maps, 2, b, b + 1), {h, w, c});
      auto pos_b = slice(positions, 2, b, b + 1);
      per_frame.push_back(bilinear_sample(map_b, pos_b));
    }
    return concat(per_frame, 2);
  }
};

/// positions = initial grid + walks; walks are predicted unless disabled.
template <std::floating_point T>
Neighborhood<T> build_neighborhood(const Var<T>& features, const Tensor<T>& flow, const GraphConfig& cfg,
                                   WalkHead<T>* head) {
  mdg::detail::require_shape(features.shape().size() == 4, "build_neighborhood: features must be (H,W,B,C)");
  const SamplingGrid grid = effective_grid(cfg.grid, cfg.toggles);
  const std::size_t h = features.dim(0), w = features.dim(1), frames = features.dim(2);
  Neighborhood<T> n{constant(initial_positions<T>(grid, h, w, frames)), grid.scales(), grid.neighbors()};
  if (cfg.toggles.dynamic_walks) {
    mdg::detail::require(head != nullptr, "build_neighborhood: dynamic walks need a walk head");
    const auto ctx = flow_context(flow, h, w, frames, cfg.toggles.motion_aware);
    auto walks = predict_walks(features, ctx, *head, grid.scales(), grid.neighbors(),
                               cfg.walk_clamp.value_or(default_walk_clamp(grid)));
    n.positions = add(n.positions, walks);
  }
  return n;
}

/// CSV rows: query_x,query_y,query_b,neighbor_b,s,k,pos_x,pos_y,weight for the
/// given query pixels. `weights`, if set, is (H, W, Bq, B, S, K).
template <std::floating_point T>
void dump_csv(std::ostream& os, const Neighborhood<T>& n, const std::vector<std::array<std::size_t, 3>>& queries,
              const Tensor<T>* weights = nullptr, double min_weight = -1) {
  const auto pos = n.clamped_positions();
  const std::size_t frames = n.frames(), s_n = n.scales, k_n = n.neighbors;
  os << "query_x,query_y,query_b,neighbor_b,s,k,pos_x,pos_y,weight\n";
  os << std::setprecision(9);
  for (const auto& q : queries) {
    mdg::detail::require(q[0] < n.height() && q[1] < n.width() && q[2] < frames, "dump_csv: query out of range");
    for (std::size_t b = 0; b < frames; ++b)
      for (std::size_t s = 0; s < s_n; ++s)
        for (std::size_t k = 0; k < k_n; ++k) {
          const double wt = weights ? double(weights->at(q[0], q[1], q[2], b, s, k)) : 0.0;
          if (weights && wt <= min_weight) continue;
          // x is the column, y the row.
          os << q[1] << ',' << q[0] << ',' << q[2] << ',' << b << ',' << s << ',' << k << ','
             << pos.at(q[0], q[1], b, s, k, 1) << ',' << pos.at(q[0], q[1], b, s, k, 0) << ',';
          if (weights) os << wt;
          os << '\n';
        }
  }
}

}  // namespace mdg::graph
