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
// Normalized neighbour aggregation with embedded-Gaussian relations:
//
//   R(i, j) = exp(clamp(<f(h_i), f(h_j)> / T, -30, 30)) * w_b(j)
//   h'_i    = sum_j R(i, j) f(h_j) / sum_j R(i, j)
//
// f is affine, so f of a bilinear sample equals the bilinear sample of f; the
// fused kernel therefore embeds the feature maps once and samples the
// embedded maps. Sampled neighbour features are never materialized: the
// backward pass recomputes them from the positions.

#pragma once

#include <Eigen/Core>

#include "madygraph/graph.hpp"

namespace mdg::agg {

inline constexpr double kLogitClamp = 30.0;

struct AggregationConfig {
  int iterations = 1;                 // L
  std::optional<bool> residual;       // default: on iff L > 1
  std::optional<double> temperature;  // default: sqrt(C)
  bool split_heads = false;           // separate relation and message embeddings
  bool repredict_walks = false;

  bool use_residual() const { return residual.value_or(iterations > 1); }
  double temperature_for(std::size_t channels) const {
    return temperature.value_or(std::sqrt(static_cast<double>(channels)));
  }
  void validate() const {
    mdg::detail::require(iterations >= 1, "aggregation: L must be >= 1");
    mdg::detail::require(!temperature || *temperature > 0, "aggregation: temperature must be > 0");
  }
};

/// Pointwise affine map C -> C, identity-initialized.
template <std::floating_point T>
struct EmbeddingHead {
  Parameter<T> weight;  // (C, C)
  Parameter<T> bias;    // (C)

  EmbeddingHead() = default;
  explicit EmbeddingHead(std::size_t channels) : weight(Tensor<T>({channels, channels})), bias(Tensor<T>({channels})) {
    for (std::size_t c = 0; c < channels; ++c) weight.value().at(c, c) = T(1);
  }

  std::size_t channels() const { return weight.shape()[0]; }
  Var<T> operator()(const Var<T>& x) { return pointwise_linear(x, weight.var(), bias.var()); }

  /// f(h) for a single C-vector.
  std::vector<double> apply(std::span<const T> h) const {
    const std::size_t c_n = channels();
    std::vector<double> out(c_n);
    for (std::size_t o = 0; o < c_n; ++o) {
      double acc = bias.value()[o];
      for (std::size_t c = 0; c < c_n; ++c) acc += double(h[c]) * weight.value().at(c, o);
      out[o] = acc;
    }
    return out;
  }
};

/// w_b = softplus(theta_b) > 0, initialized to w_b = 1.
template <std::floating_point T>
struct FrameWeights {
  Parameter<T> theta;  // (B)

  FrameWeights() = default;
  explicit FrameWeights(std::size_t frames)
      : theta(Tensor<T>({frames}, static_cast<T>(std::log(std::expm1(1.0))))) {}

  std::size_t frames() const { return theta.shape()[0]; }
  Var<T> weights() { return softplus(theta.var()); }
  double weight(std::size_t b) const { return softplus_value(double(theta.value()[b])); }
};

/// Single relation value R(h_i, h_jb).
template <std::floating_point T>
double relation(std::span<const T> h_i, std::span<const T> h_jb, double w_b, const EmbeddingHead<T>& head,
                double temperature) {
  mdg::detail::require(w_b > 0, "relation: frame weight must be positive");
  const auto a = head.apply(h_i), b = head.apply(h_jb);
  double dot = 0;
  for (std::size_t c = 0; c < a.size(); ++c) dot += a[c] * b[c];
  return std::exp(std::clamp(dot / temperature, -kLogitClamp, kLogitClamp)) * w_b;
}

struct NodeResult {
  std::vector<double> value;
  std::vector<double> weights;  // normalized, one per neighbour
};

/// Aggregates one node from explicit neighbours; `frames[j]` is the frame of
/// neighbour j and indexes `frame_weights`.
template <std::floating_point T>
NodeResult aggregate_node(std::span<const T> h_i, const std::vector<std::vector<T>>& neighbors,
                          const std::vector<std::size_t>& frames, const std::vector<double>& frame_weights,
                          const EmbeddingHead<T>& head, double temperature) {
  mdg::detail::require(!neighbors.empty() && neighbors.size() == frames.size(),
                       "aggregate_node: neighbourhood must be non-empty with one frame index per neighbour");
  const auto q = head.apply(h_i);
  std::vector<double> logits(neighbors.size());
  std::vector<std::vector<double>> msgs;
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    msgs.push_back(head.apply(std::span<const T>(neighbors[j])));
    double dot = 0;
    for (std::size_t c = 0; c < q.size(); ++c) dot += q[c] * msgs[j][c];
    const double w = frame_weights.at(frames[j]);
    mdg::detail::require(w > 0, "aggregate_node: frame weight must be positive");
    logits[j] = std::clamp(dot / temperature, -kLogitClamp, kLogitClamp) + std::log(w);
    top = std::max(top, logits[j]);
  }
  NodeResult r{std::vector<double>(q.size(), 0.0), std::vector<double>(neighbors.size())};
  double total = 0;
  for (std::size_t j = 0; j < neighbors.size(); ++j) total += r.weights[j] = std::exp(logits[j] - top);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    r.weights[j] /= total;
    for (std::size_t c = 0; c < q.size(); ++c) r.value[c] += r.weights[j] * msgs[j][c];
  }
  return r;
}

namespace detail {

// Bilinear read of an (H, W, C) slab with stride `frames * C` between pixels,
// i.e. frame b of an (H, W, B, C) tensor.
template <std::floating_point T>
struct FrameView {
  const T* base;  // points at (0, 0, b, 0)
  std::size_t h, w, c, pixel_stride;

  const T* at(std::size_t r, std::size_t col) const { return base + (r * w + col) * pixel_stride; }

  void sample(const BilinearTap<T>& t, T* out) const {
    const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc, w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
    const T *a = at(t.r0, t.c0), *b = at(t.r0, t.c1), *cc = at(t.r1, t.c0), *d = at(t.r1, t.c1);
    for (std::size_t k = 0; k < c; ++k) out[k] = w00 * a[k] + w01 * b[k] + w10 * cc[k] + w11 * d[k];
  }

  // Accumulates d(sample . g)/d(row, col) into dr, dc.
  void position_grad(const BilinearTap<T>& t, const T* g, T& dr, T& dc) const {
    const T *a = at(t.r0, t.c0), *b = at(t.r0, t.c1), *cc = at(t.r1, t.c0), *d = at(t.r1, t.c1);
    for (std::size_t k = 0; k < c; ++k) {
      dr += g[k] * ((1 - t.fc) * (cc[k] - a[k]) + t.fc * (d[k] - b[k]));
      dc += g[k] * ((1 - t.fr) * (b[k] - a[k]) + t.fr * (d[k] - cc[k]));
    }
  }
};

template <std::floating_point T>
void scatter(T* grad_base, std::size_t w, std::size_t pixel_stride, std::size_t c, const BilinearTap<T>& t,
             const T* g) {
  const T w00 = (1 - t.fr) * (1 - t.fc), w01 = (1 - t.fr) * t.fc, w10 = t.fr * (1 - t.fc), w11 = t.fr * t.fc;
  T* a = grad_base + (t.r0 * w + t.c0) * pixel_stride;
  T* b = grad_base + (t.r0 * w + t.c1) * pixel_stride;
  T* cc = grad_base + (t.r1 * w + t.c0) * pixel_stride;
  T* d = grad_base + (t.r1 * w + t.c1) * pixel_stride;
  for (std::size_t k = 0; k < c; ++k) {
    a[k] += w00 * g[k];
    b[k] += w01 * g[k];
    cc[k] += w10 * g[k];
    d[k] += w11 * g[k];
  }
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using ConstStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <std::floating_point T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t k = 0; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

}  // namespace detail

/// Fused neighbour aggregation.
///   query      (H, W, Bq, C)   relation embedding of each node
///   keys       (H, W, B, C)    relation embedding sampled at the neighbours
///   values     (H, W, B, C)    message embedding sampled at the neighbours
///   positions  (H, W, B, S, K, 2)
///   frame_w    (B)             positive frame weights
/// Returns (H, W, Bq, C). If `weights_out` is set it receives the normalized
/// weights (H, W, Bq, B, S, K).
template <std::floating_point T>
Var<T> aggregate_fused(const Var<T>& query, const Var<T>& keys, const Var<T>& values, const Var<T>& positions,
                       const Var<T>& frame_w, double temperature, Tensor<T>* weights_out = nullptr) {
  mdg::detail::require_shape(query.shape().size() == 4 && keys.shape().size() == 4 && positions.shape().size() == 6,
                             "aggregate: expected (H,W,B,C) features and (H,W,B,S,K,2) positions");
  const std::size_t h = query.dim(0), w = query.dim(1), bq_n = query.dim(2), c = query.dim(3);
  const std::size_t b_n = keys.dim(2), s_n = positions.dim(3), k_n = positions.dim(4);
  mdg::detail::require_shape(keys.shape() == Shape{h, w, b_n, c} && values.shape() == keys.shape(),
                             "aggregate: keys/values " + to_string(keys.shape()) + " do not match query " +
                                 to_string(query.shape()));
  mdg::detail::require_shape(positions.shape() == Shape{h, w, b_n, s_n, k_n, 2},
                             "aggregate: positions " + to_string(positions.shape()) + " do not match features");
  mdg::detail::require_shape(frame_w.shape() == Shape{b_n}, "aggregate: frame weights must be (B)");
  mdg::detail::require(temperature > 0, "aggregate: temperature must be positive");
  mdg::detail::check_finite<T>("aggregate", {&query, &keys, &values, &positions, &frame_w});
  for (T wb : frame_w.value().data()) mdg::detail::require(wb > 0, "aggregate: frame weights must be positive");

  const std::size_t per_frame = s_n * k_n, nbr = b_n * per_frame;
  const bool shared = keys.ptr() == values.ptr();
  const T inv_t = static_cast<T>(1.0 / temperature);
  std::vector<T> log_w(b_n);
  for (std::size_t b = 0; b < b_n; ++b) log_w[b] = std::log(frame_w.value()[b]);

  auto attn = std::make_shared<std::vector<T>>(h * w * bq_n * nbr);
  Tensor<T> out({h, w, bq_n, c});
  const T* q_ptr = query.value().ptr();
  const T* k_ptr = keys.value().ptr();
  const T* v_ptr = values.value().ptr();
  const T* pos = positions.value().ptr();

  parallel_for(0, std::int64_t(h), [&](std::int64_t row) {
    detail::RowMat<T> kbuf(nbr, c), vbuf(shared ? 0 : nbr, c), z(bq_n, nbr);
    for (std::size_t col = 0; col < w; ++col) {
      const std::size_t p = std::size_t(row) * w + col;
      for (std::size_t j = 0; j < nbr; ++j) {
        const std::size_t b = j / per_frame;
        const BilinearTap<T> t(pos[(p * nbr + j) * 2], pos[(p * nbr + j) * 2 + 1], h, w);
        detail::FrameView<T>{k_ptr + b * c, h, w, c, b_n * c}.sample(t, kbuf.row(j).data());
        if (!shared) detail::FrameView<T>{v_ptr + b * c, h, w, c, b_n * c}.sample(t, vbuf.row(j).data());
      }
      const detail::ConstMap<T> q(q_ptr + p * bq_n * c, bq_n, c);
      z.noalias() = q * kbuf.transpose();
      detail::Map<T> a(attn->data() + p * bq_n * nbr, bq_n, nbr);
      for (std::size_t bq = 0; bq < bq_n; ++bq) {
        T top = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < nbr; ++j) {
          const T l = std::clamp(z(bq, j) * inv_t, T(-kLogitClamp), T(kLogitClamp)) + log_w[j / per_frame];
          z(bq, j) = l;
          top = std::max(top, l);
        }
        T total = 0;
        for (std::size_t j = 0; j < nbr; ++j) total += z(bq, j) = std::exp(z(bq, j) - top);
        for (std::size_t j = 0; j < nbr; ++j) a(bq, j) = z(bq, j) / total;
      }
      detail::Map<T>(out.ptr() + p * bq_n * c, bq_n, c).noalias() = a * (shared ? kbuf : vbuf);
    }
  });
  if (weights_out) *weights_out = Tensor<T>({h, w, bq_n, b_n, s_n, k_n}, *attn);

  return mdg::detail::make_result_n<T>(
      std::move(out), {query, keys, values, positions, frame_w}, "aggregate",
      [query, keys, values, positions, frame_w, attn, h, w, bq_n, b_n, c, per_frame, nbr, shared, inv_t](
          Node<T>& self) {
        auto* gq = mdg::detail::grad_sink(query);
        auto* gk = mdg::detail::grad_sink(keys);
        auto* gv = shared ? gk : mdg::detail::grad_sink(values);
        auto* gp = mdg::detail::grad_sink(positions);
        auto* gw = mdg::detail::grad_sink(frame_w);
        const T* go = self.grad.ptr();
        const T* q_ptr = query.value().ptr();
        const T* k_ptr = keys.value().ptr();
        const T* v_ptr = values.value().ptr();
        const T* pos = positions.value().ptr();

        // <dL/dout_i, out_i>, the softmax baseline of every query.
        std::vector<T> base(h * w * bq_n);
        for (std::size_t i = 0; i < base.size(); ++i) base[i] = detail::dot(go + i * c, self.value.ptr() + i * c, c);

        // Work is split by target frame b; everything written inside the loop
        // is private to b except the query gradient, which gets per-b partials.
        // Keys or values that alias the query (shared embedding) would write
        // into the query's buffer from every b, so they get partials as well.
        const bool k_private = gk && query.ptr() == keys.ptr();
        const bool v_private = gv && !shared && query.ptr() == values.ptr();
        std::vector<std::vector<T>> gq_part(b_n), gk_part(b_n), gv_part(b_n);
        std::vector<double> dlogw(b_n, 0.0);
        parallel_for(0, std::int64_t(b_n), [&](std::int64_t bi) {
          const auto b = std::size_t(bi);
          if (gq) gq_part[b].assign(h * w * bq_n * c, T(0));
          // Destination of the key / value scatter for frame b and its pixel stride.
          T* gk_frame = nullptr;
          T* gv_frame = nullptr;
          std::size_t k_stride = b_n * c, v_stride = b_n * c;
          if (k_private) {
            gk_part[b].assign(h * w * c, T(0));
            gk_frame = gk_part[b].data();
            k_stride = c;
          } else if (gk) {
            gk_frame = gk->ptr() + b * c;
          }
          if (shared) {
            gv_frame = gk_frame;
            v_stride = k_stride;
          } else if (v_private) {
            gv_part[b].assign(h * w * c, T(0));
            gv_frame = gv_part[b].data();
            v_stride = c;
          } else if (gv) {
            gv_frame = gv->ptr() + b * c;
          }
          const detail::FrameView<T> kview{k_ptr + b * c, h, w, c, b_n * c};
          const detail::FrameView<T> vview{v_ptr + b * c, h, w, c, b_n * c};
          detail::RowMat<T> kb(per_frame, c), vb(shared ? 0 : per_frame, c), dk(per_frame, c), dv(per_frame, c);
          detail::RowMat<T> dz(bq_n, per_frame), raw(bq_n, per_frame);
          std::vector<BilinearTap<T>> taps;
          taps.reserve(per_frame);
          double dlw = 0;
          for (std::size_t p = 0; p < h * w; ++p) {
            taps.clear();
            for (std::size_t sk = 0; sk < per_frame; ++sk) {
              const std::size_t pi = (p * nbr + b * per_frame + sk) * 2;
              taps.emplace_back(pos[pi], pos[pi + 1], h, w);
              kview.sample(taps.back(), kb.row(sk).data());
              if (!shared) vview.sample(taps.back(), vb.row(sk).data());
            }
            const auto& vals = shared ? kb : vb;
            const detail::ConstMap<T> q(q_ptr + p * bq_n * c, bq_n, c);
            const detail::ConstMap<T> g(go + p * bq_n * c, bq_n, c);
            const detail::ConstStrided<T> a(attn->data() + p * bq_n * nbr + b * per_frame, bq_n, per_frame,
                                            Eigen::OuterStride<>(nbr));
            dz.noalias() = g * vals.transpose();
            raw.noalias() = q * kb.transpose();
            for (std::size_t bq = 0; bq < bq_n; ++bq)
              for (std::size_t sk = 0; sk < per_frame; ++sk) {
                const T d = a(bq, sk) * (dz(bq, sk) - base[p * bq_n + bq]);
                dlw += d;
                const T r = raw(bq, sk) * inv_t;
                dz(bq, sk) = (r <= T(-kLogitClamp) || r >= T(kLogitClamp)) ? T(0) : d * inv_t;
              }
            dv.noalias() = a.transpose() * g;
            dk.noalias() = dz.transpose() * q;
            if (gq) detail::Map<T>(gq_part[b].data() + p * bq_n * c, bq_n, c).noalias() += dz * kb;
            if (shared) dk += dv;
            for (std::size_t sk = 0; sk < per_frame; ++sk) {
              const BilinearTap<T>& t = taps[sk];
              if (gk_frame) detail::scatter(gk_frame, w, k_stride, c, t, dk.row(sk).data());
              if (!shared && gv_frame) detail::scatter(gv_frame, w, v_stride, c, t, dv.row(sk).data());
              if (gp) {
                T dr = 0, dc = 0;
                kview.position_grad(t, dk.row(sk).data(), dr, dc);
                if (!shared) vview.position_grad(t, dv.row(sk).data(), dr, dc);
                const std::size_t pi = (p * nbr + b * per_frame + sk) * 2;
                if (t.row_inside) (*gp)[pi] += dr;
                if (t.col_inside) (*gp)[pi + 1] += dc;
              }
            }
          }
          dlogw[b] = dlw;
        });
        auto reduce_frames = [&](std::vector<std::vector<T>>& parts, Tensor<T>* g) {
          for (std::size_t b = 0; b < b_n; ++b)
            for (std::size_t p = 0; p < h * w; ++p)
              for (std::size_t k = 0; k < c; ++k) (*g)[(p * b_n + b) * c + k] += parts[b][p * c + k];
        };
        if (k_private) reduce_frames(gk_part, gk);
        if (v_private) reduce_frames(gv_part, gv);
        if (gq)
          for (std::size_t b = 0; b < b_n; ++b)
            for (std::size_t i = 0; i < gq->numel(); ++i) (*gq)[i] += gq_part[b][i];
        if (gw)
          for (std::size_t b = 0; b < b_n; ++b) (*gw)[b] += static_cast<T>(dlogw[b] / frame_w.value()[b]);
      });
}

template <std::floating_point T>
struct AggregationParams {
  EmbeddingHead<T> message;   // f
  EmbeddingHead<T> relation;  // used only with split heads
  FrameWeights<T> frame_weights;
  AggregationConfig config;

  AggregationParams() = default;
  AggregationParams(std::size_t channels, std::size_t frames, AggregationConfig cfg = {})
      : message(channels), relation(cfg.split_heads ? channels : 0), frame_weights(frames), config(cfg) {
    config.validate();
  }
};

/// One aggregation step over all nodes; `weights_out` as in aggregate_fused.
template <std::floating_point T>
Var<T> aggregate_pass(const Var<T>& h, const graph::Neighborhood<T>& n, AggregationParams<T>& p,
                      Tensor<T>* weights_out = nullptr) {
  mdg::detail::require_shape(h.shape().size() == 4, "aggregate_pass: features must be (H,W,B,C)");
  mdg::detail::require_shape(p.frame_weights.frames() == h.dim(2),
                             "aggregate_pass: " + std::to_string(p.frame_weights.frames()) +
                                 " frame weights for " + std::to_string(h.dim(2)) + " frames");
  auto msg = p.message(h);
  auto rel = p.config.split_heads ? p.relation(h) : msg;
  auto upd = aggregate_fused(rel, rel, msg, n.positions, p.frame_weights.weights(),
                             p.config.temperature_for(h.dim(3)), weights_out);
  return p.config.use_residual() ? add(h, upd) : upd;
}

/// L aggregation steps. With repredict_walks the neighbourhood is rebuilt
/// from the current features before every step after the first.
template <std::floating_point T>
Var<T> iterate(const Var<T>& h0, graph::Neighborhood<T> n, AggregationParams<T>& p,
               const std::function<graph::Neighborhood<T>(const Var<T>&)>& rebuild = {},
               Tensor<T>* last_weights = nullptr) {
  p.config.validate();
  Var<T> h = h0;
  for (int l = 0; l < p.config.iterations; ++l) {
    if (l > 0 && p.config.repredict_walks && rebuild) n = rebuild(h);
    h = aggregate_pass(h, n, p, l + 1 == p.config.iterations ? last_weights : nullptr);
  }
  return h;
}

}  // namespace mdg::agg
