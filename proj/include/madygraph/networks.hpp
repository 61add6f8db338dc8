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
// Encoder/decoder 3D CNNs, the BaseNet coarse backbone, the assembled
// enhancement model and its on-disk checkpoint format.

#pragma once

#include <filesystem>
#include <random>

#include "madygraph/aggregation.hpp"
#include "madygraph/config.hpp"
#include "madygraph/graph.hpp"
#include "madygraph/motion.hpp"
#include "madygraph/sci.hpp"
#include "madygraph/tns.hpp"

namespace mdg::nets {

inline constexpr double kLeakySlope = 0.1;

/// 3D convolution, stride 1, same padding, Kaiming-uniform weights for a
/// leaky ReLU and zero bias.
template <std::floating_point T>
struct Conv3dLayer {
  Parameter<T> weight;  // (k, k, k, Cin, Cout)
  Parameter<T> bias;    // (Cout)

  Conv3dLayer() = default;
  Conv3dLayer(std::size_t cin, std::size_t cout, std::size_t kernel, std::uint64_t seed, bool zero_init = false)
      : weight(Tensor<T>({kernel, kernel, kernel, cin, cout})), bias(Tensor<T>({cout})) {
    if (zero_init) return;
    const double fan_in = double(kernel * kernel * kernel * cin);
    const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
    std::mt19937_64 rng(seed);
    for (auto& v : weight.value().data()) v = static_cast<T>(bound * (2.0 * unit_uniform(rng) - 1.0));
  }

  std::size_t in_channels() const { return weight.shape()[3]; }
  std::size_t out_channels() const { return weight.shape()[4]; }

  Var<T> operator()(const Var<T>& x) const { return conv3d(x, weight.var(), bias.var()); }
};

template <std::floating_point T>
using NamedParameters = std::vector<std::pair<std::string, Parameter<T>*>>;

namespace detail {

/// Layers cin -> widths[0] -> ... -> widths.back(); leaky ReLU after every
/// layer index below `activated`.
template <std::floating_point T>
std::vector<Conv3dLayer<T>> make_stack(std::size_t cin, const std::vector<std::size_t>& widths, std::size_t kernel,
                                       std::uint64_t seed, bool zero_last) {
  std::vector<Conv3dLayer<T>> layers;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool zero = zero_last && i + 1 == widths.size();
    layers.emplace_back(i ? widths[i - 1] : cin, widths[i], kernel, mix_seed(seed, i), zero);
  }
  return layers;
}

template <std::floating_point T>
Var<T> run_stack(const std::vector<Conv3dLayer<T>>& layers, Var<T> x, std::size_t activated) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](x);
    if (i < activated) x = leaky_relu(x, static_cast<T>(kLeakySlope));
  }
  return x;
}

template <std::floating_point T>
void require_measurement(const Tensor<T>& y, const Tensor<T>& masks, const std::string& op) {
  sci::detail::require_cube(masks, op + ": masks");
  mdg::detail::require_shape(y.shape() == Shape{masks.dim(0), masks.dim(1)},
                             op + ": measurement " + to_string(y.shape()) + " vs masks " + to_string(masks.shape()));
}

template <std::floating_point T>
void name_stack(std::vector<Conv3dLayer<T>>& layers, const std::string& prefix, NamedParameters<T>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".weight", &layers[i].weight);
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", &layers[i].bias);
  }
}

}  // namespace detail

struct ModelConfig {
  std::size_t frames = 8;
  std::size_t channels = 32;
  std::vector<std::size_t> encoder_widths{16, 32, 32};
  std::vector<std::size_t> decoder_widths{32, 16, 8};
  std::size_t kernel = 3;
  std::size_t basenet_width = 16;
  std::size_t basenet_layers = 6;
  bool global_residual_to_coarse = false;
  graph::GraphConfig graph;
  agg::AggregationConfig aggregation;
  motion::FlowParams flow;
  std::uint64_t seed = 0;

  void validate() const {
    mdg::detail::require(frames >= 2, "model: need at least 2 frames");
    mdg::detail::require(channels >= 1, "model: channels must be positive");
    mdg::detail::require(kernel % 2 == 1, "model: kernel must be odd");
    mdg::detail::require(basenet_layers >= 2, "model: basenet needs at least 2 layers");
    graph.grid.validate();
    aggregation.validate();
  }

  void write(config::KeyValues& kv) const {
    kv.set("model.frames", frames);
    kv.set("model.channels", channels);
    kv.set("model.encoder_widths", encoder_widths);
    kv.set("model.decoder_widths", decoder_widths);
    kv.set("model.kernel", kernel);
    kv.set("model.basenet_width", basenet_width);
    kv.set("model.basenet_layers", basenet_layers);
    kv.set("model.global_residual_to_coarse", global_residual_to_coarse);
    kv.set("model.seed", seed);
    kv.set("graph.dilations", graph.grid.dilations);
    kv.set("graph.dynamic_walks", graph.toggles.dynamic_walks);
    kv.set("graph.cross_scale", graph.toggles.cross_scale);
    kv.set("graph.motion_aware", graph.toggles.motion_aware);
    kv.set_optional("graph.walk_clamp", graph.walk_clamp);
    kv.set("aggregation.iterations", aggregation.iterations);
    kv.set_optional("aggregation.residual", aggregation.residual);
    kv.set_optional("aggregation.temperature", aggregation.temperature);
    kv.set("aggregation.split_heads", aggregation.split_heads);
    kv.set("aggregation.repredict_walks", aggregation.repredict_walks);
    kv.set("flow.levels", flow.levels);
    kv.set("flow.alpha", flow.alpha);
    kv.set("flow.iterations", flow.iterations);
    kv.set("flow.warps", flow.warps);
    kv.set("flow.max_displacement", flow.max_displacement);
  }

  static ModelConfig read(const config::KeyValues& kv) {
    ModelConfig c;
    c.frames = kv.get("model.frames", c.frames);
    c.channels = kv.get("model.channels", c.channels);
    c.encoder_widths = kv.get_list("model.encoder_widths", c.encoder_widths);
    c.decoder_widths = kv.get_list("model.decoder_widths", c.decoder_widths);
    c.kernel = kv.get("model.kernel", c.kernel);
    c.basenet_width = kv.get("model.basenet_width", c.basenet_width);
    c.basenet_layers = kv.get("model.basenet_layers", c.basenet_layers);
    c.global_residual_to_coarse = kv.get("model.global_residual_to_coarse", c.global_residual_to_coarse);
    c.seed = kv.get("model.seed", c.seed);
    c.graph.grid.dilations = kv.get_list("graph.dilations", c.graph.grid.dilations);
    c.graph.toggles.dynamic_walks = kv.get("graph.dynamic_walks", c.graph.toggles.dynamic_walks);
    c.graph.toggles.cross_scale = kv.get("graph.cross_scale", c.graph.toggles.cross_scale);
    c.graph.toggles.motion_aware = kv.get("graph.motion_aware", c.graph.toggles.motion_aware);
    c.graph.walk_clamp = kv.get_optional<double>("graph.walk_clamp");
    c.aggregation.iterations = kv.get("aggregation.iterations", c.aggregation.iterations);
    c.aggregation.residual = kv.get_optional<bool>("aggregation.residual");
    c.aggregation.temperature = kv.get_optional<double>("aggregation.temperature");
    c.aggregation.split_heads = kv.get("aggregation.split_heads", c.aggregation.split_heads);
    c.aggregation.repredict_walks = kv.get("aggregation.repredict_walks", c.aggregation.repredict_walks);
    c.flow.levels = kv.get("flow.levels", c.flow.levels);
    c.flow.alpha = kv.get("flow.alpha", c.flow.alpha);
    c.flow.iterations = kv.get("flow.iterations", c.flow.iterations);
    c.flow.warps = kv.get("flow.warps", c.flow.warps);
    c.flow.max_displacement = kv.get("flow.max_displacement", c.flow.max_displacement);
    c.validate();
    return c;
  }
};

/// 1 -> 16 -> 32 -> 32 -> C with a leaky ReLU after every layer.
template <std::floating_point T>
struct EncoderNet {
  std::vector<Conv3dLayer<T>> layers;

  EncoderNet() = default;
  EncoderNet(const ModelConfig& cfg, std::uint64_t seed) {
    auto widths = cfg.encoder_widths;
    widths.push_back(cfg.channels);
    layers = detail::make_stack<T>(1, widths, cfg.kernel, seed, false);
  }

  std::size_t channels() const { return layers.back().out_channels(); }

  /// (H, W, B) -> (H, W, B, C).
  Var<T> operator()(const Var<T>& x) const {
    mdg::detail::require_shape(x.shape().size() == 3, "encode: input must be (H,W,B), got " + to_string(x.shape()));
    return detail::run_stack(layers, reshape(x, {x.dim(0), x.dim(1), x.dim(2), 1}), layers.size());
  }

  void collect(const std::string& prefix, NamedParameters<T>& out) { detail::name_stack(layers, prefix, out); }
};

/// C -> 32 -> 16 -> 8 -> 1; the last layer is linear.
template <std::floating_point T>
struct DecoderNet {
  std::vector<Conv3dLayer<T>> layers;

  DecoderNet() = default;
  DecoderNet(const ModelConfig& cfg, std::uint64_t seed) {
    auto widths = cfg.decoder_widths;
    widths.push_back(1);
    layers = detail::make_stack<T>(cfg.channels, widths, cfg.kernel, seed, false);
  }

  /// (H, W, B, C) -> (H, W, B).
  Var<T> operator()(const Var<T>& h) const {
    mdg::detail::require_shape(h.shape().size() == 4 && h.dim(3) == layers.front().in_channels(),
                               "decode: expected (H,W,B," + std::to_string(layers.front().in_channels()) +
                                   "), got " + to_string(h.shape()));
    auto y = detail::run_stack(layers, h, layers.size() - 1);
    return reshape(y, {h.dim(0), h.dim(1), h.dim(2)});
  }

  void collect(const std::string& prefix, NamedParameters<T>& out) { detail::name_stack(layers, prefix, out); }
};

/// Y / (sum_b M_b + eps), broadcast to every frame: (H, W, B).
template <std::floating_point T>
Tensor<T> normalized_measurement(const Tensor<T>& y, const Tensor<T>& masks) {
  detail::require_measurement(y, masks, "normalized_measurement");
  const std::size_t h = masks.dim(0), w = masks.dim(1), b_n = masks.dim(2);
  Tensor<T> out({h, w, b_n});
  for (std::size_t p = 0; p < h * w; ++p) {
    double total = 0;
    for (std::size_t b = 0; b < b_n; ++b) total += masks[p * b_n + b];
    const T v = static_cast<T>(double(y[p]) / (total + sci::kMaskEpsilon));
    for (std::size_t b = 0; b < b_n; ++b) out[p * b_n + b] = v;
  }
  return out;
}

/// Coarse backbone: 3 -> 16 x5 -> 1 over per-frame inputs [Y, M_b, Y*M_b],
/// plus the normalized measurement. The last layer starts at zero.
template <std::floating_point T>
struct BaseNet {
  std::vector<Conv3dLayer<T>> layers;

  BaseNet() = default;
  BaseNet(const ModelConfig& cfg, std::uint64_t seed) {
    std::vector<std::size_t> widths(cfg.basenet_layers - 1, cfg.basenet_width);
    widths.push_back(1);
    layers = detail::make_stack<T>(3, widths, cfg.kernel, seed, true);
  }

  Var<T> operator()(const Tensor<T>& y, const Tensor<T>& masks) const {
    detail::require_measurement(y, masks, "basenet");
    const std::size_t h = masks.dim(0), w = masks.dim(1), b_n = masks.dim(2);
    Tensor<T> in({h, w, b_n, 3});
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t b = 0; b < b_n; ++b) {
        T* v = in.ptr() + (p * b_n + b) * 3;
        v[0] = y[p];
        v[1] = masks[p * b_n + b];
        v[2] = y[p] * masks[p * b_n + b];
      }
    auto r = detail::run_stack(layers, constant(std::move(in)), layers.size() - 1);
    return add(reshape(r, {h, w, b_n}), constant(normalized_measurement(y, masks)));
  }

  void collect(const std::string& prefix, NamedParameters<T>& out) { detail::name_stack(layers, prefix, out); }
};

template <std::floating_point T>
sci::VideoCube<T> basenet_reconstruct(const sci::Measurement<T>& m, const sci::MaskSet<T>& masks,
                                      const BaseNet<T>& net) {
  return {net(m.y, masks.masks).value(), sci::CubeRole::coarse};
}

/// Outputs of one enhancement pass.
template <std::floating_point T>
struct ForwardResult {
  Var<T> fine;        // (H, W, B)
  Tensor<T> flow;     // (H, W, B, 2), as used
  Tensor<T> weights;    // (H, W, B, B, S, K) of the last step, if requested
  Tensor<T> positions;  // (H, W, B, S, K, 2) clamped, of the last step, if requested
};

/// Encoder, walk head, aggregation parameters and decoder. Never sees the
/// coarse backbone, only its output.
template <std::floating_point T>
class MadyGraphModel {
 public:
  EncoderNet<T> encoder;
  graph::WalkHead<T> walk_head;
  agg::AggregationParams<T> aggregation;
  DecoderNet<T> decoder;

  MadyGraphModel() = default;
  explicit MadyGraphModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto grid = graph::effective_grid(cfg_.graph.grid, cfg_.graph.toggles);
    encoder = EncoderNet<T>(cfg_, mix_seed(cfg_.seed, 0x656e63));
    walk_head = graph::WalkHead<T>(cfg_.channels, grid.scales(), grid.neighbors());
    aggregation = agg::AggregationParams<T>(cfg_.channels, cfg_.frames, cfg_.aggregation);
    decoder = DecoderNet<T>(cfg_, mix_seed(cfg_.seed, 0x646563));
  }

  const ModelConfig& config() const { return cfg_; }

  NamedParameters<T> named_parameters() {
    NamedParameters<T> out;
    encoder.collect("encoder", out);
    if (cfg_.graph.toggles.dynamic_walks) {
      out.emplace_back("walk_head.weight", &walk_head.weight);
      out.emplace_back("walk_head.bias", &walk_head.bias);
    }
    out.emplace_back("aggregation.message.weight", &aggregation.message.weight);
    out.emplace_back("aggregation.message.bias", &aggregation.message.bias);
    if (cfg_.aggregation.split_heads) {
      out.emplace_back("aggregation.relation.weight", &aggregation.relation.weight);
      out.emplace_back("aggregation.relation.bias", &aggregation.relation.bias);
    }
    out.emplace_back("aggregation.frame_theta", &aggregation.frame_weights.theta);
    decoder.collect("decoder", out);
    return out;
  }

  /// Flow stack in model layout from a coarse video.
  Tensor<T> estimate_flow(const Tensor<T>& coarse) const {
    if (!cfg_.graph.toggles.motion_aware) return Tensor<T>({coarse.dim(0), coarse.dim(1), coarse.dim(2), 2});
    const auto stack = motion::build_flow_stack(sci::VideoCube<T>{coarse, sci::CubeRole::coarse}, cfg_.flow);
    return motion::to_model_tensor(stack);
  }

  /// remask -> encode -> flow -> neighbourhood -> L aggregation steps ->
  /// decode. `flow` (H, W, B, 2) is estimated from the coarse value if absent.
  ForwardResult<T> forward(const Tensor<T>& y, const Tensor<T>& masks, const Var<T>& coarse,
                           std::optional<Tensor<T>> flow = std::nullopt, bool keep_weights = false) {
    detail::require_measurement(y, masks, "madygraph");
    mdg::detail::require_shape(coarse.shape() == masks.shape(), "madygraph: coarse video " +
                                                                     to_string(coarse.shape()) + " vs masks " +
                                                                     to_string(masks.shape()));
    mdg::detail::require_shape(masks.dim(2) == cfg_.frames, "madygraph: model expects " +
                                                                 std::to_string(cfg_.frames) + " frames, got " +
                                                                 std::to_string(masks.dim(2)));
    ForwardResult<T> r;
    r.flow = flow ? std::move(*flow) : estimate_flow(coarse.value());
    mdg::detail::require_shape(r.flow.shape() == Shape{masks.dim(0), masks.dim(1), masks.dim(2), 2},
                               "madygraph: flow must be (H,W,B,2), got " + to_string(r.flow.shape()));
    auto h0 = encoder(sci::remask(y, coarse, masks));
    auto rebuild = [&](const Var<T>& h) {
      auto n = graph::build_neighborhood(h, r.flow, cfg_.graph, &walk_head);
      if (keep_weights) r.positions = n.clamped_positions();
      return n;
    };
    auto hl = agg::iterate<T>(h0, rebuild(h0), aggregation, rebuild, keep_weights ? &r.weights : nullptr);
    r.fine = decoder(hl);
    if (cfg_.global_residual_to_coarse) r.fine = add(r.fine, coarse);
    return r;
  }

 private:
  ModelConfig cfg_;
};

template <std::floating_point T>
sci::VideoCube<T> madygraph_forward(const sci::Measurement<T>& m, const sci::MaskSet<T>& masks,
                                    const sci::VideoCube<T>& coarse, MadyGraphModel<T>& model,
                                    std::optional<Tensor<T>> flow = std::nullopt) {
  auto r = model.forward(m.y, masks.masks, constant(coarse.frames), std::move(flow));
  return {r.fine.value(), sci::CubeRole::fine};
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/<name>.tns per parameter plus <dir>/manifest.txt.

inline constexpr const char* kManifestName = "manifest.txt";

/// Writes into a sibling temporary directory and renames it into place, so a
/// failed save never leaves a partial checkpoint at `dir`.
template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& dir, const NamedParameters<T>& params,
                     const config::KeyValues& manifest) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    config::KeyValues m = manifest;
    std::string names;
    for (const auto& [name, p] : params) {
      tns::save(p->value(), tmp / (name + ".tns"));
      names += (names.empty() ? "" : ",") + name;
    }
    m.set("parameters", names);
    m.save(tmp / kManifestName);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
}

inline config::KeyValues read_manifest(const std::filesystem::path& dir) {
  return config::KeyValues::load(dir / kManifestName);
}

/// Loads every parameter of `params` from `dir`; shapes must match exactly.
template <std::floating_point T>
config::KeyValues load_checkpoint(const std::filesystem::path& dir, const NamedParameters<T>& params) {
  auto manifest = read_manifest(dir);
  for (const auto& [name, p] : params) {
    const auto path = dir / (name + ".tns");
    if (!std::filesystem::exists(path)) throw FormatError("checkpoint " + dir.string() + " lacks " + name);
    Tensor<T> t = tns::load<T>(path);
    if (t.shape() != p->shape())
      throw FormatError("checkpoint parameter " + name + " has shape " + to_string(t.shape()) + ", model expects " +
                        to_string(p->shape()));
    p->value() = std::move(t);
    p->zero_grad();
  }
  return manifest;
}

}  // namespace mdg::nets
