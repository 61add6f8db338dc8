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
// 8x8x2, C = 4 end-to-end instance for gradient checks. Walk and embedding
// weights are randomized so no sample position sits on the integer lattice,
// where bilinear sampling is not differentiable.

#pragma once

#include <random>

#include "madygraph/grad_check.hpp"
#include "madygraph/networks.hpp"

namespace mdg::testing_micro {

inline nets::ModelConfig micro_config() {
  nets::ModelConfig cfg;
  cfg.frames = 2;
  cfg.channels = 4;
  cfg.encoder_widths = {4, 4, 4};
  cfg.decoder_widths = {4, 4, 4};
  cfg.graph.grid.dilations = {1, 2};
  cfg.seed = 5;
  return cfg;
}

struct MicroInstance {
  nets::MadyGraphModel<double> model;
  Tensor<double> y, masks, coarse, probe;
};

inline MicroInstance micro_instance(std::uint64_t seed = 21) {
  MicroInstance m{nets::MadyGraphModel<double>(micro_config()), {}, {}, {}, {}};
  std::mt19937_64 rng(seed);
  auto uniform = [&](Shape s, double lo, double hi) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = lo + (hi - lo) * unit_uniform(rng);
    return t;
  };
  const Tensor<double> truth = uniform({8, 8, 2}, 0, 1);
  m.masks = sci::generate_masks<double>(8, 8, 2, seed).masks;
  m.y = sci::forward_measure(sci::VideoCube<double>{truth, sci::CubeRole::ground_truth},
                             sci::MaskSet<double>{m.masks, sci::MaskKind::binary})
            .y;
  m.coarse = truth;
  for (auto& v : m.coarse.data()) v += 0.2 * (unit_uniform(rng) - 0.5);
  m.probe = uniform({8, 8, 2}, 0.5, 1.5);
  m.model.walk_head.weight.value() = uniform(m.model.walk_head.weight.shape(), -0.3, 0.3);
  m.model.walk_head.bias.value() = uniform(m.model.walk_head.bias.shape(), -0.6, 0.6);
  m.model.aggregation.frame_weights.theta.value() = uniform({2}, -1, 1);
  auto& f = m.model.aggregation.message;
  f.weight.value() = uniform({4, 4}, -0.3, 0.3);
  for (std::size_t k = 0; k < 4; ++k) f.weight.value().at(k, k) += 1.0;
  f.bias.value() = uniform({4}, -0.1, 0.1);
  for (auto& [name, p] : m.model.named_parameters())
    if (name.ends_with(".bias") && name.starts_with("encoder")) p->value() = uniform(p->shape(), -0.05, 0.05);
  return m;
}

struct MicroCheck {
  std::string parameter;
  GradCheckResult result;
};

/// Central-difference check of sum(fine * probe) against every parameter and
/// the coarse input; the flow is estimated once and held fixed.
inline std::vector<MicroCheck> check_micro_gradients(MicroInstance& m, double eps = 1e-6, double floor = 1e-3) {
  const Tensor<double> flow = m.model.estimate_flow(m.coarse);
  Parameter<double> coarse(m.coarse);
  auto fn = [&] {
    auto r = m.model.forward(m.y, m.masks, coarse.var(), flow);
    return sum(mul(r.fine, constant(m.probe)));
  };
  std::vector<MicroCheck> out;
  for (auto& [name, p] : m.model.named_parameters())
    out.push_back({name, grad_check_parameter<double>(fn, *p, eps, {}, floor)});
  out.push_back({"coarse", grad_check_parameter<double>(fn, coarse, eps, {}, floor)});
  return out;
}

}  // namespace mdg::testing_micro
