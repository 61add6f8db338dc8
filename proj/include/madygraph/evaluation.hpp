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
// Coarse vs enhanced evaluation, report emission and run manifests.

#pragma once

#include <json.hpp>

#include <chrono>
#include <map>
#include <ostream>

#include "madygraph/training.hpp"

namespace mdg::eval {

inline constexpr const char* kVersion = "0.1.0";

enum class Backbone { basenet, gaptv, import };

inline Backbone parse_backbone(const std::string& s) {
  if (s == "basenet") return Backbone::basenet;
  if (s == "gaptv") return Backbone::gaptv;
  if (s == "import") return Backbone::import;
  throw std::invalid_argument("unknown backbone '" + s + "' (expected basenet, gaptv or import)");
}

inline std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::basenet: return "basenet";
    case Backbone::gaptv: return "gaptv";
    case Backbone::import: return "import";
  }
  return "?";
}

/// One measurement with its ground truth; `coarse` is required for the
/// import backbone only.
struct EvalScene {
  std::string name;
  Tensor<float> truth;  // (H, W, B)
  Tensor<float> y;      // (H, W)
  std::optional<Tensor<float>> coarse;
};

struct SceneMetrics {
  std::string name;
  double psnr_coarse = 0, ssim_coarse = 0;
  double psnr_fine = 0, ssim_fine = 0;
  double seconds_coarse = 0, seconds_fine = 0;

  double delta_psnr() const { return psnr_fine - psnr_coarse; }
  double delta_ssim() const { return ssim_fine - ssim_coarse; }
};

struct MetricReport {
  std::string method;
  std::vector<SceneMetrics> scenes;

  /// Arithmetic mean of every column, named "mean".
  SceneMetrics mean() const {
    SceneMetrics m{"mean"};
    if (scenes.empty()) return m;
    for (const auto& s : scenes) {
      m.psnr_coarse += s.psnr_coarse;
      m.ssim_coarse += s.ssim_coarse;
      m.psnr_fine += s.psnr_fine;
      m.ssim_fine += s.ssim_fine;
      m.seconds_coarse += s.seconds_coarse;
      m.seconds_fine += s.seconds_fine;
    }
    const double n = double(scenes.size());
    m.psnr_coarse /= n;
    m.ssim_coarse /= n;
    m.psnr_fine /= n;
    m.ssim_fine /= n;
    m.seconds_coarse /= n;
    m.seconds_fine /= n;
    return m;
  }
};

struct EvalOptions {
  Backbone backbone = Backbone::gaptv;
  bool bypass = false;  // report the coarse output as the enhanced one
  sci::GapTvOptions gaptv;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Coarse reconstruction by the chosen backbone, enhancement by `model`,
/// PSNR/SSIM of both against the truth. `model` may be null when bypassing;
/// `basenet` is needed for the basenet backbone only.
inline MetricReport evaluate(const std::vector<EvalScene>& scenes, const sci::MaskSet<float>& masks,
                             nets::MadyGraphModel<float>* model, const nets::BaseNet<float>* basenet,
                             const EvalOptions& opt) {
  if (!opt.bypass && !model) throw std::invalid_argument("evaluate: no enhancement model given");
  MetricReport report{to_string(opt.backbone) + (opt.bypass ? "" : "+madygraph"), {}};
  for (const auto& s : scenes) {
    if (s.truth.numel() == 0) throw std::invalid_argument("evaluate: scene '" + s.name + "' has no ground truth");
    mdg::detail::require_shape(s.truth.shape() == masks.masks.shape(), "evaluate: scene '" + s.name + "' truth " +
                                                                            mdg::to_string(s.truth.shape()) +
                                                                            " does not match masks " +
                                                                            mdg::to_string(masks.masks.shape()));
    SceneMetrics row{s.name};
    const sci::Measurement<float> m{s.y, 0.0};
    auto t0 = std::chrono::steady_clock::now();
    Tensor<float> coarse;
    switch (opt.backbone) {
      case Backbone::gaptv: coarse = sci::gap_tv_reconstruct(m, masks, opt.gaptv).video.frames; break;
      case Backbone::basenet:
        if (!basenet) throw std::invalid_argument("evaluate: basenet backbone needs a trained BaseNet");
        coarse = (*basenet)(s.y, masks.masks).value();
        break;
      case Backbone::import:
        if (!s.coarse) throw std::invalid_argument("evaluate: scene '" + s.name + "' has no imported coarse video");
        coarse = *s.coarse;
        break;
    }
    row.seconds_coarse = detail::seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    Tensor<float> fine = opt.bypass ? coarse : model->forward(s.y, masks.masks, constant(coarse)).fine.value();
    row.seconds_fine = opt.bypass ? 0.0 : detail::seconds_since(t0);
    row.psnr_coarse = metrics::psnr(coarse, s.truth);
    row.ssim_coarse = metrics::ssim(coarse, s.truth);
    row.psnr_fine = metrics::psnr(fine, s.truth);
    row.ssim_fine = metrics::ssim(fine, s.truth);
    report.scenes.push_back(row);
  }
  return report;
}

/// `count` synthetic held-out scenes measured through `masks`.
inline std::vector<EvalScene> synthetic_scenes(const train::SyntheticSceneSpec& spec, std::uint64_t seed,
                                               std::size_t count, const sci::MaskSet<float>& masks,
                                               double noise_sigma = 0) {
  std::vector<EvalScene> out;
  auto generated = train::gen_synthetic_batch<float>(spec, seed, count);
  for (std::size_t i = 0; i < generated.size(); ++i) {
    auto m = sci::forward_measure(generated[i].video, masks, noise_sigma, mix_seed(seed, 0x6e6f6973 + i));
    out.push_back({"scene_" + std::to_string(i), std::move(generated[i].video.frames), std::move(m.y), {}});
  }
  return out;
}

inline constexpr const char* kReportHeader =
    "scene,psnr_coarse,ssim_coarse,psnr_fine,ssim_fine,delta_psnr,delta_ssim,seconds_coarse,seconds_fine";

/// One row per scene followed by a "mean" row.
inline void write_csv(const MetricReport& r, std::ostream& os) {
  os << kReportHeader << '\n';
  const auto prec = os.precision(10);
  auto row = [&](const SceneMetrics& s) {
    os << s.name << ',' << s.psnr_coarse << ',' << s.ssim_coarse << ',' << s.psnr_fine << ',' << s.ssim_fine << ','
       << s.delta_psnr() << ',' << s.delta_ssim() << ',' << s.seconds_coarse << ',' << s.seconds_fine << '\n';
  };
  for (const auto& s : r.scenes) row(s);
  row(r.mean());
  os.precision(prec);
}

inline nlohmann::json to_json(const SceneMetrics& s) {
  return {{"scene", s.name},           {"psnr_coarse", s.psnr_coarse},       {"ssim_coarse", s.ssim_coarse},
          {"psnr_fine", s.psnr_fine},  {"ssim_fine", s.ssim_fine},           {"delta_psnr", s.delta_psnr()},
          {"delta_ssim", s.delta_ssim()}, {"seconds_coarse", s.seconds_coarse}, {"seconds_fine", s.seconds_fine}};
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : r.scenes) scenes.push_back(to_json(s));
  return {{"method", r.method}, {"scenes", scenes}, {"mean", to_json(r.mean())}};
}

/// Everything needed to re-execute a CLI run.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;  // full argv
  config::KeyValues config;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs, outputs;
  int threads = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["arguments"] = arguments;
    j["config"] = config.entries();
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["threads"] = threads;
    j["version"] = kVersion;
    return j;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace mdg::eval
