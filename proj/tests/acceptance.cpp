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
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion (plus
// indented detail lines), mirrors them into acceptance_report.txt in the
// working directory and exits nonzero if any criterion fails.
//
//   acceptance [--only 1,2,5] [--work DIR] [--threads N]
//
// --overfit-steps / --plug-steps shorten the training criteria for smoke runs;
// such runs never report PASS for criteria 6 and 7.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "aggregation_oracle.hpp"
#include "madygraph/evaluation.hpp"
#include "madygraph/parallel.hpp"
#include "micro_instance.hpp"
#include "primitive_suite.hpp"

namespace fs = std::filesystem;
using namespace mdg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;

  template <class... Args>
  void note(Args&&... args) {
    std::ostringstream os;
    os.precision(6);
    (os << ... << args);
    details.push_back(os.str());
    std::cout << "    " << details.back() << std::endl;
  }
};

struct Settings {
  fs::path work;
  int threads = 0;
};

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite(const Settings&) {
  Outcome o;
  const auto t0 = Clock::now();
  using namespace testing_primitives;
  double worst64 = 0, worst32 = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x64 = avoid_kinks(rand_tensor<double>({2, 3, 2, 2}, 1000 + seed));
    for (auto& [name, fn] : primitive_suite<double>(seed)) worst64 = std::max(worst64, grad_check<double>(fn, x64, 1e-4));
    auto x32 = avoid_kinks(rand_tensor<float>({2, 3, 2, 2}, 2000 + seed));
    auto single = primitive_suite<float>(seed);
    auto twins = primitive_suite<double>(seed);
    for (std::size_t i = 0; i < single.size(); ++i)
      worst32 = std::max(worst32, grad_check(single[i].second, twins[i].second, x32, 1e-3));
  }
  o.note("primitives, 20 seeds: max rel error f64 ", worst64, ", f32 ", worst32);

  // Full pipeline, f64.
  auto m = testing_micro::micro_instance();
  double micro64 = 0;
  std::string worst_name;
  for (const auto& c : testing_micro::check_micro_gradients(m))
    if (c.result.max_rel_error >= micro64) micro64 = c.result.max_rel_error, worst_name = c.parameter;
  o.note("madygraph_forward micro-instance f64: max rel error ", micro64, " (", worst_name, ")");

  // Full pipeline, f32 analytic against central differences of the f64 twin
  // holding the same (f32-rounded) values.
  nets::MadyGraphModel<float> fm(testing_micro::micro_config());
  auto fp = fm.named_parameters();
  auto dp = m.model.named_parameters();
  for (std::size_t i = 0; i < fp.size(); ++i) {
    fp[i].second->value() = dp[i].second->value().cast<float>();
    dp[i].second->value() = fp[i].second->value().cast<double>();
  }
  auto round32 = [](Tensor<double>& t) { t = t.cast<float>().cast<double>(); };
  round32(m.y);
  round32(m.coarse);
  round32(m.probe);
  Tensor<double> flow64 = m.model.estimate_flow(m.coarse);
  round32(flow64);
  const Tensor<float> flow32 = flow64.cast<float>(), y32 = m.y.cast<float>(), masks32 = m.masks.cast<float>(),
                      probe32 = m.probe.cast<float>();
  Parameter<float> coarse32(m.coarse.cast<float>());
  Tensor<double> coarse64 = m.coarse;
  auto f32 = [&] {
    return sum(mul(fm.forward(y32, masks32, coarse32.var(), flow32).fine, constant(probe32)));
  };
  auto f64 = [&] {
    return double(sum(mul(m.model.forward(m.y, m.masks, constant(coarse64), flow64).fine, constant(m.probe))).item());
  };
  double micro32 = 0;
  for (std::size_t k = 0; k <= fp.size(); ++k) {
    Parameter<float>& p32 = k < fp.size() ? *fp[k].second : coarse32;
    Tensor<double>& v64 = k < fp.size() ? dp[k].second->value() : coarse64;
    auto probe = [&](std::size_t i, double step) {
      const double saved = v64[i];
      v64[i] = saved + step;
      const double r = f64();
      v64[i] = saved;
      return r;
    };
    const auto r = grad_check_parameter<float>(f32, p32, 1e-6, probe, 1e-3);
    micro32 = std::max(micro32, r.max_rel_error);
  }
  o.note("madygraph_forward micro-instance f32: max rel error ", micro32);
  const double secs = seconds_since(t0);
  o.note("runtime ", secs, " s (limit 120 s)");
  o.pass = worst64 < 1e-5 && micro64 < 1e-5 && worst32 < 1e-3 && micro32 < 1e-3 && secs < 120;
  return o;
}

// ---------------------------------------------------------------------------
// 2. Forward-model round trip

Outcome round_trip(const Settings&) {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = 8 + std::size_t(unit_uniform(rng) * 57), w = 8 + std::size_t(unit_uniform(rng) * 57);
    const std::size_t b = 2 + std::size_t(unit_uniform(rng) * 7);
    Tensor<float> x({h, w, b});
    for (auto& v : x.data()) v = float(unit_uniform(rng));
    const auto masks = sci::generate_masks<float>(h, w, b, rng(), 0.2 + 0.8 * unit_uniform(rng));
    const sci::VideoCube<float> video{x, sci::CubeRole::ground_truth};
    const auto re = sci::remask(sci::forward_measure(video, masks, 0.0).y, constant(x), masks.masks).value();
    for (std::size_t k = 0; k < x.numel(); ++k)
      worst = std::max(worst, std::abs(double(re[k]) - double(x[k]) * double(masks.masks[k])));
  }
  const double secs = seconds_since(t0);
  o.note("100 scenes (f32): max |remask - X*M| = ", worst, ", ", secs, " s");
  o.pass = worst <= 1e-6 && secs < 5;
  return o;
}

// ---------------------------------------------------------------------------
// 3. Aggregation oracle

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Outcome aggregation_oracle(const Settings&) {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3);
  double worst = 0, worst_w = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t h = 4 + std::size_t(unit_uniform(rng) * 13), w = 4 + std::size_t(unit_uniform(rng) * 13);
    const std::size_t b = 2 + std::size_t(unit_uniform(rng) * 3), c = 2 + std::size_t(unit_uniform(rng) * 7);
    auto inst = testing_oracle::random_instance(h, w, b, c, rng(), true, i % 2 == 1);
    Tensor<float> weights;
    auto out = agg::aggregate_pass(Var<float>(inst.h.cast<float>()), testing_oracle::to_float(inst.neighborhood),
                                   *testing_oracle::to_float_params(inst.params), &weights);
    const auto oracle = testing_oracle::brute_force_pass(inst);
    worst = std::max(worst, max_abs_diff(out.value().cast<double>(), oracle.out));
    worst_w = std::max(worst_w, max_abs_diff(weights.cast<double>(), oracle.weights));
  }
  const double secs = seconds_since(t0);
  o.note("20 instances <= 16x16x4, C <= 8 (f32 kernel vs f64 loops): max |out diff| ", worst, ", max |weight diff| ",
         worst_w, ", ", secs, " s");
  o.pass = worst <= 1e-5 && worst_w <= 1e-5 && secs < 60;
  return o;
}

// ---------------------------------------------------------------------------
// 4. Normalization / convexity

Outcome normalization(const Settings&) {
  Outcome o;
  std::mt19937_64 rng(4);
  double worst_sum = 0, worst_hull = 0;
  std::size_t nodes = 0;
  for (int i = 0; nodes < 1000; ++i) {
    auto inst = testing_oracle::random_instance(6, 6, 3, 4, 400 + i, true, i % 2 == 1);
    Tensor<double> wts;
    auto out = agg::aggregate_pass(Var<double>(inst.h), inst.neighborhood, inst.params, &wts);
    const auto oracle = testing_oracle::brute_force_pass(inst);
    const std::size_t nbr = wts.dim(3) * wts.dim(4) * wts.dim(5), c = inst.h.dim(3);
    for (int k = 0; k < 100 && nodes < 1000; ++k, ++nodes) {
      const std::size_t node = std::size_t(unit_uniform(rng) * double(wts.numel() / nbr));
      double total = 0;
      for (std::size_t j = 0; j < nbr; ++j) total += wts[node * nbr + j];
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t e = node * c + ch;
        worst_hull = std::max({worst_hull, oracle.msg_min[e] - out.value()[e], out.value()[e] - oracle.msg_max[e]});
      }
    }
  }
  o.note(nodes, " nodes: max |sum w - 1| = ", worst_sum, ", max hull violation = ", worst_hull);
  o.pass = worst_sum <= 1e-6 && worst_hull <= 0;
  return o;
}

// ---------------------------------------------------------------------------
// 5 and 10. Overfit run

struct OverfitRun {
  std::size_t steps = 0;
  double psnr_fine = 0, psnr_coarse = 0, psnr_baseline = 0;
  double seconds = 0;
  std::vector<double> losses;
  fs::path checkpoint;
};

std::size_t kOverfitSteps = 2000;
constexpr std::size_t kOverfitCheckEvery = 25;

train::TrainConfig overfit_config() {
  train::TrainConfig cfg;
  cfg.scenes = 1;
  cfg.noise_sigma = 0;
  cfg.seed = 5;
  cfg.iterations = kOverfitSteps;
  return cfg;
}

// Trains until the fine output of the current weights reaches 35 dB and beats
// the coarse one by 1 dB (evaluated every kOverfitCheckEvery steps) or the
// step budget runs out.
OverfitRun overfit(const fs::path& dir) {
  OverfitRun r;
  const auto t0 = Clock::now();
  train::Trainer t(overfit_config());
  const Tensor<float> truth = t.pool().front();
  const auto m = sci::forward_measure(sci::VideoCube<float>{truth, sci::CubeRole::ground_truth}, t.masks(), 0.0);
  auto evaluate = [&] {
    auto coarse = t.model().basenet(m.y, t.masks().masks);
    auto fine = t.model().madygraph.forward(m.y, t.masks().masks, coarse).fine;
    r.psnr_coarse = metrics::psnr(coarse.value(), truth);
    r.psnr_fine = metrics::psnr(fine.value(), truth);
  };
  r.psnr_baseline = metrics::psnr(nets::normalized_measurement(m.y, t.masks().masks), truth);
  fs::remove_all(dir);
  t.run(dir, [&](const train::StepRecord& s) {
    r.losses.push_back(s.loss_fine + s.loss_coarse);
    r.steps = s.step;
    if (s.step % kOverfitCheckEvery) return true;
    evaluate();
    if (s.step % 250 == 0)
      std::cout << "      step " << s.step << ": fine " << r.psnr_fine << " dB, coarse " << r.psnr_coarse << " dB"
                << std::endl;
    return !(r.psnr_fine >= 35.0 && r.psnr_fine - r.psnr_coarse >= 1.0);
  });
  evaluate();
  r.seconds = seconds_since(t0);
  r.checkpoint = dir / "final";
  return r;
}

double window_mean(const std::vector<double>& v, std::size_t end, std::size_t window) {
  const std::size_t begin = end >= window ? end - window : 0;
  return std::accumulate(v.begin() + long(begin), v.begin() + long(end), 0.0) / double(end - begin);
}

std::optional<OverfitRun> first_overfit;

Outcome overfit_criterion(const Settings& s) {
  Outcome o;
  const OverfitRun r = overfit(s.work / "overfit_a");
  first_overfit = r;
  const int threads = num_threads();
  o.note("stopped after ", r.steps, " steps: fine ", r.psnr_fine, " dB, coarse ", r.psnr_coarse, " dB (gap ",
         r.psnr_fine - r.psnr_coarse, " dB)");
  // The budget is stated for 8 threads; it is compared in thread-minutes.
  const double minutes = r.seconds / 60, budget = 30.0 * 8 / threads;
  o.note("wall ", minutes, " min on ", threads, " thread(s); budget 30 min at 8 threads = ", budget, " min here");
  o.note("property: coarse beats the normalized-measurement baseline (", r.psnr_baseline, " dB) by ",
         r.psnr_coarse - r.psnr_baseline, " dB (want >= 3)");
  if (r.losses.size() >= 1000)
    o.note("property: smoothed loss (window 50) step 1000 ", window_mean(r.losses, 1000, 50), " < step 50 ",
           window_mean(r.losses, 50, 50));
  o.pass = r.psnr_fine >= 35.0 && r.psnr_fine - r.psnr_coarse >= 1.0 && r.steps <= 2000 && minutes <= budget;
  return o;
}

bool same_files(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (!names.count(e.path().filename().string())) return why = "extra file " + e.path().string(), false;
  for (const auto& n : names) {
    std::ifstream fa(a / n, std::ios::binary), fb(b / n, std::ios::binary);
    if (!fb) return why = "missing " + n, false;
    const std::string da{std::istreambuf_iterator<char>(fa), {}}, db{std::istreambuf_iterator<char>(fb), {}};
    if (da != db) return why = n + " differs", false;
  }
  return true;
}

Outcome determinism(const Settings& s) {
  Outcome o;
  if (!first_overfit) first_overfit = overfit(s.work / "overfit_a");
  const OverfitRun second = overfit(s.work / "overfit_b");
  std::string why;
  const bool same = same_files(first_overfit->checkpoint, second.checkpoint, why);
  o.note("two runs, ", num_threads(), " thread(s), ", first_overfit->steps, " and ", second.steps,
         " steps: checkpoints ", same ? "bit-identical" : "differ (" + why + ")");
  o.pass = same && first_overfit->steps == second.steps;
  return o;
}

// ---------------------------------------------------------------------------
// 6 and 7. Plug-in enhancement and ablation

constexpr std::size_t kPlugCrop = 32;
constexpr std::size_t kPlugScenes = 200;
constexpr std::size_t kPlugHeldOut = 20;
constexpr std::size_t kPlugStepsDefault = 1500;
std::size_t kPlugSteps = kPlugStepsDefault;

struct Variant {
  std::string name;
  graph::Toggles toggles;
};

const std::vector<Variant>& variants() {
  static const std::vector<Variant> v{{"no-walk", {false, false, false}},
                                      {"+DW", {true, false, false}},
                                      {"+DW+CS", {true, true, false}},
                                      {"+DW+CS+MA", {true, true, true}}};
  return v;
}

train::TrainConfig plug_config(const graph::Toggles& toggles) {
  train::TrainConfig cfg;
  cfg.crop = kPlugCrop;
  cfg.scenes = kPlugScenes;
  cfg.iterations = kPlugSteps;
  cfg.seed = 6;
  cfg.model.graph.toggles = toggles;
  return cfg;
}

struct PlugResult {
  eval::MetricReport gaptv;
  double train_seconds = 0, eval_seconds = 0;
};

std::map<std::string, PlugResult> plug_results;

PlugResult& plug_run(const Settings& s, const Variant& v) {
  if (auto it = plug_results.find(v.name); it != plug_results.end()) return it->second;
  PlugResult r;
  auto t0 = Clock::now();
  train::Trainer t(plug_config(v.toggles));
  t.run(s.work / ("plugin_" + v.name), [&](const train::StepRecord& rec) {
    if (rec.step % 250 == 0)
      std::cout << "      [" << v.name << "] step " << rec.step << ": fine " << rec.psnr_fine << " dB, coarse "
                << rec.psnr_coarse << " dB" << std::endl;
    return true;
  });
  r.train_seconds = seconds_since(t0);
  t0 = Clock::now();
  // Held-out scenes come from a seed stream disjoint from the training pool.
  const auto scenes = eval::synthetic_scenes(t.config().scene_spec(), mix_seed(t.config().seed, 0x68656c64),
                                             kPlugHeldOut, t.masks());
  eval::EvalOptions opt;
  opt.backbone = eval::Backbone::gaptv;
  r.gaptv = eval::evaluate(scenes, t.masks(), &t.model().madygraph, &t.model().basenet, opt);
  r.eval_seconds = seconds_since(t0);
  std::ofstream csv(s.work / ("plugin_" + v.name) / "report_gaptv.csv");
  eval::write_csv(r.gaptv, csv);
  return plug_results[v.name] = std::move(r);
}

Outcome plugin(const Settings& s) {
  Outcome o;
  const auto& r = plug_run(s, variants().back());
  const auto mean = r.gaptv.mean();
  o.note(kPlugScenes, " training scenes ", kPlugCrop, "x", kPlugCrop, "x8, ", kPlugSteps, " steps; ", kPlugHeldOut,
         " held-out scenes");
  o.note("GAP-TV ", mean.psnr_coarse, " dB -> +MadyGraph ", mean.psnr_fine, " dB (delta ", mean.delta_psnr(),
         " dB, want >= 0.3); SSIM ", mean.ssim_coarse, " -> ", mean.ssim_fine);
  const double minutes = (r.train_seconds + r.eval_seconds) / 60;
  o.note("wall ", minutes, " min (limit 120)");
  o.pass = mean.delta_psnr() >= 0.3 && minutes <= 120 && kPlugSteps == kPlugStepsDefault;
  return o;
}

Outcome ablation(const Settings& s) {
  Outcome o;
  std::vector<double> psnr;
  for (const auto& v : variants()) {
    const auto mean = plug_run(s, v).gaptv.mean();
    psnr.push_back(mean.psnr_fine);
    o.note(v.name, ": GAP-TV + MadyGraph ", mean.psnr_fine, " dB");
  }
  bool ok = psnr[1] > psnr[0];
  for (std::size_t i = 2; i < psnr.size(); ++i) ok = ok && psnr[i] >= psnr[i - 1] - 0.05;
  o.pass = ok && kPlugSteps == kPlugStepsDefault;
  return o;
}

// ---------------------------------------------------------------------------
// 8. Complexity

Outcome complexity(const Settings&) {
  Outcome o;
  nets::ModelConfig cfg;
  std::vector<double> xs, ys;
  for (std::size_t side : {32, 64, 128}) {
    std::mt19937_64 rng(8);
    Tensor<float> feats({side, side, cfg.frames, cfg.channels});
    for (auto& v : feats.data()) v = float(2 * unit_uniform(rng) - 1);
    const Tensor<float> flow({side, side, cfg.frames, 2});
    const auto grid = graph::effective_grid(cfg.graph.grid, cfg.graph.toggles);
    graph::WalkHead<float> head(cfg.channels, grid.scales(), grid.neighbors());
    agg::AggregationParams<float> params(cfg.channels, cfg.frames, cfg.aggregation);
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      const Var<float> h(feats);
      auto n = graph::build_neighborhood(h, flow, cfg.graph, &head);
      auto out = agg::aggregate_pass(h, n, params);
      best = std::min(best, seconds_since(t0));
    }
    xs.push_back(std::log(double(side * side)));
    ys.push_back(std::log(best));
    o.note("N = ", side, "^2: ", best, " s");
  }
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / 3, my = std::accumulate(ys.begin(), ys.end(), 0.0) / 3;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < 3; ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
  const double slope = sxy / sxx;
  o.note("log-log slope ", slope, " (want 1.0 +- 0.15)");
  o.pass = std::abs(slope - 1.0) <= 0.15;
  return o;
}

// ---------------------------------------------------------------------------
// 9. Flow quality

Outcome flow_quality(const Settings&) {
  Outcome o;
  constexpr std::size_t kSide = 64, kMargin = 8;
  double worst = 0, total = 0;
  int cases = 0;
  for (double du = -3; du <= 3; du += 1.5)
    for (double dv = -3; dv <= 3; dv += 1.5) {
      const train::Texture tex(mix_seed(9, std::uint64_t(cases)));
      Tensor<float> a({kSide, kSide}), b({kSide, kSide});
      for (std::size_t r = 0; r < kSide; ++r)
        for (std::size_t c = 0; c < kSide; ++c) {
          a.at(r, c) = float(tex(double(r), double(c)));
          b.at(r, c) = float(tex(double(r) - dv, double(c) - du));
        }
      const auto f = motion::estimate_flow(a, b);
      double acc = 0;
      std::size_t n = 0;
      for (std::size_t r = kMargin; r + kMargin < kSide; ++r)
        for (std::size_t c = kMargin; c + kMargin < kSide; ++c, ++n)
          acc += std::hypot(double(f.u(r, c)) - du, double(f.v(r, c)) - dv);
      worst = std::max(worst, acc / double(n));
      total += acc / double(n);
      ++cases;
    }
  o.note(cases, " rigid translations with |u|,|v| <= 3 px: mean EPE ", total / cases, " px, worst case ", worst, " px");

  // Reverse-frame rule on a translating sequence: F_{B-1} ~ -F_{B-2}.
  const train::Texture tex(99);
  constexpr std::size_t kFrames = 5;
  sci::VideoCube<float> video{Tensor<float>({kSide, kSide, kFrames}), sci::CubeRole::ground_truth};
  for (std::size_t t = 0; t < kFrames; ++t)
    for (std::size_t r = 0; r < kSide; ++r)
      for (std::size_t c = 0; c < kSide; ++c)
        video.frames.at(r, c, t) = float(tex(double(r) - 1.0 * double(t), double(c) - 2.0 * double(t)));
  const auto stack = motion::build_flow_stack(video);
  double u_prev = 0, u_last = 0, v_prev = 0, v_last = 0;
  std::size_t n = 0;
  for (std::size_t r = kMargin; r + kMargin < kSide; ++r)
    for (std::size_t c = kMargin; c + kMargin < kSide; ++c, ++n) {
      u_prev += stack.fields[kFrames - 2].u(r, c);
      v_prev += stack.fields[kFrames - 2].v(r, c);
      u_last += stack.fields[kFrames - 1].u(r, c);
      v_last += stack.fields[kFrames - 1].v(r, c);
    }
  u_prev /= double(n), v_prev /= double(n), u_last /= double(n), v_last /= double(n);
  const bool sign_ok = u_prev > 1.5 && v_prev > 0.5 && std::abs(u_last + 2.0) < 0.25 && std::abs(v_last + 1.0) < 0.25;
  o.note("reverse rule: F_(B-2) mean (", u_prev, ", ", v_prev, "), F_(B-1) mean (", u_last, ", ", v_last,
         "), expected (2, 1) and (-2, -1)");
  o.pass = worst < 0.5 && sign_ok;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MadyGraph acceptance run"};
  std::string only;
  Settings s;
  s.work = fs::temp_directory_path() / "madygraph_acceptance";
  std::string work = s.work.string();
  app.add_option("--only", only, "comma-separated criterion numbers (default: all)");
  app.add_option("--work", work, "scratch directory for checkpoints");
  app.add_option("--threads", s.threads, "worker threads (0: runtime default)");
  app.add_option("--overfit-steps", kOverfitSteps, "step budget of criteria 5 and 10 (smoke runs only)");
  app.add_option("--plug-steps", kPlugSteps, "training steps of criteria 6 and 7 (smoke runs only)");
  CLI11_PARSE(app, argc, argv);
  s.work = work;
  if (s.threads > 0) set_num_threads(s.threads);
  fs::create_directories(s.work);

  const std::vector<std::pair<std::string, std::function<Outcome(const Settings&)>>> criteria{
      {"gradient suite", gradient_suite},
      {"forward-model round trip", round_trip},
      {"aggregation oracle", aggregation_oracle},
      {"normalization/convexity", normalization},
      {"overfit run", overfit_criterion},
      {"plug-in enhancement", plugin},
      {"ablation direction", ablation},
      {"complexity", complexity},
      {"flow quality", flow_quality},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (std::stringstream ss(only); ss.good();) {
    std::string tok;
    std::getline(ss, tok, ',');
    if (!tok.empty()) selected.insert(std::stoi(tok));
  }

  std::ofstream report("acceptance_report.txt", selected.empty() ? std::ios::trunc : std::ios::app);
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cout << "criterion " << id << " (" << criteria[i].first << ") running" << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(s);
    } catch (const std::exception& e) {
      o.note("error: ", e.what());
      o.pass = false;
    }
    std::ostringstream line;
    line << "criterion " << id << " (" << criteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << " ["
         << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]";
    std::cout << line.str() << std::endl;
    report << line.str() << '\n';
    for (const auto& d : o.details) report << "    " << d << '\n';
    report.flush();
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
