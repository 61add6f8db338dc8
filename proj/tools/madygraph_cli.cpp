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
// Command-line front end. Every subcommand writes its outputs and a
// run_manifest.json into --out; nothing is left behind on failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <set>

#include "madygraph/evaluation.hpp"
#include "madygraph/parallel.hpp"

namespace fs = std::filesystem;
using namespace mdg;

namespace {

constexpr const char* kConfigEnv = "MADYGRAPH_CONFIG";

// Staging directory renamed into place by commit().
class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)), tmp_(dir_.string() + ".partial") {
    if (dir_.empty()) throw std::invalid_argument("--out is required");
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~Output() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  fs::path operator/(const std::string& name) const { return tmp_ / name; }
  std::string final_path(const std::string& name) const { return fs::absolute(dir_ / name).string(); }

  void commit() {
    fs::create_directories(dir_);
    for (const auto& e : fs::directory_iterator(tmp_)) {
      const fs::path target = dir_ / e.path().filename();
      fs::remove_all(target);
      fs::rename(e.path(), target);
    }
    fs::remove_all(tmp_);
    committed_ = true;
  }

 private:
  fs::path dir_, tmp_;
  bool committed_ = false;
};

struct Common {
  std::string config_path;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string out;
  bool f64_checks = false;
};

struct Context {
  std::vector<std::string> argv;
  Common common;

  config::KeyValues config() const {
    std::string path = common.config_path;
    if (path.empty())
      if (const char* env = std::getenv(kConfigEnv)) path = env;
    if (path.empty()) return {};
    auto kv = config::KeyValues::load(path);
    kv.require_known(known_keys());
    return kv;
  }

  static std::set<std::string> known_keys() {
    config::KeyValues defaults;
    train::TrainConfig{}.write(defaults);
    std::set<std::string> keys{"gaptv.iterations", "gaptv.tv_weight", "gaptv.tv_inner"};
    for (const auto& [k, v] : defaults.entries()) keys.insert(k);
    return keys;
  }

  std::string config_source() const {
    if (!common.config_path.empty()) return common.config_path;
    const char* env = std::getenv(kConfigEnv);
    return env ? env : "";
  }

  eval::RunManifest manifest(const std::string& command) const {
    eval::RunManifest m;
    m.command = command;
    m.arguments = argv;
    m.config = config();
    m.threads = num_threads();
    m.inputs["working_directory"] = fs::current_path().string();
    m.seeds["seed"] = common.seed;
    if (!config_source().empty()) m.inputs["config"] = fs::absolute(config_source()).string();
    return m;
  }
};

void add_common(CLI::App* sub, Common& c, bool with_seed = false) {
  sub->add_option("--config", c.config_path, "key=value config file (default: $MADYGRAPH_CONFIG)");
  sub->add_option("--threads", c.threads, "worker threads (0: runtime default)");
  sub->add_option("--out", c.out, "output directory")->required();
  if (with_seed) sub->add_option("--seed", c.seed, "random seed");
}

Tensor<float> load_tensor(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::invalid_argument("missing --" + what);
  if (!fs::exists(path)) throw std::runtime_error(what + " file not found: " + path);
  return tns::load<float>(path);
}

sci::MaskSet<float> masks_from(const std::string& path, const train::TrainedModel* trained) {
  if (!path.empty()) return {load_tensor(path, "masks"), sci::MaskKind::binary};
  if (trained) return trained->masks;
  throw std::invalid_argument("missing --masks");
}

sci::GapTvOptions gaptv_options(const config::KeyValues& kv) {
  sci::GapTvOptions o;
  o.iterations = kv.get("gaptv.iterations", o.iterations);
  o.tv_weight = kv.get("gaptv.tv_weight", o.tv_weight);
  o.tv_inner = kv.get("gaptv.tv_inner", o.tv_inner);
  return o;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::size_t h = 64, w = 64, b = 8, objects = 3;
  double max_speed = 2.0, noise_sigma = 0, mask_density = 0.5;
  std::string masks;
};

void run_simulate(const Context& ctx, const SimulateArgs& a) {
  Output out(ctx.common.out);
  train::SyntheticSceneSpec spec;
  spec.height = a.h;
  spec.width = a.w;
  spec.frames = a.b;
  spec.objects = a.objects;
  spec.max_speed = a.max_speed;
  auto scene = train::gen_synthetic_batch<float>(spec, ctx.common.seed).front();
  const auto masks = a.masks.empty()
                         ? sci::generate_masks<float>(a.h, a.w, a.b, mix_seed(ctx.common.seed, 1), a.mask_density)
                         : sci::MaskSet<float>{load_tensor(a.masks, "masks"), sci::MaskKind::binary};
  const auto m = sci::forward_measure(scene.video, masks, a.noise_sigma, mix_seed(ctx.common.seed, 2));
  tns::save(scene.video.frames, out / "truth.tns");
  tns::save(masks.masks, out / "masks.tns");
  tns::save(m.y, out / "measurement.tns");
  motion::export_flow_stack(scene.flow, out / "flow.tns");
  auto man = ctx.manifest("simulate");
  if (!a.masks.empty()) man.inputs["masks"] = a.masks;
  for (const char* f : {"truth.tns", "masks.tns", "measurement.tns", "flow.tns"}) man.outputs[f] = out.final_path(f);
  man.write(out / "run_manifest.json");
  out.commit();
}

struct ReconArgs {
  std::string measurement, masks, coarse, checkpoint, flow;
  bool bypass = false;
};

void run_gaptv(const Context& ctx, const ReconArgs& a) {
  Output out(ctx.common.out);
  const sci::MaskSet<float> masks = masks_from(a.masks, nullptr);
  const sci::Measurement<float> m{load_tensor(a.measurement, "measurement"), 0.0};
  const auto r = sci::gap_tv_reconstruct(m, masks, gaptv_options(ctx.config()));
  tns::save(r.video.frames, out / "coarse.tns");
  auto man = ctx.manifest("gaptv");
  man.inputs.insert({{"measurement", a.measurement}, {"masks", a.masks}});
  man.outputs["coarse"] = out.final_path("coarse.tns");
  man.write(out / "run_manifest.json");
  out.commit();
}

train::TrainedModel load_model(const std::string& checkpoint) {
  if (checkpoint.empty()) throw std::invalid_argument("missing --checkpoint");
  if (!fs::exists(fs::path(checkpoint) / nets::kManifestName))
    throw std::runtime_error("checkpoint not found: " + checkpoint);
  return train::load_trained(checkpoint);
}

void run_basenet(const Context& ctx, const ReconArgs& a) {
  Output out(ctx.common.out);
  auto trained = load_model(a.checkpoint);
  const auto masks = masks_from(a.masks, &trained);
  const auto y = load_tensor(a.measurement, "measurement");
  tns::save(trained.model->basenet(y, masks.masks).value(), out / "coarse.tns");
  auto man = ctx.manifest("basenet");
  man.inputs.insert({{"checkpoint", a.checkpoint}, {"measurement", a.measurement}, {"masks", a.masks}});
  man.outputs["coarse"] = out.final_path("coarse.tns");
  man.write(out / "run_manifest.json");
  out.commit();
}

// Largest |fine_f32 - fine_f64| with the same parameters in double precision.
double f64_discrepancy(nets::MadyGraphModel<float>& model, const Tensor<float>& y, const Tensor<float>& masks,
                       const Tensor<float>& coarse, const Tensor<float>& flow, const Tensor<float>& fine) {
  nets::MadyGraphModel<double> twin(model.config());
  auto src = model.named_parameters();
  auto dst = twin.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second->value() = src[i].second->value().cast<double>();
  const auto fine64 =
      twin.forward(y.cast<double>(), masks.cast<double>(), constant(coarse.cast<double>()), flow.cast<double>())
          .fine.value();
  double worst = 0;
  for (std::size_t i = 0; i < fine.numel(); ++i) worst = std::max(worst, std::abs(double(fine[i]) - fine64[i]));
  return worst;
}

void run_enhance(const Context& ctx, const ReconArgs& a) {
  Output out(ctx.common.out);
  auto trained = load_model(a.checkpoint);
  const auto masks = masks_from(a.masks, &trained);
  const auto y = load_tensor(a.measurement, "measurement");
  const auto coarse = load_tensor(a.coarse, "coarse");
  auto& model = trained.model->madygraph;
  std::optional<Tensor<float>> flow;
  if (!a.flow.empty())
    flow = motion::to_model_tensor(motion::import_flow_stack<float>(a.flow, model.config().flow.max_displacement));
  auto man = ctx.manifest("enhance");
  Tensor<float> fine = coarse;
  if (!a.bypass) {
    auto r = model.forward(y, masks.masks, constant(coarse), flow);
    fine = r.fine.value();
    if (ctx.common.f64_checks) {
      const double d = f64_discrepancy(model, y, masks.masks, coarse, r.flow, fine);
      std::cerr << "f64 check: max |f32 - f64| = " << d << '\n';
      man.config.set("f64_check.max_abs_diff", d);
    }
  }
  tns::save(fine, out / "fine.tns");
  man.inputs.insert({{"checkpoint", a.checkpoint}, {"measurement", a.measurement}, {"masks", a.masks},
                {"coarse", a.coarse},         {"flow", a.flow}});
  man.outputs["fine"] = out.final_path("fine.tns");
  man.write(out / "run_manifest.json");
  out.commit();
}

struct FlowArgs {
  std::string video;
  bool png = false;
};

motion::FlowParams flow_params(const config::KeyValues& kv) {
  motion::FlowParams p;
  p.levels = kv.get("flow.levels", p.levels);
  p.alpha = kv.get("flow.alpha", p.alpha);
  p.iterations = kv.get("flow.iterations", p.iterations);
  p.warps = kv.get("flow.warps", p.warps);
  p.max_displacement = kv.get("flow.max_displacement", p.max_displacement);
  return p;
}

void run_flow(const Context& ctx, const FlowArgs& a) {
  Output out(ctx.common.out);
  const auto params = flow_params(ctx.config());
  const auto video = load_tensor(a.video, "video");
  const auto stack = motion::build_flow_stack(sci::VideoCube<float>{video, sci::CubeRole::coarse}, params);
  motion::export_flow_stack(stack, out / "flow.tns");
  auto man = ctx.manifest("flow");
  man.inputs["video"] = a.video;
  man.outputs["flow"] = out.final_path("flow.tns");
  if (a.png)
    for (std::size_t b = 0; b < stack.size(); ++b) {
      const std::string name = "flow_" + std::to_string(b) + ".png";
      io::write_png(io::flow_to_image(stack.fields[b].uv, params.max_displacement), out / name);
      man.outputs[name] = out.final_path(name);
    }
  man.write(out / "run_manifest.json");
  out.commit();
}

struct TrainArgs {
  std::string resume;
  std::optional<std::size_t> iterations;
};

void run_train(const Context& ctx, const TrainArgs& a, bool seed_given) {
  auto kv = ctx.config();
  auto cfg = train::TrainConfig::read(kv);
  if (seed_given) cfg.seed = ctx.common.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  const fs::path out = ctx.common.out;
  fs::create_directories(out);
  train::Trainer trainer(cfg);
  if (!a.resume.empty()) trainer.resume(a.resume);
  auto man = ctx.manifest("train");
  cfg.write(man.config);
  man.seeds["seed"] = cfg.seed;
  man.inputs["resume"] = a.resume;
  man.outputs = {{"log", (out / "train_log.csv").string()}, {"checkpoint", (out / "final").string()}};
  man.write(out / "run_manifest.json");
  trainer.run(out, [](const train::StepRecord& r) {
    if (r.step % 50 == 0)
      std::cerr << "step " << r.step << " loss " << r.loss_fine << " psnr fine " << r.psnr_fine << " coarse "
                << r.psnr_coarse << '\n';
    return true;
  });
}

struct EvalArgs {
  std::string pred, truth, checkpoint, backbone = "gaptv";
  std::vector<std::string> scenes;
  std::size_t synthetic = 0;
  bool bypass = false;
};

// A simulate output directory: truth.tns, measurement.tns, optional coarse.tns.
eval::EvalScene scene_from_dir(const fs::path& dir) {
  eval::EvalScene s{dir.filename().string(), {}, {}, {}};
  if (!fs::exists(dir / "truth.tns")) throw std::runtime_error("scene " + dir.string() + " has no truth.tns");
  s.truth = tns::load<float>(dir / "truth.tns");
  s.y = load_tensor((dir / "measurement.tns").string(), "measurement");
  if (fs::exists(dir / "coarse.tns")) s.coarse = tns::load<float>(dir / "coarse.tns");
  return s;
}

void run_eval(const Context& ctx, const EvalArgs& a) {
  Output out(ctx.common.out);
  auto man = ctx.manifest("eval");
  eval::MetricReport report;
  if (!a.pred.empty()) {
    const auto pred = load_tensor(a.pred, "pred"), truth = load_tensor(a.truth, "truth");
    eval::SceneMetrics row{fs::path(a.pred).stem().string()};
    row.psnr_coarse = row.psnr_fine = metrics::psnr(pred, truth);
    row.ssim_coarse = row.ssim_fine = metrics::ssim(pred, truth);
    report = {"import", {row}};
    man.inputs.insert({{"pred", a.pred}, {"truth", a.truth}});
  } else {
    auto trained = load_model(a.checkpoint);
    std::vector<eval::EvalScene> scenes;
    for (const auto& d : a.scenes) scenes.push_back(scene_from_dir(d));
    if (a.synthetic) {
      auto spec = trained.config.scene_spec();
      for (auto& s : eval::synthetic_scenes(spec, ctx.common.seed, a.synthetic, trained.masks)) scenes.push_back(s);
    }
    if (scenes.empty()) throw std::invalid_argument("eval: give --pred/--truth, --scene or --synthetic");
    eval::EvalOptions opt{eval::parse_backbone(a.backbone), a.bypass, gaptv_options(ctx.config())};
    report = eval::evaluate(scenes, trained.masks, &trained.model->madygraph, &trained.model->basenet, opt);
    man.inputs["checkpoint"] = a.checkpoint;
    for (std::size_t i = 0; i < a.scenes.size(); ++i) man.inputs["scene" + std::to_string(i)] = a.scenes[i];
  }
  std::ofstream csv(out / "report.csv");
  eval::write_csv(report, csv);
  csv.close();
  std::ofstream json(out / "report.json");
  json << eval::to_json(report).dump(2) << '\n';
  json.close();
  eval::write_csv(report, std::cout);
  man.outputs = {{"csv", out.final_path("report.csv")}, {"json", out.final_path("report.json")}};
  man.write(out / "run_manifest.json");
  out.commit();
}

struct DumpArgs {
  ReconArgs recon;
  std::vector<std::string> queries;
  double min_weight = 0.2;
};

std::array<std::size_t, 3> parse_query(const std::string& s) {
  std::array<std::size_t, 3> q{};
  std::istringstream in(s);
  char c1 = 0, c2 = 0;
  if (!(in >> q[0] >> c1 >> q[1] >> c2 >> q[2]) || c1 != ',' || c2 != ',')
    throw std::invalid_argument("--query expects row,col,frame; got '" + s + "'");
  return q;
}

void run_dump_graph(const Context& ctx, const DumpArgs& a) {
  Output out(ctx.common.out);
  auto trained = load_model(a.recon.checkpoint);
  const auto masks = masks_from(a.recon.masks, &trained);
  const auto y = load_tensor(a.recon.measurement, "measurement");
  const auto coarse = load_tensor(a.recon.coarse, "coarse");
  auto& model = trained.model->madygraph;
  auto r = model.forward(y, masks.masks, constant(coarse), std::nullopt, true);
  const auto grid = graph::effective_grid(model.config().graph.grid, model.config().graph.toggles);
  const graph::Neighborhood<float> n{constant(r.positions), grid.scales(), grid.neighbors()};
  std::vector<std::array<std::size_t, 3>> queries;
  for (const auto& q : a.queries) queries.push_back(parse_query(q));
  if (queries.empty()) queries.push_back({coarse.dim(0) / 2, coarse.dim(1) / 2, 0});
  std::ofstream csv(out / "graph.csv");
  graph::dump_csv(csv, n, queries, &r.weights, a.min_weight);
  csv.close();
  auto man = ctx.manifest("dump-graph");
  man.inputs.insert({{"checkpoint", a.recon.checkpoint}, {"measurement", a.recon.measurement}, {"coarse", a.recon.coarse}});
  man.outputs["graph"] = out.final_path("graph.csv");
  man.write(out / "run_manifest.json");
  out.commit();
}

struct ExportArgs {
  std::string input, format = "png";
  double max_magnitude = 8.0;
};

void run_export_frames(const Context& ctx, const ExportArgs& a) {
  if (a.format != "png" && a.format != "pgm") throw std::invalid_argument("--format must be png or pgm");
  Output out(ctx.common.out);
  const auto t = load_tensor(a.input, "input");
  auto man = ctx.manifest("export-frames");
  man.inputs["input"] = a.input;
  if (t.ndim() == 3) {
    for (std::size_t b = 0; b < t.dim(2); ++b) {
      const std::string name = "frame_" + std::to_string(b) + "." + a.format;
      io::write_gray(io::frame_to_image(t, b), out / name);
      man.outputs[name] = out.final_path(name);
    }
  } else if (t.ndim() == 4 && t.dim(2) == 2) {
    if (a.format != "png") throw std::invalid_argument("flow stacks export as png only");
    const auto stack = motion::from_file_tensor(t);
    for (std::size_t b = 0; b < stack.size(); ++b) {
      const std::string name = "flow_" + std::to_string(b) + ".png";
      io::write_png(io::flow_to_image(stack.fields[b].uv, a.max_magnitude), out / name);
      man.outputs[name] = out.final_path(name);
    }
  } else {
    throw ShapeError("export-frames: expected a video (H,W,B) or flow stack (H,W,2,B), got " + to_string(t.shape()));
  }
  man.write(out / "run_manifest.json");
  out.commit();
}

void add_recon_inputs(CLI::App* sub, ReconArgs& a, bool checkpoint, bool coarse) {
  sub->add_option("--measurement", a.measurement, "measurement (H,W) .tns")->required();
  sub->add_option("--masks", a.masks, checkpoint ? "masks .tns (default: the checkpoint's)" : "masks .tns");
  if (checkpoint) sub->add_option("--checkpoint", a.checkpoint, "training checkpoint directory")->required();
  if (coarse) sub->add_option("--coarse", a.coarse, "coarse video (H,W,B) .tns")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MadyGraph: video snapshot compressive imaging reconstruction and enhancement"};
  app.require_subcommand(1);
  app.set_version_flag("--version", eval::kVersion);
  Context ctx;
  ctx.argv.assign(argv, argv + argc);
  Common& c = ctx.common;

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "render a synthetic scene and its coded measurement");
  simulate->set_help_flag("--help", "print this help and exit");
  add_common(simulate, c, true);
  simulate->add_option("--h", sim.h, "height")->check(CLI::PositiveNumber);
  simulate->add_option("--w", sim.w, "width")->check(CLI::PositiveNumber);
  simulate->add_option("--b", sim.b, "frames")->check(CLI::PositiveNumber);
  simulate->add_option("--objects", sim.objects, "moving objects");
  simulate->add_option("--max-speed", sim.max_speed, "max |velocity| per component, px/frame");
  simulate->add_option("--noise-sigma", sim.noise_sigma, "measurement noise std");
  simulate->add_option("--mask-density", sim.mask_density, "fraction of open mask pixels");
  simulate->add_option("--masks", sim.masks, "reuse these masks instead of generating");

  ReconArgs gap;
  auto* gaptv = app.add_subcommand("gaptv", "GAP-TV reconstruction");
  add_common(gaptv, c);
  add_recon_inputs(gaptv, gap, false, false);
  gaptv->get_option("--masks")->required();

  ReconArgs base;
  auto* basenet = app.add_subcommand("basenet", "BaseNet reconstruction from a trained checkpoint");
  add_common(basenet, c);
  add_recon_inputs(basenet, base, true, false);

  ReconArgs enh;
  auto* enhance = app.add_subcommand("enhance", "enhance a coarse reconstruction");
  add_common(enhance, c);
  add_recon_inputs(enhance, enh, true, true);
  enhance->add_option("--flow", enh.flow, "flow stack (H,W,2,B) .tns used instead of estimating");
  enhance->add_flag("--bypass", enh.bypass, "copy the coarse input through unchanged");
  enhance->add_flag("--f64-checks", c.f64_checks, "also run in double precision and report the difference");

  FlowArgs fl;
  auto* flow = app.add_subcommand("flow", "estimate the flow stack of a video");
  add_common(flow, c);
  flow->add_option("--video", fl.video, "video (H,W,B) .tns")->required();
  flow->add_flag("--png", fl.png, "also write color-coded flow images");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "joint BaseNet + MadyGraph training");
  add_common(trn, c, true);
  trn->add_option("--resume", tr.resume, "checkpoint directory to resume from");
  trn->add_option("--iterations", tr.iterations, "total steps (overrides train.iterations)");

  EvalArgs ev;
  auto* evl = app.add_subcommand("eval", "PSNR/SSIM report");
  add_common(evl, c, true);
  evl->add_option("--pred", ev.pred, "predicted video .tns (with --truth)");
  evl->add_option("--truth", ev.truth, "ground-truth video .tns");
  evl->add_option("--checkpoint", ev.checkpoint, "training checkpoint directory");
  evl->add_option("--backbone", ev.backbone, "coarse backbone: basenet, gaptv or import");
  evl->add_option("--scene", ev.scenes, "scene directory from simulate (repeatable)");
  evl->add_option("--synthetic", ev.synthetic, "number of generated held-out scenes");
  evl->add_flag("--bypass", ev.bypass, "report the coarse output as the enhanced one");
  evl->get_option("--pred")->needs("--truth");
  evl->get_option("--pred")->excludes("--checkpoint");

  DumpArgs dump;
  auto* dmp = app.add_subcommand("dump-graph", "neighbour positions and aggregation weights for query pixels");
  add_common(dmp, c);
  add_recon_inputs(dmp, dump.recon, true, true);
  dmp->add_option("--query", dump.queries, "row,col,frame (repeatable)");
  dmp->add_option("--min-weight", dump.min_weight, "only rows with weight above this");

  ExportArgs ex;
  auto* exp = app.add_subcommand("export-frames", "write a video or flow stack as 8-bit images");
  add_common(exp, c);
  exp->add_option("--input", ex.input, "video (H,W,B) or flow (H,W,2,B) .tns")->required();
  exp->add_option("--format", ex.format, "png or pgm");
  exp->add_option("--max-magnitude", ex.max_magnitude, "flow magnitude mapped to full saturation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (c.threads > 0) set_num_threads(c.threads);
    if (*simulate) run_simulate(ctx, sim);
    if (*gaptv) run_gaptv(ctx, gap);
    if (*basenet) run_basenet(ctx, base);
    if (*enhance) run_enhance(ctx, enh);
    if (*flow) run_flow(ctx, fl);
    if (*trn) run_train(ctx, tr, trn->count("--seed") > 0);
    if (*evl) run_eval(ctx, ev);
    if (*dmp) run_dump_graph(ctx, dump);
    if (*exp) run_export_frames(ctx, ex);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
