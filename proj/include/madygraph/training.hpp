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
// Losses, Adam, training data and the joint BaseNet + MadyGraph loop.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <random>

#include "madygraph/image_io.hpp"
#include "madygraph/metrics.hpp"
#include "madygraph/networks.hpp"

namespace mdg::train {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (1 / numel) * sum (pred - truth)^2.
template <std::floating_point T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& truth) {
  mdg::detail::require_shape(pred.shape() == truth.shape(), "mse_loss: shape mismatch " + to_string(pred.shape()) +
                                                                " vs " + to_string(truth.shape()));
  auto d = sub(pred, truth);
  return mean(mul(d, d));
}

template <std::floating_point T>
Var<T> joint_loss(const Var<T>& fine, const Var<T>& coarse, const Var<T>& truth) {
  return add(mse_loss(fine, truth), mse_loss(coarse, truth));
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

template <std::floating_point T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient.
template <std::floating_point T>
void adam_step(const nets::NamedParameters<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty())
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  mdg::detail::require(state.m.size() == params.size(), "adam: state does not match the parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i].second;
    mdg::detail::require_shape(state.m[i].shape() == p.shape(), "adam: moment shape mismatch for " + params[i].first);
    T* w = p.value().ptr();
    const T* g = p.grad().ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t k = 0; k < p.value().numel(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(cfg.beta1 * m[k] + (1 - cfg.beta1) * gk);
      v[k] = static_cast<T>(cfg.beta2 * v[k] + (1 - cfg.beta2) * gk * gk);
      const double mh = m[k] / c1, vh = v[k] / c2;
      w[k] = static_cast<T>(w[k] - cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ShapeKind { rectangle, disk, textured_patch };

/// Per-frame displacement in pixels; u along columns, v along rows.
struct Velocity {
  double u = 0, v = 0;
};

struct SceneObject {
  ShapeKind kind = ShapeKind::rectangle;
  double row = 0, col = 0;      // centre at frame 0
  double half_h = 4, half_w = 4;  // radius for disks
  double intensity = 0.5;
  Velocity velocity;
  std::uint64_t texture_seed = 0;
};

struct SyntheticSceneSpec {
  std::size_t height = 64, width = 64, frames = 8;
  std::size_t objects = 3;
  std::vector<ShapeKind> kinds{ShapeKind::rectangle, ShapeKind::disk, ShapeKind::textured_patch};
  double max_speed = 2.0;  // per velocity component, px/frame
  std::uint64_t background_seed = 0;

  void validate(double max_displacement = 8.0) const {
    mdg::detail::require(height >= 8 && width >= 8, "scene: frames must be at least 8x8");
    mdg::detail::require(frames >= 2, "scene: need at least 2 frames");
    mdg::detail::require(!kinds.empty() || objects == 0, "scene: no shape kinds enabled");
    mdg::detail::require(max_speed >= 0 && max_speed * std::numbers::sqrt2 <= max_displacement,
                         "scene: max_speed exceeds the flow max_displacement");
  }
};

/// Sum of sinusoids with spatial frequency at most 0.3 rad/px, in [0.14, 0.86].
class Texture {
 public:
  explicit Texture(std::uint64_t seed, double amplitude = 0.06, int waves = 6) : amplitude_(amplitude) {
    std::mt19937_64 rng(seed);
    for (int k = 0; k < waves; ++k) {
      const double f = 0.08 + 0.22 * unit_uniform(rng);
      const double th = 2 * std::numbers::pi * unit_uniform(rng);
      waves_.push_back({f * std::cos(th), f * std::sin(th), 2 * std::numbers::pi * unit_uniform(rng)});
    }
  }
  double operator()(double r, double c) const {
    double v = 0.5;
    for (const auto& w : waves_) v += amplitude_ * std::cos(w[0] * r + w[1] * c + w[2]);
    return v;
  }

 private:
  double amplitude_;
  std::vector<std::array<double, 3>> waves_;
};

template <std::floating_point T>
struct SyntheticScene {
  sci::VideoCube<T> video;
  motion::FlowStack<T> flow;  // exact: object velocity inside objects, 0 elsewhere
  std::vector<SceneObject> objects;
};

namespace detail {

// Coverage of pixel (r, c) by `o` at frame `b` and the object's texture
// coordinates; 4x4 supersampled.
inline bool inside(const SceneObject& o, double r, double c, std::size_t b) {
  const double dr = r - (o.row + o.velocity.v * double(b)), dc = c - (o.col + o.velocity.u * double(b));
  if (o.kind == ShapeKind::disk) return dr * dr + dc * dc <= o.half_h * o.half_h;
  return std::abs(dr) <= o.half_h && std::abs(dc) <= o.half_w;
}

}  // namespace detail

/// Renders objects (later ones on top) translating over a static textured
/// background.
template <std::floating_point T = float>
SyntheticScene<T> render_scene(const SyntheticSceneSpec& spec, const std::vector<SceneObject>& objects) {
  const std::size_t h = spec.height, w = spec.width, b_n = spec.frames;
  const Texture background(spec.background_seed);
  std::vector<Texture> textures;
  for (const auto& o : objects) textures.emplace_back(o.texture_seed, 0.12, 4);
  SyntheticScene<T> s{{Tensor<T>({h, w, b_n}), sci::CubeRole::ground_truth}, {}, objects};
  constexpr int kSub = 4;
  for (std::size_t b = 0; b < b_n; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0;
        for (int i = 0; i < kSub; ++i)
          for (int j = 0; j < kSub; ++j) {
            const double rr = double(r) + (i + 0.5) / kSub - 0.5, cc = double(c) + (j + 0.5) / kSub - 0.5;
            double v = background(rr, cc);
            for (std::size_t k = 0; k < objects.size(); ++k) {
              const auto& o = objects[k];
              if (!detail::inside(o, rr, cc, b)) continue;
              v = o.kind == ShapeKind::textured_patch
                      ? textures[k](rr - o.velocity.v * double(b), cc - o.velocity.u * double(b))
                      : o.intensity;
            }
            acc += v;
          }
        s.video.frames.at(r, c, b) = static_cast<T>(acc / (kSub * kSub));
      }
  // F_b points from frame b to b+1 (the last one from B-1 back to B-2).
  for (std::size_t b = 0; b < b_n; ++b) {
    motion::FlowField<T> f{Tensor<T>({h, w, 2})};
    const double sign = b + 1 < b_n ? 1.0 : -1.0;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        for (auto it = objects.rbegin(); it != objects.rend(); ++it)
          if (detail::inside(*it, double(r), double(c), b)) {
            f.uv.at(r, c, 0) = static_cast<T>(sign * it->velocity.u);
            f.uv.at(r, c, 1) = static_cast<T>(sign * it->velocity.v);
            break;
          }
    s.flow.fields.push_back(std::move(f));
  }
  return s;
}

/// Random objects for one scene drawn from `seed`.
inline std::vector<SceneObject> random_objects(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SceneObject> out;
  for (std::size_t i = 0; i < spec.objects; ++i) {
    SceneObject o;
    o.kind = spec.kinds[std::size_t(unit_uniform(rng) * double(spec.kinds.size()))];
    o.row = unit_uniform(rng) * double(spec.height);
    o.col = unit_uniform(rng) * double(spec.width);
    const double scale = double(std::min(spec.height, spec.width));
    o.half_h = (0.08 + 0.12 * unit_uniform(rng)) * scale;
    o.half_w = (0.08 + 0.12 * unit_uniform(rng)) * scale;
    o.intensity = 0.05 + 0.9 * unit_uniform(rng);
    o.velocity = {spec.max_speed * (2 * unit_uniform(rng) - 1), spec.max_speed * (2 * unit_uniform(rng) - 1)};
    o.texture_seed = rng();
    out.push_back(o);
  }
  return out;
}

/// `count` independent scenes; scene i depends only on (spec, seed, i).
template <std::floating_point T = float>
std::vector<SyntheticScene<T>> gen_synthetic_batch(const SyntheticSceneSpec& spec, std::uint64_t seed,
                                                   std::size_t count = 1) {
  spec.validate();
  std::vector<SyntheticScene<T>> out;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticSceneSpec s = spec;
    s.background_seed = mix_seed(seed, 2 * i);
    out.push_back(render_scene<T>(s, random_objects(s, mix_seed(seed, 2 * i + 1))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frame directories

namespace detail {

// Numeric order of the digits in the file stem, then lexicographic.
inline bool numeric_less(const std::filesystem::path& a, const std::filesystem::path& b) {
  auto key = [](const std::filesystem::path& p) {
    std::string digits;
    for (char ch : p.stem().string())
      if (std::isdigit(static_cast<unsigned char>(ch))) digits += ch;
    const auto first = digits.find_first_not_of('0');
    digits = first == std::string::npos ? "0" : digits.substr(first);
    return std::make_tuple(digits.size(), digits, p.filename().string());
  };
  return key(a) < key(b);
}

}  // namespace detail

/// Crop extent; unset means the full frame.
struct CropSize {
  std::optional<std::size_t> height, width;
};

/// Cubes of B consecutive frames starting every `stride` frames, each with
/// one random spatial crop, values pixel / 255.
template <std::floating_point T = float>
std::vector<sci::VideoCube<T>> ingest_frames_dir(const std::filesystem::path& dir, CropSize crop, std::size_t frames,
                                                 std::size_t stride, std::uint64_t seed) {
  namespace fs = std::filesystem;
  mdg::detail::require(frames >= 1 && stride >= 1, "ingest: B and stride must be positive");
  if (!fs::is_directory(dir)) throw std::runtime_error("ingest: " + dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), detail::numeric_less);
  if (files.size() < frames)
    throw std::invalid_argument("ingest: " + std::to_string(files.size()) + " frames in " + dir.string() +
                                ", need at least " + std::to_string(frames));
  std::vector<io::Image8> images;
  for (const auto& f : files) {
    images.push_back(io::read_gray(f));
    if (images.back().height != images.front().height || images.back().width != images.front().width)
      throw std::invalid_argument("ingest: " + f.string() + " is " + std::to_string(images.back().width) + "x" +
                                  std::to_string(images.back().height) + ", expected " +
                                  std::to_string(images.front().width) + "x" + std::to_string(images.front().height));
  }
  const std::size_t fh = images.front().height, fw = images.front().width;
  const std::size_t ch = crop.height.value_or(fh), cw = crop.width.value_or(fw);
  if (ch > fh || cw > fw)
    throw std::invalid_argument("ingest: crop " + std::to_string(cw) + "x" + std::to_string(ch) +
                                " exceeds frame size " + std::to_string(fw) + "x" + std::to_string(fh));
  std::mt19937_64 rng(seed);
  std::vector<sci::VideoCube<T>> cubes;
  for (std::size_t start = 0; start + frames <= images.size(); start += stride) {
    const std::size_t r0 = std::size_t(unit_uniform(rng) * double(fh - ch + 1));
    const std::size_t c0 = std::size_t(unit_uniform(rng) * double(fw - cw + 1));
    Tensor<T> t({ch, cw, frames});
    for (std::size_t b = 0; b < frames; ++b)
      for (std::size_t r = 0; r < ch; ++r)
        for (std::size_t c = 0; c < cw; ++c)
          t.at(r, c, b) = static_cast<T>(images[start + b].pixels[(r0 + r) * fw + c0 + c] / 255.0);
    cubes.push_back({std::move(t), sci::CubeRole::ground_truth});
  }
  return cubes;
}

// ---------------------------------------------------------------------------
// Joint training

/// BaseNet backbone plus the enhancement model, trained together.
template <std::floating_point T>
struct JointModel {
  nets::BaseNet<T> basenet;
  nets::MadyGraphModel<T> madygraph;

  JointModel() = default;
  explicit JointModel(const nets::ModelConfig& cfg)
      : basenet(cfg, mix_seed(cfg.seed, 0x62617365)), madygraph(cfg) {}

  nets::NamedParameters<T> named_parameters() {
    nets::NamedParameters<T> out;
    basenet.collect("basenet", out);
    for (auto& p : madygraph.named_parameters()) out.emplace_back("madygraph." + p.first, p.second);
    return out;
  }
};

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 2;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  std::size_t crop = 64;
  double noise_sigma = 0;
  double mask_density = 0.5;
  std::size_t scenes = 0;  // fixed pool size; 0 draws a fresh scene per sample
  std::string data = "synthetic";  // or "frames"
  std::filesystem::path frames_dir;
  std::size_t frames_stride = 4;
  std::size_t objects = 3;
  double max_speed = 2.0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  nets::ModelConfig model;

  void validate() const {
    mdg::detail::require(learning_rate >= 0, "train: learning_rate must be >= 0");
    mdg::detail::require(batch_size >= 1, "train: batch_size must be >= 1");
    mdg::detail::require(crop >= 8, "train: crop must be >= 8");
    mdg::detail::require(noise_sigma >= 0, "train: noise_sigma must be >= 0");
    mdg::detail::require(data == "synthetic" || data == "frames", "train: data must be 'synthetic' or 'frames'");
    model.validate();
  }

  SyntheticSceneSpec scene_spec() const {
    SyntheticSceneSpec s;
    s.height = s.width = crop;
    s.frames = model.frames;
    s.objects = objects;
    s.max_speed = max_speed;
    return s;
  }

  void write(config::KeyValues& kv) const {
    kv.set("train.learning_rate", learning_rate);
    kv.set("train.batch_size", batch_size);
    kv.set("train.iterations", iterations);
    kv.set("train.seed", seed);
    kv.set("train.crop", crop);
    kv.set("train.noise_sigma", noise_sigma);
    kv.set("train.mask_density", mask_density);
    kv.set("train.scenes", scenes);
    kv.set("train.data", data);
    kv.set("train.frames_dir", frames_dir.string());
    kv.set("train.frames_stride", frames_stride);
    kv.set("train.objects", objects);
    kv.set("train.max_speed", max_speed);
    kv.set("train.checkpoint_every", checkpoint_every);
    model.write(kv);
  }

  static TrainConfig read(const config::KeyValues& kv) {
    TrainConfig c;
    c.learning_rate = kv.get("train.learning_rate", c.learning_rate);
    c.batch_size = kv.get("train.batch_size", c.batch_size);
    c.iterations = kv.get("train.iterations", c.iterations);
    c.seed = kv.get("train.seed", c.seed);
    c.crop = kv.get("train.crop", c.crop);
    c.noise_sigma = kv.get("train.noise_sigma", c.noise_sigma);
    c.mask_density = kv.get("train.mask_density", c.mask_density);
    c.scenes = kv.get("train.scenes", c.scenes);
    c.data = kv.get_string("train.data", c.data);
    c.frames_dir = kv.get_string("train.frames_dir", c.frames_dir.string());
    c.frames_stride = kv.get("train.frames_stride", c.frames_stride);
    c.objects = kv.get("train.objects", c.objects);
    c.max_speed = kv.get("train.max_speed", c.max_speed);
    c.checkpoint_every = kv.get("train.checkpoint_every", c.checkpoint_every);
    c.model = nets::ModelConfig::read(kv);
    c.validate();
    return c;
  }
};

struct StepRecord {
  std::size_t step = 0;  // completed steps
  double loss_fine = 0, loss_coarse = 0;
  double psnr_fine = 0, psnr_coarse = 0;  // batch means
  double wall_ms = 0;
};

inline constexpr const char* kLogHeader = "step,loss_fine,loss_coarse,psnr_fine,psnr_coarse,wall_ms";

/// Model, optimizer, masks and data of one training run.
class Trainer {
 public:
  using Hook = std::function<bool(const StepRecord&)>;  // false stops training

  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), model_(cfg_.model) {
    cfg_.validate();
    masks_ = sci::generate_masks<float>(cfg_.crop, cfg_.crop, cfg_.model.frames, mix_seed(cfg_.seed, 0x6d61736b),
                                        cfg_.mask_density);
    if (cfg_.data == "frames") {
      for (auto& cube : ingest_frames_dir<float>(cfg_.frames_dir, {cfg_.crop, cfg_.crop}, cfg_.model.frames,
                                                 cfg_.frames_stride, mix_seed(cfg_.seed, 0x696e6773)))
        pool_.push_back(std::move(cube.frames));
    } else if (cfg_.scenes > 0) {
      for (auto& s : gen_synthetic_batch<float>(cfg_.scene_spec(), mix_seed(cfg_.seed, 0x706f6f6c), cfg_.scenes))
        pool_.push_back(std::move(s.video.frames));
    }
  }

  const TrainConfig& config() const { return cfg_; }
  JointModel<float>& model() { return model_; }
  const sci::MaskSet<float>& masks() const { return masks_; }
  const AdamState<float>& optimizer() const { return adam_; }
  std::size_t step() const { return step_; }
  const std::vector<Tensor<float>>& pool() const { return pool_; }

  /// Ground-truth cubes of the batch for `step`; depends only on (seed, step).
  std::vector<Tensor<float>> batch(std::size_t step) const {
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x62617463 + (std::uint64_t(step) << 8)));
    std::vector<Tensor<float>> out;
    const std::size_t n = pool_.empty() ? cfg_.batch_size : std::min(cfg_.batch_size, pool_.size());
    if (pool_.empty())
      for (auto& s : gen_synthetic_batch<float>(cfg_.scene_spec(), rng(), n)) out.push_back(std::move(s.video.frames));
    else if (n == pool_.size() && pool_.size() <= cfg_.batch_size)
      out = pool_;
    else
      for (std::size_t i = 0; i < n; ++i) out.push_back(pool_[std::size_t(unit_uniform(rng) * double(pool_.size()))]);
    return out;
  }

  /// Runs one optimization step and returns its record.
  StepRecord train_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto params = model_.named_parameters();
    for (auto& [name, p] : params) p->zero_grad();
    const auto truths = batch(step_);
    StepRecord rec;
    rec.step = step_ + 1;
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      std::vector<Var<float>> losses;
      const float inv_n = 1.0f / float(truths.size());
      for (std::size_t i = 0; i < truths.size(); ++i) {
        const auto m = sci::forward_measure(sci::VideoCube<float>{truths[i], sci::CubeRole::ground_truth}, masks_,
                                            cfg_.noise_sigma, mix_seed(cfg_.seed, 0x6e6f6973 + (step_ << 8) + i));
        auto coarse = model_.basenet(m.y, masks_.masks);
        auto fine = model_.madygraph.forward(m.y, masks_.masks, coarse).fine;
        const auto truth = constant(truths[i]);
        auto lf = mse_loss(fine, truth), lc = mse_loss(coarse, truth);
        rec.loss_fine += lf.item() * inv_n;
        rec.loss_coarse += lc.item() * inv_n;
        rec.psnr_fine += metrics::psnr(fine.value(), truths[i]) * inv_n;
        rec.psnr_coarse += metrics::psnr(coarse.value(), truths[i]) * inv_n;
        losses.push_back(scale(add(lf, lc), inv_n));
      }
      Var<float> total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      if (!std::isfinite(total.item())) {
        if (!out_dir_.empty()) save(out_dir_ / ("diagnostic_step_" + std::to_string(rec.step)));
        throw TrainingError("non-finite loss at step " + std::to_string(rec.step) +
                            (out_dir_.empty() ? "" : "; diagnostic checkpoint written to " + out_dir_.string()));
      }
      backward(total);
    }
    adam_step(params, adam_, AdamConfig{cfg_.learning_rate});
    ++step_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  /// Trains until cfg.iterations completed steps (or `hook` returns false),
  /// writing <out>/train_log.csv, periodic checkpoints and <out>/final.
  void run(const std::filesystem::path& out_dir, const Hook& hook = {}) {
    namespace fs = std::filesystem;
    out_dir_ = out_dir;
    fs::create_directories(out_dir);
    const fs::path log_path = out_dir / "train_log.csv";
    truncate_log(log_path);
    std::ofstream log(log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());
    if (fs::file_size(log_path) == 0) log << kLogHeader << '\n';
    log.precision(9);
    while (step_ < cfg_.iterations) {
      const StepRecord r = train_step();
      log << r.step << ',' << r.loss_fine << ',' << r.loss_coarse << ',' << r.psnr_fine << ',' << r.psnr_coarse
          << ',' << r.wall_ms << '\n'
          << std::flush;
      if (cfg_.checkpoint_every && r.step % cfg_.checkpoint_every == 0)
        save(out_dir / "checkpoints" / ("step_" + std::to_string(r.step)));
      if (hook && !hook(r)) break;
    }
    save(out_dir / "final");
  }

  /// Parameters, Adam moments, masks and a manifest with the config and step.
  void save(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir.parent_path());
    nets::NamedParameters<float> all = model_.named_parameters();
    std::vector<Parameter<float>> moments;
    moments.reserve(2 * all.size() + 1);
    const std::size_t n = all.size();
    for (std::size_t i = 0; i < n; ++i) {
      moments.emplace_back(adam_.m.empty() ? Tensor<float>(all[i].second->shape()) : adam_.m[i]);
      moments.emplace_back(adam_.v.empty() ? Tensor<float>(all[i].second->shape()) : adam_.v[i]);
    }
    moments.emplace_back(masks_.masks);
    for (std::size_t i = 0; i < n; ++i) {
      all.emplace_back("adam.m." + all[i].first, &moments[2 * i]);
      all.emplace_back("adam.v." + all[i].first, &moments[2 * i + 1]);
    }
    all.emplace_back("masks", &moments.back());
    config::KeyValues manifest;
    cfg_.write(manifest);
    manifest.set("step", step_);
    manifest.set("adam.step", adam_.step);
    nets::save_checkpoint(dir, all, manifest);
  }

  /// Restores parameters, optimizer state and step from a checkpoint written
  /// by save(); the architecture must match.
  void resume(const std::filesystem::path& dir) {
    const auto manifest = nets::read_manifest(dir);
    nets::NamedParameters<float> params = model_.named_parameters();
    nets::load_checkpoint(dir, params);
    adam_.m.clear();
    adam_.v.clear();
    for (const auto& [name, p] : params) {
      adam_.m.push_back(load_tensor(dir, "adam.m." + name, p->shape()));
      adam_.v.push_back(load_tensor(dir, "adam.v." + name, p->shape()));
    }
    masks_.masks = load_tensor(dir, "masks", masks_.masks.shape());
    step_ = manifest.get<std::size_t>("step", 0);
    adam_.step = manifest.get<std::uint64_t>("adam.step", step_);
  }

 private:
  static Tensor<float> load_tensor(const std::filesystem::path& dir, const std::string& name, const Shape& shape) {
    Tensor<float> t = tns::load<float>(dir / (name + ".tns"));
    if (t.shape() != shape)
      throw FormatError("checkpoint " + dir.string() + ": " + name + " has shape " + to_string(t.shape()));
    return t;
  }

  // Drops log rows past the current step so a resumed run appends cleanly.
  void truncate_log(const std::filesystem::path& path) const {
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    std::vector<std::string> keep;
    std::string line;
    while (std::getline(in, line)) {
      if (keep.empty() || line.empty()) {
        if (!line.empty()) keep.push_back(line);
        continue;
      }
      if (std::stoull(line.substr(0, line.find(','))) <= step_) keep.push_back(line);
    }
    in.close();
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : keep) out << l << '\n';
  }

  TrainConfig cfg_;
  JointModel<float> model_;
  sci::MaskSet<float> masks_;
  std::vector<Tensor<float>> pool_;
  AdamState<float> adam_;
  std::size_t step_ = 0;
  std::filesystem::path out_dir_;
};

/// Joint model, masks and config restored from a checkpoint written by
/// Trainer::save.
struct TrainedModel {
  TrainConfig config;
  std::unique_ptr<JointModel<float>> model;
  sci::MaskSet<float> masks;
  std::size_t step = 0;
};

inline TrainedModel load_trained(const std::filesystem::path& dir) {
  const auto manifest = nets::read_manifest(dir);
  TrainedModel t;
  t.config = TrainConfig::read(manifest);
  t.model = std::make_unique<JointModel<float>>(t.config.model);
  nets::load_checkpoint(dir, t.model->named_parameters());
  const auto masks_path = dir / "masks.tns";
  if (!std::filesystem::exists(masks_path)) throw FormatError("checkpoint " + dir.string() + " lacks masks");
  t.masks = {tns::load<float>(masks_path), sci::MaskKind::binary};
  t.step = manifest.get<std::size_t>("step", 0);
  return t;
}

}  // namespace mdg::train
