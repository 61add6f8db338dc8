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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "madygraph/networks.hpp"
#include "madygraph/parallel.hpp"
#include "micro_instance.hpp"

namespace mdg::nets {
namespace {

namespace fs = std::filesystem;

const fs::path kDataDir = MADYGRAPH_TEST_DATA_DIR;

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.frames = 4;
  cfg.channels = 8;
  cfg.seed = 42;
  return cfg;
}

Tensor<float> fixture(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<float>(unit_uniform(rng));
  return t;
}

// Compares against a frozen .tns file; MADYGRAPH_WRITE_GOLDEN=1 rewrites it.
void expect_golden(const Tensor<float>& got, const std::string& name) {
  const fs::path path = kDataDir / name;
  if (std::getenv("MADYGRAPH_WRITE_GOLDEN")) tns::save(got, path);
  ASSERT_TRUE(fs::exists(path)) << path;
  const Tensor<float> want = tns::load<float>(path);
  ASSERT_EQ(got.shape(), want.shape());
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < got.numel(); ++i) mismatches += got[i] != want[i];
  EXPECT_EQ(mismatches, 0u);
}

TEST(Conv3dLayer, KaimingBoundAndZeroBias) {
  Conv3dLayer<double> layer(4, 6, 3, 1);
  const double bound = std::sqrt(6.0 / (1.01 * 108));
  double lo = 0, hi = 0;
  for (double v : layer.weight.value().data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_LE(hi, bound);
  EXPECT_GE(lo, -bound);
  EXPECT_GT(hi, 0.8 * bound);
  for (double v : layer.bias.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3dLayer, SeedDeterminesWeights) {
  EXPECT_EQ(Conv3dLayer<float>(2, 3, 3, 7).weight.value(), Conv3dLayer<float>(2, 3, 3, 7).weight.value());
  EXPECT_NE(Conv3dLayer<float>(2, 3, 3, 7).weight.value(), Conv3dLayer<float>(2, 3, 3, 8).weight.value());
}

TEST(Encoder, ShapeContract) {
  EncoderNet<float> enc(small_config(), 1);
  EXPECT_EQ(enc(constant(fixture({6, 5, 4}, 1))).shape(), (Shape{6, 5, 4, 8}));
  EXPECT_THROW(enc(constant(fixture({6, 5, 4, 1}, 1))), ShapeError);
}

TEST(Encoder, ZeroInputGivesZero) {
  EncoderNet<float> enc(small_config(), 1);
  auto out = enc(constant(Tensor<float>({5, 5, 3})));
  for (float v : out.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, GoldenOutput) {
  EncoderNet<float> enc(small_config(), 2);
  expect_golden(enc(constant(fixture({6, 5, 4}, 3))).value(), "encoder_golden.tns");
}

TEST(Decoder, ShapeContract) {
  DecoderNet<float> dec(small_config(), 1);
  EXPECT_EQ(dec(constant(fixture({6, 5, 4, 8}, 1))).shape(), (Shape{6, 5, 4}));
  EXPECT_THROW(dec(constant(fixture({6, 5, 4, 7}, 1))), ShapeError);
}

TEST(Decoder, ZeroInputGivesZero) {
  DecoderNet<float> dec(small_config(), 1);
  auto out = dec(constant(Tensor<float>({4, 4, 3, 8})));
  for (float v : out.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(Decoder, GoldenOutput) {
  DecoderNet<float> dec(small_config(), 4);
  auto in = fixture({6, 5, 4, 8}, 5);
  for (auto& v : in.data()) v -= 0.5f;
  expect_golden(dec(constant(in)).value(), "decoder_golden.tns");
}

TEST(BaseNet, ZeroWeightsGiveNormalizedMeasurement) {
  BaseNet<double> net(small_config(), 3);
  for (auto& layer : net.layers) layer.weight.value().fill(0.0);
  auto masks = sci::generate_masks<double>(7, 6, 4, 9);
  std::mt19937_64 rng(1);
  auto video = Tensor<double>::uniform({7, 6, 4}, 0, 1, rng);
  auto m = sci::forward_measure(sci::VideoCube<double>{video, sci::CubeRole::ground_truth}, masks);
  auto out = basenet_reconstruct(m, masks, net);
  EXPECT_EQ(out.role, sci::CubeRole::coarse);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      double total = 0;
      for (std::size_t b = 0; b < 4; ++b) total += masks.masks.at(r, c, b);
      for (std::size_t b = 0; b < 4; ++b)
        EXPECT_NEAR(out.frames.at(r, c, b), m.y.at(r, c) / (total + 1e-6), 1e-12);
    }
}

TEST(BaseNet, FreshNetworkOutputsNormalizedMeasurement) {
  BaseNet<float> net(small_config(), 3);
  auto masks = sci::generate_masks<float>(6, 6, 4, 2);
  auto m = sci::forward_measure(sci::VideoCube<float>{fixture({6, 6, 4}, 2), sci::CubeRole::ground_truth}, masks);
  EXPECT_EQ(net(m.y, masks.masks).value(), normalized_measurement(m.y, masks.masks));
}

TEST(BaseNet, EmptyMaskColumnStaysFinite) {
  BaseNet<float> net(small_config(), 3);
  Tensor<float> masks({4, 4, 4});
  Tensor<float> y({4, 4});
  EXPECT_TRUE(net(y, masks).value().all_finite());
}

TEST(BaseNet, ShapeContract) {
  BaseNet<float> net(small_config(), 3);
  auto masks = sci::generate_masks<float>(9, 7, 4, 2);
  EXPECT_EQ(net(Tensor<float>({9, 7}), masks.masks).shape(), (Shape{9, 7, 4}));
  EXPECT_THROW(net(Tensor<float>({9, 6}), masks.masks), ShapeError);
}

struct Scene {
  sci::MaskSet<float> masks;
  sci::Measurement<float> m;
  Tensor<float> truth;
};

Scene scene(std::size_t h, std::size_t w, std::size_t b, std::uint64_t seed) {
  Scene s{sci::generate_masks<float>(h, w, b, seed), {}, fixture({h, w, b}, seed)};
  s.m = sci::forward_measure(sci::VideoCube<float>{s.truth, sci::CubeRole::ground_truth}, s.masks);
  return s;
}

class ForwardShape : public ::testing::TestWithParam<std::size_t> {};

TEST_P(ForwardShape, EndToEnd) {
  const std::size_t n = GetParam();
  ModelConfig cfg;
  MadyGraphModel<float> model(cfg);
  BaseNet<float> base(cfg, 1);
  auto s = scene(n, n, 8, 3);
  auto coarse = basenet_reconstruct(s.m, s.masks, base);
  auto fine = madygraph_forward(s.m, s.masks, coarse, model);
  EXPECT_EQ(fine.frames.shape(), (Shape{n, n, 8}));
  EXPECT_EQ(fine.role, sci::CubeRole::fine);
  EXPECT_TRUE(fine.frames.all_finite());
}

INSTANTIATE_TEST_SUITE_P(Sizes, ForwardShape, ::testing::Values(32, 64));

TEST(MadyGraph, CoarseSourceIsInterchangeable) {
  ModelConfig cfg = small_config();
  MadyGraphModel<float> model(cfg);
  BaseNet<float> base(cfg, 1);
  auto s = scene(16, 16, 4, 5);
  std::vector<Tensor<float>> before;
  for (auto& [name, p] : model.named_parameters()) before.push_back(p->value());
  auto from_base = madygraph_forward(s.m, s.masks, basenet_reconstruct(s.m, s.masks, base), model);
  sci::GapTvOptions opt;
  opt.iterations = 10;
  auto from_gaptv = madygraph_forward(s.m, s.masks, sci::gap_tv_reconstruct(s.m, s.masks, opt).video, model);
  EXPECT_EQ(from_base.frames.shape(), from_gaptv.frames.shape());
  EXPECT_NE(from_base.frames, from_gaptv.frames);
  std::size_t i = 0;
  for (auto& [name, p] : model.named_parameters()) EXPECT_EQ(p->value(), before[i++]) << name;
}

TEST(MadyGraph, ImportedFlowIsUsedVerbatim) {
  ModelConfig cfg = small_config();
  MadyGraphModel<float> model(cfg);
  auto s = scene(12, 12, 4, 6);
  auto flow = fixture({12, 12, 4, 2}, 7);
  auto r = model.forward(s.m.y, s.masks.masks, constant(s.truth), flow);
  EXPECT_EQ(r.flow, flow);
  EXPECT_THROW(model.forward(s.m.y, s.masks.masks, constant(s.truth), Tensor<float>({12, 12, 4, 3})), ShapeError);
}

TEST(MadyGraph, WrongFrameCountRejected) {
  MadyGraphModel<float> model(small_config());
  auto s = scene(8, 8, 3, 1);
  EXPECT_THROW(model.forward(s.m.y, s.masks.masks, constant(s.truth)), ShapeError);
}

TEST(MadyGraph, GlobalResidualAddsCoarse) {
  ModelConfig cfg = small_config();
  auto s = scene(10, 10, 4, 8);
  MadyGraphModel<double> plain(cfg);
  cfg.global_residual_to_coarse = true;
  MadyGraphModel<double> residual(cfg);
  const Tensor<double> coarse = s.truth.cast<double>();
  auto y = s.m.y.cast<double>();
  auto masks = s.masks.masks.cast<double>();
  auto a = plain.forward(y, masks, constant(coarse)).fine.value();
  auto b = residual.forward(y, masks, constant(coarse)).fine.value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(b[i], a[i] + coarse[i], 1e-12);
}

TEST(MadyGraph, ToggledOffPartsHaveNoParameters) {
  ModelConfig cfg = small_config();
  cfg.graph.toggles.dynamic_walks = false;
  MadyGraphModel<float> model(cfg);
  for (auto& [name, p] : model.named_parameters()) EXPECT_FALSE(name.starts_with("walk_head")) << name;
  auto s = scene(8, 8, 4, 2);
  EXPECT_EQ(model.forward(s.m.y, s.masks.masks, constant(s.truth)).fine.shape(), (Shape{8, 8, 4}));
}

TEST(MadyGraph, DeterministicAcrossRunsAndThreads) {
  ModelConfig cfg = small_config();
  auto s = scene(16, 12, 4, 9);
  auto run = [&](int threads) {
    const int saved = num_threads();
    set_num_threads(threads);
    MadyGraphModel<float> model(cfg);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Parameter<float> coarse(s.truth);
    auto fine = model.forward(s.m.y, s.masks.masks, coarse.var()).fine;
    backward(sum(mul(fine, fine)));
    set_num_threads(saved);
    return std::make_pair(fine.value(), model.encoder.layers[0].weight.grad());
  };
  auto a = run(1), b = run(1), c = run(3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(MadyGraph, FullPipelineGradientF64) {
  auto inst = testing_micro::micro_instance();
  for (const auto& check : testing_micro::check_micro_gradients(inst))
    EXPECT_LT(check.result.max_rel_error, 1e-5)
        << check.parameter << " worst index " << check.result.worst_index << " analytic " << check.result.analytic
        << " numeric " << check.result.numeric;
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig cfg;
  cfg.channels = 12;
  cfg.graph.grid.dilations = {1, 5};
  cfg.graph.toggles.motion_aware = false;
  cfg.graph.walk_clamp = 3.25;
  cfg.aggregation.iterations = 2;
  cfg.aggregation.temperature = 0.1;
  cfg.flow.alpha = 12.5;
  config::KeyValues kv;
  cfg.write(kv);
  config::KeyValues back;
  back.merge(kv);
  const ModelConfig r = ModelConfig::read(back);
  EXPECT_EQ(r.channels, 12u);
  EXPECT_EQ(r.graph.grid.dilations, (std::vector<int>{1, 5}));
  EXPECT_FALSE(r.graph.toggles.motion_aware);
  EXPECT_EQ(r.graph.walk_clamp, 3.25);
  EXPECT_EQ(r.aggregation.iterations, 2);
  EXPECT_FALSE(r.aggregation.residual.has_value());
  EXPECT_EQ(r.aggregation.temperature, 0.1);
  EXPECT_EQ(r.flow.alpha, 12.5);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mdg_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  ModelConfig cfg = small_config();
  MadyGraphModel<float> a(cfg);
  a.walk_head.weight.value() = fixture(a.walk_head.weight.shape(), 3);
  config::KeyValues manifest;
  cfg.write(manifest);
  manifest.set("step", 17);
  save_checkpoint(dir_, a.named_parameters(), manifest);
  EXPECT_FALSE(fs::exists(dir_.string() + ".partial"));

  ModelConfig other = ModelConfig::read(read_manifest(dir_));
  other.seed = 99;
  MadyGraphModel<float> b(other);
  auto m = load_checkpoint(dir_, b.named_parameters());
  EXPECT_EQ(m.get<int>("step", 0), 17);
  auto s = scene(12, 12, 4, 4);
  EXPECT_EQ(a.forward(s.m.y, s.masks.masks, constant(s.truth)).fine.value(),
            b.forward(s.m.y, s.masks.masks, constant(s.truth)).fine.value());
}

TEST_F(CheckpointTest, ShapeMismatchRejected) {
  MadyGraphModel<float> a(small_config());
  save_checkpoint(dir_, a.named_parameters(), {});
  ModelConfig wider = small_config();
  wider.channels = 16;
  MadyGraphModel<float> b(wider);
  EXPECT_THROW(load_checkpoint(dir_, b.named_parameters()), FormatError);
}

TEST_F(CheckpointTest, MissingParameterRejected) {
  ModelConfig cfg = small_config();
  cfg.graph.toggles.dynamic_walks = false;
  MadyGraphModel<float> a(cfg);
  save_checkpoint(dir_, a.named_parameters(), {});
  MadyGraphModel<float> b(small_config());
  EXPECT_THROW(load_checkpoint(dir_, b.named_parameters()), FormatError);
}

}  // namespace
}  // namespace mdg::nets
