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

#include <random>

#include "madygraph/grad_check.hpp"
#include "madygraph/ops.hpp"
#include "madygraph/tns.hpp"
#include "primitive_suite.hpp"

namespace mdg {
namespace {

using namespace testing_primitives;

TEST(Primitives, AddIsElementwise) {
  auto y = add(constant(Tensor<float>::from({1, 2})), constant(Tensor<float>::from({3, 4})));
  EXPECT_EQ(y.value(), Tensor<float>::from({4, 6}));
}

TEST(Primitives, IdentityKernelConv2dReturnsInput) {
  auto x = rand_tensor<float>({5, 4, 3}, 1);
  Tensor<float> w({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.at(0, 0, c, c) = 1;
  auto y = conv2d(constant(x), constant(w), constant(Tensor<float>::zeros({3})));
  EXPECT_EQ(y.value(), x);
}

TEST(Primitives, ExpOfZeroIsOne) {
  auto y = exp(constant(Tensor<float>::zeros({2, 3})));
  EXPECT_EQ(y.value(), Tensor<float>::ones({2, 3}));
}

TEST(Primitives, ShapeMismatchIsDescriptive) {
  try {
    add(constant(Tensor<float>::zeros({2, 3})), constant(Tensor<float>::zeros({3, 2})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(conv3d(constant(Tensor<float>::zeros({4, 4, 2, 3})), constant(Tensor<float>::zeros({3, 3, 3, 2, 5})),
                      constant(Tensor<float>::zeros({5}))),
               ShapeError);
}

TEST(Primitives, NonFiniteInputRejectedInDebugMode) {
  const bool saved = debug_checks();
  debug_checks() = true;
  Tensor<float> t({2}, 1.0f);
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(exp(constant(t)), std::domain_error);
  debug_checks() = saved;
}

TEST(Primitives, ConcatAndSliceInvert) {
  auto a = constant(rand_tensor<double>({2, 3, 2}, 3));
  auto b = constant(rand_tensor<double>({2, 1, 2}, 4));
  auto c = concat<double>({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 4, 2}));
  EXPECT_EQ(slice(c, 1, 0, 3).value(), a.value());
  EXPECT_EQ(slice(c, 1, 3, 4).value(), b.value());
}

TEST(Backward, LinearFormGradientIsInput) {
  Parameter<float> w(rand_tensor<float>({6}, 7));
  auto x = rand_tensor<float>({6}, 8);
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    backward(sum(mul(w.var(), constant(x))));
  }
  EXPECT_EQ(w.grad(), x);
}

TEST(Backward, GradientVanishesAtMinimum) {
  auto t = rand_tensor<float>({3, 3}, 9);
  Parameter<float> w(t);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  auto d = sub(w.var(), constant(t));
  backward(mean(mul(d, d)));
  for (float g : w.grad().data()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, ExpMatchesCentralDifference) {
  // Central-difference oracle at w = 0 with eps = 1e-3.
  const double err = grad_check<float>([](const Var<float>& w) { return sum(exp(w)); },
                                       Tensor<float>::zeros({4}), 1e-3);
  EXPECT_LT(err, 1e-3);
}

TEST(Backward, GradientsAccumulateUntilCleared) {
  Parameter<double> w(Tensor<double>::from({1, 2}));
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    backward(sum(w.var()));
  }
  EXPECT_EQ(w.grad(), Tensor<double>::from({2, 2}));
  w.zero_grad();
  EXPECT_EQ(w.grad(), Tensor<double>::zeros({2}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Parameter<float> w(Tensor<float>::ones({3}));
  Tape<float> tape;
  TapeScope<float> scope(tape);
  EXPECT_THROW(backward(exp(w.var())), ShapeError);
}

TEST(Backward, RejectsLossWithoutTape) {
  Parameter<float> w(Tensor<float>::ones({3}));
  auto loss = sum(exp(w.var()));  // no active tape: inference mode
  EXPECT_FALSE(loss.requires_grad());
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Backward, EachRecordedOpVisitedOnce) {
  Parameter<double> w(Tensor<double>::from({0.5}));
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = exp(w.var());
  auto z = mul(y, y);  // y feeds both operands of one op
  backward(sum(z));
  EXPECT_NEAR(w.grad()[0], 2 * std::exp(1.0), 1e-12);
  EXPECT_EQ(tape.size(), 3u);
}

TEST(GradCheck, SumHasExactGradient) {
  const double err = grad_check<float>([](const Var<float>& x) { return sum(x); }, rand_tensor<float>({3, 4}, 2), 1e-3);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, Conv3dLeakyMeanF32) {
  std::mt19937_64 rng(11);
  const auto w = Tensor<float>::uniform({3, 3, 3, 4, 2}, -0.5f, 0.5f, rng);
  const auto b = Tensor<float>::uniform({2}, -0.5f, 0.5f, rng);
  auto f = [&]<class T>(const Var<T>& x) {
    return mean(leaky_relu(conv3d(x, constant(w.cast<T>()), constant(b.cast<T>())), T(0.1)));
  };
  const double err = grad_check(
      [&](const Var<float>& x) { return f(x); }, [&](const Var<double>& x) { return f(x); },
      rand_tensor<float>({2, 3, 4, 4}, 12), 1e-3);
  EXPECT_LT(err, 1e-3);
}

TEST(GradCheck, GridSampleAtFractionalCoordinates) {
  auto fmap = rand_tensor<float>({5, 6, 3}, 21);
  auto pos = rand_tensor<float>({4, 2}, 22, 0.3, 3.7);
  for (auto& v : pos.data()) v = std::floor(v) + 0.2f + 0.6f * (v - std::floor(v));  // stay off grid lines
  auto by_pos = [&]<class T>(const Var<T>& p) { return weighted_sum(grid_sample(constant(fmap.cast<T>()), p), 1); };
  auto by_map = [&]<class T>(const Var<T>& f) { return weighted_sum(grid_sample(f, constant(pos.cast<T>())), 1); };
  EXPECT_LT(grad_check([&](const Var<float>& p) { return by_pos(p); }, [&](const Var<double>& p) { return by_pos(p); },
                       pos, 1e-3),
            1e-3);
  EXPECT_LT(grad_check([&](const Var<float>& f) { return by_map(f); }, [&](const Var<double>& f) { return by_map(f); },
                       fmap, 1e-3),
            1e-3);
}

TEST(GridSample, OnGridAndMidpointAndClamp) {
  auto fmap = rand_tensor<double>({4, 5, 2}, 31);
  Tensor<double> pos({3, 2});
  pos.at(0, 0) = 2; pos.at(0, 1) = 3;
  pos.at(1, 0) = 1.5; pos.at(1, 1) = 2;
  pos.at(2, 0) = -3.2; pos.at(2, 1) = 1.0;
  auto out = grid_sample(constant(fmap), constant(pos)).value();
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(out.at(0, c), fmap.at(2, 3, c));
    EXPECT_DOUBLE_EQ(out.at(1, c), 0.5 * (fmap.at(1, 2, c) + fmap.at(2, 2, c)));
    EXPECT_EQ(out.at(2, c), fmap.at(0, 1, c));
  }
}

TEST(GridSample, IntegerCoordinatesUseRightContinuousDerivative) {
  Tensor<double> fmap({3, 3, 1});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) fmap.at(r, c, 0) = double(r * r) + 10.0 * double(c * c);
  Parameter<double> pos(Tensor<double>({1, 2}, std::vector<double>{1.0, 1.0}));
  Tape<double> tape;
  TapeScope<double> scope(tape);
  backward(sum(grid_sample(constant(fmap), pos.var())));
  EXPECT_DOUBLE_EQ(pos.grad()[0], 4.0 - 1.0);    // f(2,1) - f(1,1)
  EXPECT_DOUBLE_EQ(pos.grad()[1], 40.0 - 10.0);  // f(1,2) - f(1,1)
}

TEST(GradCheckProperty, EveryPrimitiveF64HundredSeeds) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto x = avoid_kinks(rand_tensor<double>({2, 3, 2, 2}, 1000 + seed));
    for (auto& [name, fn] : primitive_suite<double>(seed)) {
      const double err = grad_check<double>(fn, x, 1e-4);
      worst = std::max(worst, err);
      ASSERT_LT(err, 1e-6) << name << " seed " << seed;
    }
  }
  RecordProperty("worst_f64", std::to_string(worst));
}

TEST(GradCheckProperty, EveryPrimitiveF32HundredSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto x = avoid_kinks(rand_tensor<float>({2, 3, 2, 2}, 2000 + seed));
    auto single = primitive_suite<float>(seed);
    auto twins = primitive_suite<double>(seed);
    for (std::size_t i = 0; i < single.size(); ++i) {
      const double err = grad_check(single[i].second, twins[i].second, x, 1e-3);
      ASSERT_LT(err, 1e-3) << single[i].first << " seed " << seed;
    }
  }
}

TEST(BackwardProperty, GradientIsLinearInTheLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x0 = rand_tensor<double>({3, 4}, seed);
    const double a = 0.7, b = -2.3;
    auto f = [](const Var<double>& x) { return sum(exp(x)); };
    auto g = [](const Var<double>& x) { return sum(mul(x, leaky_relu(x, 0.1))); };
    auto grad_of = [&](auto&& loss_fn) {
      Parameter<double> p(x0);
      Tape<double> tape;
      TapeScope<double> scope(tape);
      backward(loss_fn(p.var()));
      return p.grad();
    };
    const auto gf = grad_of(f), gg = grad_of(g);
    const auto gc = grad_of([&](const Var<double>& x) { return add(scale(f(x), a), scale(g(x), b)); });
    for (std::size_t i = 0; i < gc.numel(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-6);
  }
}

TEST(BackwardProperty, ReplayIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Parameter<float> w(Tensor<float>::uniform({3, 3, 3, 2, 4}, -0.3f, 0.3f, rng));
    const auto x = Tensor<float>::uniform({6, 5, 4, 2}, -1.f, 1.f, rng);
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto y = leaky_relu(conv3d(constant(x), w.var(), Var<float>()), 0.1f);
    backward(mean(mul(y, y)));
    return std::make_pair(y.value(), w.grad());
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TnsFormat, HeaderIsBitExact) {
  Tensor<float> t({2, 1}, std::vector<float>{1.0f, -2.0f});
  const auto bytes = tns::encode(t);
  const std::vector<unsigned char> expected = {'T', 'N', 'S', 'R', 1, 1, 2, 0, 2, 0, 0, 0, 1, 0, 0, 0,
                                               0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  ASSERT_EQ(bytes.size(), expected.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expected[i]) << i;
}

TEST(TnsFormat, RoundTripIsLosslessForRandomShapes) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    Shape s(rng() % 5);
    for (auto& d : s) d = 1 + rng() % 4;
    const auto tf = Tensor<float>::normal(s, 0.f, 10.f, rng);
    const auto td = Tensor<double>::normal(s, 0., 10., rng);
    EXPECT_EQ(tns::decode<float>(tns::encode(tf)), tf);
    EXPECT_EQ(tns::decode<double>(tns::encode(td)), td);
  }
}

TEST(TnsFormat, RejectsMalformedInput) {
  auto bytes = tns::encode(Tensor<double>::ones({2, 2}));
  auto corrupt = [&](std::size_t at, char v) {
    auto b = bytes;
    b[at] = v;
    return b;
  };
  EXPECT_THROW(tns::decode<double>(corrupt(0, 'X')), FormatError);
  EXPECT_THROW(tns::decode<double>(corrupt(4, 2)), FormatError);
  EXPECT_THROW(tns::decode<double>(corrupt(5, 3)), FormatError);
  EXPECT_THROW(tns::decode<double>(corrupt(7, 1)), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(tns::decode<double>(truncated), FormatError);
}

}  // namespace
}  // namespace mdg
