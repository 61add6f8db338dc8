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
// Central-difference gradient checks.
//
// Single-precision differences of a function whose terms cancel carry
// rounding noise of the order ulp(f)/eps, which can exceed the gradient of a
// coordinate. An f32 check may therefore supply an f64 twin of the function;
// the numeric side then evaluates the twin at the same f32-representable
// points, and the comparison measures the f32 analytic gradient alone.

#pragma once

#include <functional>
#include <optional>

#include "madygraph/autodiff.hpp"

namespace mdg {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;  // at worst_index
  double numeric = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares the taped gradient of a scalar function of `param` against
/// (f(p+eps) - f(p-eps)) / 2eps, one coordinate at a time. `fn` reads the
/// parameter through param.var(); the value is restored afterwards. `floor`
/// bounds the denominator of the relative error for near-zero entries.
template <std::floating_point T>
GradCheckResult grad_check_parameter(const std::function<Var<T>()>& fn, Parameter<T>& param, double eps,
                                     const std::function<double(std::size_t, double)>& numeric_probe = {},
                                     double floor = 1e-8) {
  param.zero_grad();
  {
    Tape<T> tape;
    TapeScope<T> scope(tape);
    backward(fn());
  }
  const Tensor<T> analytic = param.grad();
  GradCheckResult r;
  for (std::size_t i = 0; i < param.value().numel(); ++i) {
    double numeric;
    if (numeric_probe) {
      numeric = (numeric_probe(i, eps) - numeric_probe(i, -eps)) / (2 * eps);
    } else {
      const T saved = param.value()[i];
      param.value()[i] = static_cast<T>(saved + eps);
      const double up = fn().item();
      param.value()[i] = static_cast<T>(saved - eps);
      const double down = fn().item();
      param.value()[i] = saved;
      numeric = (up - down) / (2 * eps);
    }
    const double err = relative_error(analytic[i], numeric, floor);
    if (i == 0 || err > r.max_rel_error) r = {err, i, double(analytic[i]), numeric};
  }
  param.zero_grad();
  return r;
}

/// Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <std::floating_point T>
double grad_check(const std::function<Var<T>(const Var<T>&)>& fn, const Tensor<T>& input, double eps) {
  Parameter<T> p(input);
  return grad_check_parameter<T>([&] { return fn(p.var()); }, p, eps).max_rel_error;
}

/// f32 analytic gradient of `fn` against central differences of its f64 twin.
inline double grad_check(const std::function<Var<float>(const Var<float>&)>& fn,
                         const std::function<Var<double>(const Var<double>&)>& twin, const Tensor<float>& input,
                         double eps) {
  Parameter<float> p(input);
  Tensor<double> base = input.cast<double>();
  auto probe = [&](std::size_t i, double step) {
    Tensor<double> x = base;
    x[i] += step;
    return double(twin(Var<double>(std::move(x))).item());
  };
  return grad_check_parameter<float>([&] { return fn(p.var()); }, p, eps, probe).max_rel_error;
}

}  // namespace mdg
