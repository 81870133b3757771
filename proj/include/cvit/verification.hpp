#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cvit/cga.hpp"
#include "cvit/gradcheck.hpp"
#include "cvit/nn_ops.hpp"

namespace cvit {

// Calibrated finite-difference audits of the autodiff engine, shared by the
// command-line `gradcheck` subcommand and the acceptance gate so both report
// against the same fixtures and tolerances. All run in double precision.
//
// Tolerances: ops checked in isolation (linear, conv) are pure multilinear
// maps, so analytic and central-difference gradients agree to near machine
// precision; composites stack batch-norm rsqrt, ReLU and softmax curvature,
// so the probe's own O(eps^2) truncation error dominates and the bound is
// wider.
struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline std::vector<GradCheckCase> standard_gradcheck_cases() {
  using T64 = TensorT<double>;
  std::vector<GradCheckCase> cases;

  cases.push_back({"linear", 1e-6, [](std::uint64_t seed) {
    RngState rng(seed);
    LinearT<double> layer(6, 4, /*bias=*/true, rng);
    ParamList<double> params;
    layer.collect("linear", params);
    auto x = T64::zeros({3, 6});
    for (auto& v : x.data()) v = rng.next_normal();
    x.set_requires_grad(true);
    auto coeffs = projection_coefficients(12, seed + 1);
    auto targets = targets_from_params(params);
    targets.push_back({"input", x});
    return gradcheck(targets,
                     [&] { return project_to_scalar(layer.forward(x), coeffs); });
  }});

  cases.push_back({"conv", 1e-6, [](std::uint64_t seed) {
    RngState rng(seed);
    Conv2dT<double> layer(3, 4, 3, 1, 1, 1, /*bias=*/true, rng);
    ParamList<double> params;
    layer.collect("conv", params);
    auto x = T64::zeros({2, 3, 5, 5});
    for (auto& v : x.data()) v = rng.next_normal();
    x.set_requires_grad(true);
    auto coeffs = projection_coefficients(2 * 4 * 5 * 5, seed + 1);
    auto targets = targets_from_params(params);
    targets.push_back({"input", x});
    return gradcheck(targets,
                     [&] { return project_to_scalar(layer.forward(x), coeffs); });
  }});

  cases.push_back({"ccffn", 1e-4, [](std::uint64_t seed) {
    CCFFNConfig cfg{8, 2, 2.5, true, false};
    RngState rng(seed);
    CCFFNLayerT<double> layer(cfg, rng);
    ParamList<double> params;
    layer.collect("ccffn", params);
    RngState shaper(seed + 1);
    shape_for_gradcheck(params, shaper);
    auto x = T64::zeros({2, 8, 2, 2});
    RngState xr(seed + 2);
    for (auto& v : x.data()) v = xr.next_normal();
    x.set_requires_grad(true);
    auto coeffs = projection_coefficients(x.numel(), seed + 3);
    auto targets = targets_from_params(params);
    targets.push_back({"input", x});
    return gradcheck(targets, [&] {
      return project_to_scalar(layer.forward(x, Mode::train), coeffs);
    });
  }});

  cases.push_back({"cga", 1e-4, [](std::uint64_t seed) {
    RngState rng(seed);
    CGALayerT<double> layer(8, 1, rng);
    ParamList<double> params;
    layer.collect("cga", params);
    RngState shaper(seed + 1);
    shape_for_gradcheck(params, shaper);
    auto x = T64::zeros({1, 8, 3, 3});
    RngState xr(seed + 2);
    for (auto& v : x.data()) v = xr.next_normal();
    x.set_requires_grad(true);
    auto coeffs = projection_coefficients(x.numel(), seed + 3);
    auto targets = targets_from_params(params);
    targets.push_back({"input", x});
    return gradcheck(targets, [&] {
      return project_to_scalar(layer.forward(x, Mode::train), coeffs);
    });
  }});

  cases.push_back({"block", 1e-4, [](std::uint64_t seed) {
    RngState rng(seed);
    CViTBlockT<double> block(4, 2, CCFFNConfig{4, 2, 2.5, true, false}, rng);
    ParamList<double> params;
    block.collect("block", params);
    RngState shaper(seed + 1);
    shape_for_gradcheck(params, shaper);
    auto x = T64::zeros({1, 4, 2, 2});
    RngState xr(seed + 2);
    for (auto& v : x.data()) v = xr.next_normal();
    x.set_requires_grad(true);
    auto coeffs = projection_coefficients(x.numel(), seed + 3);
    auto targets = targets_from_params(params);
    targets.push_back({"input", x});
    return gradcheck(targets, [&] {
      return project_to_scalar(block.forward(x, Mode::train), coeffs);
    });
  }});

  cases.push_back({"kd", 1e-4, [](std::uint64_t seed) {
    RngState rng(seed);
    auto student = T64::zeros({3, 4});
    auto teacher = T64::zeros({3, 4});
    for (auto& v : student.data()) v = rng.next_normal();
    for (auto& v : teacher.data()) v = rng.next_normal();
    student.set_requires_grad(true);
    const std::vector<int> labels{0, 2, 1};
    std::vector<GradCheckTarget> targets{{"student", student}};
    return gradcheck(
        targets, [&] { return kd_loss(student, teacher, labels, 0.5, 2.0); });
  }});

  return cases;
}

}  // namespace cvit
