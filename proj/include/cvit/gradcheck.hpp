#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cvit/layers.hpp"
#include "cvit/rng.hpp"
#include "cvit/tensor.hpp"

namespace cvit {

// Numerical gradient verification. Everything runs in double: the loss
// builder is re-invoked for every central-difference probe, so it must
// reconstruct the forward graph from the *current* contents of the checked
// tensors (the harness perturbs them in place).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst_name;
  std::size_t worst_index = 0;

  bool passes(double tolerance) const { return max_rel_err < tolerance; }
};

struct GradCheckTarget {
  std::string name;
  TensorT<double> tensor;
};

inline double gradcheck_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1.0});
}

inline GradCheckResult gradcheck(
    const std::vector<GradCheckTarget>& targets,
    const std::function<TensorT<double>()>& loss_fn, double eps = 1e-4) {
  GradCheckResult result;
  for (const auto& t : targets)
    if (!t.tensor.requires_grad())
      throw ContractError("gradcheck target \"" + t.name +
                          "\" does not require gradients");

  // One analytic pass; gradients land on the target tensors themselves.
  for (const auto& t : targets) t.tensor.node()->grad.clear();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(targets.size());
  for (const auto& t : targets) analytic.push_back(t.tensor.grad());

  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    TensorT<double> handle = targets[ti].tensor;  // aliases the same storage
    auto& data = handle.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + eps;
      const double up = loss_fn().data()[0];
      data[i] = keep - eps;
      const double down = loss_fn().data()[0];
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = gradcheck_rel_err(analytic[ti][i], numeric);
      ++result.checked;
      if (err > result.max_rel_err) {
        result.max_rel_err = err;
        result.worst_name = targets[ti].name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// Fixed random linear functional of a tensor, used to reduce a network
// output to the scalar loss a gradient check needs. Coefficients are drawn
// once so every probe sees the same functional.
inline std::vector<double> projection_coefficients(std::size_t n,
                                                   std::uint64_t seed) {
  RngState rng(seed);
  std::vector<double> c(n);
  for (auto& v : c) v = rng.next_normal();
  return c;
}

inline TensorT<double> project_to_scalar(const TensorT<double>& y,
                                         const std::vector<double>& coeffs) {
  if (coeffs.size() != y.numel())
    throw DimensionError("projection needs " + std::to_string(y.numel()) +
                         " coefficients, got " +
                         std::to_string(coeffs.size()));
  auto c = TensorT<double>::from_data(y.shape(), coeffs);
  return sum(mul(y, c));
}

// Gradient checks probe each parameter by +/- eps, so any ReLU whose input
// sits within the probe's reach of zero turns the loss non-differentiable and
// the central difference meaningless. Batch norm makes this near-certain at
// default init: it rescales pre-activations to unit variance, placing plenty
// of them next to the kink. This reshapes a network so the check is
// well-posed: conv/linear weights get a healthy spread, BN scales shrink and
// BN shifts push every normalized activation ~3 sigma past the kink.
inline void shape_for_gradcheck(ParamList<double>& params, RngState& rng) {
  for (auto& p : params) {
    if (p.buffer) continue;
    auto data = p.tensor;  // alias
    switch (p.kind) {
      case ParamKind::weight:
        for (auto& v : data.data()) v = 0.45 * rng.next_normal();
        break;
      case ParamKind::bias:
        for (auto& v : data.data()) v = 0.1 * rng.next_normal();
        break;
      case ParamKind::bn_scale:
        for (auto& v : data.data()) v = 0.5;
        break;
      case ParamKind::bn_shift:
        for (auto& v : data.data()) v = 3.0;
        break;
    }
  }
}

// Convenience: gradcheck targets from a parameter list (buffers excluded,
// duplicates from weight sharing visited once).
inline std::vector<GradCheckTarget> targets_from_params(
    const ParamList<double>& params) {
  std::vector<GradCheckTarget> out;
  std::unordered_set<const void*> seen;
  for (const auto& p : params)
    if (!p.buffer && seen.insert(p.tensor.storage_id()).second)
      out.push_back({p.name, p.tensor});
  return out;
}

}  // namespace cvit
