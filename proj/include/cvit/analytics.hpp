#pragma once

#include <cstddef>
#include <string>
#include <unordered_set>
#include <vector>

#include "cvit/costs.hpp"
#include "cvit/layers.hpp"
#include "cvit/model.hpp"

namespace cvit {

// Static cost breakdown of a model: one row per primitive layer, in forward
// order. FLOPs use the multiply-accumulate convention; pass doubled=true to
// the renderers to report 2 ops per MAC instead.
struct CostReport {
  std::string model_name;
  std::size_t image_size = 0;
  std::vector<CostRow> rows;

  std::size_t params() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.params;
    return n;
  }
  std::size_t buffers() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.buffers;
    return n;
  }
  std::size_t flops() const {
    std::size_t n = 0;
    for (const auto& r : rows) n += r.flops;
    return n;
  }
  double mflops() const { return double(flops()) / 1e6; }
};

template <typename T>
CostReport cost_report(const CViTModelT<T>& model) {
  CostReport r;
  r.model_name = model.config().name;
  r.image_size = model.config().image_size;
  model.append_costs(r.rows);
  return r;
}

// Structural count: every parameter slot, shared or not. Buffers excluded.
template <typename T>
std::size_t structural_param_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (!p.buffer) n += p.tensor.numel();
  return n;
}

// Unique count: parameters backed by distinct storage; weight sharing makes
// this smaller than the structural count.
template <typename T>
std::size_t unique_param_count(const ParamList<T>& params) {
  std::unordered_set<const void*> seen;
  std::size_t n = 0;
  for (const auto& p : params)
    if (!p.buffer && seen.insert(p.tensor.storage_id()).second)
      n += p.tensor.numel();
  return n;
}

// Accuracy per log10(MFLOPs). Undefined at or below 1 MFLOP where the
// denominator vanishes or flips sign.
double apf_score(double top1_percent, double mflops);

// APF rounded to the single decimal used for reporting.
double apf_rounded(double top1_percent, double mflops);

struct CostComparison {
  std::size_t base_params = 0, candidate_params = 0;
  std::size_t base_flops = 0, candidate_flops = 0;
  double param_reduction_pct = 0.0;  // positive = candidate is smaller
  double flop_reduction_pct = 0.0;
};

CostComparison compare_costs(const CostReport& base,
                             const CostReport& candidate);

std::string report_to_csv(const CostReport& report, bool doubled);
std::string report_to_json(const CostReport& report, bool doubled);
std::string report_to_table(const CostReport& report, bool doubled);

// Published efficiency survey: measured top-1 / MFLOPs pairs for this model
// family and its competitors, with the score each reported.
struct ApfRow {
  std::string model;
  double top1 = 0.0;
  double mflops = 0.0;
  double published_apf = 0.0;
};

const std::vector<ApfRow>& reference_apf_rows();
std::string apf_survey_json();
std::string apf_survey_table();

}  // namespace cvit
