#include "cvit/analytics.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace cvit {

double apf_score(double top1_percent, double mflops) {
  if (mflops <= 1.0)
    throw DomainError("accuracy-per-flop is undefined at " +
                      std::to_string(mflops) +
                      " MFLOPs (needs more than 1)");
  return top1_percent / std::log10(mflops);
}

double apf_rounded(double top1_percent, double mflops) {
  return std::round(apf_score(top1_percent, mflops) * 10.0) / 10.0;
}

CostComparison compare_costs(const CostReport& base,
                             const CostReport& candidate) {
  CostComparison c;
  c.base_params = base.params();
  c.candidate_params = candidate.params();
  c.base_flops = base.flops();
  c.candidate_flops = candidate.flops();
  if (c.base_params == 0 || c.base_flops == 0)
    throw DomainError("baseline model has no parameters or no compute");
  c.param_reduction_pct =
      100.0 * (1.0 - double(c.candidate_params) / double(c.base_params));
  c.flop_reduction_pct =
      100.0 * (1.0 - double(c.candidate_flops) / double(c.base_flops));
  return c;
}

namespace {

std::size_t scaled(std::size_t flops, bool doubled) {
  return doubled ? 2 * flops : flops;
}

// First path component, e.g. "stage0" from "stage0.block1.attn.proj.conv".
std::string top_component(const std::string& path) {
  const auto dot = path.find('.');
  return dot == std::string::npos ? path : path.substr(0, dot);
}

}  // namespace

std::string report_to_csv(const CostReport& report, bool doubled) {
  std::ostringstream out;
  out << "layer,kind,params,flops\n";
  for (const auto& r : report.rows)
    out << r.path << ',' << r.kind << ',' << r.params << ','
        << scaled(r.flops, doubled) << '\n';
  out << "total,total," << report.params() << ','
      << scaled(report.flops(), doubled) << '\n';
  return out.str();
}

std::string report_to_json(const CostReport& report, bool doubled) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"layer", r.path},
                    {"kind", r.kind},
                    {"params", r.params},
                    {"buffers", r.buffers},
                    {"flops", scaled(r.flops, doubled)}});
  nlohmann::json j{
      {"model", report.model_name},
      {"image_size", report.image_size},
      {"flop_convention", doubled ? "multiply-add counts 2" : "multiply-add counts 1"},
      {"rows", rows},
      {"totals",
       {{"params", report.params()},
        {"buffers", report.buffers()},
        {"flops", scaled(report.flops(), doubled)},
        {"mflops", double(scaled(report.flops(), doubled)) / 1e6}}}};
  return j.dump(2);
}

std::string report_to_table(const CostReport& report, bool doubled) {
  // Group by top-level component to keep the table readable; the CSV and
  // JSON renderers carry the full per-layer rows.
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>>
      groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : report.rows) {
    const std::string key = top_component(r.path);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, groups.size());
      groups.push_back({key, {r.params, scaled(r.flops, doubled)}});
    } else {
      groups[it->second].second.first += r.params;
      groups[it->second].second.second += scaled(r.flops, doubled);
    }
  }
  std::ostringstream out;
  out << report.model_name << " @ " << report.image_size << "x"
      << report.image_size << "\n";
  out << std::left << std::setw(16) << "section" << std::right << std::setw(12)
      << "params" << std::setw(14) << "flops" << "\n";
  for (const auto& g : groups)
    out << std::left << std::setw(16) << g.first << std::right << std::setw(12)
        << g.second.first << std::setw(14) << g.second.second << "\n";
  out << std::left << std::setw(16) << "total" << std::right << std::setw(12)
      << report.params() << std::setw(14) << scaled(report.flops(), doubled)
      << "\n";
  out << std::fixed << std::setprecision(2) << "params: "
      << double(report.params()) / 1e6 << "M   flops: "
      << double(scaled(report.flops(), doubled)) / 1e6
      << "M   buffers: " << report.buffers() << "\n";
  return out.str();
}

const std::vector<ApfRow>& reference_apf_rows() {
  static const std::vector<ApfRow> rows{
      {"CoCa", 91.0, 4540.0, 24.9},
      {"cvit-m", 69.9, 173.0, 31.2},
      {"EfficientViT-M2", 70.8, 201.0, 30.7},
      {"MobileViTV2-0.5", 70.2, 480.0, 26.2},
      {"EdgeNeXt-XXS", 71.2, 261.0, 29.5},
      {"Mini-DeiT-Ti", 73.0, 2600.0, 21.4},
      {"SHViT-S1", 72.8, 241.0, 30.6},
      {"cvit-l", 73.0, 249.0, 30.5},
      {"EfficientViT-M4", 74.3, 299.0, 30.0},
      {"EdgeViT-XXS", 74.4, 600.0, 26.8},
      {"SHViT-S2", 75.2, 366.0, 29.3},
      {"cvit-xl", 75.5, 435.0, 28.6},
      {"EfficientFormerV2-S0", 75.7, 800.0, 26.1},
      {"EfficientViT-M5", 77.1, 522.0, 28.4},
      {"SHViT-S3", 77.4, 601.0, 27.9},
      {"EdgeViT-XS", 77.2, 1100.0, 25.4},
  };
  return rows;
}

std::string apf_survey_json() {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reference_apf_rows())
    rows.push_back({{"model", r.model},
                    {"top1", r.top1},
                    {"mflops", r.mflops},
                    {"published_apf", r.published_apf},
                    {"computed_apf", apf_rounded(r.top1, r.mflops)}});
  return nlohmann::json{{"rows", rows}}.dump(2);
}

std::string apf_survey_table() {
  std::ostringstream out;
  out << std::left << std::setw(22) << "model" << std::right << std::setw(8)
      << "top1" << std::setw(10) << "mflops" << std::setw(12) << "published"
      << std::setw(10) << "computed" << "\n";
  out << std::fixed << std::setprecision(1);
  for (const auto& r : reference_apf_rows())
    out << std::left << std::setw(22) << r.model << std::right << std::setw(8)
        << r.top1 << std::setw(10) << r.mflops << std::setw(12)
        << r.published_apf << std::setw(10) << apf_rounded(r.top1, r.mflops)
        << "\n";
  return out.str();
}

}  // namespace cvit
