#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "cvit/analytics.hpp"
#include "cvit/model.hpp"

using cvit::CostReport;
using cvit::CostRow;
using cvit::Tensor;

namespace {

CostReport two_row_report() {
  CostReport r;
  r.model_name = "fixture";
  r.image_size = 32;
  r.rows.push_back(CostRow{"stem.conv", "conv", 100, 4, 1000});
  r.rows.push_back(CostRow{"stage0.ffn", "conv1x1", 50, 2, 500});
  return r;
}

}  // namespace

TEST_CASE("report totals are the row sums") {
  auto r = two_row_report();
  CHECK(r.params() == 150);
  CHECK(r.buffers() == 6);
  CHECK(r.flops() == 1500);
  CHECK(r.mflops() == doctest::Approx(1500.0 / 1e6));
}

TEST_CASE("csv renderer pins its schema and doubling touches only flops") {
  auto r = two_row_report();
  CHECK(cvit::report_to_csv(r, false) ==
        "layer,kind,params,flops\n"
        "stem.conv,conv,100,1000\n"
        "stage0.ffn,conv1x1,50,500\n"
        "total,total,150,1500\n");
  CHECK(cvit::report_to_csv(r, true) ==
        "layer,kind,params,flops\n"
        "stem.conv,conv,100,2000\n"
        "stage0.ffn,conv1x1,50,1000\n"
        "total,total,150,3000\n");
}

TEST_CASE("json renderer names the flop convention and totals") {
  auto r = two_row_report();
  auto j = cvit::report_to_json(r, false);
  CHECK(j.find("\"flop_convention\": \"multiply-add counts 1\"") !=
        std::string::npos);
  CHECK(j.find("\"totals\"") != std::string::npos);
  auto jd = cvit::report_to_json(r, true);
  CHECK(jd.find("\"multiply-add counts 2\"") != std::string::npos);
}

TEST_CASE("table renderer groups rows by leading path component") {
  auto r = two_row_report();
  r.rows.push_back(CostRow{"stage0.attn", "conv1x1", 25, 2, 250});
  auto table = cvit::report_to_table(r, false);
  // stem and stage0 each appear once; stage0 line carries 50+25 params.
  CHECK(table.find("stem") != std::string::npos);
  CHECK(table.find("stage0") != std::string::npos);
  CHECK(table.find("75") != std::string::npos);
  CHECK(table.find("total") != std::string::npos);
  CHECK(table.rfind("stage0.ffn") == std::string::npos);  // grouped away
}

TEST_CASE("accuracy-per-flop matches hand values and guards its domain") {
  // 70% at 100 MFLOPs: 70 / log10(100) = 35.
  CHECK(cvit::apf_score(70.0, 100.0) == doctest::Approx(35.0).epsilon(1e-12));
  // Published headline: 69.9% at 173 MFLOPs -> 31.2.
  CHECK(cvit::apf_rounded(69.9, 173.0) == doctest::Approx(31.2));
  CHECK_THROWS_AS(cvit::apf_score(50.0, 1.0), cvit::DomainError);
  CHECK_THROWS_AS(cvit::apf_score(50.0, 0.0), cvit::DomainError);
  CHECK_NOTHROW(cvit::apf_score(50.0, 1.0001));
}

TEST_CASE("every published survey row reproduces within 0.05") {
  const auto& rows = cvit::reference_apf_rows();
  REQUIRE(rows.size() == 16);
  for (const auto& row : rows) {
    CAPTURE(row.model);
    CHECK(std::abs(cvit::apf_score(row.top1, row.mflops) - row.published_apf) <=
          0.05);
  }
  // The headline comparisons, checked at printed precision.
  CHECK(cvit::apf_rounded(69.9, 173.0) == doctest::Approx(31.2));
  CHECK(cvit::apf_rounded(73.0, 249.0) == doctest::Approx(30.5));
  CHECK(cvit::apf_rounded(75.5, 435.0) == doctest::Approx(28.6));
  CHECK(cvit::apf_rounded(91.0, 4540.0) == doctest::Approx(24.9));
}

TEST_CASE("survey renderers carry all sixteen rows") {
  auto json = cvit::apf_survey_json();
  auto table = cvit::apf_survey_table();
  for (const auto& row : cvit::reference_apf_rows()) {
    CHECK(json.find(row.model) != std::string::npos);
    CHECK(table.find(row.model) != std::string::npos);
  }
  CHECK(json.find("\"computed_apf\"") != std::string::npos);
  CHECK(json.find("\"published_apf\"") != std::string::npos);
}

TEST_CASE("cost comparison reports reductions and guards zero baselines") {
  CostReport base = two_row_report();
  CostReport cand = two_row_report();
  cand.rows[0].params = 60;  // candidate totals: 110 params, 1200 flops
  cand.rows[0].flops = 700;
  auto cmp = cvit::compare_costs(base, cand);
  CHECK(cmp.param_reduction_pct ==
        doctest::Approx(100.0 * (1.0 - 110.0 / 150.0)));
  CHECK(cmp.flop_reduction_pct ==
        doctest::Approx(100.0 * (1.0 - 1200.0 / 1500.0)));
  CostReport empty;
  CHECK_THROWS_AS(cvit::compare_costs(empty, cand), cvit::DomainError);
}

TEST_CASE("unique and structural parameter counts differ only via aliasing") {
  auto w1 = Tensor::from_data({4}, {1, 2, 3, 4});
  auto w2 = Tensor::from_data({2}, {5, 6});
  cvit::ParamList<float> params{
      {"a.w", w1, cvit::ParamKind::weight, false},
      {"b.w", w2, cvit::ParamKind::weight, false},
      {"rm", Tensor::from_data({2}, {0, 0}), cvit::ParamKind::bn_shift, true},
  };
  CHECK(cvit::structural_param_count(params) == 6);  // buffers excluded
  CHECK(cvit::unique_param_count(params) == 6);
  params.push_back({"c.w", w1, cvit::ParamKind::weight, false});  // alias
  CHECK(cvit::structural_param_count(params) == 10);
  CHECK(cvit::unique_param_count(params) == 6);
}

TEST_CASE("model cost report rows cover every stage and the stem") {
  cvit::CViTModel model(cvit::ModelConfig::preset("tiny-s"), 3);
  auto report = cvit::cost_report(model);
  CHECK(report.model_name == "tiny-s");
  CHECK(report.image_size == 64);
  bool embed = false, s0 = false, s1 = false, s2 = false, head = false,
       sub = false;
  for (const auto& r : report.rows) {
    embed = embed || r.path.rfind("embed", 0) == 0;
    s0 = s0 || r.path.rfind("stage0", 0) == 0;
    s1 = s1 || r.path.rfind("stage1", 0) == 0;
    s2 = s2 || r.path.rfind("stage2", 0) == 0;
    sub = sub || r.path.rfind("subsample", 0) == 0;
    head = head || r.path.rfind("head", 0) == 0;
  }
  CHECK(embed);
  CHECK(s0);
  CHECK(s1);
  CHECK(s2);
  CHECK(sub);
  CHECK(head);
  // Live tensors and static accounting agree.
  auto params = model.parameters();
  CHECK(cvit::structural_param_count(params) == report.params());
}
