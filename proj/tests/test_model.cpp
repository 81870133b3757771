#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "cvit/analytics.hpp"
#include "cvit/checkpoint.hpp"
#include "cvit/model.hpp"
#include "test_util.hpp"

using cvit::Mode;
using cvit::ModelConfig;
using cvit::Tensor;

namespace {

Tensor logits_of(cvit::CViTModel& model, unsigned input_seed) {
  auto x = tutil::random_input<float>(
      {2, 3, model.config().image_size, model.config().image_size},
      input_seed);
  return model.forward(x, Mode::eval);
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("every preset validates and unknown names are rejected") {
  for (const auto& name : ModelConfig::preset_names())
    CHECK_NOTHROW(ModelConfig::preset(name));
  CHECK_THROWS_AS(ModelConfig::preset("cvit-xxl"), cvit::ConfigError);
}

TEST_CASE("config JSON round trips and rejects malformed input") {
  auto cfg = ModelConfig::preset("cvit-m");
  cfg.weight_sharing = true;
  auto back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.name == cfg.name);
  CHECK(back.depths == cfg.depths);
  CHECK(back.widths == cfg.widths);
  CHECK(back.heads == cfg.heads);
  CHECK(back.ffn_chunks == cfg.ffn_chunks);
  CHECK(back.ffn_expansion == cfg.ffn_expansion);
  CHECK(back.weight_sharing == cfg.weight_sharing);
  CHECK_THROWS_AS(ModelConfig::from_json("{"), cvit::ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json("{\"depth\": [1]}"),
                  cvit::ConfigError);  // unknown key
  CHECK_THROWS_AS(ModelConfig::from_json(
                      R"({"depths":[1],"widths":[13],"heads":[1]})"),
                  cvit::DivisibilityError);  // stem needs width % 8
}

TEST_CASE("config validation rejects inconsistent head/chunk geometry") {
  auto cfg = ModelConfig::preset("tiny-s");
  cfg.heads = {3, 3, 3};  // widths 8/16/16 are not divisible by 3
  CHECK_THROWS_AS(cfg.validate(), cvit::DivisibilityError);
  cfg = ModelConfig::preset("tiny-s");
  cfg.ffn_chunks = 3;
  CHECK_THROWS_AS(cfg.validate(), cvit::DivisibilityError);
  cfg = ModelConfig::preset("tiny-s");
  cfg.image_size = 100;  // not a multiple of 16
  CHECK_THROWS_AS(cfg.validate(), cvit::ConfigError);
  cfg = ModelConfig::preset("tiny-s");
  cfg.ffn_projection = true;  // requires the cascade
  cfg.ffn_cascade = false;
  CHECK_THROWS_AS(cfg.validate(), cvit::ConfigError);
}

TEST_CASE("tiny model forward produces logits and validates input shape") {
  cvit::CViTModel model(ModelConfig::preset("tiny-s"), 1);
  auto x = tutil::random_input<float>({2, 3, 64, 64}, 2);
  auto y = model.forward(x, Mode::eval);
  CHECK(y.shape() == cvit::Shape{2, 1000});
  CHECK_THROWS_AS(
      model.forward(tutil::random_input<float>({2, 3, 32, 32}, 3), Mode::eval),
      cvit::DimensionError);
  CHECK_THROWS_AS(
      model.forward(tutil::random_input<float>({2, 1, 64, 64}, 3), Mode::eval),
      cvit::DimensionError);
}

TEST_CASE("published sizes: parameters and flops land within 12 percent") {
  struct Target {
    const char* preset;
    double params_m, mflops;
  };
  for (const Target& t : {Target{"cvit-s", 1.9, 67.0},
                          Target{"cvit-m", 3.5, 173.0},
                          Target{"cvit-l", 7.0, 249.0},
                          Target{"cvit-xl", 9.8, 435.0}}) {
    cvit::CViTModel model(ModelConfig::preset(t.preset), 7);
    auto report = cvit::cost_report(model);
    const double params_m = double(report.params()) / 1e6;
    const double mflops = report.mflops();
    CAPTURE(t.preset);
    CAPTURE(params_m);
    CAPTURE(mflops);
    CHECK(std::abs(params_m - t.params_m) / t.params_m < 0.12);
    CHECK(std::abs(mflops - t.mflops) / t.mflops < 0.12);
    // Structural count from live tensors agrees with the cost report.
    auto params = model.parameters();
    CHECK(cvit::structural_param_count(params) == report.params());
  }
}

TEST_CASE("chunked FFNs shrink the largest model into the published window") {
  cvit::CViTModel full(ModelConfig::preset("cvit-l"), 7);
  cvit::CViTModel plain(ModelConfig::preset("backbone-l"), 7);
  auto cmp = cvit::compare_costs(cvit::cost_report(plain),
                                 cvit::cost_report(full));
  CAPTURE(cmp.param_reduction_pct);
  CAPTURE(cmp.flop_reduction_pct);
  CHECK(cmp.param_reduction_pct >= 15.0);
  CHECK(cmp.param_reduction_pct <= 25.0);
  CHECK(cmp.flop_reduction_pct >= 10.0);
  CHECK(cmp.flop_reduction_pct <= 20.0);
}

TEST_CASE("same seed gives bitwise-identical models, different seeds differ") {
  cvit::CViTModel a(ModelConfig::preset("tiny-s"), 99);
  cvit::CViTModel b(ModelConfig::preset("tiny-s"), 99);
  cvit::CViTModel c(ModelConfig::preset("tiny-s"), 100);
  auto pa = a.parameters();
  auto pb = b.parameters();
  auto pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_c = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && pa[i].tensor.data() == pb[i].tensor.data();
    any_diff_c = any_diff_c || pa[i].tensor.data() != pc[i].tensor.data();
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
  CHECK(logits_of(a, 5).data() == logits_of(b, 5).data());
}

TEST_CASE("weight sharing pairs neighbors and shrinks the unique count") {
  auto cfg = ModelConfig::preset("tiny-xl");  // depths 1, 2, 3
  cfg.weight_sharing = true;
  cvit::CViTModel model(cfg, 11);
  const auto& report = model.sharing_report();
  REQUIRE(report.pairs.size() == 2);  // one in stage1, one in stage2
  CHECK(report.pairs[0].first == "stage1.block0");
  CHECK(report.pairs[0].second == "stage1.block1");
  CHECK(report.pairs[1].first == "stage2.block0");
  CHECK(report.pairs[1].second == "stage2.block1");
  REQUIRE(report.unpaired.size() == 2);  // stage0's single block + stage2's odd one
  CHECK(report.unpaired[0] == "stage0.block0");
  CHECK(report.unpaired[1] == "stage2.block2");

  auto params = model.parameters();
  const std::size_t structural = cvit::structural_param_count(params);
  const std::size_t unique = cvit::unique_param_count(params);
  CHECK(unique < structural);
  // Exactly the paired FFNs' parameters disappear from the unique count.
  const auto ffn1 = cvit::ccffn_param_count(cfg.ffn_for(cfg.widths[1]));
  const auto ffn2 = cvit::ccffn_param_count(cfg.ffn_for(cfg.widths[2]));
  CHECK(structural - unique == 2 * ffn1 + 2 * ffn2);

  // An unshared model of the same config has equal counts.
  auto cfg2 = cfg;
  cfg2.weight_sharing = false;
  cvit::CViTModel plain(cfg2, 11);
  auto pp = plain.parameters();
  CHECK(cvit::structural_param_count(pp) == cvit::unique_param_count(pp));
  CHECK(cvit::structural_param_count(pp) == structural);

  // The shared model still runs.
  CHECK(logits_of(model, 13).shape() == cvit::Shape{2, 1000});
}

TEST_CASE("checkpoints restore bitwise state into a differently-seeded model") {
  auto cfg = ModelConfig::preset("tiny-s");
  cfg.num_classes = 7;
  cvit::CViTModel a(cfg, 21);
  cvit::CViTModel b(cfg, 22);
  auto la = logits_of(a, 30);
  CHECK(la.data() != logits_of(b, 30).data());

  TempFile f("cvit_test_roundtrip.bin");
  auto pa = a.parameters();
  cvit::save_checkpoint(f.path, pa);
  auto pb = b.parameters();
  cvit::load_checkpoint(f.path, pb);
  CHECK(logits_of(b, 30).data() == la.data());
}

TEST_CASE("checkpoint errors are distinct per failure mode") {
  auto cfg = ModelConfig::preset("tiny-s");
  cfg.num_classes = 7;
  cvit::CViTModel model(cfg, 31);
  auto params = model.parameters();
  TempFile f("cvit_test_corrupt.bin");
  cvit::save_checkpoint(f.path, params);

  SUBCASE("truncation") {
    std::ifstream in(f.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(cvit::load_checkpoint(f.path, params),
                    cvit::TruncatedFileError);
  }
  SUBCASE("bad magic") {
    std::fstream io(f.path, std::ios::binary | std::ios::in | std::ios::out);
    io.write("JUNK", 4);
    io.close();
    CHECK_THROWS_AS(cvit::load_checkpoint(f.path, params), cvit::FormatError);
  }
  SUBCASE("tensor shape mismatch") {
    auto cfg2 = cfg;
    cfg2.num_classes = 9;  // same tensor names, head shapes differ
    cvit::CViTModel other(cfg2, 32);
    auto po = other.parameters();
    CHECK_THROWS_AS(cvit::load_checkpoint(f.path, po),
                    cvit::TensorShapeError);
  }
  SUBCASE("tensor set mismatch") {
    cvit::CViTModel other(cvit::ModelConfig::preset("tiny-m"), 33);
    auto po = other.parameters();
    CHECK_THROWS_AS(cvit::load_checkpoint(f.path, po), cvit::FormatError);
  }
}

TEST_CASE("shared tensors are stored once and restored as aliases") {
  auto cfg = ModelConfig::preset("tiny-xl");
  cfg.num_classes = 5;
  auto unshared_cfg = cfg;
  cfg.weight_sharing = true;

  cvit::CViTModel shared(cfg, 41);
  auto ps = shared.parameters();
  TempFile fs("cvit_test_shared.bin");
  cvit::save_checkpoint(fs.path, ps);

  cvit::CViTModel unshared(unshared_cfg, 42);
  auto pu = unshared.parameters();
  TempFile fu("cvit_test_unshared.bin");
  cvit::save_checkpoint(fu.path, pu);

  // Alias entries skip their payload, so the shared file must be smaller.
  auto size_of = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary | std::ios::ate);
    return in.tellg();
  };
  CHECK(size_of(fs.path) < size_of(fu.path));

  // Round trip into a fresh shared model.
  cvit::CViTModel shared2(cfg, 43);
  auto ps2 = shared2.parameters();
  CHECK_NOTHROW(cvit::load_checkpoint(fs.path, ps2));
  CHECK(logits_of(shared2, 44).data() == logits_of(shared, 44).data());

  // A shared checkpoint cannot masquerade as an unshared model.
  CHECK_THROWS_AS(cvit::load_checkpoint(fs.path, pu), cvit::FormatError);
}

TEST_CASE("folding batch norms changes eval logits by less than 1e-4") {
  auto cfg = ModelConfig::preset("tiny-m");
  cfg.num_classes = 11;
  cvit::CViTModel model(cfg, 51);
  // Drive the running statistics away from init so folding is non-trivial.
  for (int i = 0; i < 4; ++i)
    model.forward(tutil::random_input<float>({4, 3, 64, 64}, 60 + i),
                  Mode::train);
  auto x = tutil::random_input<float>({2, 3, 64, 64}, 70);
  auto before = model.forward(x, Mode::eval);
  model.fuse();
  auto after = model.forward(x, Mode::eval);
  float max_diff = 0.f;
  for (std::size_t i = 0; i < before.numel(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(before.data()[i] - after.data()[i]));
  CAPTURE(max_diff);
  CHECK(max_diff < 1e-4f);
  CHECK_THROWS_AS(model.forward(x, Mode::train), cvit::ContractError);
}

TEST_CASE("cost report renderers carry the pinned CSV schema") {
  cvit::CViTModel model(ModelConfig::preset("tiny-s"), 61);
  auto report = cvit::cost_report(model);
  auto csv = cvit::report_to_csv(report, false);
  CHECK(csv.rfind("layer,kind,params,flops\n", 0) == 0);
  // Doubling the convention doubles exactly the flops column.
  auto doubled = cvit::report_to_csv(report, true);
  CHECK(doubled.rfind("layer,kind,params,flops\n", 0) == 0);
  auto table = cvit::report_to_table(report, false);
  CHECK(table.find("total") != std::string::npos);
  auto json = cvit::report_to_json(report, false);
  CHECK(json.find("\"totals\"") != std::string::npos);
}

TEST_CASE("accuracy-per-flop is guarded and matches the published survey") {
  CHECK_THROWS_AS(cvit::apf_score(70.0, 1.0), cvit::DomainError);
  CHECK_THROWS_AS(cvit::apf_score(70.0, 0.5), cvit::DomainError);
  for (const auto& row : cvit::reference_apf_rows()) {
    CAPTURE(row.model);
    CHECK(std::abs(cvit::apf_score(row.top1, row.mflops) -
                   row.published_apf) <= 0.05);
  }
}
