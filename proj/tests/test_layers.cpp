#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cvit/layers.hpp"
#include "ref_ops.hpp"

using cvit::Mode;
using cvit::RngState;
using cvit::Tensor;

namespace {

Tensor random_input(cvit::Shape shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("rng is deterministic and splittable") {
  RngState a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngState c(42), d(42);
  auto c1 = c.split();
  auto c2 = c.split();
  auto d1 = d.split();
  auto d2 = d.split();
  CHECK(c1.next_u64() == d1.next_u64());  // splitting is deterministic
  CHECK(c2.next_u64() == d2.next_u64());
  RngState e(42);
  auto e1 = e.split();
  auto e2 = e.split();
  CHECK(e1.next_u64() != e2.next_u64());  // children are distinct streams
}

TEST_CASE("rng uniform lies in [0,1) and trunc normal respects the clip") {
  RngState r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  for (int i = 0; i < 10000; ++i) {
    const double v = r.next_trunc_normal(0.02);
    CHECK(std::abs(v) <= 0.04 + 1e-12);
  }
}

TEST_CASE("conv layer init is reproducible and clipped") {
  RngState r1(5), r2(5);
  cvit::Conv2dT<float> a(3, 8, 3, 1, 1, 1, true, r1);
  cvit::Conv2dT<float> b(3, 8, 3, 1, 1, 1, true, r2);
  CHECK(a.weight().data() == b.weight().data());
  for (float v : a.weight().data()) CHECK(std::abs(v) <= 0.04f + 1e-6f);
  CHECK(a.bias().data() == std::vector<float>(8, 0.f));
  RngState r3(6);
  CHECK_THROWS_AS(cvit::Conv2dT<float>(3, 8, 3, 1, 1, 2, false, r3),
                  cvit::DivisibilityError);
}

TEST_CASE("batchnorm layer starts as identity statistics") {
  cvit::BatchNorm2dT<float> bn(4);
  auto x = random_input({2, 4, 3, 3}, 11);
  auto y = bn.forward(x, Mode::eval);  // gamma=1, beta=0, rm=0, rv=1
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] ==
          doctest::Approx(x.data()[i] / std::sqrt(1.f + 1e-5f)));
}

TEST_CASE("batchnorm train then eval uses the running statistics") {
  cvit::BatchNorm2dT<float> bn(2);
  auto x = random_input({4, 2, 5, 5}, 13);
  for (int i = 0; i < 50; ++i) bn.forward(x, Mode::train);
  // After many passes on the same batch, running stats converge to the batch
  // stats, so eval output approaches train output.
  auto yt = bn.forward(x, Mode::train);
  auto ye = bn.forward(x, Mode::eval);
  const double m = 4 * 5 * 5;
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(ye.data()[i] ==
          doctest::Approx(yt.data()[i] * std::sqrt((m - 1) / m)).epsilon(0.02));
}

TEST_CASE("conv+bn fusion reproduces eval output") {
  RngState rng(17);
  cvit::ConvBNT<float> layer(3, 6, 3, 1, 1, 1, rng);
  auto x = random_input({2, 3, 8, 8}, 19);
  // Move the BN away from its identity init so fusion is non-trivial.
  for (int i = 0; i < 5; ++i)
    layer.forward(random_input({4, 3, 8, 8}, 23 + i), Mode::train);
  auto before = layer.forward(x, Mode::eval);
  layer.fuse();
  CHECK(layer.fused());
  auto after = layer.forward(x, Mode::eval);
  for (std::size_t i = 0; i < before.numel(); ++i)
    CHECK(std::abs(before.data()[i] - after.data()[i]) < 1e-5f);
  // Fused layer exposes only conv parameters.
  cvit::ParamList<float> params;
  layer.collect("l", params);
  CHECK(params.size() == 2);  // weight + folded bias
}

TEST_CASE("squeeze-excitation with zeroed projections halves the input") {
  RngState rng(29);
  cvit::SEBlockT<float> se(8, rng);
  cvit::ParamList<float> params;
  se.collect("se", params);
  REQUIRE(params.size() == 2);  // two bias-less projections
  for (auto& p : params)
    std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.f);
  auto x = random_input({2, 8, 4, 4}, 31);
  auto y = se.forward(x);  // sigmoid(0) = 0.5 gate everywhere
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(0.5f * x.data()[i]));
}

TEST_CASE("patch embed downsamples by 16 and widens to the target") {
  RngState rng(37);
  cvit::PatchEmbedT<float> embed(16, rng);
  auto y = embed.forward(random_input({2, 3, 64, 64}, 41), Mode::eval);
  CHECK(y.shape() == cvit::Shape{2, 16, 4, 4});
  RngState rng2(38);
  CHECK_THROWS_AS(cvit::PatchEmbedT<float>(12, rng2),
                  cvit::DivisibilityError);
}

TEST_CASE("residual depthwise conv with zeroed kernel is the identity") {
  RngState rng(43);
  cvit::ResidualDWConvT<float> layer(4, rng);
  cvit::ParamList<float> params;
  layer.collect("dw", params);
  for (auto& p : params)
    if (p.name == "dw.conv.weight")
      std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.f);
  auto x = random_input({1, 4, 5, 5}, 47);
  auto y = layer.forward(x, Mode::eval);
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("downsampling merge halves spatial dims and rejects tiny inputs") {
  RngState rng(53);
  cvit::InvertedResidualMergeT<float> merge(8, 12, rng);
  auto y = merge.forward(random_input({1, 8, 7, 7}, 59), Mode::eval);
  CHECK(y.shape() == cvit::Shape{1, 12, 4, 4});  // pad-1 stride-2: 7 -> 4
  auto y2 = merge.forward(random_input({1, 8, 2, 2}, 59), Mode::eval);
  CHECK(y2.shape() == cvit::Shape{1, 12, 1, 1});
  CHECK_THROWS_AS(merge.forward(random_input({1, 8, 1, 1}, 61), Mode::eval),
                  cvit::ContractError);
}

TEST_CASE("layer cost rows agree with hand-computed values") {
  RngState rng(67);
  cvit::ConvBNT<float> layer(8, 16, 3, 2, 1, 1, rng);
  std::vector<cvit::CostRow> rows;
  std::size_t h = 14, w = 14;
  layer.append_costs(rows, "x", h, w);
  REQUIRE(rows.size() == 2);
  CHECK(h == 7);
  CHECK(w == 7);
  CHECK(rows[0].params == 8 * 16 * 9);
  CHECK(rows[0].flops == 7 * 7 * 16 * 8 * 9);
  CHECK(rows[1].params == 32);   // gamma + beta
  CHECK(rows[1].buffers == 32);  // running stats
  CHECK(rows[1].flops == 0);
}

TEST_CASE("depthwise cost divides by groups") {
  RngState rng(71);
  cvit::Conv2dT<float> dw(16, 16, 3, 1, 1, 16, false, rng);
  std::vector<cvit::CostRow> rows;
  std::size_t h = 10, w = 10;
  dw.append_costs(rows, "dw", h, w);
  CHECK(rows[0].params == 16 * 9);
  CHECK(rows[0].flops == 10 * 10 * 16 * 9);
}
