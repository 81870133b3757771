#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cvit/analytics.hpp"
#include "cvit/ccffn.hpp"
#include "cvit/gradcheck.hpp"
#include "ref_ops.hpp"

using cvit::CCFFNConfig;
using cvit::Mode;
using cvit::RngState;
using cvit::Tensor;
using cvit::Tensor64;

namespace {

Tensor random_input(cvit::Shape shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Scalar reference for one eval-mode chunked-FFN pass at 1x1 spatial size.
// All weights/affines are read out of the built layer through its parameter
// list, then the arithmetic is replayed with plain double loops.
struct ScalarCCFFN {
  std::size_t chunks, c, h;
  bool cascade, projection;
  // Per chunk: expand weight [h][c], expand affine scale/shift [h],
  // project weight [c][h], project affine [c]; per bridge: weight [c][c],
  // affine [c].
  std::vector<std::vector<double>> ew, pw, bw;
  std::vector<std::vector<double>> es, et, ps, pt, bs, bt;

  static std::vector<double> affine_scale(const std::vector<float>& gamma,
                                          const std::vector<float>& var) {
    std::vector<double> s(gamma.size());
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i] = double(gamma[i]) / std::sqrt(double(var[i]) + 1e-5);
    return s;
  }

  std::vector<double> run(const std::vector<double>& x) const {
    std::vector<double> out;
    std::vector<double> carried;
    for (std::size_t i = 0; i < chunks; ++i) {
      std::vector<double> in(x.begin() + i * c, x.begin() + (i + 1) * c);
      if (cascade && i > 0) {
        std::vector<double> prev = carried;
        if (projection) {
          std::vector<double> proj(c, 0.0);
          for (std::size_t a = 0; a < c; ++a) {
            for (std::size_t b = 0; b < c; ++b)
              proj[a] += bw[i - 1][a * c + b] * prev[b];
            proj[a] = proj[a] * bs[i - 1][a] + bt[i - 1][a];
          }
          prev = proj;
        }
        for (std::size_t a = 0; a < c; ++a) in[a] += prev[a];
      }
      std::vector<double> hid(h, 0.0);
      for (std::size_t a = 0; a < h; ++a) {
        for (std::size_t b = 0; b < c; ++b)
          hid[a] += ew[i][a * c + b] * in[b];
        hid[a] = hid[a] * es[i][a] + et[i][a];
        hid[a] = std::max(hid[a], 0.0);
      }
      std::vector<double> y(c, 0.0);
      for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < h; ++b)
          y[a] += pw[i][a * h + b] * hid[b];
        y[a] = y[a] * ps[i][a] + pt[i][a];
      }
      out.insert(out.end(), y.begin(), y.end());
      carried = y;
    }
    return out;
  }
};

ScalarCCFFN extract_scalar(const cvit::CCFFNLayerT<float>& layer,
                           const CCFFNConfig& cfg) {
  ScalarCCFFN s;
  s.chunks = cfg.chunks;
  s.c = cfg.channels / cfg.chunks;
  s.h = cvit::ccffn_hidden_width(s.c, cfg.expansion);
  s.cascade = cfg.cascade;
  s.projection = cfg.projection;
  cvit::ParamList<float> params;
  layer.collect("f", params);
  std::map<std::string, std::vector<float>> by_name;
  for (auto& p : params) by_name[p.name] = p.tensor.data();
  auto fetch = [&](const std::string& n) {
    REQUIRE(by_name.count(n));
    return by_name[n];
  };
  auto to_d = [](const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
  };
  auto shift = [](const std::vector<float>& beta,
                  const std::vector<float>& mean,
                  const std::vector<double>& scale) {
    std::vector<double> t(beta.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = double(beta[i]) - double(mean[i]) * scale[i];
    return t;
  };
  for (std::size_t i = 0; i < s.chunks; ++i) {
    const std::string base = "f.chunk" + std::to_string(i);
    s.ew.push_back(to_d(fetch(base + ".expand.conv.weight")));
    s.pw.push_back(to_d(fetch(base + ".project.conv.weight")));
    auto esc = ScalarCCFFN::affine_scale(fetch(base + ".expand.bn.gamma"),
                                         fetch(base + ".expand.bn.running_var"));
    s.es.push_back(esc);
    s.et.push_back(shift(fetch(base + ".expand.bn.beta"),
                         fetch(base + ".expand.bn.running_mean"), esc));
    auto psc = ScalarCCFFN::affine_scale(fetch(base + ".project.bn.gamma"),
                                         fetch(base + ".project.bn.running_var"));
    s.ps.push_back(psc);
    s.pt.push_back(shift(fetch(base + ".project.bn.beta"),
                         fetch(base + ".project.bn.running_mean"), psc));
  }
  if (s.cascade && s.projection)
    for (std::size_t i = 0; i + 1 < s.chunks; ++i) {
      const std::string base = "f.bridge" + std::to_string(i);
      s.bw.push_back(to_d(fetch(base + ".conv.weight")));
      auto bsc = ScalarCCFFN::affine_scale(fetch(base + ".bn.gamma"),
                                           fetch(base + ".bn.running_var"));
      s.bs.push_back(bsc);
      s.bt.push_back(shift(fetch(base + ".bn.beta"),
                           fetch(base + ".bn.running_mean"), bsc));
    }
  return s;
}

// Push the layer's BN stats away from identity so the oracle is non-trivial.
void warm_up(cvit::CCFFNLayerT<float>& layer, std::size_t channels,
             unsigned seed) {
  for (int i = 0; i < 3; ++i)
    layer.forward(random_input({4, channels, 3, 3}, seed + i), Mode::train);
}

}  // namespace

TEST_CASE("config validation catches every misuse") {
  CHECK_THROWS_AS(cvit::ccffn_validate({12, 5, 2.5, true, false}),
                  cvit::DivisibilityError);
  CHECK_THROWS_AS(cvit::ccffn_validate({12, 0, 2.5, true, false}),
                  cvit::ConfigError);
  CHECK_THROWS_AS(cvit::ccffn_validate({8, 4, 0.3, true, false}),
                  cvit::ConfigError);  // floor(0.3 * 2) = 0 hidden units
  CHECK_THROWS_AS(cvit::ccffn_validate({8, 2, 2.5, false, true}),
                  cvit::ConfigError);  // bridge without cascade
  CHECK_NOTHROW(cvit::ccffn_validate({8, 2, 2.5, true, true}));
  CHECK_THROWS_WITH_AS(cvit::ccffn_validate({14, 4, 2.5, true, false}),
                       doctest::Contains("14"), cvit::DivisibilityError);
}

TEST_CASE("forward preserves shape for every chunk count") {
  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    RngState rng(n);
    cvit::CCFFNLayerT<float> layer({16, n, 2.5, true, false}, rng);
    auto x = random_input({2, 16, 4, 4}, 100 + n);
    auto y = layer.forward(x, Mode::eval);
    CHECK(y.shape() == x.shape());
  }
}

TEST_CASE("eval forward matches the scalar step-through oracle") {
  for (bool projection : {false, true}) {
    CCFFNConfig cfg{6, 3, 2.5, true, projection};
    RngState rng(projection ? 501 : 500);
    cvit::CCFFNLayerT<float> layer(cfg, rng);
    warm_up(layer, cfg.channels, 600);
    auto oracle = extract_scalar(layer, cfg);
    auto x = random_input({1, 6, 1, 1}, 601);
    auto y = layer.forward(x, Mode::eval);
    auto want = oracle.run({x.data().begin(), x.data().end()});
    REQUIRE(want.size() == y.numel());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(want[i]).epsilon(1e-4));
  }
}

TEST_CASE("without cascade the chunks are fully independent") {
  CCFFNConfig cfg{8, 4, 2.5, false, false};
  RngState rng(701);
  cvit::CCFFNLayerT<float> layer(cfg, rng);
  warm_up(layer, cfg.channels, 702);
  auto x = random_input({1, 8, 2, 2}, 703);
  auto y0 = layer.forward(x, Mode::eval);
  // Perturb chunk 2's channels only: chunks 0, 1, 3 must be bit-identical.
  Tensor x2 = Tensor::from_data(x.shape(), x.data());
  for (std::size_t i = 4 * 4; i < 6 * 4; ++i) x2.data()[i] += 1.f;
  auto y1 = layer.forward(x2, Mode::eval);
  const std::size_t plane = 2 * 4;  // channels per chunk * spatial
  for (std::size_t chunk : {0u, 1u, 3u})
    for (std::size_t i = 0; i < plane; ++i)
      CHECK(y0.data()[chunk * plane + i] == y1.data()[chunk * plane + i]);
  // And the perturbed chunk must actually change.
  bool changed = false;
  for (std::size_t i = 0; i < plane; ++i)
    changed = changed || y0.data()[2 * plane + i] != y1.data()[2 * plane + i];
  CHECK(changed);
}

TEST_CASE("with cascade, information flows strictly forward") {
  CCFFNConfig cfg{8, 4, 2.5, true, false};
  RngState rng(801);
  cvit::CCFFNLayerT<float> layer(cfg, rng);
  // Deterministic weights: positive kernels and shifted norms keep every
  // ReLU active, so a perturbation provably reaches all later chunks instead
  // of depending on which units the random init left alive.
  {
    cvit::ParamList<float> params;
    layer.collect("f", params);
    for (auto& p : params) {
      if (p.buffer) continue;
      auto t = p.tensor;
      if (p.kind == cvit::ParamKind::weight)
        std::fill(t.data().begin(), t.data().end(), 0.3f);
      else if (p.kind == cvit::ParamKind::bn_shift)
        std::fill(t.data().begin(), t.data().end(), 1.f);
    }
  }
  auto x = random_input({1, 8, 2, 2}, 803);
  auto y0 = layer.forward(x, Mode::eval);
  const std::size_t plane = 2 * 4;
  for (std::size_t perturbed = 0; perturbed < 4; ++perturbed) {
    Tensor x2 = Tensor::from_data(x.shape(), x.data());
    for (std::size_t i = perturbed * plane; i < (perturbed + 1) * plane; ++i)
      x2.data()[i] += 1.f;
    auto y1 = layer.forward(x2, Mode::eval);
    for (std::size_t chunk = 0; chunk < 4; ++chunk) {
      bool identical = true;
      for (std::size_t i = 0; i < plane; ++i)
        identical = identical &&
                    y0.data()[chunk * plane + i] == y1.data()[chunk * plane + i];
      if (chunk < perturbed)
        CHECK(identical);  // upstream chunks cannot see the change
      else
        CHECK_FALSE(identical);  // the chunk itself and everything after it do
    }
  }
}

TEST_CASE("single-chunk layer is bitwise a plain two-layer FFN") {
  const std::size_t C = 12;
  const double e = 2.0;
  const std::uint64_t seed = 9001;
  RngState r1(seed);
  cvit::CCFFNLayerT<float> layer({C, 1, e, true, false}, r1);
  // Same seed, same construction order: identical weight draws.
  RngState r2(seed);
  const std::size_t hidden = cvit::ccffn_hidden_width(C, e);
  cvit::ConvBNT<float> expand(C, hidden, 1, 1, 0, 1, r2);
  cvit::ConvBNT<float> project(hidden, C, 1, 1, 0, 1, r2);
  auto x = random_input({2, C, 3, 3}, 9002);
  auto got = layer.forward(x, Mode::eval);
  auto want = project.forward(
      cvit::relu(expand.forward(x, Mode::eval)), Mode::eval);
  CHECK(got.data() == want.data());  // bitwise
}

TEST_CASE("split/concat round trips are bitwise across many random shapes") {
  std::mt19937 meta(424242);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + meta() % 6;
    const std::size_t c = n * (1 + meta() % 5);
    const std::size_t N = 1 + meta() % 3, H = 1 + meta() % 5,
                      W = 1 + meta() % 5;
    auto x = random_input({N, c, H, W}, 5000 + trial);
    auto back = cvit::concat_channels(cvit::split_channels(x, n));
    REQUIRE(back.data() == x.data());
  }
}

TEST_CASE("closed-form parameter count equals a walk over the built layer") {
  for (std::size_t C : {8u, 16u, 64u})
    for (std::size_t n : {1u, 2u, 4u})
      for (double e : {2.0, 2.5, 4.0})
        for (int mode = 0; mode < 3; ++mode) {
          const bool cascade = mode > 0;
          const bool projection = mode == 2;
          CCFFNConfig cfg{C, n, e, cascade, projection};
          RngState rng(C * 100 + n * 10 + std::size_t(e * 2) + mode);
          cvit::CCFFNLayerT<float> layer(cfg, rng);
          cvit::ParamList<float> params;
          layer.collect("f", params);
          CHECK(cvit::ccffn_param_count(cfg) ==
                cvit::structural_param_count(params));
        }
}

TEST_CASE("closed-form flop count equals the cost-row walk") {
  for (std::size_t n : {1u, 2u, 4u})
    for (int mode = 0; mode < 3; ++mode) {
      const bool cascade = mode > 0;
      const bool projection = mode == 2;
      CCFFNConfig cfg{16, n, 2.5, cascade, projection};
      RngState rng(77 + n + mode);
      cvit::CCFFNLayerT<float> layer(cfg, rng);
      std::vector<cvit::CostRow> rows;
      std::size_t h = 7, w = 5;
      layer.append_costs(rows, "f", h, w);
      std::size_t total = 0;
      for (const auto& r : rows) total += r.flops;
      CHECK(cvit::ccffn_flop_count(cfg, 7, 5) == total);
      CHECK(h == 7);  // pointwise convs leave the grid alone
      CHECK(w == 5);
    }
}

TEST_CASE("more chunks cost less; higher expansion costs more; cascade is free") {
  const std::size_t C = 32;
  auto params = [&](std::size_t n, double e, bool cascade) {
    return cvit::ccffn_param_count({C, n, e, cascade, false});
  };
  auto flops = [&](std::size_t n, double e, bool cascade) {
    return cvit::ccffn_flop_count({C, n, e, cascade, false}, 7, 7);
  };
  CHECK(params(4, 2.5, true) < params(2, 2.5, true));
  CHECK(flops(4, 2.5, true) < flops(2, 2.5, true));
  CHECK(params(2, 4.0, true) > params(2, 2.5, true));
  CHECK(flops(2, 4.0, true) > flops(2, 2.5, true));
  CHECK(params(2, 2.5, true) == params(2, 2.5, false));
  CHECK(flops(2, 2.5, true) == flops(2, 2.5, false));
  // The bridge projection is the one switch that does add cost.
  CHECK(cvit::ccffn_param_count({C, 2, 2.5, true, true}) > params(2, 2.5, true));
}

TEST_CASE("gradients pass a full finite-difference check in double") {
  for (int mode = 0; mode < 3; ++mode) {
    CCFFNConfig cfg{4, 2, 2.5, mode > 0, mode == 2};
    RngState rng(1200 + mode);
    cvit::CCFFNLayerT<double> layer(cfg, rng);
    cvit::ParamList<double> params;
    layer.collect("f", params);
    RngState shaper(1250 + mode);
    cvit::shape_for_gradcheck(params, shaper);
    auto x = Tensor64::zeros({2, 4, 2, 2});
    RngState xr(1300 + mode);
    for (auto& v : x.data()) v = xr.next_normal();
    x.set_requires_grad(true);

    const auto coeffs = cvit::projection_coefficients(x.numel(), 1400 + mode);
    auto loss_fn = [&]() {
      return cvit::project_to_scalar(layer.forward(x, Mode::train), coeffs);
    };
    auto targets = cvit::targets_from_params(params);
    targets.push_back({"input", x});
    auto result = cvit::gradcheck(targets, loss_fn);
    CAPTURE(result.worst_name);
    CHECK(result.max_rel_err < 1e-4);
    CHECK(result.checked >= 100);
  }
}
