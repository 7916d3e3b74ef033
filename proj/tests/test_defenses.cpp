#include <doctest.h>

#include "daash/defenses.hpp"
#include "daash/error.hpp"
#include "daash/io.hpp"
#include "support.hpp"

#include <numbers>

using namespace daash;
using namespace daash::testing;

namespace {

const int kTable50[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                          14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                          18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                          49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

// Direct-summation DCT-II round trip of one 8x8 block at quality 50.
Tensor jpeg50_reference(const Tensor& x) {
  auto c = [](int k) { return k == 0 ? std::sqrt(0.125) : 0.5; };
  double coef[8][8];
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          s += (255.0 * x[i * 8 + j] - 128.0) * std::cos((2 * i + 1) * u * std::numbers::pi / 16) *
               std::cos((2 * j + 1) * v * std::numbers::pi / 16);
      const double q = kTable50[u * 8 + v];
      coef[u][v] = std::round(c(u) * c(v) * s / q) * q;
    }
  Tensor out(x.shape());
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v)
          s += c(u) * c(v) * coef[u][v] * std::cos((2 * i + 1) * u * std::numbers::pi / 16) *
               std::cos((2 * j + 1) * v * std::numbers::pi / 16);
      out[i * 8 + j] = std::clamp((s + 128.0) / 255.0, 0.0, 1.0);
    }
  return out;
}

DefenseSpec spec_for(DefenseKind k) {
  DefenseSpec s;
  s.kind = k;
  return s;
}

const std::vector<DefenseKind> kAll{DefenseKind::Jpeg, DefenseKind::Tvm, DefenseKind::BitDepth, DefenseKind::Nlm,
                                    DefenseKind::Ensemble};

}  // namespace

TEST_SUITE("defenses") {
  TEST_CASE("every defense keeps shape and range") {
    Rng rng(1);
    const Tensor x = random_tensor({2, 3, 11, 13}, rng, 0.0, 1.0);
    for (DefenseKind k : kAll) {
      const Tensor y = apply_defense(x, spec_for(k));
      CAPTURE(defense_name(k));
      CHECK(y.shape() == x.shape());
      CHECK(y.array().minCoeff() >= 0.0);
      CHECK(y.array().maxCoeff() <= 1.0);
    }
  }

  TEST_CASE("bit depth lands on the grid and is idempotent") {
    Rng rng(2);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    for (int bits = 1; bits <= 8; ++bits) {
      const double levels = std::ldexp(1.0, bits) - 1.0;
      const Tensor y = bit_depth_reduce(x, bits);
      CHECK(bit_depth_reduce(y, bits) == y);
      CHECK(max_abs_diff(x, y) <= 0.5 / levels + 1e-12);
      for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] * levels - std::round(y[i] * levels)) <= 1e-9);
    }
  }

  TEST_CASE("jpeg matches a direct DCT round trip") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
      CHECK(max_abs_diff(jpeg_quantize(x, 50), jpeg50_reference(x)) <= 1e-9);
    }
  }

  TEST_CASE("jpeg distortion shrinks with quality") {
    Rng rng(4);
    const Tensor x = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    auto err = [&](int q) { return (jpeg_quantize(x, q).array() - x.array()).square().sum(); };
    CHECK(err(10) > err(50));
    CHECK(err(50) > err(95));
    CHECK(max_abs_diff(jpeg_quantize(x, 100), x) <= 8.0 / 255.0);
  }

  TEST_CASE("total variation of a checkerboard") {
    Tensor x(Shape{1, 1, 2, 2}, 0.0);
    x[1] = 1.0;
    x[2] = 1.0;
    CHECK(total_variation(x) == 4.0);
    CHECK(total_variation(Tensor(Shape{2, 3, 5, 5}, 0.3)) == 0.0);
  }

  TEST_CASE("tv minimisation lowers the objective and never raises variation") {
    Rng rng(5);
    for (double weight : {0.01, 0.05, 0.2}) {
      const Tensor x = random_tensor({1, 2, 12, 12}, rng, 0.0, 1.0);
      const Tensor u = tv_minimize(x, weight, 50);
      const double fu = 0.5 * (u.array() - x.array()).square().sum() + weight * total_variation(u);
      CHECK(fu <= weight * total_variation(x));
      CHECK(total_variation(u) <= total_variation(x));
    }
    Rng r2(6);
    const Tensor x = random_tensor({1, 1, 6, 6}, r2, 0.0, 1.0);
    CHECK(tv_minimize(x, 0.1, 0) == x);
  }

  TEST_CASE("nl means keeps constants and smooths noise") {
    const Tensor flat(Shape{1, 1, 9, 9}, 0.4);
    CHECK(max_abs_diff(nl_means(flat, 0.1, 3, 7), flat) <= 1e-12);
    Rng rng(7);
    Tensor noisy = flat;
    for (Index i = 0; i < noisy.size(); ++i) noisy[i] += rng.uniform(-0.05, 0.05);
    const Tensor y = nl_means(noisy, 0.1, 3, 7);
    auto spread = [](const Tensor& t) { return (t.array() - t.array().mean()).square().sum(); };
    CHECK(spread(y) < spread(noisy));
  }

  TEST_CASE("ensemble applies bitdepth, jpeg, tvm, nlm in order") {
    Rng rng(8);
    const Tensor x = random_tensor({1, 3, 10, 10}, rng, 0.0, 1.0);
    const DefenseSpec s = spec_for(DefenseKind::Ensemble);
    Tensor manual = apply_defense(x, [&] { DefenseSpec d = s; d.kind = DefenseKind::BitDepth; return d; }());
    for (DefenseKind k : {DefenseKind::Jpeg, DefenseKind::Tvm, DefenseKind::Nlm}) {
      DefenseSpec d = s;
      d.kind = k;
      manual = apply_defense(manual, d);
    }
    CHECK(apply_defense(x, s) == manual);
  }

  TEST_CASE("deterministic") {
    Rng rng(9);
    const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    for (DefenseKind k : kAll) CHECK(apply_defense(x, spec_for(k)) == apply_defense(x, spec_for(k)));
  }

  TEST_CASE("invalid inputs and settings are rejected") {
    CHECK_THROWS_AS(parse_defense_kind("nrp"), ConfigError);
    CHECK_THROWS_AS(apply_defense(Tensor(Shape{3, 8, 8}, 0.5), spec_for(DefenseKind::Jpeg)), ShapeError);
    CHECK_THROWS_AS(apply_defense(Tensor(Shape{1, 1, 8, 8}, 1.5), spec_for(DefenseKind::Jpeg)), ConfigError);
    DefenseSpec s;
    s.jpeg_quality = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.bits = 9;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.nlm_patch = 4;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.nlm_h = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("serialization round trip") {
    DefenseSpec s = spec_for(DefenseKind::Ensemble);
    s.jpeg_quality = 33;
    s.tv_weight = 0.123;
    s.bits = 3;
    const DefenseSpec back = parse_defense_spec(parse_key_values(serialize(s, "d.")), "d.", DefenseKind::Ensemble);
    CHECK(serialize(back, "d.") == serialize(s, "d."));
  }
}
