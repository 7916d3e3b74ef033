#include <doctest.h>

#include "daash/attacks.hpp"
#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/metrics.hpp"
#include "support.hpp"

#include <limits>

using namespace daash;
using namespace daash::testing;

namespace {

const std::vector<AttackKind> kLinf{AttackKind::Fgsm,   AttackKind::Bim,    AttackKind::Pgd,   AttackKind::MiFgsm,
                                    AttackKind::NiFgsm, AttackKind::DiFgsm, AttackKind::TiFgsm};

const LabeledBatch& batch() {
  static const LabeledBatch b = small_correct().slice(0, 32);
  return b;
}

}  // namespace

TEST_SUITE("base attacks") {
  TEST_CASE("none returns the input bit-exactly") {
    CHECK(run_base_attack(small_model(), batch().images, batch().labels, default_attack(AttackKind::None)) ==
          batch().images);
  }

  TEST_CASE("zero budget is the identity") {
    for (AttackKind k : kLinf) {
      AttackSpec s = default_attack(k);
      s.eps = 0.0;
      if (k == AttackKind::Fgsm) s.step_size = 0.0;
      CAPTURE(attack_name(k));
      CHECK(run_base_attack(small_model(), batch().images, batch().labels, s) == batch().images);
    }
    AttackSpec cw = default_attack(AttackKind::CwL2);
    cw.steps = 0;
    CHECK(run_base_attack(small_model(), batch().images, batch().labels, cw) == batch().images);
  }

  TEST_CASE("fgsm on a linear two-class model has a closed form") {
    ClassifierSpec spec;
    spec.arch = Arch::Mlp;
    spec.channels = 1;
    spec.height = 4;
    spec.width = 4;
    spec.classes = 2;
    spec.hidden = {};
    const TrainedModel m = init_model(spec, 12);
    const Tensor& w = m.weights.at("fc1.w");  // (16, 2)
    Rng rng(6);
    const Tensor x = random_tensor({3, 1, 4, 4}, rng, 0.0, 1.0);
    const std::vector<int> y{0, 1, 0};
    AttackSpec s = default_attack(AttackKind::Fgsm);
    const Tensor out = run_base_attack(m, x, y, s);
    for (Index n = 0; n < 3; ++n) {
      const int t = y[static_cast<std::size_t>(n)], o = 1 - t;
      for (Index p = 0; p < 16; ++p) {
        const double d = w[p * 2 + o] - w[p * 2 + t];
        const double expected = std::clamp(x[n * 16 + p] + s.eps * ((d > 0) - (d < 0)), 0.0, 1.0);
        CHECK(out[n * 16 + p] == expected);
      }
    }
  }

  TEST_CASE("l-inf family stays in the ball and in range") {
    Rng rng(7);
    const Tensor x = random_tensor(small_spec().input_shape(8), rng, 0.0, 1.0);
    const std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
    for (AttackKind k : kLinf) {
      for (double eps : {2.0 / 255, 8.0 / 255, 0.1}) {
        AttackSpec s = default_attack(k);
        s.eps = eps;
        if (k == AttackKind::Fgsm) s.step_size = eps;
        const Tensor out = run_base_attack(small_model(), x, y, s);
        CAPTURE(attack_name(k));
        CHECK(max_abs_diff(out, x) <= eps + 1e-12);
        CHECK(out.array().minCoeff() >= 0.0);
        CHECK(out.array().maxCoeff() <= 1.0);
      }
    }
  }

  TEST_CASE("bim with one full step equals fgsm bit-exactly") {
    AttackSpec bim = default_attack(AttackKind::Bim);
    bim.steps = 1;
    bim.step_size = bim.eps;
    CHECK(run_base_attack(small_model(), batch().images, batch().labels, bim) ==
          run_base_attack(small_model(), batch().images, batch().labels, default_attack(AttackKind::Fgsm)));
  }

  TEST_CASE("stochastic attacks are reproducible per seed") {
    for (AttackKind k : {AttackKind::Pgd, AttackKind::DiFgsm}) {
      AttackSpec s = default_attack(k);
      s.seed = 17;
      const Tensor a = run_base_attack(small_model(), batch().images, batch().labels, s);
      CHECK(a == run_base_attack(small_model(), batch().images, batch().labels, s));
      s.seed = 18;
      CHECK_FALSE(a == run_base_attack(small_model(), batch().images, batch().labels, s));
    }
  }

  TEST_CASE("larger budget is at least as strong on average") {
    const LabeledBatch data = filter_correct(small_model(), make_synthetic(300, 4, 3, 16, 16, 21)).slice(0, 256);
    REQUIRE(data.size() == 256);
    for (AttackKind k : kLinf) {
      AttackSpec lo = default_attack(k), hi = default_attack(k);
      lo.eps = 2.0 / 255;
      if (k == AttackKind::Fgsm) lo.step_size = lo.eps;
      const double asr_lo = attack_success_rate(small_model(), data, run_base_attack(small_model(), data.images, data.labels, lo));
      const double asr_hi = attack_success_rate(small_model(), data, run_base_attack(small_model(), data.images, data.labels, hi));
      CAPTURE(attack_name(k));
      CHECK(asr_hi >= asr_lo);
    }
  }

  TEST_CASE("cw finds boundary examples and its margins are honest") {
    for (double kappa : {0.0, 0.5}) {
      AttackSpec s = default_attack(AttackKind::CwL2);
      s.cw_kappa = kappa;
      const CwResult r = cw_l2(small_model(), batch().images, batch().labels, s);
      const Tensor logits = predict(small_model(), r.images);
      int successes = 0;
      for (Index n = 0; n < batch().size(); ++n) {
        const int y = batch().labels[static_cast<std::size_t>(n)];
        double other = -1e300;
        for (int c = 0; c < 4; ++c)
          if (c != y) other = std::max(other, logits[n * 4 + c]);
        const double margin = logits[n * 4 + y] - other;
        CHECK(std::abs(margin - r.margin[static_cast<std::size_t>(n)]) <= 1e-9);
        if (r.success[static_cast<std::size_t>(n)]) {
          ++successes;
          CHECK(margin < -kappa);
          CHECK(margin <= 0.0);
        }
      }
      CHECK(successes > 0);
      CHECK(r.images.array().minCoeff() >= 0.0);
      CHECK(r.images.array().maxCoeff() <= 1.0);
      CHECK(run_base_attack(small_model(), batch().images, batch().labels, s) == r.images);
    }
  }

  TEST_CASE("non-finite gradients name the attack") {
    TrainedModel broken = small_model();
    broken.weights.at("fc2.w")[0] = std::numeric_limits<double>::quiet_NaN();
    for (AttackKind k : {AttackKind::Pgd, AttackKind::Fgsm}) {
      try {
        run_base_attack(broken, batch().images, batch().labels, default_attack(k));
        FAIL("expected a numeric error");
      } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find(attack_name(k)) != std::string::npos);
      }
    }
  }

  TEST_CASE("spec validation and parsing") {
    CHECK_THROWS_AS(parse_attack_kind("fab"), ConfigError);
    AttackSpec s = default_attack(AttackKind::TiFgsm);
    s.kernel = 4;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = default_attack(AttackKind::DiFgsm);
    s.diversity_prob = 1.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = default_attack(AttackKind::Bim);
    s.step_size = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.eps = -0.1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK_THROWS_AS(run_base_attack(small_model(), Tensor(Shape{1, 3, 8, 8}), std::vector<int>{0}, default_attack(AttackKind::Fgsm)),
                    ShapeError);
  }

  TEST_CASE("serialization round trip") {
    for (const AttackSpec& a : default_pool()) {
      AttackSpec b = a;
      b.seed = 99;
      b.cw_c = 0.37;
      const AttackSpec back = parse_attack_spec(parse_key_values(serialize(b, "p.")), "p.");
      CHECK(serialize(back, "p.") == serialize(b, "p."));
    }
  }

  TEST_CASE("pool holds nine attacks with none first") {
    const auto pool = default_pool();
    REQUIRE(pool.size() == 9);
    CHECK(pool.front().kind == AttackKind::None);
    CHECK(pool.back().kind == AttackKind::CwL2);
    CHECK(default_attack(AttackKind::CwL2).steps == 50);
    CHECK(default_attack(AttackKind::Pgd).eps == 8.0 / 255.0);
  }
}
