#pragma once

#include "daash/daash.hpp"
#include "daash/metrics.hpp"
#include "support.hpp"

#include <string>
#include <vector>

namespace daash::testing {

/// One differentiable operation checked against central differences.
/// `run(i)` builds the i-th randomized instance and returns its error.
struct GradientCase {
  std::string name;
  std::function<double(int)> run;
};

inline Shape random_shape(Rng& rng, Index rank, Index lo = 1, Index hi = 4) {
  Shape s(static_cast<std::size_t>(rank));
  for (auto& d : s) d = lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  return s;
}

inline GradientCase unary_case(std::string name, std::function<Var(Var)> op, double lo, double hi,
                               std::vector<double> kinks = {}) {
  return {name, [=](int i) {
            Rng rng(mix_seed(1000 + i, name));
            const Shape s = random_shape(rng, 1 + static_cast<Index>(rng.below(3)));
            return gradient_error([&](Graph&, const std::vector<Var>& v) { return weighted_sum(op(v[0]), i); },
                                  {random_away_from(s, rng, lo, hi, kinks)});
          }};
}

inline GradientCase binary_case(std::string name, std::function<Var(Var, Var)> op, double blo = -1.0,
                                double bhi = 1.0, std::vector<double> bkinks = {}) {
  return {name, [=](int i) {
            Rng rng(mix_seed(2000 + i, name));
            const Shape s = random_shape(rng, 1 + static_cast<Index>(rng.below(3)));
            return gradient_error(
                [&](Graph&, const std::vector<Var>& v) { return weighted_sum(op(v[0], v[1]), i); },
                {random_tensor(s, rng), random_away_from(s, rng, blo, bhi, bkinks, 0.2)});
          }};
}

/// Tiny random CNN on 3x8x8 inputs for the meta-loss check.
inline const TrainedModel& tiny_model() {
  static const TrainedModel m = [] {
    ClassifierSpec s = small_spec();
    s.height = 8;
    s.width = 8;
    return init_model(s, 77);
  }();
  return m;
}

inline std::vector<GradientCase> gradient_cases() {
  std::vector<GradientCase> cases;
  cases.push_back(binary_case("add", [](Var a, Var b) { return add(a, b); }));
  cases.push_back(binary_case("sub", [](Var a, Var b) { return sub(a, b); }));
  cases.push_back(binary_case("mul", [](Var a, Var b) { return mul(a, b); }));
  cases.push_back(binary_case("div", [](Var a, Var b) { return div(a, b); }, -2.0, 2.0, {0.0}));
  cases.push_back(unary_case("scale", [](Var a) { return scale(a, -1.7); }, -1, 1));
  cases.push_back(unary_case("add_scalar", [](Var a) { return add_scalar(a, 0.3); }, -1, 1));
  cases.push_back(unary_case("relu", [](Var a) { return relu(a); }, -1, 1, {0.0}));
  cases.push_back(unary_case("tanh", [](Var a) { return tanh(a); }, -2, 2));
  cases.push_back(unary_case("exp", [](Var a) { return exp(a); }, -2, 2));
  cases.push_back(unary_case("log", [](Var a) { return log(a); }, 0.1, 3));
  cases.push_back(unary_case("sign", [](Var a) { return sign(a); }, -1, 1, {0.0}));
  cases.push_back(unary_case("clamp", [](Var a) { return clamp(a, -0.5, 0.5); }, -1, 1, {-0.5, 0.5}));
  cases.push_back(unary_case("reshape", [](Var a) { return reshape(a, Shape{a.value().size()}); }, -1, 1));
  cases.push_back(unary_case("sum", [](Var a) { return scale(sum(a), 1.0); }, -1, 1));
  cases.push_back(unary_case("mean", [](Var a) { return mean(a); }, -1, 1));
  cases.push_back(unary_case("sum_last_axis", [](Var a) { return sum_last_axis(a); }, -1, 1));
  cases.push_back(unary_case("softmax", [](Var a) { return softmax(a); }, -3, 3));
  cases.push_back(unary_case("log_softmax", [](Var a) { return log_softmax(a); }, -3, 3));

  cases.push_back({"matmul", [](int i) {
                     Rng rng(mix_seed(3000 + i, "matmul"));
                     const Shape s = random_shape(rng, 3, 1, 5);
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1]), i); },
                         {random_tensor({s[0], s[1]}, rng), random_tensor({s[1], s[2]}, rng)});
                   }});
  cases.push_back({"conv2d", [](int i) {
                     Rng rng(mix_seed(4000 + i, "conv2d"));
                     const Index k = 1 + 2 * static_cast<Index>(rng.below(3));
                     const Index b = 1 + static_cast<Index>(rng.below(2)), cin = 1 + static_cast<Index>(rng.below(3));
                     const Index cout = 1 + static_cast<Index>(rng.below(3));
                     const Index h = 3 + static_cast<Index>(rng.below(4)), w = 3 + static_cast<Index>(rng.below(4));
                     const Index pad = (rng.below(2) && h >= k && w >= k) ? 0 : -1;
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return weighted_sum(conv2d(v[0], v[1], pad), i); },
                         {random_tensor({b, cin, h, w}, rng), random_tensor({cout, cin, k, k}, rng)});
                   }});
  cases.push_back({"bias_add", [](int i) {
                     Rng rng(mix_seed(5000 + i, "bias_add"));
                     const Shape s = random_shape(rng, 2 + static_cast<Index>(rng.below(3)));
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return weighted_sum(bias_add(v[0], v[1]), i); },
                         {random_tensor(s, rng), random_tensor({s[1]}, rng)});
                   }});
  cases.push_back({"gaussian_blur", [](int i) {
                     Rng rng(mix_seed(6000 + i, "blur"));
                     const Index k = 1 + 2 * static_cast<Index>(rng.below(3));
                     const Shape s{1 + static_cast<Index>(rng.below(2)), 1 + static_cast<Index>(rng.below(2)),
                                   2 + static_cast<Index>(rng.below(5)), 2 + static_cast<Index>(rng.below(5))};
                     const double sigma = rng.uniform(0.5, 2.0);
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) {
                           return weighted_sum(gaussian_blur(v[0], k, sigma), i);
                         },
                         {random_tensor(s, rng)});
                   }});
  cases.push_back({"avg_pool", [](int i) {
                     Rng rng(mix_seed(7000 + i, "pool"));
                     const Index k = 1 + static_cast<Index>(rng.below(3));
                     const Index stride = 1 + static_cast<Index>(rng.below(2));
                     const Shape s{1 + static_cast<Index>(rng.below(2)), 1 + static_cast<Index>(rng.below(2)),
                                   k + static_cast<Index>(rng.below(4)), k + static_cast<Index>(rng.below(4))};
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return weighted_sum(avg_pool(v[0], k, stride), i); },
                         {random_tensor(s, rng)});
                   }});
  cases.push_back({"ssim", [](int i) {
                     Rng rng(mix_seed(8000 + i, "ssim"));
                     SsimConfig cfg;
                     if (i % 3 == 0) cfg.window = SsimWindow::Global;
                     cfg.size = 3 + static_cast<Index>(rng.below(4));
                     const Index side = cfg.size + static_cast<Index>(rng.below(4));
                     const Shape s{1 + static_cast<Index>(rng.below(2)), 1 + static_cast<Index>(rng.below(2)), side,
                                   side};
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return ssim(v[0], v[1], cfg); },
                         {random_tensor(s, rng, 0.0, 1.0), random_tensor(s, rng, 0.0, 1.0)});
                   }});
  cases.push_back({"meta_loss", [](int i) {
                     Rng rng(mix_seed(9000 + i, "meta"));
                     const TrainedModel& m = tiny_model();
                     const Index n = 1 + static_cast<Index>(rng.below(2));
                     const Tensor x = random_tensor(m.spec.input_shape(n), rng, 0.0, 1.0);
                     std::vector<int> y;
                     for (Index k = 0; k < n; ++k) y.push_back(static_cast<int>(rng.below(4)));
                     const double la = rng.uniform(0.1, 2.0), ls = rng.uniform(0.1, 2.0);
                     return gradient_error(
                         [&](Graph&, const std::vector<Var>& v) { return meta_loss(m, x, v[0], y, la, ls); },
                         {random_tensor(x.shape(), rng, 0.0, 1.0)});
                   }});
  return cases;
}

}  // namespace daash::testing
