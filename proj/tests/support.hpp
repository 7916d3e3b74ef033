#pragma once

#include "daash/autodiff.hpp"
#include "daash/datasets.hpp"
#include "daash/model.hpp"
#include "daash/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace daash::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Values in [lo, hi] at least `gap` away from every point in `kinks`.
inline Tensor random_away_from(const Shape& shape, Rng& rng, double lo, double hi, std::vector<double> kinks,
                               double gap = 1e-3) {
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
    t[i] = v;
  }
  return t;
}

using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Largest relative error, over inputs, between the reverse-mode gradient
/// and central differences: |g - n|_2 / max(|g|_2, |n|_2, floor).
inline double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                             double floor = 1e-8) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.variable(t));
  Var out = f(g, vars);
  Gradients grads = g.backward(out);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Graph e;
    std::vector<Var> cs;
    for (const auto& t : xs) cs.push_back(e.constant(t));
    return f(e, cs).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads[vars[k]];
    Tensor numeric(inputs[k].shape());
    std::vector<Tensor> xs = inputs;
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      xs[k][i] = x0 + h;
      const double up = eval(xs);
      xs[k][i] = x0 - h;
      const double down = eval(xs);
      xs[k][i] = x0;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double diff = (analytic.array() - numeric.array()).matrix().norm();
    const double scale = std::max({analytic.array().matrix().norm(), numeric.array().matrix().norm(), floor});
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// sum(op(x) * w) for a fixed random weighting, so every output matters.
inline Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.graph().constant(random_tensor(y.shape(), rng))));
}

inline ClassifierSpec small_spec(Arch arch = Arch::SmallCnn) {
  ClassifierSpec s;
  s.arch = arch;
  s.channels = 3;
  s.height = 16;
  s.width = 16;
  s.classes = 4;
  s.conv1 = 4;
  s.conv2 = 8;
  s.hidden = {16};
  return s;
}

inline const Dataset& small_data() {
  static const Dataset d = [] {
    Dataset out;
    out.train = make_synthetic(400, 4, 3, 16, 16, 11);
    out.test = make_synthetic(128, 4, 3, 16, 16, 12);
    return out;
  }();
  return d;
}

/// Standard CNN trained on small_data(); cached per process.
inline const TrainedModel& small_model() {
  static const TrainedModel m = [] {
    TrainConfig tc;
    tc.epochs = 8;
    tc.lr = 0.01;
    tc.seed = 5;
    return train_classifier(small_data().train, small_spec(), tc);
  }();
  return m;
}

/// Correctly classified test samples of small_model().
inline const LabeledBatch& small_correct() {
  static const LabeledBatch b = filter_correct(small_model(), small_data().test);
  return b;
}

}  // namespace daash::testing
