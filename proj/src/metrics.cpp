#include "daash/metrics.hpp"

#include "daash/error.hpp"

#include <numeric>

namespace daash {
namespace {

Var window_mean(Var x, const SsimConfig& cfg) {
  const Tensor& v = x.value();
  if (cfg.window == SsimWindow::Global) return avg_pool(x, v.dim(2), v.dim(3), 1);
  return avg_pool(x, cfg.size, 1);
}

}  // namespace

void SsimConfig::validate(Index height, Index width) const {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("ssim: c1 and c2 must be positive");
  if (!(range > 0.0)) throw ConfigError("ssim: dynamic range must be positive");
  if (window == SsimWindow::Sliding && (size < 1 || size > std::min(height, width))) {
    throw ConfigError("ssim: window " + std::to_string(size) + " does not fit " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
}

Var ssim(Var a, Var b, const SsimConfig& cfg) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.value().rank() != 4) throw ShapeError("ssim: expected (N, C, H, W), got " + to_string(a.shape()));
  cfg.validate(a.value().dim(2), a.value().dim(3));
  Var mu_a = window_mean(a, cfg);
  Var mu_b = window_mean(b, cfg);
  Var var_a = window_mean(mul(a, a), cfg) - mul(mu_a, mu_a);
  Var var_b = window_mean(mul(b, b), cfg) - mul(mu_b, mu_b);
  Var cov = window_mean(mul(a, b), cfg) - mul(mu_a, mu_b);
  Var num = mul(add_scalar(scale(mul(mu_a, mu_b), 2.0), cfg.c1), add_scalar(scale(cov, 2.0), cfg.c2));
  Var den = mul(add_scalar(mul(mu_a, mu_a) + mul(mu_b, mu_b), cfg.c1), add_scalar(var_a + var_b, cfg.c2));
  return mean(div(num, den));
}

double ssim_value(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  Graph g;
  return ssim(g.constant(a), g.constant(b), cfg).value().item();
}

std::vector<double> ssim_per_sample(const Tensor& a, const Tensor& b, const SsimConfig& cfg) {
  require_same_shape(a, b, "ssim_per_sample");
  std::vector<double> out;
  for (Index i = 0; i < a.dim(0); ++i) out.push_back(ssim_value(a.slice(i, i + 1), b.slice(i, i + 1), cfg));
  return out;
}

double AttackOutcome::success_rate() const {
  if (success.empty()) return 0.0;
  return static_cast<double>(std::count(success.begin(), success.end(), true)) / static_cast<double>(success.size());
}

double AttackOutcome::mean_ssim() const {
  if (ssim.empty()) return 1.0;
  return std::accumulate(ssim.begin(), ssim.end(), 0.0) / static_cast<double>(ssim.size());
}

AttackOutcome assess_attack(const TrainedModel& model, const LabeledBatch& clean, const Tensor& advs,
                            const Tensor& judged, const SsimConfig& cfg) {
  require_same_shape(clean.images, advs, "assess_attack");
  require_same_shape(clean.images, judged, "assess_attack");
  AttackOutcome o;
  o.label = clean.labels;
  o.predicted_before = predict_labels(model, clean.images);
  o.predicted_after = predict_labels(model, judged);
  for (std::size_t i = 0; i < o.label.size(); ++i) o.success.push_back(o.predicted_after[i] != o.label[i]);
  o.ssim = ssim_per_sample(clean.images, advs, cfg);
  return o;
}

double attack_success_rate(const TrainedModel& model, const LabeledBatch& clean, const Tensor& advs) {
  require_same_shape(clean.images, advs, "attack_success_rate");
  if (clean.size() == 0) return 0.0;
  const auto before = predict_labels(model, clean.images);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i] != clean.labels[i]) {
      throw ConfigError("attack_success_rate: clean sample " + std::to_string(i) +
                        " is misclassified; filter the batch first");
    }
  }
  const auto after = predict_labels(model, advs);
  Index flipped = 0;
  for (std::size_t i = 0; i < after.size(); ++i) flipped += after[i] != clean.labels[i];
  return static_cast<double>(flipped) / static_cast<double>(clean.size());
}

}  // namespace daash
