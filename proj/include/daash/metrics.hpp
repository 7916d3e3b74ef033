#pragma once

#include "daash/autodiff.hpp"
#include "daash/labeled_batch.hpp"
#include "daash/model.hpp"

#include <vector>

namespace daash {

enum class SsimWindow { Global, Sliding };

struct SsimConfig {
  SsimWindow window = SsimWindow::Sliding;
  Index size = 8;  // box window side, sliding mode
  double c1 = 1e-4;
  double c2 = 9e-4;
  double range = 1.0;

  /// Convention c1 = (0.01 L)^2, c2 = (0.03 L)^2.
  static SsimConfig standard(double range = 1.0) {
    SsimConfig c;
    c.range = range;
    c.c1 = (0.01 * range) * (0.01 * range);
    c.c2 = (0.03 * range) * (0.03 * range);
    return c;
  }
  void validate(Index height, Index width) const;
};

/// Mean SSIM over all windows, channels and samples of two (N, C, H, W)
/// batches. Differentiable with respect to both arguments.
Var ssim(Var a, Var b, const SsimConfig& cfg = {});
double ssim_value(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});
std::vector<double> ssim_per_sample(const Tensor& a, const Tensor& b, const SsimConfig& cfg = {});

struct AttackOutcome {
  std::vector<int> label;
  std::vector<int> predicted_before;
  std::vector<int> predicted_after;
  std::vector<bool> success;
  std::vector<double> ssim;

  /// Fraction of successful samples.
  double success_rate() const;
  double mean_ssim() const;
};

/// Records an untargeted attack. `judged` is what the model sees (the
/// adversarial images, possibly after a defense); SSIM is measured between
/// `clean.images` and `advs`.
AttackOutcome assess_attack(const TrainedModel& model, const LabeledBatch& clean, const Tensor& advs,
                            const Tensor& judged, const SsimConfig& cfg = {});

/// Fraction of `advs` whose argmax differs from the true label. Every clean
/// sample must be classified correctly.
double attack_success_rate(const TrainedModel& model, const LabeledBatch& clean, const Tensor& advs);

}  // namespace daash
