#pragma once

#include "daash/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace daash {

enum class AttackKind { None, Fgsm, Bim, Pgd, MiFgsm, NiFgsm, DiFgsm, TiFgsm, CwL2 };

std::string attack_name(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);
/// True for attacks that project onto an l-inf ball of radius eps.
bool is_linf(AttackKind kind);

/// One base attack and its fixed hyperparameters.
struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double eps = 8.0 / 255.0;
  int steps = 10;
  double step_size = 2.0 / 255.0;
  double decay = 1.0;           // mi/ni momentum
  double diversity_prob = 0.5;  // di
  double resize_min = 0.9;      // di: smallest resize, as a fraction of the side
  int kernel = 7;               // ti, odd
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double cw_lr = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Community-standard defaults for `kind`.
AttackSpec default_attack(AttackKind kind);
/// none, fgsm, bim, pgd, mifgsm, nifgsm, difgsm, tifgsm, cw_l2.
std::vector<AttackSpec> default_pool();

std::string serialize(const AttackSpec& spec, const std::string& prefix);
AttackSpec parse_attack_spec(const std::map<std::string, std::string>& kv, const std::string& prefix);

/// Runs one base attack on a batch. Output pixels stay in [0, 1]; l-inf
/// attacks stay within eps of `x`. `steps == 0` returns `x` unchanged.
Tensor run_base_attack(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

struct CwResult {
  Tensor images;
  std::vector<bool> success;    // margin < -kappa for the returned iterate
  std::vector<double> margin;   // f_y - max_{k != y} f_k of the returned iterate
};

/// Carlini-Wagner L2 in tanh space, optimised with Adam.
CwResult cw_l2(const TrainedModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

/// Clip to the eps-ball around `origin`, then to [0, 1].
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double eps);

}  // namespace daash
