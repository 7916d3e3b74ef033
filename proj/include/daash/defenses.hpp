#pragma once

#include "daash/tensor.hpp"

#include <map>
#include <string>

namespace daash {

enum class DefenseKind { Jpeg, Tvm, BitDepth, Nlm, Ensemble };

std::string defense_name(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string& name);

/// Input-purification transform applied before classification. Ensemble
/// runs bitdepth, jpeg, tvm, nlm in that order with the fields below.
struct DefenseSpec {
  DefenseKind kind = DefenseKind::Jpeg;
  int jpeg_quality = 75;
  double tv_weight = 0.03;
  int tv_iterations = 30;
  int bits = 4;
  double nlm_h = 0.1;
  int nlm_patch = 3;
  int nlm_search = 7;

  void validate() const;
};

std::string serialize(const DefenseSpec& spec, const std::string& prefix);
DefenseSpec parse_defense_spec(const std::map<std::string, std::string>& kv, const std::string& prefix,
                               DefenseKind kind);

/// Maps (N, C, H, W) images in [0, 1] into [0, 1].
Tensor apply_defense(const Tensor& x, const DefenseSpec& spec);

Tensor bit_depth_reduce(const Tensor& x, int bits);
/// 8x8 block DCT per channel, quantised with the standard luminance table.
Tensor jpeg_quantize(const Tensor& x, int quality);
/// Approximately minimises 0.5 |u - x|^2 + weight * TV(u), anisotropic TV.
Tensor tv_minimize(const Tensor& x, double weight, int iterations);
Tensor nl_means(const Tensor& x, double h, int patch, int search);

/// Anisotropic total variation summed over every (H, W) plane.
double total_variation(const Tensor& x);

}  // namespace daash
