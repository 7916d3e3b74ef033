#pragma once

#include "daash/tensor.hpp"

#include <cstdint>
#include <vector>

namespace daash {

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Fresh state whose moment buffers match `params`.
AdamState make_adam_state(const std::vector<Tensor>& params, double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8);

/// One bias-corrected Adam update of `params` in place; increments state.t.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr);

}  // namespace daash
