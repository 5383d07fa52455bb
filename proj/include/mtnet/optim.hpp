#pragma once

#include <cstdint>
#include <vector>

#include "mtnet/autodiff.hpp"

namespace mtnet::train {

// Adam moments per parameter tensor plus the update counter.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;

  // Zero moments shaped like `params`.
  static OptimizerState for_params(const ad::ParamStore& params);

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // added to the gradient as lambda * theta
};

// One bias-corrected Adam update. Every gradient is checked first; a
// non-finite entry raises NumericError naming the parameter and nothing is
// updated.
void adam_step(ad::ParamStore& params, const ad::GradBuffers& grads, OptimizerState& state,
               double lr, const AdamOptions& opts = {});

// lr0 * gamma^floor(epoch / step).
double lr_at(std::size_t epoch, double lr0 = 1e-3, std::size_t step = 6, double gamma = 0.9);

double global_norm(const ad::GradBuffers& grads);

// Rescales gradients so their global norm is at most max_norm; returns the
// norm before clipping.
double clip_global_norm(ad::GradBuffers& grads, double max_norm);

}  // namespace mtnet::train
