#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "storyanchor/autograd.hpp"

namespace storyanchor::numerics {

struct AdamConfig {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One bias-corrected Adam update over every trainable parameter. Frozen
/// parameters are skipped even if a gradient is supplied for them.
/// Throws consistency-error when a trainable parameter has no gradient.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& state);

/// Rescales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
double clip_grad_norm(GradMap& grads, double max_norm);

}  // namespace storyanchor::numerics
