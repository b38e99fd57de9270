#pragma once

#include <functional>
#include <string>

#include "storyanchor/autograd.hpp"

namespace storyanchor::numerics {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double floor = 0.0;
  std::string worst_parameter;
  size_t worst_index = 0;
  size_t entries_checked = 0;
};

/// Builds a scalar loss on a fresh tape from the parameters in the store.
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;

/// Compares reverse-mode gradients against central differences for every
/// entry of every trainable parameter. The relative error of an entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor). A central
/// difference cannot resolve gradients much below ulp(loss) / eps, so when
/// `floor` is 0 it defaults to 1e-4 * max(1, |loss|), about a hundred times
/// that resolution at eps = 1e-6.
/// Throws invalid-argument for eps <= 0, floor < 0 or a non-scalar loss.
GradCheckReport grad_check(const LossBuilder& loss, ParamStore& params, double eps = 1e-6, double floor = 0.0);

}  // namespace storyanchor::numerics
