#include "storyanchor/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "storyanchor/error.hpp"

namespace storyanchor::numerics {

GradCheckReport grad_check(const LossBuilder& loss, ParamStore& params, double eps, double floor) {
  if (!(eps > 0.0)) {
    fail(ErrorCategory::kInvalidArgument, "grad_check: eps must be positive");
  }
  if (!(floor >= 0.0)) {
    fail(ErrorCategory::kInvalidArgument, "grad_check: floor must be non-negative");
  }

  GradMap analytic;
  {
    Tape tape;
    const Var out = loss(tape, params);
    if (tape.value(out).size() != 1) {
      fail(ErrorCategory::kInvalidArgument,
           "grad_check: computation must return a scalar, got " + shape_string(tape.value(out).shape()));
    }
    tape.backward(out);
    analytic = tape.parameter_grads();
    if (floor == 0.0) {
      floor = 1e-4 * std::max(1.0, std::abs(tape.scalar(out)));
    }
  }

  auto evaluate = [&] {
    Tape tape;
    return tape.scalar(loss(tape, params));
  };

  GradCheckReport report;
  report.floor = floor;
  for (auto& [name, param] : params) {
    if (!param.trainable) {
      continue;
    }
    const auto found = analytic.find(name);
    for (size_t i = 0; i < param.value.size(); ++i) {
      const double saved = param.value[i];
      param.value[i] = saved + eps;
      const double plus = evaluate();
      param.value[i] = saved - eps;
      const double minus = evaluate();
      param.value[i] = saved;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double exact = found == analytic.end() ? 0.0 : found->second[i];
      const double denom = std::max({std::abs(exact), std::abs(numeric), floor});
      const double rel = std::abs(exact - numeric) / denom;
      ++report.entries_checked;
      report.max_abs_error = std::max(report.max_abs_error, std::abs(exact - numeric));
      if (rel > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        report.worst_parameter = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace storyanchor::numerics
