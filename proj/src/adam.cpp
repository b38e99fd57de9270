#include "storyanchor/adam.hpp"

#include <cmath>

#include "storyanchor/error.hpp"

namespace storyanchor::numerics {

void adam_step(ParamStore& params, const GradMap& grads, AdamState& state) {
  for (const auto& [name, param] : params) {
    if (!param.trainable) {
      continue;
    }
    const auto g = grads.find(name);
    if (g == grads.end()) {
      fail(ErrorCategory::kConsistency, "adam_step: no gradient for trainable parameter '" + name + "'");
    }
    if (g->second.shape() != param.value.shape()) {
      fail(ErrorCategory::kShape, "adam_step: gradient for '" + name + "' has shape " +
                                      shape_string(g->second.shape()) + ", parameter has " +
                                      shape_string(param.value.shape()));
    }
  }

  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (auto& [name, param] : params) {
    if (!param.trainable) {
      continue;
    }
    const Tensor& g = grads.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, param.value.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, param.value.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      const double delta = c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
      // Skipping exact zeros keeps the stored bits untouched (no -0.0 flips).
      if (delta != 0.0) {
        param.value[i] -= delta;
      }
    }
  }
}

double clip_grad_norm(GradMap& grads, double max_norm) {
  double squared = 0.0;
  for (const auto& [name, g] : grads) {
    for (const double v : g.values()) {
      squared += v * v;
    }
  }
  const double norm = std::sqrt(squared);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& v : g.values()) {
        v *= factor;
      }
    }
  }
  return norm;
}

}  // namespace storyanchor::numerics
