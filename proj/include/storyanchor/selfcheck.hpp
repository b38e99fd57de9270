#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storyanchor/gradcheck.hpp"

namespace storyanchor::training {

struct GradCheckResult {
  std::string name;
  numerics::GradCheckReport report;
};

/// Central-difference check of every tape primitive on its own, then of the
/// stage-1 story loss (all non-predictor parameters) and the stage-2 story
/// loss (predictor parameters) of a small model: 16-dim features, 8-dim
/// embeddings and hidden layers, 20 vocabulary entries.
std::vector<GradCheckResult> gradcheck_suite(uint64_t seed, double eps = 1e-6);

}  // namespace storyanchor::training
