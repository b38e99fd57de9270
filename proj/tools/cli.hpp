#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "json.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/model.hpp"
#include "storyanchor/training.hpp"

namespace storyanchor::cli {

/// Every setting a command can read. Built-in defaults, then the JSON config
/// file, then command-line flags.
struct RunConfig {
  uint64_t seed = 0;
  size_t threads = 1;

  std::string dataset;
  std::string features;
  std::string val_dataset;
  std::string test_dataset;
  std::string lexicon;
  std::string vocab;
  std::string checkpoint;
  std::string out;

  size_t beam = 3;
  bool length_normalize = false;
  size_t runs = 3;
  std::string pos = "noun";
  size_t k_refs = 5;
  size_t min_freq = 1;
  double val_fraction = 0.2;
  double test_fraction = 0.0;

  bool synth = false;
  size_t synth_albums = 250;
  size_t synth_images = 5;
  size_t synth_stories_per_album = 1;
  double synth_correlation = 1.0;
  size_t synth_feature_dim = 16;
  double synth_noise = 0.3;
  double synth_zipf = 1.0;

  std::string variant = "oracle";
  std::string predictor_context = "image";
  model::ModelConfig model;
  training::TrainConfig train;
};

/// Applies the keys of a flat JSON object. Throws usage-error for an unknown
/// key or a value of the wrong type.
void apply_json(RunConfig& config, const nlohmann::json& object);
nlohmann::json to_json(const RunConfig& config);

/// Runs one command line and returns the exit code: 0 success, 1 failed
/// self-check or internal error, 2 usage, 3 data/load/format/config, 4 diverged.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int exit_code(ErrorCategory category);

}  // namespace storyanchor::cli
