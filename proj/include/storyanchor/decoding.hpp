#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "storyanchor/dataset.hpp"
#include "storyanchor/model.hpp"

namespace storyanchor::decoding {

using corpus::TokenId;
using corpus::Tokens;
using numerics::Tensor;

struct StepOutput {
  Tensor state;
  std::vector<double> log_probs;
};

/// One decoder step: consumes `input` in `state`, returns the next state and
/// log-probabilities over the vocabulary.
using StepFunction = std::function<StepOutput(const Tensor& state, TokenId input)>;

struct BeamOptions {
  size_t beam_size = 3;
  size_t max_len = 25;
  /// Rank finished hypotheses by log-prob / length instead of log-prob.
  bool length_normalize = false;
};

struct Hypothesis {
  /// Generated ids; a finished hypothesis ends with EOS.
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  Tensor state;
  bool finished = false;
};

struct BeamResult {
  /// Winner with EOS stripped.
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  /// Every hypothesis retired to the finished pool, in retirement order.
  std::vector<Hypothesis> finished;
};

/// PAD and BOS are never generated. EOS is forced at step max_len - 1.
/// Finished hypotheses leave the beam without taking a slot; the search stops
/// once no live hypothesis can beat the best finished one. Ties go to the
/// shorter hypothesis, then to lower token ids.
BeamResult beam_search(const StepFunction& step, const Tensor& initial_state, const BeamOptions& options);

/// Argmax at every step (lowest id on ties) until EOS or max_len.
BeamResult greedy_decode(const StepFunction& step, const Tensor& initial_state, size_t max_len);

/// Step function of the model's sentence decoder for one context vector.
StepFunction model_step(const model::Model& model, const Tensor& context);
Tensor initial_state(const model::Model& model, const Tensor& context);

struct GeneratedStory {
  std::string album_id;
  std::vector<Tokens> sentences;
  std::vector<double> log_probs;

  /// Sentences joined into one token sequence, as scored by the metrics.
  Tokens joined() const;
};

/// Encodes the story once and beam-decodes every position. `oracle_ids` is
/// required in oracle mode only.
GeneratedStory generate_story(const model::Model& model, const corpus::Vocabulary& vocab, const std::string& album_id,
                              std::span<const corpus::FeatureVector> features, model::AnchorMode mode,
                              std::span<const TokenId> oracle_ids, const BeamOptions& options);

/// One story per distinct album of `dataset`, in first-appearance order.
/// Oracle mode reads the `pos` anchors. Albums are decoded on up to `threads`
/// threads; the output does not depend on the thread count.
std::vector<GeneratedStory> generate_dataset(const model::Model& model, const corpus::Vocabulary& vocab,
                                             const corpus::Dataset& dataset, model::AnchorMode mode,
                                             corpus::PosClass pos, const BeamOptions& options, size_t threads = 1);

void write_generated(const std::filesystem::path& path, std::span<const GeneratedStory> stories);
std::vector<GeneratedStory> read_generated(const std::filesystem::path& path);

}  // namespace storyanchor::decoding
