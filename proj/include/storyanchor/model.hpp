#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "storyanchor/autograd.hpp"
#include "storyanchor/binary_io.hpp"
#include "storyanchor/corpus.hpp"
#include "storyanchor/rng.hpp"

namespace storyanchor::model {

using corpus::FeatureVector;
using corpus::TokenId;
using numerics::ParamStore;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

/// What the predictor sees: the image alone, or the image concatenated with
/// the mean feature of its sequence.
enum class PredictorContext : uint8_t { kImage = 0, kSequence = 1 };

/// Source of the anchor-embedding slot fed to the fusion layer.
enum class AnchorMode : uint8_t { kOracle = 0, kPredicted = 1, kImageOnly = 2 };

std::string_view anchor_mode_name(AnchorMode mode);

struct ModelConfig {
  size_t feature_dim = 2048;
  size_t embed_dim = 512;
  size_t fusion_out = 2048;
  size_t enc_hidden = 256;
  size_t dec_hidden = 512;
  size_t predictor_hidden = 512;
  size_t vocab_size = 0;
  size_t max_sentence_len = 25;
  size_t story_length = 5;
  /// Feed v_i to the decoder at every step in addition to the initial state.
  bool context_every_step = false;
  PredictorContext predictor_context = PredictorContext::kImage;
  /// Scheduled sampling draws from the softmax; false takes the argmax.
  bool ss_sample = true;

  size_t context_dim() const noexcept { return 2 * enc_hidden; }
  size_t predictor_input_dim() const noexcept {
    return predictor_context == PredictorContext::kSequence ? 2 * feature_dim : feature_dim;
  }
  size_t decoder_input_dim() const noexcept { return embed_dim + (context_every_step ? context_dim() : 0); }

  /// Throws invalid-argument when a dimension is zero or vocab_size < 5.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void write_config(numerics::ByteWriter& out, const ModelConfig& config);
ModelConfig read_config(numerics::ByteReader& in);

struct Model {
  ModelConfig config;
  ParamStore params;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases,
/// uniform(-0.1, 0.1) for the embedding table.
Model make_model(const ModelConfig& config, uint64_t seed);

/// Parameters trained in stage 2.
bool is_predictor_param(const std::string& name);

// Building blocks on a tape. Shapes are checked against the parameters.

/// ReLU MLP over concat(feature, anchor_embedding).
Var fuse(Tape& tape, const ParamStore& params, Var feature, Var anchor_embedding);
/// GRU cell with parameters `<prefix>.w`, `.u_zr`, `.u_h`, `.b`.
Var gru_cell(Tape& tape, const ParamStore& params, const std::string& prefix, Var x, Var h);
/// Bidirectional pass; v_i = concat(forward_i, backward_i).
std::vector<Var> encode_sequence(Tape& tape, const ParamStore& params, std::span<const Var> fused);
/// ReLU MLP to an embedding-sized vector, linear output.
Var predict_anchor(Tape& tape, const ParamStore& params, Var input);

struct StoryGraph {
  std::vector<Var> features;
  std::vector<Var> anchors;
  std::vector<Var> contexts;
};

/// Fuses each image with its anchor slot and encodes the story. `oracle_ids`
/// is read only in oracle mode and must have one id per image.
StoryGraph forward_story(Tape& tape, const Model& model, std::span<const FeatureVector> features, AnchorMode mode,
                         std::span<const TokenId> oracle_ids = {});

/// Predictor input for image `i` of a story, per config.predictor_context.
Var predictor_input(Tape& tape, const ModelConfig& config, std::span<const Var> features, size_t i);

Var decoder_initial_state(Tape& tape, const ParamStore& params, Var context);

struct DecoderStep {
  Var hidden;
  Var logits;
};

DecoderStep decoder_step(Tape& tape, const Model& model, Var hidden, TokenId input, Var context);

struct SentenceLoss {
  Var loss;
  std::vector<Var> logits;
  /// Token fed at each step, starting with BOS.
  std::vector<TokenId> inputs;
};

/// Summed cross-entropy of `target` (which must end with EOS). With
/// probability ss_prob each step after the first is fed a token drawn from
/// the previous step's distribution instead of the ground truth. `rng` is not
/// touched when ss_prob is 0.
SentenceLoss decode_sentence(Tape& tape, const Model& model, Var context, std::span<const TokenId> target,
                             double ss_prob, Rng& rng);

/// Context vectors for a story, evaluated without keeping a graph.
std::vector<Tensor> story_contexts(const Model& model, std::span<const FeatureVector> features, AnchorMode mode,
                                   std::span<const TokenId> oracle_ids = {});

/// Predicted anchor embeddings for every image of a story.
std::vector<Tensor> predicted_anchors(const Model& model, std::span<const FeatureVector> features);

/// Sentence ids followed by EOS, truncated so the result fits max_sentence_len.
std::vector<TokenId> decoder_target(std::span<const TokenId> sentence, size_t max_sentence_len);

}  // namespace storyanchor::model
