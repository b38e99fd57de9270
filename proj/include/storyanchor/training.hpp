#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "storyanchor/adam.hpp"
#include "storyanchor/dataset.hpp"
#include "storyanchor/decoding.hpp"
#include "storyanchor/metrics.hpp"
#include "storyanchor/model.hpp"

namespace storyanchor::training {

/// p = p0 + delta * floor(e / period) for e < cap_epoch, then frozen at the
/// value of epoch cap_epoch - 1. Epochs count from 0.
struct ScheduleConfig {
  double p0 = 0.05;
  double delta = 0.05;
  size_t period = 5;
  size_t cap_epoch = 25;
};

double ss_probability(size_t epoch, const ScheduleConfig& schedule);

struct TrainConfig {
  double lr = 4e-4;
  /// Stories per mini-batch.
  size_t batch_size = 64;
  size_t epochs = 100;
  ScheduleConfig schedule;
  uint64_t seed = 0;
  /// Validate every this many epochs; 0 never validates and keeps the last epoch.
  size_t eval_every = 1;
  /// best.sanc and last.sanc are written here when set.
  std::filesystem::path checkpoint_dir;
  /// JSON-lines training log, appended per epoch when set.
  std::filesystem::path log_path;
  corpus::PosClass pos = corpus::PosClass::kNoun;
  /// Joint L2 gradient clipping; 0 disables.
  double clip_norm = 0.0;
  /// Stage-2 loss weights.
  double mse_weight = 1.0;
  double ce_weight = 1.0;
  /// Beam width used by the default validator.
  size_t val_beam = 3;
  size_t threads = 1;

  /// Throws invalid-argument for lr <= 0, batch_size 0, or negative or
  /// non-finite schedule values.
  void validate() const;
};

/// Scores a model snapshot after `epoch` (counting from 1). Selection uses
/// the mean METEOR-lite of the returned report.
using Validator = std::function<metrics::MetricReport(const model::Model& model, size_t epoch)>;

struct Checkpoint {
  static constexpr uint16_t kVersion = 1;

  model::Model model;
  numerics::AdamState adam;
  uint8_t stage = 1;
  /// Anchor source the model was trained with: oracle or image-only.
  model::AnchorMode variant = model::AnchorMode::kOracle;
  corpus::PosClass pos = corpus::PosClass::kNoun;
  /// Epochs completed, counting from 1; 0 before any training.
  size_t epoch = 0;
  /// Id of the stage-1 checkpoint a stage-2 checkpoint started from.
  uint64_t parent_id = 0;
  std::optional<metrics::MetricReport> validation;

  /// Fingerprint of the serialized bytes.
  uint64_t id() const;
};

/// "SANC" | u16 version | config | stage | variant | pos | epoch | parent |
/// validation | params | Adam state.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& what);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws load-error for a missing file, format-error for bad bytes and
/// config-mismatch when `expected` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected = nullptr);

/// Serialized bytes of everything stage 2 must not touch.
std::string frozen_bytes(const model::Model& model);

struct EpochLog {
  size_t epoch = 0;
  uint8_t stage = 1;
  /// Mean per-sentence loss over the epoch.
  double loss = 0.0;
  double ss_prob = 0.0;
  std::optional<double> val_meteor;
  std::string checkpoint_path;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
};

/// Stage 1: every parameter except the predictor is trained end to end with
/// ground-truth anchors of `config.pos` (variant kOracle) or with the anchor
/// slot zeroed (kImageOnly). Loss per batch is the summed token cross-entropy
/// divided by the batch's sentence count. Without a validator, the last
/// epoch is returned. Throws invalid-argument for an empty dataset and
/// diverged-error naming the epoch and step on a non-finite loss.
TrainResult train_stage1(const corpus::Dataset& train, const corpus::Vocabulary& vocab,
                         const model::ModelConfig& model_config, model::AnchorMode variant, const TrainConfig& config,
                         const Validator& validator = nullptr);

/// Summed token cross-entropy of one story's sentences.
numerics::Var stage1_story_loss(numerics::Tape& tape, const model::Model& model, const corpus::Vocabulary& vocab,
                                const corpus::StorySequence& seq, model::AnchorMode variant, corpus::PosClass pos,
                                double ss_prob, Rng& rng);

/// mse_weight * per-image MSE between predicted anchors and their rows of
/// `embedding`, plus ce_weight * cross-entropy through predicted anchors.
numerics::Var stage2_story_loss(numerics::Tape& tape, const model::Model& model, const corpus::Vocabulary& vocab,
                                const corpus::StorySequence& seq, const numerics::Tensor& embedding,
                                corpus::PosClass pos, double mse_weight, double ce_weight, double ss_prob, Rng& rng);

/// Embedding rows of the anchors' vocabulary ids.
std::vector<numerics::Tensor> anchor_targets(const numerics::Tensor& embedding,
                                             std::span<const corpus::AnchorAssignment> anchors);

/// Stage 2: only predictor parameters move, with a fresh optimizer. Loss is
/// mse_weight * sum of per-image MSE to the stage-1 embeddings of the
/// anchors plus ce_weight * generation cross-entropy through predicted
/// anchors, divided by the batch's sentence count.
TrainResult train_stage2(const Checkpoint& stage1, const corpus::Dataset& train, const corpus::Vocabulary& vocab,
                         const TrainConfig& config, const Validator& validator = nullptr);

/// Fraction of target tokens (EOS included) that are the argmax of the
/// teacher-forced logits.
double teacher_forced_accuracy(const model::Model& model, const corpus::Dataset& dataset,
                               const corpus::Vocabulary& vocab, model::AnchorMode mode, corpus::PosClass pos);

/// Reference stories per album and the largest k every album satisfies.
struct References {
  metrics::ReferenceMap stories;
  size_t k = 0;
};
References dataset_references(const corpus::Dataset& dataset);

std::vector<metrics::ScoredStory> scored(std::span<const decoding::GeneratedStory> generated);

/// Generates every album of `dataset` and scores it against its references.
metrics::MetricScores evaluate_model(const model::Model& model, const corpus::Vocabulary& vocab,
                                     const corpus::Dataset& dataset, model::AnchorMode mode, corpus::PosClass pos,
                                     const decoding::BeamOptions& options, size_t threads);

/// Validator generating `dataset` in `mode`.
Validator generation_validator(const corpus::Dataset& dataset, const corpus::Vocabulary& vocab,
                               model::AnchorMode mode, corpus::PosClass pos, size_t beam, size_t threads);

/// One row per variant: "ImageOnly", then one anchored model per POS class
/// decoded on `test` with ground-truth anchors. Each run trains from seed
/// derive_seed(config.seed, run); checkpoints are selected on `val` when it
/// is given, else the last epoch is used.
std::vector<std::pair<std::string, metrics::MetricReport>> run_ablation(
    const corpus::Dataset& train, const corpus::Dataset* val, const corpus::Dataset& test,
    const corpus::Vocabulary& vocab, const model::ModelConfig& model_config,
    std::span<const corpus::PosClass> pos_classes, const TrainConfig& config, size_t runs);

}  // namespace storyanchor::training
