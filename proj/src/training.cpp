#include "storyanchor/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/log.hpp"

namespace storyanchor::training {

using corpus::Dataset;
using corpus::PosClass;
using corpus::StorySequence;
using corpus::TokenId;
using corpus::Vocabulary;
using model::AnchorMode;
using model::Model;
using numerics::GradMap;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

double ss_probability(size_t epoch, const ScheduleConfig& schedule) {
  if (schedule.period == 0) {
    return schedule.p0;
  }
  const size_t capped = schedule.cap_epoch == 0 ? 0 : std::min(epoch, schedule.cap_epoch - 1);
  const double p = schedule.p0 + schedule.delta * static_cast<double>(capped / schedule.period);
  return std::clamp(p, 0.0, 1.0);
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    fail(ErrorCategory::kInvalidArgument, "train config: lr must be positive");
  }
  if (batch_size == 0) {
    fail(ErrorCategory::kInvalidArgument, "train config: batch_size must be at least 1");
  }
  for (const double v : {schedule.p0, schedule.delta, clip_norm, mse_weight, ce_weight}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCategory::kInvalidArgument, "train config: schedule, clipping and loss weights must be nonnegative");
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "SANC";

void write_report(numerics::ByteWriter& out, const metrics::MetricReport& r) {
  auto put = [&](const metrics::MeanStd& v) {
    out.f64(v.mean);
    out.f64(v.std);
  };
  for (const auto& b : r.bleu) put(b);
  put(r.meteor_lite);
  put(r.rouge_l);
  put(r.cider);
  out.u64(r.n_instances);
  out.u64(r.n_runs);
}

metrics::MetricReport read_report(numerics::ByteReader& in) {
  metrics::MetricReport r;
  auto get = [&](metrics::MeanStd& v) {
    v.mean = in.f64();
    v.std = in.f64();
  };
  for (auto& b : r.bleu) get(b);
  get(r.meteor_lite);
  get(r.rouge_l);
  get(r.cider);
  r.n_instances = in.u64();
  r.n_runs = in.u64();
  return r;
}

template <typename Enum>
Enum checked_enum(uint8_t v, uint8_t max, const std::string& what, const char* field) {
  if (v > max) {
    fail(ErrorCategory::kFormat, what + ": bad " + field + " " + std::to_string(v));
  }
  return static_cast<Enum>(v);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  numerics::ByteWriter out;
  out.raw(kMagic);
  out.u16(Checkpoint::kVersion);
  model::write_config(out, c.model.config);
  out.u8(c.stage);
  out.u8(static_cast<uint8_t>(c.variant));
  out.u8(static_cast<uint8_t>(c.pos));
  out.u64(c.epoch);
  out.u64(c.parent_id);
  out.u8(c.validation ? 1 : 0);
  if (c.validation) write_report(out, *c.validation);
  numerics::write_params(out, c.model.params);
  numerics::write_adam(out, c.adam);
  return out.take();
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& what) {
  numerics::ByteReader in(bytes, what);
  if (bytes.size() < kMagic.size() || in.raw(kMagic.size()) != kMagic) {
    fail(ErrorCategory::kFormat, what + ": not a checkpoint (bad magic)");
  }
  const uint16_t version = in.u16();
  if (version != Checkpoint::kVersion) {
    fail(ErrorCategory::kFormat, what + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.model.config = model::read_config(in);
  c.stage = in.u8();
  if (c.stage != 1 && c.stage != 2) {
    fail(ErrorCategory::kFormat, what + ": bad stage " + std::to_string(c.stage));
  }
  c.variant = checked_enum<AnchorMode>(in.u8(), 2, what, "variant");
  c.pos = checked_enum<PosClass>(in.u8(), 3, what, "POS class");
  c.epoch = in.u64();
  c.parent_id = in.u64();
  if (in.u8() != 0) c.validation = read_report(in);
  c.model.params = numerics::read_params(in);
  c.adam = numerics::read_adam(in);
  if (!in.at_end()) {
    fail(ErrorCategory::kFormat, what + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return c;
}

uint64_t Checkpoint::id() const { return numerics::fingerprint(serialize_checkpoint(*this)); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      fail(ErrorCategory::kLoad, "cannot write " + tmp.string());
    }
    const std::string bytes = serialize_checkpoint(checkpoint);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      fail(ErrorCategory::kLoad, "short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const model::ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open checkpoint " + path.string());
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint c = parse_checkpoint(bytes, path.string());
  if (expected != nullptr && !(c.model.config == *expected)) {
    fail(ErrorCategory::kConfigMismatch, path.string() + ": checkpoint model config differs from the requested one");
  }
  return c;
}

std::string frozen_bytes(const Model& model) {
  return numerics::serialize_params(model.params, [](const std::string& name) { return !model::is_predictor_param(name); });
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct StoryResult {
  double loss = 0.0;
  size_t sentences = 0;
  GradMap grads;
};

std::vector<TokenId> oracle_ids(const StorySequence& seq, PosClass pos) {
  std::vector<TokenId> ids;
  for (const auto& a : seq.anchors_for(pos)) ids.push_back(a.vocab_id);
  return ids;
}

/// Computes one result per index with up to `threads` workers; results are
/// independent of the thread count.
template <typename Fn>
std::vector<StoryResult> parallel_map(size_t n, size_t threads, const Fn& fn) {
  std::vector<StoryResult> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const size_t count = std::max<size_t>(1, std::min(threads, n));
  std::vector<std::thread> pool;
  for (size_t t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  // The lowest failing index wins so the error does not depend on scheduling.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void accumulate(GradMap& total, const GradMap& part) {
  for (const auto& [name, g] : part) {
    auto [it, inserted] = total.try_emplace(name, g);
    if (!inserted) {
      auto dst = it->second.values();
      const auto src = g.values();
      for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }
}

bool all_finite(const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) return false;
  }
  return true;
}

/// Adds zero gradients for trainable parameters that no story touched.
void fill_missing(GradMap& grads, const numerics::ParamStore& params) {
  for (const auto& [name, p] : params) {
    if (p.trainable) grads.try_emplace(name, Tensor(p.value.shape()));
  }
}

std::string json_line(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["stage"] = e.stage;
  j["loss"] = e.loss;
  j["ss_prob"] = e.ss_prob;
  j["val_meteor"] = e.val_meteor ? nlohmann::ordered_json(*e.val_meteor) : nlohmann::ordered_json(nullptr);
  j["checkpoint_path"] = e.checkpoint_path.empty() ? nlohmann::ordered_json(nullptr)
                                                   : nlohmann::ordered_json(e.checkpoint_path);
  return j.dump();
}

using StoryLoss = std::function<StoryResult(const Model& model, const StorySequence& seq, double ss_prob, Rng& rng,
                                            double scale)>;

/// Shared epoch loop of both stages. `checkpoint` carries the model, the
/// optimizer and the metadata; it is updated in place.
TrainResult run_training(Checkpoint checkpoint, const Dataset& train, const TrainConfig& config,
                         const Validator& validator, const StoryLoss& story_loss) {
  config.validate();
  if (train.sequences.empty()) {
    fail(ErrorCategory::kInvalidArgument, "training: the dataset has no stories");
  }
  const uint64_t shuffle_root = derive_seed(config.seed, "shuffle");
  const uint64_t ss_root = derive_seed(config.seed, "ss-sampling");

  std::ofstream log_out;
  if (!config.log_path.empty()) {
    if (config.log_path.has_parent_path()) std::filesystem::create_directories(config.log_path.parent_path());
    log_out.open(config.log_path, std::ios::binary | std::ios::trunc);
    if (!log_out) {
      fail(ErrorCategory::kLoad, "cannot write training log " + config.log_path.string());
    }
  }

  TrainResult result;
  result.best = checkpoint;
  std::optional<double> best_score;
  std::vector<size_t> order(train.sequences.size());
  size_t step = 0;

  for (size_t e = 0; e < config.epochs; ++e) {
    const size_t epoch = e + 1;
    const double ss_prob = ss_probability(e, config.schedule);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(shuffle_root, static_cast<uint64_t>(e)));
    shuffle_rng.shuffle(order);
    const uint64_t epoch_ss_root = derive_seed(ss_root, static_cast<uint64_t>(e));

    double epoch_loss = 0.0;
    size_t epoch_sentences = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      ++step;
      const size_t end = std::min(order.size(), start + config.batch_size);
      size_t batch_sentences = 0;
      for (size_t k = start; k < end; ++k) batch_sentences += train.sequences[order[k]].size();
      const double scale = 1.0 / static_cast<double>(batch_sentences);

      const std::vector<StoryResult> parts = parallel_map(end - start, config.threads, [&](size_t k) {
        const size_t index = order[start + k];
        Rng rng(derive_seed(epoch_ss_root, static_cast<uint64_t>(index)));
        try {
          return story_loss(checkpoint.model, train.sequences[index], ss_prob, rng, scale);
        } catch (const Error& e) {
          if (e.category() != ErrorCategory::kNumeric) throw;
          fail(ErrorCategory::kDiverged, std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(step) + " (album '" +
                                             train.sequences[index].story.album_id + "')");
        }
      });

      GradMap grads;
      double batch_loss = 0.0;
      for (size_t k = 0; k < parts.size(); ++k) {
        if (!std::isfinite(parts[k].loss)) {
          fail(ErrorCategory::kDiverged, "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(step) + " (album '" +
                                             train.sequences[order[start + k]].story.album_id + "')");
        }
        batch_loss += parts[k].loss;
        accumulate(grads, parts[k].grads);
      }
      if (!all_finite(grads)) {
        fail(ErrorCategory::kDiverged,
             "non-finite gradient at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      fill_missing(grads, checkpoint.model.params);
      if (config.clip_norm > 0.0) numerics::clip_grad_norm(grads, config.clip_norm);
      numerics::adam_step(checkpoint.model.params, grads, checkpoint.adam);
      epoch_loss += batch_loss;
      epoch_sentences += batch_sentences;
    }
    checkpoint.epoch = epoch;

    EpochLog entry;
    entry.epoch = epoch;
    entry.stage = checkpoint.stage;
    entry.loss = epoch_loss / static_cast<double>(epoch_sentences);
    entry.ss_prob = ss_prob;

    const bool evaluate = validator && config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
    bool improved = !validator || config.eval_every == 0;
    if (evaluate) {
      checkpoint.validation = validator(checkpoint.model, epoch);
      const double score = checkpoint.validation->meteor_lite.mean;
      entry.val_meteor = score;
      if (!best_score || score > *best_score) {
        best_score = score;
        improved = true;
      }
    }
    if (improved) result.best = checkpoint;
    if (!config.checkpoint_dir.empty()) {
      const auto last = config.checkpoint_dir / "last.sanc";
      save_checkpoint(last, checkpoint);
      entry.checkpoint_path = last.string();
      if (improved) {
        const auto best = config.checkpoint_dir / "best.sanc";
        save_checkpoint(best, checkpoint);
        entry.checkpoint_path = best.string();
      }
    }
    log::info("stage ", int(checkpoint.stage), " epoch ", epoch, "/", config.epochs, " loss ", entry.loss,
              entry.val_meteor ? " val METEOR-lite " + std::to_string(*entry.val_meteor) : std::string());
    if (log_out) log_out << json_line(entry) << '\n' << std::flush;
    result.history.push_back(std::move(entry));
  }
  return result;
}

StoryResult backward_story(Tape& tape, Var loss, double scale, size_t sentences) {
  StoryResult r;
  r.loss = tape.scalar(loss);
  r.sentences = sentences;
  if (std::isfinite(r.loss)) {
    tape.backward(tape.scale(loss, scale));
    r.grads = tape.parameter_grads();
  }
  return r;
}

}  // namespace

Var stage1_story_loss(Tape& tape, const Model& model, const Vocabulary& vocab, const StorySequence& seq,
                      AnchorMode variant, PosClass pos, double ss_prob, Rng& rng) {
  const std::vector<TokenId> ids = variant == AnchorMode::kOracle ? oracle_ids(seq, pos) : std::vector<TokenId>{};
  const model::StoryGraph graph = model::forward_story(tape, model, seq.features, variant, ids);
  std::vector<Var> losses;
  for (size_t i = 0; i < seq.size(); ++i) {
    const auto target = model::decoder_target(vocab.encode(seq.story.sentences[i]), model.config.max_sentence_len);
    losses.push_back(model::decode_sentence(tape, model, graph.contexts[i], target, ss_prob, rng).loss);
  }
  return tape.sum(tape.concat(losses));
}

Var stage2_story_loss(Tape& tape, const Model& model, const Vocabulary& vocab, const StorySequence& seq,
                      const Tensor& embedding, PosClass pos, double mse_weight, double ce_weight, double ss_prob,
                      Rng& rng) {
  const model::StoryGraph graph = model::forward_story(tape, model, seq.features, AnchorMode::kPredicted);
  const auto targets = anchor_targets(embedding, seq.anchors_for(pos));
  std::vector<Var> terms;
  for (size_t i = 0; i < seq.size(); ++i) {
    terms.push_back(tape.scale(tape.mse(graph.anchors[i], tape.constant(targets[i])), mse_weight));
    if (ce_weight > 0.0) {
      const auto target = model::decoder_target(vocab.encode(seq.story.sentences[i]), model.config.max_sentence_len);
      terms.push_back(
          tape.scale(model::decode_sentence(tape, model, graph.contexts[i], target, ss_prob, rng).loss, ce_weight));
    }
  }
  return tape.sum(tape.concat(terms));
}

TrainResult train_stage1(const Dataset& train, const Vocabulary& vocab, const model::ModelConfig& model_config,
                         AnchorMode variant, const TrainConfig& config, const Validator& validator) {
  if (variant == AnchorMode::kPredicted) {
    fail(ErrorCategory::kInvalidArgument, "train_stage1: the variant must be oracle anchors or image-only");
  }
  model_config.validate();
  if (model_config.vocab_size != vocab.size()) {
    fail(ErrorCategory::kConfigMismatch, "train_stage1: model vocab_size " + std::to_string(model_config.vocab_size) +
                                             " but the vocabulary has " + std::to_string(vocab.size()) + " tokens");
  }
  if (variant == AnchorMode::kOracle) {
    for (const auto& seq : train.sequences) {
      if (!seq.has_anchors(config.pos)) {
        fail(ErrorCategory::kData, "train_stage1: album '" + seq.story.album_id + "' has no " +
                                       std::string(corpus::pos_name(config.pos)) + " anchors");
      }
    }
  }

  Checkpoint start;
  start.model = model::make_model(model_config, derive_seed(config.seed, "init"));
  // The predictor takes no part in the stage-1 loss.
  start.model.params.set_all_trainable(true);
  start.model.params.set_trainable(model::is_predictor_param, false);
  start.adam.config.lr = config.lr;
  start.stage = 1;
  start.variant = variant;
  start.pos = config.pos;

  const PosClass pos = config.pos;
  return run_training(std::move(start), train, config, validator,
                      [&vocab, variant, pos](const Model& model, const StorySequence& seq, double ss_prob, Rng& rng,
                                             double scale) {
                        Tape tape;
                        const Var loss = stage1_story_loss(tape, model, vocab, seq, variant, pos, ss_prob, rng);
                        return backward_story(tape, loss, scale, seq.size());
                      });
}

std::vector<Tensor> anchor_targets(const Tensor& embedding, std::span<const corpus::AnchorAssignment> anchors) {
  if (embedding.rank() != 2) {
    fail(ErrorCategory::kShape, "anchor_targets: embedding table must be a matrix");
  }
  const size_t rows = embedding.shape()[0];
  const size_t cols = embedding.shape()[1];
  std::vector<Tensor> out;
  for (const auto& a : anchors) {
    if (a.vocab_id >= rows) {
      fail(ErrorCategory::kIndex, "anchor_targets: anchor '" + a.word + "' has id " + std::to_string(a.vocab_id) +
                                      " outside a table of " + std::to_string(rows) + " rows");
    }
    Tensor row({cols});
    for (size_t k = 0; k < cols; ++k) row[k] = embedding.at(a.vocab_id, k);
    out.push_back(std::move(row));
  }
  return out;
}

TrainResult train_stage2(const Checkpoint& stage1, const Dataset& train, const Vocabulary& vocab,
                         const TrainConfig& config, const Validator& validator) {
  if (stage1.stage != 1 || stage1.variant != AnchorMode::kOracle) {
    fail(ErrorCategory::kInvalidArgument, "train_stage2: needs a stage-1 checkpoint trained with anchors");
  }
  if (stage1.model.config.vocab_size != vocab.size()) {
    fail(ErrorCategory::kConfigMismatch, "train_stage2: checkpoint vocab_size " +
                                             std::to_string(stage1.model.config.vocab_size) + " but the vocabulary has " +
                                             std::to_string(vocab.size()) + " tokens");
  }
  const PosClass pos = stage1.pos;
  for (const auto& seq : train.sequences) {
    if (!seq.has_anchors(pos)) {
      fail(ErrorCategory::kData, "train_stage2: album '" + seq.story.album_id + "' has no " +
                                     std::string(corpus::pos_name(pos)) + " anchors");
    }
  }

  Checkpoint start;
  start.model = stage1.model;
  start.model.params.set_all_trainable(false);
  start.model.params.set_trainable(model::is_predictor_param, true);
  start.adam = numerics::AdamState{};
  start.adam.config.lr = config.lr;
  start.stage = 2;
  start.variant = AnchorMode::kPredicted;
  start.pos = pos;
  start.epoch = 0;
  start.parent_id = stage1.id();
  start.validation.reset();

  const Tensor embedding = stage1.model.params.get("embedding").value;
  const double mse_weight = config.mse_weight;
  const double ce_weight = config.ce_weight;
  return run_training(std::move(start), train, config, validator,
                      [&vocab, embedding, pos, mse_weight, ce_weight](const Model& model, const StorySequence& seq,
                                                                      double ss_prob, Rng& rng, double scale) {
                        Tape tape;
                        const Var loss = stage2_story_loss(tape, model, vocab, seq, embedding, pos, mse_weight,
                                                           ce_weight, ss_prob, rng);
                        return backward_story(tape, loss, scale, seq.size());
                      });
}

double teacher_forced_accuracy(const Model& model, const Dataset& dataset, const Vocabulary& vocab, AnchorMode mode,
                               PosClass pos) {
  size_t correct = 0;
  size_t total = 0;
  Rng unused(0);
  for (const auto& seq : dataset.sequences) {
    const std::vector<TokenId> ids = mode == AnchorMode::kOracle ? oracle_ids(seq, pos) : std::vector<TokenId>{};
    const auto contexts = model::story_contexts(model, seq.features, mode, ids);
    for (size_t i = 0; i < seq.size(); ++i) {
      const auto target = model::decoder_target(vocab.encode(seq.story.sentences[i]), model.config.max_sentence_len);
      Tape tape;
      const model::SentenceLoss s = model::decode_sentence(tape, model, tape.constant(contexts[i]), target, 0.0, unused);
      for (size_t t = 0; t < target.size(); ++t) {
        if (numerics::argmax(tape.value(s.logits[t]).values()) == target[t]) ++correct;
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Evaluation helpers

References dataset_references(const Dataset& dataset) {
  References r;
  r.stories = dataset.references();
  r.k = r.stories.empty() ? 0 : SIZE_MAX;
  for (const auto& [album, refs] : r.stories) r.k = std::min(r.k, refs.size());
  return r;
}

std::vector<metrics::ScoredStory> scored(std::span<const decoding::GeneratedStory> generated) {
  std::vector<metrics::ScoredStory> out;
  for (const auto& g : generated) out.push_back({g.album_id, g.joined()});
  return out;
}

metrics::MetricScores evaluate_model(const Model& model, const Vocabulary& vocab, const Dataset& dataset,
                                     AnchorMode mode, PosClass pos, const decoding::BeamOptions& options,
                                     size_t threads) {
  const auto generated = decoding::generate_dataset(model, vocab, dataset, mode, pos, options, threads);
  const References refs = dataset_references(dataset);
  return metrics::evaluate_run(scored(generated), refs.stories, refs.k);
}

Validator generation_validator(const Dataset& dataset, const Vocabulary& vocab, AnchorMode mode, PosClass pos,
                               size_t beam, size_t threads) {
  return [&dataset, &vocab, mode, pos, beam, threads](const Model& model, size_t) {
    const decoding::BeamOptions options{beam, model.config.max_sentence_len, false};
    const metrics::MetricScores s = evaluate_model(model, vocab, dataset, mode, pos, options, threads);
    return metrics::aggregate(std::span(&s, 1), dataset.unique_albums().size());
  };
}

std::vector<std::pair<std::string, metrics::MetricReport>> run_ablation(
    const Dataset& train, const Dataset* val, const Dataset& test, const Vocabulary& vocab,
    const model::ModelConfig& model_config, std::span<const PosClass> pos_classes, const TrainConfig& config,
    size_t runs) {
  if (runs == 0) {
    fail(ErrorCategory::kInvalidArgument, "run_ablation: runs must be at least 1");
  }
  struct Variant {
    std::string name;
    AnchorMode mode;
    PosClass pos;
  };
  std::vector<Variant> variants{{"ImageOnly", AnchorMode::kImageOnly, PosClass::kNoun}};
  for (const PosClass pos : pos_classes) variants.push_back({std::string(corpus::pos_name(pos)), AnchorMode::kOracle, pos});

  std::vector<std::pair<std::string, metrics::MetricReport>> rows;
  const decoding::BeamOptions options{config.val_beam, model_config.max_sentence_len, false};
  for (const Variant& v : variants) {
    std::vector<metrics::MetricScores> scores;
    for (size_t run = 0; run < runs; ++run) {
      TrainConfig c = config;
      c.seed = derive_seed(config.seed, static_cast<uint64_t>(run));
      c.pos = v.pos;
      c.checkpoint_dir.clear();
      c.log_path.clear();
      const Validator validator =
          val != nullptr ? generation_validator(*val, vocab, v.mode, v.pos, config.val_beam, config.threads) : nullptr;
      const TrainResult trained = train_stage1(train, vocab, model_config, v.mode, c, validator);
      scores.push_back(evaluate_model(trained.best.model, vocab, test, v.mode, v.pos, options, config.threads));
      log::info("ablation ", v.name, " run ", run + 1, "/", runs, " BLEU-1 ", scores.back().bleu[0]);
    }
    rows.emplace_back(v.name, metrics::aggregate(scores, test.unique_albums().size()));
  }
  return rows;
}

}  // namespace storyanchor::training
