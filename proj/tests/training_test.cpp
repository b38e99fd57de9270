#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "storyanchor/binary_io.hpp"
#include "storyanchor/selfcheck.hpp"
#include "storyanchor/training.hpp"
#include "test_support.hpp"

using namespace storyanchor;
using namespace storyanchor::training;
using corpus::PosClass;
using model::AnchorMode;

namespace {

struct Toy {
  corpus::Dataset data;
  corpus::Vocabulary vocab;
  model::ModelConfig config;
};

Toy make_toy(size_t albums, uint64_t seed = 3) {
  corpus::SynthConfig sc;
  sc.seed = seed;
  sc.n_albums = albums;
  sc.images_per_album = 3;
  sc.feature_dim = 6;
  auto synth = corpus::synth_corpus(sc);
  Toy toy;
  toy.data = std::move(synth.dataset);
  toy.vocab = corpus::build_vocab(toy.data.stories(), 1);
  corpus::assign_anchors(toy.data, toy.vocab, &synth.lexicon, seed);
  toy.config.feature_dim = 6;
  toy.config.embed_dim = 6;
  toy.config.fusion_out = 8;
  toy.config.enc_hidden = 5;
  toy.config.dec_hidden = 8;
  toy.config.predictor_hidden = 7;
  toy.config.vocab_size = toy.vocab.size();
  toy.config.story_length = 3;
  toy.config.max_sentence_len = 12;
  return toy;
}

TrainConfig quick_config(size_t epochs) {
  TrainConfig c;
  c.lr = 1e-2;
  c.batch_size = 2;
  c.epochs = epochs;
  c.seed = 11;
  return c;
}

std::string param_bytes(const model::Model& m, bool predictor) {
  return numerics::serialize_params(m.params, [&](const std::string& name) {
    return model::is_predictor_param(name) == predictor;
  });
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<nlohmann::json> out;
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("scheduled sampling probability over epochs 0..40") {
  const ScheduleConfig schedule;
  for (size_t e = 0; e <= 40; ++e) {
    const double expected = e < 20 ? 0.05 * static_cast<double>(e / 5 + 1) : 0.25;
    CHECK(ss_probability(e, schedule) == doctest::Approx(expected).epsilon(1e-12));
  }
  ScheduleConfig steep{0.5, 0.3, 1, 10};
  CHECK(ss_probability(5, steep) == 1.0);
  ScheduleConfig flat{0.2, 0.1, 0, 25};
  CHECK(ss_probability(30, flat) == doctest::Approx(0.2));
}

TEST_CASE("train config validation") {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return error_category([&] { c.validate(); });
  };
  CHECK(bad([](TrainConfig& c) { c.lr = 0; }) == ErrorCategory::kInvalidArgument);
  CHECK(bad([](TrainConfig& c) { c.lr = NAN; }) == ErrorCategory::kInvalidArgument);
  CHECK(bad([](TrainConfig& c) { c.batch_size = 0; }) == ErrorCategory::kInvalidArgument);
  CHECK(bad([](TrainConfig& c) { c.schedule.delta = -0.1; }) == ErrorCategory::kInvalidArgument);
  CHECK_FALSE(bad([](TrainConfig&) {}).has_value());
}

TEST_CASE("epoch log follows the schedule") {
  Toy toy = make_toy(3);
  TrainConfig tc = quick_config(7);
  tc.eval_every = 0;
  tc.log_path = scratch_dir("train_log") / "log.jsonl";
  const auto r = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc);
  REQUIRE(r.history.size() == 7);
  const auto lines = read_jsonl(tc.log_path);
  REQUIRE(lines.size() == 7);
  for (size_t i = 0; i < 7; ++i) {
    CHECK(lines[i]["epoch"] == i + 1);
    CHECK(lines[i]["stage"] == 1);
    CHECK(lines[i]["ss_prob"].get<double>() == doctest::Approx(i < 5 ? 0.05 : 0.10));
    CHECK(lines[i]["loss"].get<double>() == doctest::Approx(r.history[i].loss));
    CHECK(lines[i]["val_meteor"].is_null());
    CHECK(lines[i]["checkpoint_path"].is_null());
  }
  CHECK(r.best.epoch == 7);
}

TEST_CASE("checkpoint round-trip and errors") {
  Toy toy = make_toy(3);
  TrainConfig tc = quick_config(2);
  tc.eval_every = 0;
  Checkpoint c = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best;
  c.validation = metrics::MetricReport{};
  c.validation->meteor_lite = {0.25, 0.01};
  c.validation->n_instances = 3;

  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes, "memory");
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.id() == c.id());
  CHECK(back.epoch == 2);
  CHECK(back.validation->meteor_lite.mean == 0.25);
  CHECK(back.model.config == toy.config);

  const auto dir = scratch_dir("checkpoint");
  save_checkpoint(dir / "c.sanc", c);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "c.sanc", &toy.config)) == bytes);

  model::ModelConfig other = toy.config;
  other.dec_hidden += 1;
  CHECK(error_category([&] { load_checkpoint(dir / "c.sanc", &other); }) == ErrorCategory::kConfigMismatch);
  CHECK(error_category([&] { load_checkpoint(dir / "missing.sanc"); }) == ErrorCategory::kLoad);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK(error_category([&] { parse_checkpoint(bad, "x"); }) == ErrorCategory::kFormat);
  CHECK(error_category([&] { parse_checkpoint(bytes + "!", "x"); }) == ErrorCategory::kFormat);
  CHECK(error_category([&] { parse_checkpoint(bytes.substr(0, bytes.size() / 2), "x"); }) == ErrorCategory::kFormat);
}

TEST_CASE("training is deterministic and independent of the thread count") {
  Toy toy = make_toy(5);
  TrainConfig tc = quick_config(3);
  tc.eval_every = 0;
  const auto a = serialize_checkpoint(train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best);
  const auto b = serialize_checkpoint(train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best);
  tc.threads = 3;
  const auto c = serialize_checkpoint(train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best);
  CHECK(a == b);
  CHECK(a == c);
  tc.seed += 1;
  CHECK(serialize_checkpoint(train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best) != a);
}

TEST_CASE("validation keeps the best epoch") {
  Toy toy = make_toy(3);
  TrainConfig tc = quick_config(3);
  tc.checkpoint_dir = scratch_dir("best_epoch");
  tc.log_path = tc.checkpoint_dir / "log.jsonl";
  const std::vector<double> scores = {0.1, 0.3, 0.2};
  std::vector<size_t> seen;
  Validator validator = [&](const model::Model&, size_t epoch) {
    seen.push_back(epoch);
    metrics::MetricReport r;
    r.meteor_lite.mean = scores[epoch - 1];
    return r;
  };
  const auto r = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc, validator);
  CHECK(seen == std::vector<size_t>{1, 2, 3});
  CHECK(r.best.epoch == 2);
  CHECK(load_checkpoint(tc.checkpoint_dir / "best.sanc").epoch == 2);
  CHECK(load_checkpoint(tc.checkpoint_dir / "last.sanc").epoch == 3);
  CHECK(serialize_checkpoint(load_checkpoint(tc.checkpoint_dir / "best.sanc")) == serialize_checkpoint(r.best));
  const auto lines = read_jsonl(tc.log_path);
  REQUIRE(lines.size() == 3);
  CHECK(lines[1]["val_meteor"].get<double>() == 0.3);
  CHECK(lines[1]["checkpoint_path"].get<std::string>().ends_with("best.sanc"));
  CHECK(lines[2]["checkpoint_path"].get<std::string>().ends_with("last.sanc"));

  seen.clear();
  tc.eval_every = 2;
  tc.checkpoint_dir.clear();
  tc.log_path.clear();
  train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc, validator);
  CHECK(seen == std::vector<size_t>{2, 3});
}

TEST_CASE("non-finite loss reports the step") {
  Toy toy = make_toy(4);
  toy.data.sequences[2].features[1].values[0] = NAN;
  TrainConfig tc = quick_config(2);
  tc.eval_every = 0;
  try {
    train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc);
    FAIL("expected a diverged error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kDiverged);
    const std::string what = e.what();
    CHECK(what.find("epoch 1, step ") != std::string::npos);
    CHECK(what.find(toy.data.sequences[2].story.album_id) != std::string::npos);
  }
}

TEST_CASE("stage-1 argument checks") {
  Toy toy = make_toy(2);
  const TrainConfig tc = quick_config(1);
  CHECK(error_category([&] {
          train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kPredicted, tc);
        }) == ErrorCategory::kInvalidArgument);
  corpus::Dataset empty;
  CHECK(error_category([&] { train_stage1(empty, toy.vocab, toy.config, AnchorMode::kOracle, tc); }) ==
        ErrorCategory::kInvalidArgument);
  model::ModelConfig wrong = toy.config;
  wrong.vocab_size += 1;
  CHECK(error_category([&] { train_stage1(toy.data, toy.vocab, wrong, AnchorMode::kOracle, tc); }) ==
        ErrorCategory::kConfigMismatch);
  corpus::Dataset untagged = toy.data;
  untagged.sequences[0].anchors.clear();
  CHECK(error_category([&] { train_stage1(untagged, toy.vocab, toy.config, AnchorMode::kOracle, tc); }) ==
        ErrorCategory::kData);
}

TEST_CASE("stage 1 leaves the predictor at its initial values") {
  Toy toy = make_toy(3);
  TrainConfig tc = quick_config(0);
  const auto init = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best.model;
  tc.epochs = 3;
  tc.eval_every = 0;
  const auto trained = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best.model;
  CHECK(param_bytes(trained, true) == param_bytes(init, true));
  CHECK(param_bytes(trained, false) != param_bytes(init, false));
}

TEST_CASE("stage-1 loss halves within 50 epochs") {
  Toy toy = make_toy(4);
  TrainConfig tc = quick_config(50);
  tc.eval_every = 0;
  const auto r = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc);
  CHECK(r.history.back().loss < 0.5 * r.history.front().loss);
  const double acc = teacher_forced_accuracy(r.best.model, toy.data, toy.vocab, AnchorMode::kOracle, PosClass::kNoun);
  CHECK(acc > 0.5);
  CHECK(acc <= 1.0);
}

TEST_CASE("anchor targets are embedding rows") {
  Rng rng(4);
  numerics::Tensor emb({6, 3});
  for (double& v : emb.values()) v = rng.normal();
  std::vector<corpus::AnchorAssignment> anchors(3);
  anchors[0].vocab_id = 4;
  anchors[1].vocab_id = corpus::Vocabulary::kUnk;
  anchors[2].vocab_id = 4;
  const auto targets = anchor_targets(emb, anchors);
  REQUIRE(targets.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(targets[i].size() == 3);
    for (size_t d = 0; d < 3; ++d) CHECK(targets[i][d] == emb.at(anchors[i].vocab_id, d));
  }
  anchors[1].vocab_id = 6;
  CHECK(error_category([&] { anchor_targets(emb, anchors); }) == ErrorCategory::kIndex);
  CHECK(error_category([&] { anchor_targets(numerics::Tensor::zeros(6), anchors); }) == ErrorCategory::kShape);
}

TEST_CASE("stage 2 moves only the predictor") {
  Toy toy = make_toy(4);
  TrainConfig tc = quick_config(3);
  tc.eval_every = 0;
  const Checkpoint stage1 = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best;
  const auto r = train_stage2(stage1, toy.data, toy.vocab, tc);
  const Checkpoint& stage2 = r.best;
  CHECK(frozen_bytes(stage2.model) == frozen_bytes(stage1.model));
  CHECK(param_bytes(stage2.model, true) != param_bytes(stage1.model, true));
  CHECK(stage2.stage == 2);
  CHECK(stage2.variant == AnchorMode::kPredicted);
  CHECK(stage2.parent_id == stage1.id());
  CHECK(r.history.back().loss < r.history.front().loss);

  const Checkpoint image_only = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kImageOnly, tc).best;
  CHECK(error_category([&] { train_stage2(image_only, toy.data, toy.vocab, tc); }) ==
        ErrorCategory::kInvalidArgument);
  CHECK(error_category([&] { train_stage2(stage2, toy.data, toy.vocab, tc); }) == ErrorCategory::kInvalidArgument);
}

TEST_CASE("stage-2 mse weight alone regresses the anchor embeddings") {
  Toy toy = make_toy(4);
  TrainConfig tc = quick_config(3);
  tc.eval_every = 0;
  const Checkpoint stage1 = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best;
  tc.ce_weight = 0.0;
  tc.epochs = 40;
  const auto r = train_stage2(stage1, toy.data, toy.vocab, tc);
  CHECK(r.history.back().loss < 0.5 * r.history.front().loss);
}

TEST_CASE("references and evaluation helpers") {
  corpus::SynthConfig sc;
  sc.n_albums = 3;
  sc.stories_per_album = 2;
  sc.images_per_album = 3;
  sc.feature_dim = 6;
  const auto synth = corpus::synth_corpus(sc);
  const auto refs = dataset_references(synth.dataset);
  CHECK(refs.stories.size() == 3);
  CHECK(refs.k == 2);

  Toy toy = make_toy(3);
  TrainConfig tc = quick_config(1);
  tc.eval_every = 0;
  const auto m = train_stage1(toy.data, toy.vocab, toy.config, AnchorMode::kOracle, tc).best.model;
  const decoding::BeamOptions beam{2, 12, false};
  const auto a = evaluate_model(m, toy.vocab, toy.data, AnchorMode::kOracle, PosClass::kNoun, beam, 1);
  const auto b = evaluate_model(m, toy.vocab, toy.data, AnchorMode::kOracle, PosClass::kNoun, beam, 2);
  CHECK(a.bleu[0] == b.bleu[0]);
  CHECK(a.meteor_lite == b.meteor_lite);
  CHECK(a.bleu[0] >= 0.0);
  CHECK(a.bleu[0] <= 1.0);
}

TEST_CASE("gradient check suite covers primitives and both stage losses") {
  const auto results = gradcheck_suite(1);
  REQUIRE(results.size() == 17);
  CHECK(results[results.size() - 2].name == "stage1_loss");
  CHECK(results.back().name == "stage2_loss");
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.report.worst_parameter);
    CHECK(r.report.entries_checked > 0);
    CHECK(r.report.max_rel_error <= 1e-5);
  }
}

}  // TEST_SUITE
