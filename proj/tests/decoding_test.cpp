#include <cmath>
#include <map>

#include "doctest.h"
#include "storyanchor/decoding.hpp"
#include "test_support.hpp"

using namespace storyanchor;
using namespace storyanchor::decoding;
using corpus::Vocabulary;
using model::AnchorMode;
using model::ModelConfig;

namespace {

constexpr TokenId kEos = Vocabulary::kEos;
constexpr TokenId kA = 4;
constexpr TokenId kB = 5;

// Vocabulary {PAD, BOS, EOS, UNK, a, b}; UNK is never likely. The next-token
// distribution depends only on the prefix generated so far.
using Table = std::map<std::vector<TokenId>, std::array<double, 3>>;  // EOS, a, b

StepFunction table_step(const Table& table) {
  return [table](const Tensor& state, TokenId input) {
    std::vector<double> prefix(state.values().begin(), state.values().end());
    if (input != Vocabulary::kBos) prefix.push_back(input);
    std::vector<TokenId> key(prefix.begin(), prefix.end());
    const auto it = table.find(key);
    const std::array<double, 3> p = it == table.end() ? std::array<double, 3>{0.4, 0.3, 0.3} : it->second;
    std::vector<double> lp(6, std::log(1e-12));
    lp[kEos] = std::log(p[0]);
    lp[kA] = std::log(p[1]);
    lp[kB] = std::log(p[2]);
    return StepOutput{Tensor({prefix.size()}, prefix), lp};
  };
}

const Table kHandTable = {
    {{}, {0.1, 0.5, 0.4}},
    {{kA}, {0.2, 0.15, 0.15}},
    {{kB}, {0.9, 0.05, 0.05}},
};

ModelConfig toy_config() {
  ModelConfig c;
  c.feature_dim = 5;
  c.embed_dim = 4;
  c.fusion_out = 6;
  c.enc_hidden = 3;
  c.dec_hidden = 5;
  c.predictor_hidden = 4;
  c.vocab_size = 8;
  c.max_sentence_len = 8;
  c.story_length = 3;
  return c;
}

// Random decoder whose output layer is scaled up so that distributions are peaked
// enough for short sentences.
model::Model random_model(uint64_t seed) {
  model::Model m = model::make_model(toy_config(), seed);
  for (double& v : m.params.get("decoder.out.w").value.values()) v *= 6.0;
  for (double& v : m.params.get("decoder.out.b").value.values()) v *= 6.0;
  return m;
}

Tensor random_context(Rng& rng) {
  Tensor t({6});
  for (double& v : t.values()) v = 2.0 * rng.normal();
  return t;
}

std::vector<corpus::FeatureVector> random_features(Rng& rng, size_t n) {
  std::vector<corpus::FeatureVector> out(n);
  for (auto& f : out)
    for (int d = 0; d < 5; ++d) f.values.push_back(rng.normal());
  return out;
}

Vocabulary toy_vocab() { return Vocabulary({"w4", "w5", "w6", "w7"}, 1); }

}  // namespace

TEST_SUITE("decoding") {

TEST_CASE("hand-simulated beam on a three-token vocabulary") {
  const StepFunction step = table_step(kHandTable);
  const Tensor empty({0});

  // Beam 2: step 0 keeps [a, b] and drops EOS (ranked third). Step 1 retires
  // b.EOS (0.36) and a.EOS (0.20), keeps [a.a, a.b] at 0.15, which cannot beat
  // 0.36, so the search stops with "b".
  const BeamResult two = beam_search(step, empty, {2, 10, false});
  CHECK(two.tokens == std::vector<TokenId>{kB});
  CHECK(two.log_prob == doctest::Approx(std::log(0.4) + std::log(0.9)).epsilon(1e-12));
  REQUIRE(two.finished.size() == 2);
  CHECK(two.finished[0].tokens == std::vector<TokenId>{kB, kEos});
  CHECK(two.finished[1].tokens == std::vector<TokenId>{kA, kEos});

  // Beam 1 follows a (0.5), then retires a.EOS (0.2) and stops.
  const BeamResult one = beam_search(step, empty, {1, 10, false});
  CHECK(one.tokens == std::vector<TokenId>{kA});
  CHECK(one.log_prob == doctest::Approx(std::log(0.5) + std::log(0.2)).epsilon(1e-12));

  // Beam 3 also retires the bare EOS at step 0.
  const BeamResult three = beam_search(step, empty, {3, 10, false});
  CHECK(three.tokens == std::vector<TokenId>{kB});
  REQUIRE(three.finished.size() == 3);
  CHECK(three.finished[0].tokens == std::vector<TokenId>{kEos});

  const BeamResult greedy = greedy_decode(step, empty, 10);
  CHECK(greedy.tokens == one.tokens);
  CHECK(greedy.log_prob == one.log_prob);
}

TEST_CASE("forced EOS at max_len") {
  const StepFunction step = table_step({{{}, {0.001, 0.98, 0.019}}, {{kA}, {0.01, 0.98, 0.01}}});
  const BeamResult r = beam_search(step, Tensor({0}), {3, 2, false});
  CHECK(r.tokens.size() <= 1);
  for (const auto& h : r.finished) {
    CHECK(h.tokens.back() == kEos);
    CHECK(h.tokens.size() <= 2);
  }
  CHECK(r.tokens == std::vector<TokenId>{kA});
  CHECK(r.log_prob == doctest::Approx(std::log(0.98) + std::log(0.01)).epsilon(1e-12));
  const BeamResult single = beam_search(step, Tensor({0}), {3, 1, false});
  CHECK(single.tokens.empty());
  CHECK(single.log_prob == doctest::Approx(std::log(0.001)).epsilon(1e-12));
  CHECK(greedy_decode(step, Tensor({0}), 1).tokens.empty());
  CHECK(error_category([&] { beam_search(step, Tensor({0}), {0, 5, false}); }) == ErrorCategory::kInvalidArgument);
}

TEST_CASE("greedy ties go to the lowest id") {
  const StepFunction step = table_step({{{}, {0.2, 0.4, 0.4}}, {{kA}, {0.4, 0.3, 0.3}}, {{kB}, {0.4, 0.3, 0.3}}});
  CHECK(greedy_decode(step, Tensor({0}), 5).tokens == std::vector<TokenId>{kA});
  CHECK(beam_search(step, Tensor({0}), {1, 5, false}).tokens == std::vector<TokenId>{kA});
  // Equal-score finished hypotheses: a.EOS and b.EOS; the lower ids win.
  CHECK(beam_search(step, Tensor({0}), {2, 5, false}).tokens == std::vector<TokenId>{kA});
}

TEST_CASE("length normalization changes the ranking") {
  const StepFunction step = table_step({{{}, {0.35, 0.6, 0.05}}, {{kA}, {0.55, 0.4, 0.05}}});
  const BeamResult raw = beam_search(step, Tensor({0}), {2, 5, false});
  CHECK(raw.tokens.empty());  // 0.35 > 0.6 * 0.55 = 0.33
  const BeamResult normalized = beam_search(step, Tensor({0}), {2, 5, true});
  CHECK(normalized.tokens == std::vector<TokenId>{kA});  // log(0.33)/2 > log(0.35)
}

TEST_CASE("beam size one equals greedy on random models") {
  Rng rng(1);
  for (uint64_t i = 0; i < 100; ++i) {
    const model::Model m = random_model(100 + i);
    const Tensor context = random_context(rng);
    const StepFunction step = model_step(m, context);
    const Tensor h0 = initial_state(m, context);
    const BeamResult beam = beam_search(step, h0, {1, 8, false});
    const BeamResult greedy = greedy_decode(step, h0, 8);
    CAPTURE(i);
    CHECK(beam.tokens == greedy.tokens);
    CHECK(beam.log_prob == greedy.log_prob);
  }
}

TEST_CASE("winner beats every finished hypothesis and wider beams never lose") {
  Rng rng(2);
  for (uint64_t i = 0; i < 20; ++i) {
    const model::Model m = random_model(500 + i);
    const Tensor context = random_context(rng);
    const StepFunction step = model_step(m, context);
    const Tensor h0 = initial_state(m, context);
    double previous = -INFINITY;
    for (size_t beam = 1; beam <= 6; ++beam) {
      const BeamResult r = beam_search(step, h0, {beam, 8, false});
      for (const auto& h : r.finished) CHECK(r.log_prob >= h.log_prob);
      CAPTURE(i);
      CAPTURE(beam);
      CHECK(r.log_prob >= previous);
      previous = r.log_prob;
    }
  }
}

TEST_CASE("generated stories") {
  const model::Model m = random_model(7);
  const Vocabulary vocab = toy_vocab();
  Rng rng(3);
  const auto features = random_features(rng, 3);
  const std::vector<TokenId> ids = {4, 5, 6};
  const GeneratedStory s = generate_story(m, vocab, "alb", features, AnchorMode::kOracle, ids, {3, 8, false});
  CHECK(s.sentences.size() == 3);
  CHECK(s.log_probs.size() == 3);
  for (const auto& sentence : s.sentences) {
    CHECK(sentence.size() <= 7);
    for (const auto& tok : sentence) {
      CHECK(tok != "<pad>");
      CHECK(tok != "<bos>");
      CHECK(tok != "<eos>");
    }
  }
  // Oracle anchors that equal the predicted embeddings reproduce predicted mode.
  model::Model patched = m;
  const auto predicted = model::predicted_anchors(m, features);
  for (size_t i = 0; i < 3; ++i)
    for (size_t k = 0; k < 4; ++k) patched.params.get("embedding").value.at(ids[i], k) = predicted[i][k];
  CHECK(model::story_contexts(patched, features, AnchorMode::kOracle, ids) ==
        model::story_contexts(m, features, AnchorMode::kPredicted));
}

TEST_CASE("dataset generation is independent of the thread count and round-trips") {
  corpus::SynthConfig config;
  config.seed = 5;
  config.n_albums = 6;
  config.feature_dim = 5;
  config.images_per_album = 3;
  corpus::SyntheticCorpus synth = corpus::synth_corpus(config);
  const Vocabulary vocab = corpus::build_vocab(synth.dataset.stories(), 1);
  corpus::assign_anchors(synth.dataset, vocab, &synth.lexicon, 1);
  ModelConfig mc = toy_config();
  mc.vocab_size = vocab.size();
  const model::Model m = model::make_model(mc, 9);

  const auto one = generate_dataset(m, vocab, synth.dataset, AnchorMode::kOracle, corpus::PosClass::kNoun, {3, 8, false}, 1);
  const auto four = generate_dataset(m, vocab, synth.dataset, AnchorMode::kOracle, corpus::PosClass::kNoun, {3, 8, false}, 4);
  REQUIRE(one.size() == 6);
  for (size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].album_id == four[i].album_id);
    CHECK(one[i].sentences == four[i].sentences);
    CHECK(one[i].log_probs == four[i].log_probs);
  }

  const auto dir = scratch_dir("generated");
  write_generated(dir / "gen.jsonl", one);
  const auto back = read_generated(dir / "gen.jsonl");
  REQUIRE(back.size() == one.size());
  for (size_t i = 0; i < one.size(); ++i) {
    CHECK(back[i].album_id == one[i].album_id);
    CHECK(back[i].sentences == one[i].sentences);
    CHECK(back[i].log_probs == one[i].log_probs);
  }
  CHECK(error_category([&] { read_generated(dir / "missing.jsonl"); }) == ErrorCategory::kLoad);
}

}  // TEST_SUITE
