#include "storyanchor/selfcheck.hpp"

#include "storyanchor/dataset.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/model.hpp"
#include "storyanchor/rng.hpp"
#include "storyanchor/training.hpp"

namespace storyanchor::training {

using numerics::GradCheckReport;
using numerics::LossBuilder;
using numerics::ParamStore;
using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

// Weighted sum so every output entry gets a distinct upstream gradient.
Var project(Tape& t, Var v, const Tensor& weights) { return t.sum(t.mul(v, t.constant(weights))); }

GradCheckResult check_primitive(const std::string& name, Rng& rng, std::vector<std::pair<std::string, Shape>> inputs,
                                Shape out_shape, const std::function<Var(Tape&, const std::vector<Var>&)>& op,
                                double eps) {
  ParamStore params;
  for (const auto& [n, shape] : inputs) params.add(n, random_tensor(rng, shape));
  const Tensor weights = out_shape.empty() ? Tensor() : random_tensor(rng, out_shape);
  const LossBuilder loss = [&](Tape& t, const ParamStore& p) {
    std::vector<Var> vars;
    for (const auto& [n, shape] : inputs) vars.push_back(t.parameter(p, n));
    const Var out = op(t, vars);
    return out_shape.empty() ? out : project(t, out, weights);
  };
  return {name, numerics::grad_check(loss, params, eps)};
}

}  // namespace

std::vector<GradCheckResult> gradcheck_suite(uint64_t seed, double eps) {
  Rng rng(derive_seed(seed, "gradcheck"));
  std::vector<GradCheckResult> out;
  using V = std::vector<Var>;
  out.push_back(check_primitive("matmul", rng, {{"a", {4, 5}}, {"b", {5, 3}}}, {4, 3},
                                [](Tape& t, const V& v) { return t.matmul(v[0], v[1]); }, eps));
  out.push_back(check_primitive("matvec", rng, {{"a", {4, 5}}, {"b", {5}}}, {4},
                                [](Tape& t, const V& v) { return t.matmul(v[0], v[1]); }, eps));
  out.push_back(check_primitive("add", rng, {{"a", {6}}, {"b", {6}}}, {6},
                                [](Tape& t, const V& v) { return t.add(v[0], v[1]); }, eps));
  out.push_back(check_primitive("sub", rng, {{"a", {6}}, {"b", {6}}}, {6},
                                [](Tape& t, const V& v) { return t.sub(v[0], v[1]); }, eps));
  out.push_back(check_primitive("mul", rng, {{"a", {6}}, {"b", {6}}}, {6},
                                [](Tape& t, const V& v) { return t.mul(v[0], v[1]); }, eps));
  out.push_back(check_primitive("scale", rng, {{"a", {6}}}, {6},
                                [](Tape& t, const V& v) { return t.scale(v[0], -1.7); }, eps));
  out.push_back(check_primitive("concat", rng, {{"a", {3}}, {"b", {4}}}, {7},
                                [](Tape& t, const V& v) { return t.concat({v[0], v[1]}); }, eps));
  out.push_back(check_primitive("slice", rng, {{"a", {7}}}, {3},
                                [](Tape& t, const V& v) { return t.slice(v[0], 2, 3); }, eps));
  out.push_back(check_primitive("sum", rng, {{"a", {6}}}, {}, [](Tape& t, const V& v) { return t.sum(v[0]); }, eps));
  out.push_back(check_primitive("relu", rng, {{"a", {8}}}, {8}, [](Tape& t, const V& v) { return t.relu(v[0]); }, eps));
  out.push_back(check_primitive("tanh", rng, {{"a", {8}}}, {8}, [](Tape& t, const V& v) { return t.tanh(v[0]); }, eps));
  out.push_back(check_primitive("sigmoid", rng, {{"a", {8}}}, {8},
                                [](Tape& t, const V& v) { return t.sigmoid(v[0]); }, eps));
  out.push_back(check_primitive("embedding", rng, {{"table", {5, 3}}}, {3},
                                [](Tape& t, const V& v) { return t.embedding(v[0], 2); }, eps));
  out.push_back(check_primitive("softmax_cross_entropy", rng, {{"logits", {7}}}, {},
                                [](Tape& t, const V& v) { return t.softmax_cross_entropy(v[0], 3); }, eps));
  out.push_back(check_primitive("mse", rng, {{"a", {5}}, {"b", {5}}}, {},
                                [](Tape& t, const V& v) { return t.mse(v[0], v[1]); }, eps));

  // Small model with a 20-entry vocabulary: 4 specials and 16 words.
  corpus::VocabSpec spec;
  spec.nouns = {"dog", "cat", "tree", "boat", "park", "bird", "house"};
  spec.verbs = {"saw", "found"};
  spec.adjectives = {"red", "old"};
  spec.adverbs = {"today", "again"};
  spec.templates = {"the {NOUN} {VERB} a {NOUN2} {ADV} .", "a {ADJ} {NOUN} ."};
  corpus::SynthConfig sc;
  sc.seed = derive_seed(seed, "gradcheck-data");
  sc.n_albums = 1;
  sc.images_per_album = 3;
  sc.feature_dim = 16;
  sc.vocab = spec;
  auto synth = corpus::synth_corpus(sc);
  corpus::Story all_words;
  all_words.sentences.push_back({"the", "a", "."});
  for (const auto* list : {&spec.nouns, &spec.verbs, &spec.adjectives, &spec.adverbs}) {
    all_words.sentences.push_back(*list);
  }
  const corpus::Vocabulary vocab = corpus::build_vocab(std::span(&all_words, 1), 1);
  if (vocab.size() != 20) {
    fail(ErrorCategory::kConsistency, "gradcheck_suite: expected 20 vocabulary entries, got " +
                                          std::to_string(vocab.size()));
  }
  corpus::assign_anchors(synth.dataset, vocab, &synth.lexicon, sc.seed);
  const corpus::StorySequence& seq = synth.dataset.sequences.front();

  model::ModelConfig mc;
  mc.feature_dim = 16;
  mc.embed_dim = 8;
  mc.fusion_out = 8;
  mc.enc_hidden = 8;
  mc.dec_hidden = 8;
  mc.predictor_hidden = 8;
  mc.vocab_size = vocab.size();
  mc.story_length = 3;
  mc.max_sentence_len = 10;
  model::Model m = model::make_model(mc, derive_seed(seed, "gradcheck-init"));
  Rng unused(0);

  m.params.set_all_trainable(true);
  m.params.set_trainable(model::is_predictor_param, false);
  out.push_back({"stage1_loss", numerics::grad_check(
                                    [&](Tape& t, const ParamStore&) {
                                      return stage1_story_loss(t, m, vocab, seq, model::AnchorMode::kOracle,
                                                               corpus::PosClass::kNoun, 0.0, unused);
                                    },
                                    m.params, eps)});

  const Tensor embedding = m.params.get("embedding").value;
  m.params.set_all_trainable(false);
  m.params.set_trainable(model::is_predictor_param, true);
  out.push_back({"stage2_loss", numerics::grad_check(
                                    [&](Tape& t, const ParamStore&) {
                                      return stage2_story_loss(t, m, vocab, seq, embedding, corpus::PosClass::kNoun,
                                                               1.0, 1.0, 0.0, unused);
                                    },
                                    m.params, eps)});
  return out;
}

}  // namespace storyanchor::training
