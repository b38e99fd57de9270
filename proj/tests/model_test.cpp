#include <cmath>

#include "doctest.h"
#include "storyanchor/gradcheck.hpp"
#include "storyanchor/model.hpp"
#include "test_support.hpp"

using namespace storyanchor;
using namespace storyanchor::model;
using corpus::Vocabulary;
using numerics::grad_check;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 6;
  c.embed_dim = 4;
  c.fusion_out = 5;
  c.enc_hidden = 3;
  c.dec_hidden = 4;
  c.predictor_hidden = 5;
  c.vocab_size = 9;
  c.max_sentence_len = 6;
  c.story_length = 3;
  return c;
}

std::vector<FeatureVector> random_features(Rng& rng, size_t n, size_t dim) {
  std::vector<FeatureVector> out(n);
  for (auto& f : out) {
    for (size_t d = 0; d < dim; ++d) f.values.push_back(rng.normal());
  }
  return out;
}

Tensor random_tensor(Rng& rng, numerics::Shape shape, double scale = 0.5) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line GRU: every gate written out element by element.
std::vector<double> gru_oracle(const ParamStore& p, const std::string& prefix, const std::vector<double>& x,
                               const std::vector<double>& h) {
  const Tensor& w = p.get(prefix + ".w").value;
  const Tensor& u_zr = p.get(prefix + ".u_zr").value;
  const Tensor& u_h = p.get(prefix + ".u_h").value;
  const Tensor& b = p.get(prefix + ".b").value;
  const size_t H = h.size();
  std::vector<double> z(H), r(H), out(H);
  for (size_t i = 0; i < H; ++i) {
    double az = b[i], ar = b[H + i];
    for (size_t j = 0; j < x.size(); ++j) {
      az += w.at(i, j) * x[j];
      ar += w.at(H + i, j) * x[j];
    }
    for (size_t j = 0; j < H; ++j) {
      az += u_zr.at(i, j) * h[j];
      ar += u_zr.at(H + i, j) * h[j];
    }
    z[i] = sigmoid(az);
    r[i] = sigmoid(ar);
  }
  for (size_t i = 0; i < H; ++i) {
    double a = b[2 * H + i];
    for (size_t j = 0; j < x.size(); ++j) a += w.at(2 * H + i, j) * x[j];
    for (size_t j = 0; j < H; ++j) a += u_h.at(i, j) * r[j] * h[j];
    out[i] = (1.0 - z[i]) * h[i] + z[i] * std::tanh(a);
  }
  return out;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void zero_all(ParamStore& params, const std::string& prefix) {
  for (auto& [name, p] : params) {
    if (name.rfind(prefix, 0) == 0) {
      for (double& v : p.value.values()) v = 0.0;
    }
  }
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("gru_cell matches a straight-line evaluation") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    ParamStore p;
    const size_t H = 1 + rng.below(5);
    const size_t in = 1 + rng.below(6);
    p.add("g.w", random_tensor(rng, {3 * H, in}));
    p.add("g.u_zr", random_tensor(rng, {2 * H, H}));
    p.add("g.u_h", random_tensor(rng, {H, H}));
    p.add("g.b", random_tensor(rng, {3 * H}));
    const Tensor x = random_tensor(rng, {in}, 1.0);
    const Tensor h = random_tensor(rng, {H}, 1.0);
    Tape tape;
    const Var out = gru_cell(tape, p, "g", tape.constant(x), tape.constant(h));
    const auto expected = gru_oracle(p, "g", to_vec(x), to_vec(h));
    for (size_t i = 0; i < H; ++i) CHECK(std::abs(tape.value(out)[i] - expected[i]) <= 1e-12);
  }
}

TEST_CASE("gru_cell with zero weights halves the state") {
  ParamStore p;
  p.add("g.w", Tensor({6, 3}));
  p.add("g.u_zr", Tensor({4, 2}));
  p.add("g.u_h", Tensor({2, 2}));
  p.add("g.b", Tensor({6}));
  Tape tape;
  const Var out = gru_cell(tape, p, "g", tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::vector({0.8, -2})));
  CHECK(tape.value(out) == Tensor::vector({0.4, -1}));
  const Var zero = gru_cell(tape, p, "g", tape.constant(Tensor::vector({1, 2, 3})), tape.constant(Tensor::zeros(2)));
  CHECK(tape.value(zero) == Tensor::zeros(2));
  CHECK(error_category([&] { gru_cell(tape, p, "g", tape.constant(Tensor::zeros(4)), tape.constant(Tensor::zeros(2))); }) ==
        ErrorCategory::kShape);
}

TEST_CASE("default dimensions") {
  ModelConfig config;
  config.vocab_size = 8;
  const Model m = make_model(config, 0);
  CHECK(m.params.get("fusion.w1").value.shape() == numerics::Shape{2048, 2560});
  Rng rng(2);
  const auto features = random_features(rng, 2, 2048);
  Tape tape;
  const StoryGraph g = forward_story(tape, m, features, AnchorMode::kPredicted);
  CHECK(tape.value(g.anchors[0]).size() == 512);
  CHECK(g.contexts.size() == 2);
  CHECK(tape.value(g.contexts[1]).size() == 512);
  const Var fused = fuse(tape, m.params, g.features[0], g.anchors[0]);
  CHECK(tape.value(fused).size() == 2048);
}

TEST_CASE("zero fusion and predictor weights give zero vectors") {
  Model m = make_model(tiny_config(), 3);
  zero_all(m.params, "fusion.");
  zero_all(m.params, "predictor.");
  Rng rng(4);
  const auto f = random_features(rng, 1, 6);
  Tape tape;
  const Var feature = tape.constant(Tensor({6}, f[0].values));
  CHECK(tape.value(fuse(tape, m.params, feature, tape.constant(Tensor::vector({1, 2, 3, 4})))) == Tensor::zeros(5));
  CHECK(tape.value(predict_anchor(tape, m.params, feature)) == Tensor::zeros(4));
  CHECK(error_category([&] { fuse(tape, m.params, feature, tape.constant(Tensor::zeros(3))); }) ==
        ErrorCategory::kShape);
  CHECK(error_category([&] { predict_anchor(tape, m.params, tape.constant(Tensor::zeros(5))); }) ==
        ErrorCategory::kShape);
}

TEST_CASE("fusion and predictor gradients match finite differences") {
  Model m = make_model(tiny_config(), 5);
  Rng rng(6);
  const Tensor feature = random_tensor(rng, {6}, 1.0);
  const Tensor anchor = random_tensor(rng, {4}, 1.0);
  const Tensor target = random_tensor(rng, {4}, 1.0);
  m.params.set_trainable([](const std::string& n) { return n.rfind("fusion.", 0) != 0; }, false);
  const auto fusion = grad_check(
      [&](Tape& t, const ParamStore& p) {
        return t.sum(t.tanh(fuse(t, p, t.constant(feature), t.constant(anchor))));
      },
      m.params);
  CHECK(fusion.entries_checked == 5 * 10 + 5 + 5 * 5 + 5);
  CHECK(fusion.max_rel_error <= 1e-5);

  m.params.set_all_trainable(false);
  m.params.set_trainable(is_predictor_param, true);
  const auto predictor = grad_check(
      [&](Tape& t, const ParamStore& p) { return t.mse(predict_anchor(t, p, t.constant(feature)), t.constant(target)); },
      m.params);
  CHECK(predictor.max_rel_error <= 1e-5);
}

TEST_CASE("encode_sequence shapes") {
  const Model m = make_model(tiny_config(), 7);
  Rng rng(8);
  for (size_t n : {1u, 2u, 5u}) {
    const auto f = random_features(rng, n, 6);
    const auto contexts = story_contexts(m, f, AnchorMode::kImageOnly);
    CHECK(contexts.size() == n);
    for (const auto& c : contexts) CHECK(c.size() == 6);
  }
  Tape tape;
  CHECK(error_category([&] { encode_sequence(tape, m.params, {}); }) == ErrorCategory::kInvalidArgument);
  const auto wrong = random_features(rng, 2, 5);
  CHECK(error_category([&] { story_contexts(m, wrong, AnchorMode::kImageOnly); }) == ErrorCategory::kShape);
}

TEST_CASE("reversed input with swapped directions swaps the halves") {
  const Model m = make_model(tiny_config(), 9);
  Model twin = m;
  for (const char* leaf : {".w", ".u_zr", ".u_h", ".b"}) {
    std::swap(twin.params.get(std::string("encoder.fwd") + leaf).value,
              twin.params.get(std::string("encoder.bwd") + leaf).value);
  }
  Rng rng(10);
  const auto f = random_features(rng, 4, 6);
  const std::vector<FeatureVector> reversed(f.rbegin(), f.rend());
  const auto a = story_contexts(m, f, AnchorMode::kImageOnly);
  const auto b = story_contexts(twin, reversed, AnchorMode::kImageOnly);
  const size_t H = 3;
  for (size_t i = 0; i < 4; ++i) {
    for (size_t k = 0; k < H; ++k) {
      CHECK(a[i][k] == doctest::Approx(b[3 - i][H + k]).epsilon(1e-12));
      CHECK(a[i][H + k] == doctest::Approx(b[3 - i][k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("every context depends on every image") {
  const Model m = make_model(tiny_config(), 11);
  Rng rng(12);
  const auto f = random_features(rng, 5, 6);
  const auto base = story_contexts(m, f, AnchorMode::kPredicted);
  for (size_t j = 0; j < 5; ++j) {
    auto perturbed = f;
    perturbed[j].values[0] += 0.5;
    const auto changed = story_contexts(m, perturbed, AnchorMode::kPredicted);
    for (size_t i = 0; i < 5; ++i) {
      CAPTURE(i);
      CAPTURE(j);
      CHECK(changed[i] != base[i]);
    }
  }
}

TEST_CASE("anchor slot modes") {
  const Model m = make_model(tiny_config(), 13);
  Rng rng(14);
  const auto f = random_features(rng, 3, 6);
  const std::vector<TokenId> ids = {5, 6, 7};
  Tape tape;
  const StoryGraph oracle = forward_story(tape, m, f, AnchorMode::kOracle, ids);
  const StoryGraph image_only = forward_story(tape, m, f, AnchorMode::kImageOnly);
  const Tensor& table = m.params.get("embedding").value;
  for (size_t i = 0; i < 3; ++i) {
    for (size_t k = 0; k < 4; ++k) CHECK(tape.value(oracle.anchors[i])[k] == table.at(ids[i], k));
    CHECK(tape.value(image_only.anchors[i]) == Tensor::zeros(4));
  }
  CHECK(error_category([&] { forward_story(tape, m, f, AnchorMode::kOracle, std::vector<TokenId>{5}); }) ==
        ErrorCategory::kShape);
  CHECK(error_category([&] { forward_story(tape, m, f, AnchorMode::kOracle, std::vector<TokenId>{5, 6, 99}); }) ==
        ErrorCategory::kIndex);
}

TEST_CASE("anchor and decoder input share the embedding table") {
  Model m = make_model(tiny_config(), 15);
  Rng rng(16);
  const auto f = random_features(rng, 2, 6);
  const std::vector<TokenId> ids = {5, 6};
  const std::vector<TokenId> target = {5, Vocabulary::kEos};
  auto run = [&](const Model& model) {
    Tape tape;
    const StoryGraph g = forward_story(tape, model, f, AnchorMode::kImageOnly);
    Rng unused(0);
    const SentenceLoss s = decode_sentence(tape, model, g.contexts[0], target, 0.0, unused);
    const auto oracle = story_contexts(model, f, AnchorMode::kOracle, ids);
    return std::make_pair(tape.value(s.logits[1]), oracle[0]);
  };
  const auto before = run(m);
  m.params.get("embedding").value.at(5, 0) += 0.3;
  const auto after = run(m);
  // Decoder step 1 reads token 5 as input; the oracle anchor of image 0 is word 5.
  CHECK(before.first != after.first);
  CHECK(before.second != after.second);
}

TEST_CASE("teacher-forced loss is the sum of per-step cross-entropies") {
  const Model m = make_model(tiny_config(), 17);
  Rng rng(18);
  const auto f = random_features(rng, 2, 6);
  const std::vector<TokenId> target = {4, 7, 8, Vocabulary::kEos};
  Tape tape;
  const StoryGraph g = forward_story(tape, m, f, AnchorMode::kImageOnly);
  Rng a(1), b(2);
  const SentenceLoss s1 = decode_sentence(tape, m, g.contexts[1], target, 0.0, a);
  const SentenceLoss s2 = decode_sentence(tape, m, g.contexts[1], target, 0.0, b);
  CHECK(tape.scalar(s1.loss) == tape.scalar(s2.loss));
  CHECK(a.next_u64() == Rng(1).next_u64());
  CHECK(s1.inputs == std::vector<TokenId>{Vocabulary::kBos, 4, 7, 8});

  double expected = 0.0;
  for (size_t t = 0; t < target.size(); ++t) {
    const Tensor& logits = tape.value(s1.logits[t]);
    double mx = -INFINITY;
    for (double v : logits.values()) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.values()) z += std::exp(v - mx);
    expected += -(logits[target[t]] - mx - std::log(z));
  }
  CHECK(tape.scalar(s1.loss) == doctest::Approx(expected).epsilon(1e-12));

  CHECK(error_category([&] { decode_sentence(tape, m, g.contexts[1], std::vector<TokenId>{}, 0.0, a); }) ==
        ErrorCategory::kInvalidArgument);
  CHECK(error_category([&] { decode_sentence(tape, m, g.contexts[1], std::vector<TokenId>{4}, 0.0, a); }) ==
        ErrorCategory::kInvalidArgument);
}

TEST_CASE("scheduled sampling replays from the seed") {
  const Model m = make_model(tiny_config(), 19);
  Rng frng(20);
  const auto f = random_features(frng, 2, 6);
  const std::vector<TokenId> target = {4, 5, 6, 7, 8, Vocabulary::kEos};
  for (const double p : {0.5, 1.0}) {
    Tape tape;
    const StoryGraph g = forward_story(tape, m, f, AnchorMode::kImageOnly);
    Rng rng(77);
    const SentenceLoss s = decode_sentence(tape, m, g.contexts[0], target, p, rng);

    // Replay the coin and sampling draws against the recorded logits.
    std::mt19937_64 engine(77);
    auto uniform = [&] { return static_cast<double>(engine() >> 11) * 0x1.0p-53; };
    size_t replaced = 0;
    for (size_t t = 1; t < target.size(); ++t) {
      TokenId expected = target[t - 1];
      if (uniform() < p) {
        const auto probs = numerics::softmax(tape.value(s.logits[t - 1]).values());
        const double u = uniform();
        double cumulative = 0.0;
        expected = static_cast<TokenId>(probs.size() - 1);
        for (size_t k = 0; k < probs.size(); ++k) {
          cumulative += probs[k];
          if (u < cumulative) {
            expected = static_cast<TokenId>(k);
            break;
          }
        }
        ++replaced;
      }
      CHECK(s.inputs[t] == expected);
    }
    if (p == 1.0) CHECK(replaced == target.size() - 1);
  }
}

TEST_CASE("full forward is deterministic") {
  const Model a = make_model(tiny_config(), 21);
  const Model b = make_model(tiny_config(), 21);
  CHECK(numerics::serialize_params(a.params) == numerics::serialize_params(b.params));
  const Model c = make_model(tiny_config(), 22);
  CHECK(numerics::serialize_params(a.params) != numerics::serialize_params(c.params));
  Rng rng(23);
  const auto f = random_features(rng, 3, 6);
  CHECK(story_contexts(a, f, AnchorMode::kPredicted) == story_contexts(b, f, AnchorMode::kPredicted));
}

TEST_CASE("context every step and sequence predictor variants") {
  ModelConfig config = tiny_config();
  config.context_every_step = true;
  config.predictor_context = PredictorContext::kSequence;
  Model m = make_model(config, 24);
  CHECK(m.params.get("decoder.gru.w").value.dim(1) == 4 + 6);
  CHECK(m.params.get("predictor.w1").value.dim(1) == 12);
  Rng rng(25);
  const auto f = random_features(rng, 3, 6);
  const std::vector<TokenId> target = {4, Vocabulary::kEos};
  const auto report = grad_check(
      [&](Tape& t, const ParamStore&) {
        const StoryGraph g = forward_story(t, m, f, AnchorMode::kPredicted);
        Rng unused(0);
        return decode_sentence(t, m, g.contexts[2], target, 0.0, unused).loss;
      },
      m.params);
  CAPTURE(report.worst_parameter);
  CAPTURE(report.worst_index);
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("config validation and serialization") {
  ModelConfig c = tiny_config();
  c.context_every_step = true;
  c.ss_sample = false;
  numerics::ByteWriter w;
  write_config(w, c);
  numerics::ByteReader r(w.bytes(), "config");
  CHECK(read_config(r) == c);
  CHECK(r.at_end());

  c.enc_hidden = 0;
  CHECK(error_category([&] { c.validate(); }) == ErrorCategory::kInvalidArgument);
  c = tiny_config();
  c.vocab_size = 4;
  CHECK(error_category([&] { make_model(c, 0); }) == ErrorCategory::kInvalidArgument);
}

TEST_CASE("decoder target truncation") {
  const std::vector<TokenId> s = {4, 5, 6, 7};
  CHECK(decoder_target(s, 10) == std::vector<TokenId>{4, 5, 6, 7, Vocabulary::kEos});
  CHECK(decoder_target(s, 3) == std::vector<TokenId>{4, 5, Vocabulary::kEos});
}

}  // TEST_SUITE
