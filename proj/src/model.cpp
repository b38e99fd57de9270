#include "storyanchor/model.hpp"

#include <cmath>

#include "storyanchor/error.hpp"

namespace storyanchor::model {

using corpus::Vocabulary;

std::string_view anchor_mode_name(AnchorMode mode) {
  switch (mode) {
    case AnchorMode::kOracle:
      return "oracle";
    case AnchorMode::kPredicted:
      return "predicted";
    case AnchorMode::kImageOnly:
      return "image-only";
  }
  return "?";
}

void ModelConfig::validate() const {
  const std::pair<const char*, size_t> dims[] = {
      {"feature_dim", feature_dim}, {"embed_dim", embed_dim},
      {"fusion_out", fusion_out},   {"enc_hidden", enc_hidden},
      {"dec_hidden", dec_hidden},   {"predictor_hidden", predictor_hidden},
      {"max_sentence_len", max_sentence_len}, {"story_length", story_length},
  };
  for (const auto& [name, value] : dims) {
    if (value == 0) {
      fail(ErrorCategory::kInvalidArgument, std::string("model config: ") + name + " must be at least 1");
    }
  }
  if (vocab_size <= Vocabulary::kNumSpecials) {
    fail(ErrorCategory::kInvalidArgument, "model config: vocab_size must exceed the special tokens");
  }
}

void write_config(numerics::ByteWriter& out, const ModelConfig& c) {
  for (const size_t v : {c.feature_dim, c.embed_dim, c.fusion_out, c.enc_hidden, c.dec_hidden, c.predictor_hidden,
                         c.vocab_size, c.max_sentence_len, c.story_length}) {
    out.u64(v);
  }
  out.u8(c.context_every_step ? 1 : 0);
  out.u8(static_cast<uint8_t>(c.predictor_context));
  out.u8(c.ss_sample ? 1 : 0);
}

ModelConfig read_config(numerics::ByteReader& in) {
  ModelConfig c;
  for (size_t* field : {&c.feature_dim, &c.embed_dim, &c.fusion_out, &c.enc_hidden, &c.dec_hidden,
                        &c.predictor_hidden, &c.vocab_size, &c.max_sentence_len, &c.story_length}) {
    *field = static_cast<size_t>(in.u64());
  }
  c.context_every_step = in.u8() != 0;
  const uint8_t ctx = in.u8();
  if (ctx > 1) {
    fail(ErrorCategory::kFormat, "model config: unknown predictor context " + std::to_string(ctx));
  }
  c.predictor_context = static_cast<PredictorContext>(ctx);
  c.ss_sample = in.u8() != 0;
  return c;
}

namespace {

void add_linear(ParamStore& params, const std::string& prefix, const std::string& suffix, size_t out, size_t in) {
  params.add(prefix + ".w" + suffix, Tensor({out, in}));
  params.add(prefix + ".b" + suffix, Tensor({out}));
}

void add_gru(ParamStore& params, const std::string& prefix, size_t hidden, size_t input) {
  params.add(prefix + ".w", Tensor({3 * hidden, input}));
  params.add(prefix + ".u_zr", Tensor({2 * hidden, hidden}));
  params.add(prefix + ".u_h", Tensor({hidden, hidden}));
  params.add(prefix + ".b", Tensor({3 * hidden}));
}

/// Fan-in of a parameter: the input width of the matrix it belongs to.
size_t fan_in(const ParamStore& params, const std::string& name) {
  const Tensor& value = params.get(name).value;
  if (value.rank() == 2) {
    return value.dim(1);
  }
  // Biases take the fan-in of their sibling weight.
  const auto dot = name.rfind('.');
  const std::string stem = name.substr(0, dot);
  const std::string leaf = name.substr(dot + 1);
  if (leaf == "b" && params.contains(stem + ".w")) {
    return params.get(stem + ".w").value.dim(1);
  }
  const std::string weight = stem + ".w" + leaf.substr(1);
  return params.get(weight).value.dim(1);
}

void check_vector(const Tape& tape, Var v, size_t expected, const char* what) {
  const Tensor& value = tape.value(v);
  if (value.rank() != 1 || value.size() != expected) {
    fail(ErrorCategory::kShape, std::string(what) + ": expected [" + std::to_string(expected) + "], got " +
                                    numerics::shape_string(value.shape()));
  }
}

Var linear(Tape& tape, const ParamStore& params, const std::string& w, const std::string& b, Var x) {
  return tape.add(tape.matmul(tape.parameter(params, w), x), tape.parameter(params, b));
}

}  // namespace

Model make_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Model model{config, {}};
  ParamStore& p = model.params;
  const size_t context = config.context_dim();
  p.add("embedding", Tensor({config.vocab_size, config.embed_dim}));
  add_linear(p, "fusion", "1", config.fusion_out, config.feature_dim + config.embed_dim);
  add_linear(p, "fusion", "2", config.fusion_out, config.fusion_out);
  add_gru(p, "encoder.fwd", config.enc_hidden, config.fusion_out);
  add_gru(p, "encoder.bwd", config.enc_hidden, config.fusion_out);
  add_linear(p, "decoder.init", "", config.dec_hidden, context);
  add_gru(p, "decoder.gru", config.dec_hidden, config.decoder_input_dim());
  add_linear(p, "decoder.out", "", config.vocab_size, config.dec_hidden);
  add_linear(p, "predictor", "1", config.predictor_hidden, config.predictor_input_dim());
  add_linear(p, "predictor", "2", config.embed_dim, config.predictor_hidden);

  Rng rng(seed);
  for (auto& [name, param] : p) {
    const double bound = name == "embedding" ? 0.1 : 1.0 / std::sqrt(static_cast<double>(fan_in(p, name)));
    for (double& v : param.value.values()) {
      v = rng.uniform(-bound, bound);
    }
  }
  return model;
}

bool is_predictor_param(const std::string& name) { return name.rfind("predictor.", 0) == 0; }

Var fuse(Tape& tape, const ParamStore& params, Var feature, Var anchor_embedding) {
  const Tensor& w1 = params.get("fusion.w1").value;
  const size_t expected = tape.value(feature).size() + tape.value(anchor_embedding).size();
  if (w1.dim(1) != expected) {
    fail(ErrorCategory::kShape, "fuse: feature " + numerics::shape_string(tape.value(feature).shape()) +
                                    " plus anchor " + numerics::shape_string(tape.value(anchor_embedding).shape()) +
                                    " does not match fusion input " + std::to_string(w1.dim(1)));
  }
  const Var hidden = tape.relu(linear(tape, params, "fusion.w1", "fusion.b1", tape.concat({feature, anchor_embedding})));
  return tape.relu(linear(tape, params, "fusion.w2", "fusion.b2", hidden));
}

Var gru_cell(Tape& tape, const ParamStore& params, const std::string& prefix, Var x, Var h) {
  const Tensor& w = params.get(prefix + ".w").value;
  const size_t hidden = w.dim(0) / 3;
  check_vector(tape, x, w.dim(1), "gru_cell input");
  check_vector(tape, h, hidden, "gru_cell state");

  const Var wx = tape.add(tape.matmul(tape.parameter(params, prefix + ".w"), x), tape.parameter(params, prefix + ".b"));
  const Var uh = tape.matmul(tape.parameter(params, prefix + ".u_zr"), h);
  const Var z = tape.sigmoid(tape.add(tape.slice(wx, 0, hidden), tape.slice(uh, 0, hidden)));
  const Var r = tape.sigmoid(tape.add(tape.slice(wx, hidden, hidden), tape.slice(uh, hidden, hidden)));
  const Var candidate = tape.tanh(
      tape.add(tape.slice(wx, 2 * hidden, hidden), tape.matmul(tape.parameter(params, prefix + ".u_h"), tape.mul(r, h))));
  // (1 - z) * h + z * candidate
  return tape.add(h, tape.mul(z, tape.sub(candidate, h)));
}

std::vector<Var> encode_sequence(Tape& tape, const ParamStore& params, std::span<const Var> fused) {
  if (fused.empty()) {
    fail(ErrorCategory::kInvalidArgument, "encode_sequence: empty input sequence");
  }
  const size_t hidden = params.get("encoder.fwd.u_h").value.dim(0);
  const size_t n = fused.size();
  std::vector<Var> forward(n);
  std::vector<Var> backward(n);
  Var h = tape.constant(Tensor::zeros(hidden));
  for (size_t i = 0; i < n; ++i) {
    h = gru_cell(tape, params, "encoder.fwd", fused[i], h);
    forward[i] = h;
  }
  h = tape.constant(Tensor::zeros(hidden));
  for (size_t i = n; i > 0; --i) {
    h = gru_cell(tape, params, "encoder.bwd", fused[i - 1], h);
    backward[i - 1] = h;
  }
  std::vector<Var> contexts;
  contexts.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    contexts.push_back(tape.concat({forward[i], backward[i]}));
  }
  return contexts;
}

Var predict_anchor(Tape& tape, const ParamStore& params, Var input) {
  check_vector(tape, input, params.get("predictor.w1").value.dim(1), "predict_anchor input");
  const Var hidden = tape.relu(linear(tape, params, "predictor.w1", "predictor.b1", input));
  return linear(tape, params, "predictor.w2", "predictor.b2", hidden);
}

Var predictor_input(Tape& tape, const ModelConfig& config, std::span<const Var> features, size_t i) {
  if (config.predictor_context == PredictorContext::kImage) {
    return features[i];
  }
  Var total = features[0];
  for (size_t j = 1; j < features.size(); ++j) {
    total = tape.add(total, features[j]);
  }
  return tape.concat({features[i], tape.scale(total, 1.0 / static_cast<double>(features.size()))});
}

StoryGraph forward_story(Tape& tape, const Model& model, std::span<const FeatureVector> features, AnchorMode mode,
                         std::span<const TokenId> oracle_ids) {
  const ModelConfig& config = model.config;
  if (features.empty()) {
    fail(ErrorCategory::kInvalidArgument, "forward_story: story has no images");
  }
  if (mode == AnchorMode::kOracle && oracle_ids.size() != features.size()) {
    fail(ErrorCategory::kShape, "forward_story: " + std::to_string(oracle_ids.size()) + " oracle anchors for " +
                                    std::to_string(features.size()) + " images");
  }
  StoryGraph graph;
  for (const FeatureVector& f : features) {
    if (f.dim() != config.feature_dim) {
      fail(ErrorCategory::kShape, "forward_story: feature dim " + std::to_string(f.dim()) + ", model expects " +
                                      std::to_string(config.feature_dim));
    }
    graph.features.push_back(tape.constant(Tensor({f.dim()}, f.values)));
  }
  std::vector<Var> fused;
  for (size_t i = 0; i < features.size(); ++i) {
    Var anchor;
    switch (mode) {
      case AnchorMode::kOracle:
        anchor = tape.embedding(tape.parameter(model.params, "embedding"), oracle_ids[i]);
        break;
      case AnchorMode::kPredicted:
        anchor = predict_anchor(tape, model.params, predictor_input(tape, config, graph.features, i));
        break;
      case AnchorMode::kImageOnly:
        anchor = tape.constant(Tensor::zeros(config.embed_dim));
        break;
    }
    graph.anchors.push_back(anchor);
    fused.push_back(fuse(tape, model.params, graph.features[i], anchor));
  }
  graph.contexts = encode_sequence(tape, model.params, fused);
  return graph;
}

Var decoder_initial_state(Tape& tape, const ParamStore& params, Var context) {
  return linear(tape, params, "decoder.init.w", "decoder.init.b", context);
}

DecoderStep decoder_step(Tape& tape, const Model& model, Var hidden, TokenId input, Var context) {
  Var x = tape.embedding(tape.parameter(model.params, "embedding"), input);
  if (model.config.context_every_step) {
    x = tape.concat({x, context});
  }
  const Var next = gru_cell(tape, model.params, "decoder.gru", x, hidden);
  return {next, linear(tape, model.params, "decoder.out.w", "decoder.out.b", next)};
}

SentenceLoss decode_sentence(Tape& tape, const Model& model, Var context, std::span<const TokenId> target,
                             double ss_prob, Rng& rng) {
  if (target.empty()) {
    fail(ErrorCategory::kInvalidArgument, "decode_sentence: empty target");
  }
  if (target.back() != Vocabulary::kEos) {
    fail(ErrorCategory::kInvalidArgument, "decode_sentence: target must end with EOS");
  }
  if (!(ss_prob >= 0.0 && ss_prob <= 1.0)) {
    fail(ErrorCategory::kInvalidArgument, "decode_sentence: ss_prob must lie in [0, 1]");
  }
  check_vector(tape, context, model.config.context_dim(), "decode_sentence context");
  SentenceLoss out;
  Var hidden = decoder_initial_state(tape, model.params, context);
  TokenId input = Vocabulary::kBos;
  std::vector<Var> losses;
  for (size_t t = 0; t < target.size(); ++t) {
    if (t > 0) {
      input = target[t - 1];
      if (ss_prob > 0.0 && rng.uniform() < ss_prob) {
        const Tensor& prev = tape.value(out.logits.back());
        input = static_cast<TokenId>(model.config.ss_sample ? rng.categorical(numerics::softmax(prev.values()))
                                                            : numerics::argmax(prev.values()));
      }
    }
    out.inputs.push_back(input);
    const DecoderStep step = decoder_step(tape, model, hidden, input, context);
    hidden = step.hidden;
    out.logits.push_back(step.logits);
    losses.push_back(tape.softmax_cross_entropy(step.logits, target[t]));
  }
  out.loss = tape.sum(tape.concat(losses));
  return out;
}

std::vector<Tensor> story_contexts(const Model& model, std::span<const FeatureVector> features, AnchorMode mode,
                                   std::span<const TokenId> oracle_ids) {
  Tape tape;
  const StoryGraph graph = forward_story(tape, model, features, mode, oracle_ids);
  std::vector<Tensor> out;
  for (const Var v : graph.contexts) {
    out.push_back(tape.value(v));
  }
  return out;
}

std::vector<Tensor> predicted_anchors(const Model& model, std::span<const FeatureVector> features) {
  Tape tape;
  const StoryGraph graph = forward_story(tape, model, features, AnchorMode::kPredicted);
  std::vector<Tensor> out;
  for (const Var v : graph.anchors) {
    out.push_back(tape.value(v));
  }
  return out;
}

std::vector<TokenId> decoder_target(std::span<const TokenId> sentence, size_t max_sentence_len) {
  const size_t keep = std::min(sentence.size(), max_sentence_len - 1);
  std::vector<TokenId> target(sentence.begin(), sentence.begin() + static_cast<std::ptrdiff_t>(keep));
  target.push_back(Vocabulary::kEos);
  return target;
}

}  // namespace storyanchor::model
