#include "cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "storyanchor/dataset.hpp"
#include "storyanchor/decoding.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/log.hpp"
#include "storyanchor/metrics.hpp"
#include "storyanchor/selfcheck.hpp"

namespace storyanchor::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kBool, kInt, kReal, kText };

struct Field {
  std::string key;
  std::string help;
  Kind kind = Kind::kText;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T convert(const std::string& key, const json& v) {
  auto wrong = [&](const char* expected) {
    fail(ErrorCategory::kUsage, "config key '" + key + "' expects " + expected + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) wrong("true or false");
    return v.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0)) wrong("a non-negative integer");
    return v.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) wrong("a number");
    return v.get<T>();
  } else {
    if (!v.is_string()) wrong("a string");
    return v.get<std::string>();
  }
}

template <typename Access>
Field field(std::string key, std::string help, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.help = std::move(help);
  if constexpr (std::is_same_v<T, bool>) {
    f.kind = Kind::kBool;
  } else if constexpr (std::is_integral_v<T>) {
    f.kind = Kind::kInt;
  } else if constexpr (std::is_floating_point_v<T>) {
    f.kind = Kind::kReal;
  } else {
    f.kind = Kind::kText;
  }
  f.get = [access](const RunConfig& c) { return json(access(const_cast<RunConfig&>(c))); };
  f.set = [access, key](RunConfig& c, const json& v) { access(c) = convert<T>(key, v); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    using C = RunConfig;
    f.push_back(field("seed", "root seed of every random stream", [](C& c) -> auto& { return c.seed; }));
    f.push_back(field("threads", "worker threads for training and decoding", [](C& c) -> auto& { return c.threads; }));
    f.push_back(field("dataset", "dataset manifest (JSON lines)", [](C& c) -> auto& { return c.dataset; }));
    f.push_back(field("features", "feature file whose sibling .json maps image ids to rows",
                      [](C& c) -> auto& { return c.features; }));
    f.push_back(field("val_dataset", "validation manifest", [](C& c) -> auto& { return c.val_dataset; }));
    f.push_back(field("test_dataset", "test manifest", [](C& c) -> auto& { return c.test_dataset; }));
    f.push_back(field("lexicon", "word<TAB>classes POS lexicon", [](C& c) -> auto& { return c.lexicon; }));
    f.push_back(field("vocab", "vocabulary file (default: vocab.txt next to the dataset)",
                      [](C& c) -> auto& { return c.vocab; }));
    f.push_back(field("checkpoint", "checkpoint to read", [](C& c) -> auto& { return c.checkpoint; }));
    f.push_back(field("out", "output file or directory", [](C& c) -> auto& { return c.out; }));
    f.push_back(field("beam", "beam width", [](C& c) -> auto& { return c.beam; }));
    f.push_back(field("length_normalize", "rank finished beams by log-prob per token",
                      [](C& c) -> auto& { return c.length_normalize; }));
    f.push_back(field("runs", "training runs or sampling runs", [](C& c) -> auto& { return c.runs; }));
    f.push_back(field("pos", "anchor class: noun, verb, adj or adv", [](C& c) -> auto& { return c.pos; }));
    f.push_back(field("k_refs", "references per album used for scoring", [](C& c) -> auto& { return c.k_refs; }));
    f.push_back(field("min_freq", "minimum training count for a vocabulary word",
                      [](C& c) -> auto& { return c.min_freq; }));
    f.push_back(field("val_fraction", "share of albums held out for validation",
                      [](C& c) -> auto& { return c.val_fraction; }));
    f.push_back(field("test_fraction", "share of albums held out for testing",
                      [](C& c) -> auto& { return c.test_fraction; }));
    f.push_back(field("synth", "prepare: generate a synthetic corpus instead of reading --dataset",
                      [](C& c) -> auto& { return c.synth; }));
    f.push_back(field("synth_albums", "synthetic albums", [](C& c) -> auto& { return c.synth_albums; }));
    f.push_back(field("synth_images", "images per synthetic album", [](C& c) -> auto& { return c.synth_images; }));
    f.push_back(field("synth_stories_per_album", "stories per synthetic album",
                      [](C& c) -> auto& { return c.synth_stories_per_album; }));
    f.push_back(field("synth_correlation", "probability that a sentence noun is its image's cluster",
                      [](C& c) -> auto& { return c.synth_correlation; }));
    f.push_back(field("synth_feature_dim", "synthetic feature dimension",
                      [](C& c) -> auto& { return c.synth_feature_dim; }));
    f.push_back(field("synth_noise", "feature noise around the cluster centre",
                      [](C& c) -> auto& { return c.synth_noise; }));
    f.push_back(field("synth_zipf", "rank exponent of non-noun word and template draws",
                      [](C& c) -> auto& { return c.synth_zipf; }));
    f.push_back(field("variant", "stage-1 anchor source: oracle or image-only", [](C& c) -> auto& { return c.variant; }));
    f.push_back(field("predictor_context", "predictor input: image or sequence",
                      [](C& c) -> auto& { return c.predictor_context; }));
    f.push_back(field("embed_dim", "word embedding size", [](C& c) -> auto& { return c.model.embed_dim; }));
    f.push_back(field("fusion_out", "fusion layer width", [](C& c) -> auto& { return c.model.fusion_out; }));
    f.push_back(field("enc_hidden", "encoder GRU width per direction", [](C& c) -> auto& { return c.model.enc_hidden; }));
    f.push_back(field("dec_hidden", "decoder GRU width", [](C& c) -> auto& { return c.model.dec_hidden; }));
    f.push_back(field("predictor_hidden", "anchor predictor hidden width",
                      [](C& c) -> auto& { return c.model.predictor_hidden; }));
    f.push_back(field("max_sentence_len", "decoder steps per sentence, EOS included",
                      [](C& c) -> auto& { return c.model.max_sentence_len; }));
    f.push_back(field("story_length", "images per story", [](C& c) -> auto& { return c.model.story_length; }));
    f.push_back(field("context_every_step", "feed the image context to every decoder step",
                      [](C& c) -> auto& { return c.model.context_every_step; }));
    f.push_back(field("ss_sample", "scheduled sampling draws from the softmax (false: argmax)",
                      [](C& c) -> auto& { return c.model.ss_sample; }));
    f.push_back(field("lr", "Adam learning rate", [](C& c) -> auto& { return c.train.lr; }));
    f.push_back(field("batch_size", "stories per mini-batch", [](C& c) -> auto& { return c.train.batch_size; }));
    f.push_back(field("epochs", "training epochs", [](C& c) -> auto& { return c.train.epochs; }));
    f.push_back(field("ss_p0", "scheduled sampling probability at epoch 0",
                      [](C& c) -> auto& { return c.train.schedule.p0; }));
    f.push_back(field("ss_delta", "scheduled sampling increase per period",
                      [](C& c) -> auto& { return c.train.schedule.delta; }));
    f.push_back(field("ss_period", "epochs per scheduled sampling step",
                      [](C& c) -> auto& { return c.train.schedule.period; }));
    f.push_back(field("ss_cap_epoch", "epoch from which the probability stays fixed",
                      [](C& c) -> auto& { return c.train.schedule.cap_epoch; }));
    f.push_back(field("eval_every", "validate every N epochs (0: keep the last epoch)",
                      [](C& c) -> auto& { return c.train.eval_every; }));
    f.push_back(field("clip_norm", "global gradient norm clip (0: off)", [](C& c) -> auto& { return c.train.clip_norm; }));
    f.push_back(field("mse_weight", "stage-2 anchor regression weight", [](C& c) -> auto& { return c.train.mse_weight; }));
    f.push_back(field("ce_weight", "stage-2 generation loss weight", [](C& c) -> auto& { return c.train.ce_weight; }));
    f.push_back(field("val_beam", "beam width used for validation", [](C& c) -> auto& { return c.train.val_beam; }));
    return f;
  }();
  return all;
}

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

json parse_flag_text(const Field& f, const std::string& text) {
  switch (f.kind) {
    case Kind::kInt: {
      uint64_t v = 0;
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || end != text.data() + text.size()) {
        fail(ErrorCategory::kUsage, flag_name(f.key) + " expects a non-negative integer, got '" + text + "'");
      }
      return v;
    }
    case Kind::kReal: {
      size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(text, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != text.size()) {
        fail(ErrorCategory::kUsage, flag_name(f.key) + " expects a number, got '" + text + "'");
      }
      return v;
    }
    case Kind::kBool: return text == "true";
    case Kind::kText: return text;
  }
  return text;
}

std::string default_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

corpus::PosClass parse_pos_flag(const std::string& text) {
  for (const auto pos : corpus::kAllPosClasses) {
    if (corpus::pos_key(pos) == text) return pos;
  }
  fail(ErrorCategory::kUsage, "--pos expects noun, verb, adj or adv, got '" + text + "'");
}

model::AnchorMode parse_variant(const std::string& text) {
  if (text == "oracle") return model::AnchorMode::kOracle;
  if (text == "image-only") return model::AnchorMode::kImageOnly;
  fail(ErrorCategory::kUsage, "--variant expects oracle or image-only, got '" + text + "'");
}

model::PredictorContext parse_predictor_context(const std::string& text) {
  if (text == "image") return model::PredictorContext::kImage;
  if (text == "sequence") return model::PredictorContext::kSequence;
  fail(ErrorCategory::kUsage, "--predictor-context expects image or sequence, got '" + text + "'");
}

const std::string& require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) {
    fail(ErrorCategory::kUsage, std::string(command) + " needs " + flag);
  }
  return value;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open config " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCategory::kFormat, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) {
    fail(ErrorCategory::kLoad, "cannot write " + path.string());
  }
}

corpus::Dataset load_manifest(const std::string& path) { return corpus::load_dataset(path); }

corpus::Vocabulary load_vocab(const RunConfig& cfg, const std::string& dataset) {
  const fs::path path = !cfg.vocab.empty() ? fs::path(cfg.vocab) : fs::path(dataset).parent_path() / "vocab.txt";
  return corpus::Vocabulary::load(path);
}

model::ModelConfig model_config(const RunConfig& cfg, const corpus::Dataset& data, const corpus::Vocabulary& vocab) {
  model::ModelConfig mc = cfg.model;
  mc.feature_dim = data.feature_dim;
  mc.vocab_size = vocab.size();
  mc.predictor_context = parse_predictor_context(cfg.predictor_context);
  return mc;
}

training::TrainConfig train_config(const RunConfig& cfg) {
  training::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.threads = cfg.threads;
  tc.pos = parse_pos_flag(cfg.pos);
  return tc;
}

decoding::BeamOptions beam_options(const RunConfig& cfg, const model::Model& model) {
  return decoding::BeamOptions{cfg.beam, model.config.max_sentence_len, cfg.length_normalize};
}

json report_object(const metrics::MetricReport& r) { return json::parse(metrics::report_json(r)); }

// ---------------------------------------------------------------------------
// Commands

std::vector<const corpus::StorySequence*> albums_in_order(const corpus::Dataset& data) { return data.unique_albums(); }

int cmd_prepare(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = require(cfg.out, "--out", "prepare");
  fs::create_directories(dir);
  const uint64_t data_seed = derive_seed(cfg.seed, "data-prep");

  corpus::Dataset all;
  corpus::PosLexicon lexicon;
  bool have_lexicon = false;
  if (cfg.synth) {
    corpus::SynthConfig sc;
    sc.seed = data_seed;
    sc.n_albums = cfg.synth_albums;
    sc.images_per_album = cfg.synth_images;
    sc.stories_per_album = cfg.synth_stories_per_album;
    sc.correlation = cfg.synth_correlation;
    sc.feature_dim = cfg.synth_feature_dim;
    sc.noise = cfg.synth_noise;
    sc.vocab.zipf = cfg.synth_zipf;
    auto synth = corpus::synth_corpus(sc);
    corpus::write_synthetic(synth, dir);
    all = std::move(synth.dataset);
    lexicon = std::move(synth.lexicon);
    have_lexicon = true;
  } else {
    const std::string& source = require(cfg.dataset, "--dataset or --synth", "prepare");
    all = cfg.features.empty() ? corpus::load_dataset(source) : corpus::load_stories_with_features(source, cfg.features);
    const fs::path base = cfg.features.empty() ? fs::path(source).parent_path() : fs::path();
    for (auto& seq : all.sequences) {
      const fs::path feature = fs::absolute(base / seq.feature_file);
      seq.feature_file = fs::relative(feature, fs::absolute(dir)).generic_string();
    }
  }
  if (!cfg.lexicon.empty()) {
    lexicon = corpus::PosLexicon::load(cfg.lexicon);
    have_lexicon = true;
  }

  if (!(cfg.val_fraction >= 0.0 && cfg.test_fraction >= 0.0 && cfg.val_fraction + cfg.test_fraction < 1.0)) {
    fail(ErrorCategory::kUsage, "prepare: --val-fraction and --test-fraction must be non-negative and sum below 1");
  }
  std::vector<std::string> order;
  for (const auto* seq : albums_in_order(all)) order.push_back(seq->story.album_id);
  const size_t n = order.size();
  const auto n_test = static_cast<size_t>(std::llround(cfg.test_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
  if (n_val + n_test >= n) {
    fail(ErrorCategory::kData, "prepare: " + std::to_string(n) + " albums leave no training data");
  }
  std::map<std::string, int> split_of;
  for (size_t i = 0; i < n; ++i) split_of[order[i]] = i < n - n_val - n_test ? 0 : (i < n - n_test ? 1 : 2);

  const std::array<const char*, 3> names = {"train", "val", "test"};
  std::array<corpus::Dataset, 3> splits;
  for (auto& s : splits) s.feature_dim = all.feature_dim;
  for (auto& seq : all.sequences) splits[split_of.at(seq.story.album_id)].sequences.push_back(std::move(seq));

  const corpus::Vocabulary vocab = corpus::build_vocab(splits[0].stories(), cfg.min_freq);
  vocab.save(dir / "vocab.txt");
  for (size_t s = 0; s < 3; ++s) {
    if (splits[s].sequences.empty()) continue;
    corpus::assign_anchors(splits[s], vocab, have_lexicon ? &lexicon : nullptr, derive_seed(data_seed, names[s]));
    corpus::write_manifest(dir / (std::string(names[s]) + ".jsonl"), splits[s]);
    out << names[s] << ": " << splits[s].unique_albums().size() << " albums, " << splits[s].sequences.size()
        << " stories -> " << (dir / (std::string(names[s]) + ".jsonl")).string() << '\n';
  }
  out << "vocabulary: " << vocab.size() << " tokens -> " << (dir / "vocab.txt").string() << '\n';
  return 0;
}

int cmd_stats(const RunConfig& cfg, std::ostream& out) {
  const std::string& path = require(cfg.dataset, "--dataset", "stats");
  const corpus::Dataset data = load_manifest(path);
  std::optional<corpus::PosLexicon> lexicon;
  if (!cfg.lexicon.empty()) lexicon = corpus::PosLexicon::load(cfg.lexicon);
  std::vector<corpus::TaggedSentence> sentences;
  for (const auto& seq : data.sequences) {
    for (size_t i = 0; i < seq.size(); ++i) {
      sentences.push_back({seq.story.sentences[i], seq.sentence_tags(i, lexicon ? &*lexicon : nullptr)});
    }
  }
  const corpus::CorpusStats st = corpus::corpus_stats(sentences);
  const std::string column = fs::path(path).stem().string();
  std::ostringstream table;
  table << std::left << std::setw(20) << "" << std::right << std::setw(12) << column << '\n';
  auto row = [&](const char* name, const std::string& value) {
    table << std::left << std::setw(20) << name << std::right << std::setw(12) << value << '\n';
  };
  std::ostringstream avg;
  avg << std::fixed << std::setprecision(1) << st.avg_sentence_length;
  row("Vocabulary Size", std::to_string(st.vocab_size));
  row("Avg. Sent. Length", avg.str());
  row("# of Nouns", std::to_string(st.nouns));
  row("# of Verbs", std::to_string(st.verbs));
  row("# of Adjectives", std::to_string(st.adjectives));
  row("# of Adverbs", std::to_string(st.adverbs));
  out << table.str();
  return 0;
}

int cmd_train(const RunConfig& cfg, int stage, std::ostream& out) {
  const std::string& train_path = require(cfg.dataset, "--dataset", "train");
  const fs::path dir = require(cfg.out, "--out", "train");
  training::TrainConfig tc = train_config(cfg);
  tc.checkpoint_dir = dir;
  tc.log_path = dir / ("stage" + std::to_string(stage) + "_log.jsonl");

  std::optional<training::Checkpoint> parent;
  if (stage == 2) {
    if (cfg.checkpoint.empty() || !fs::exists(cfg.checkpoint)) {
      fail(ErrorCategory::kLoad, "train --stage 2 needs an existing stage-1 checkpoint (--checkpoint), got '" +
                                     cfg.checkpoint + "'");
    }
    parent = training::load_checkpoint(cfg.checkpoint);
    tc.pos = parent->pos;
  }

  const corpus::Dataset train = load_manifest(train_path);
  const corpus::Vocabulary vocab = load_vocab(cfg, train_path);
  std::optional<corpus::Dataset> val;
  if (!cfg.val_dataset.empty()) val = load_manifest(cfg.val_dataset);

  training::TrainResult result;
  if (stage == 1) {
    const model::AnchorMode variant = parse_variant(cfg.variant);
    training::Validator validator;
    if (val) validator = training::generation_validator(*val, vocab, variant, tc.pos, tc.val_beam, tc.threads);
    result = training::train_stage1(train, vocab, model_config(cfg, train, vocab), variant, tc, validator);
  } else {
    training::Validator validator;
    if (val) {
      validator = training::generation_validator(*val, vocab, model::AnchorMode::kPredicted, tc.pos, tc.val_beam,
                                                 tc.threads);
    }
    result = training::train_stage2(*parent, train, vocab, tc, validator);
  }
  out << "stage " << stage << ": best epoch " << result.best.epoch << " of " << result.history.size();
  if (result.best.validation) out << ", val METEOR-lite " << result.best.validation->meteor_lite.mean;
  out << "\ncheckpoint: " << (dir / "best.sanc").string() << "\nlog: " << tc.log_path.string() << '\n';
  return 0;
}

int cmd_generate(const RunConfig& cfg, bool oracle_anchors, std::ostream& out) {
  const std::string& data_path = require(cfg.dataset, "--dataset", "generate");
  const training::Checkpoint ck = training::load_checkpoint(require(cfg.checkpoint, "--checkpoint", "generate"));
  const corpus::Dataset data = load_manifest(data_path);
  const corpus::Vocabulary vocab = load_vocab(cfg, data_path);
  model::AnchorMode mode = model::AnchorMode::kPredicted;
  if (ck.variant == model::AnchorMode::kImageOnly) {
    if (oracle_anchors) fail(ErrorCategory::kUsage, "generate: an image-only checkpoint takes no anchors");
    mode = model::AnchorMode::kImageOnly;
  } else if (oracle_anchors) {
    mode = model::AnchorMode::kOracle;
  } else if (ck.stage != 2) {
    fail(ErrorCategory::kData, "generate: a stage-1 checkpoint has no trained predictor; pass --oracle-anchors or "
                               "train stage 2");
  }
  const auto stories = decoding::generate_dataset(ck.model, vocab, data, mode, ck.pos, beam_options(cfg, ck.model),
                                                  cfg.threads);
  const fs::path path = require(cfg.out, "--out", "generate");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  decoding::write_generated(path, stories);
  out << stories.size() << " stories (" << model::anchor_mode_name(mode) << ") -> " << path.string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::vector<std::string>& generated, std::ostream& out) {
  const corpus::Dataset data = load_manifest(require(cfg.dataset, "--dataset", "evaluate"));
  const auto refs = training::dataset_references(data);
  std::vector<metrics::MetricScores> runs;
  size_t n_instances = 0;
  for (const auto& path : generated) {
    const auto stories = decoding::read_generated(path);
    const auto scored = training::scored(stories);
    runs.push_back(metrics::evaluate_run(scored, refs.stories, cfg.k_refs));
    n_instances = scored.size();
  }
  const auto report = metrics::aggregate(runs, n_instances);
  out << metrics::format_table({{fs::path(generated.front()).stem().string(), report}});
  if (!cfg.out.empty()) write_text(cfg.out, metrics::report_json(report) + "\n");
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const std::string& train_path = require(cfg.dataset, "--dataset", "ablate");
  const corpus::Dataset train = load_manifest(train_path);
  const corpus::Dataset test = load_manifest(require(cfg.test_dataset, "--test-dataset", "ablate"));
  std::optional<corpus::Dataset> val;
  if (!cfg.val_dataset.empty()) val = load_manifest(cfg.val_dataset);
  const corpus::Vocabulary vocab = load_vocab(cfg, train_path);
  training::TrainConfig tc = train_config(cfg);
  const auto rows = training::run_ablation(train, val ? &*val : nullptr, test, vocab, model_config(cfg, train, vocab),
                                           corpus::kAllPosClasses, tc, cfg.runs);
  out << metrics::format_table(rows);
  if (!cfg.out.empty()) {
    json j = json::array();
    for (const auto& [name, report] : rows) j.push_back({{"variant", name}, {"report", report_object(report)}});
    write_text(cfg.out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_human_baseline(const RunConfig& cfg, const std::vector<std::string>& generated, std::ostream& out) {
  const corpus::Dataset data = load_manifest(require(cfg.dataset, "--dataset", "human-baseline"));
  const auto refs = training::dataset_references(data);
  std::vector<std::map<std::string, corpus::Tokens>> models;
  for (const auto& path : generated) {
    std::map<std::string, corpus::Tokens> by_album;
    for (const auto& story : decoding::read_generated(path)) by_album[story.album_id] = story.joined();
    models.push_back(std::move(by_album));
  }
  const auto hb = metrics::human_baseline(refs.stories, cfg.runs, derive_seed(cfg.seed, "eval-sampling"), models);
  std::vector<std::pair<std::string, metrics::MetricReport>> rows = {{"Human", hb.human}};
  for (size_t m = 0; m < models.size(); ++m) rows.emplace_back(fs::path(generated[m]).stem().string(), hb.models[m]);
  out << metrics::format_table(rows);
  if (!hb.skipped_albums.empty()) out << "skipped albums: " << hb.skipped_albums.size() << '\n';
  if (!cfg.out.empty()) {
    json j;
    j["human"] = report_object(hb.human);
    j["models"] = json::array();
    for (size_t m = 0; m < models.size(); ++m) {
      j["models"].push_back({{"name", rows[m + 1].first}, {"report", report_object(hb.models[m])}});
    }
    j["held_out"] = hb.held_out;
    j["skipped_albums"] = hb.skipped_albums;
    write_text(cfg.out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  constexpr double kTolerance = 1e-5;
  const auto results = training::gradcheck_suite(cfg.seed);
  double worst = 0.0;
  for (const auto& r : results) {
    const bool ok = r.report.max_rel_error <= kTolerance;
    out << std::left << std::setw(24) << r.name << std::right << std::scientific << std::setprecision(3)
        << std::setw(12) << r.report.max_rel_error << std::setw(8) << r.report.entries_checked << "  "
        << (ok ? "PASS" : "FAIL") << '\n';
    worst = std::max(worst, r.report.max_rel_error);
  }
  const bool pass = worst <= kTolerance;
  out << "gradcheck: " << (pass ? "PASS" : "FAIL") << " max relative error " << std::scientific << worst
      << " (tolerance 1e-05)\n";
  return pass ? 0 : 1;
}

}  // namespace

void apply_json(RunConfig& config, const json& object) {
  if (!object.is_object()) {
    fail(ErrorCategory::kUsage, "config must be a JSON object");
  }
  for (const auto& [key, value] : object.items()) {
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
    if (it == fields().end()) {
      fail(ErrorCategory::kUsage, "unknown config key '" + key + "'");
    }
    it->set(config, value);
  }
}

json to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j;
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kUsage:
    case ErrorCategory::kInvalidArgument: return 2;
    case ErrorCategory::kData:
    case ErrorCategory::kLoad:
    case ErrorCategory::kFormat:
    case ErrorCategory::kConfigMismatch: return 3;
    case ErrorCategory::kDiverged: return 4;
    default: return 1;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anchor-word visual storytelling: data preparation, training, generation and evaluation.",
               "storyanchor"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  const RunConfig defaults;
  std::string config_path;
  app.add_option("--config", config_path, "JSON object of the keys below (flag names without dashes)");
  std::map<std::string, std::string> text_values;
  std::map<std::string, bool> flag_values;
  std::vector<std::pair<const Field*, CLI::Option*>> options;
  for (const auto& f : fields()) {
    CLI::Option* opt = nullptr;
    if (f.kind == Kind::kBool) {
      opt = app.add_flag(flag_name(f.key), flag_values[f.key], f.help);
    } else {
      opt = app.add_option(flag_name(f.key), text_values[f.key], f.help);
      opt->type_name(f.kind == Kind::kInt ? "UINT" : (f.kind == Kind::kReal ? "FLOAT" : "TEXT"));
    }
    opt->default_str(default_text(f.get(defaults)));
    options.emplace_back(&f, opt);
  }

  auto* prepare = app.add_subcommand("prepare", "split a corpus, build the vocabulary and assign anchors");
  auto* stats = app.add_subcommand("stats", "vocabulary, sentence length and POS counts of a dataset");
  auto* train = app.add_subcommand("train", "stage 1 (seq2seq with anchors) or stage 2 (anchor predictor)");
  int stage = 0;
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  auto* generate = app.add_subcommand("generate", "decode stories with beam search");
  bool oracle_anchors = false;
  generate->add_flag("--oracle-anchors", oracle_anchors, "condition on ground-truth anchors of --pos");
  auto* evaluate = app.add_subcommand("evaluate", "BLEU-1..4, METEOR-lite, ROUGE-L and CIDEr of generated stories");
  std::vector<std::string> generated;
  evaluate->add_option("--generated", generated, "generated stories, one file per run")->required();
  auto* ablate = app.add_subcommand("ablate", "ImageOnly vs one anchored model per POS class");
  auto* human = app.add_subcommand("human-baseline", "leave-one-reference-out human score");
  std::vector<std::string> model_outputs;
  human->add_option("--generated", model_outputs, "model outputs rescored against the same references");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive and both losses");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e, out, err);
    }
    err << "storyanchor: usage-error: " << e.what() << '\n';
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) apply_json(cfg, read_json_file(config_path));
    for (const auto& [f, opt] : options) {
      if (opt->count() == 0) continue;
      f->set(cfg, f->kind == Kind::kBool ? json(flag_values.at(f->key)) : parse_flag_text(*f, text_values.at(f->key)));
    }
    if (cfg.threads == 0) fail(ErrorCategory::kUsage, "--threads must be at least 1");

    if (prepare->parsed()) return cmd_prepare(cfg, out);
    if (stats->parsed()) return cmd_stats(cfg, out);
    if (train->parsed()) return cmd_train(cfg, stage, out);
    if (generate->parsed()) return cmd_generate(cfg, oracle_anchors, out);
    if (evaluate->parsed()) return cmd_evaluate(cfg, generated, out);
    if (ablate->parsed()) return cmd_ablate(cfg, out);
    if (human->parsed()) return cmd_human_baseline(cfg, model_outputs, out);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, out);
  } catch (const Error& e) {
    err << "storyanchor: " << category_name(e.category()) << ": " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "storyanchor: internal-error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace storyanchor::cli
