#include "storyanchor/dataset.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "storyanchor/binary_io.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/rng.hpp"

namespace storyanchor::corpus {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path, ErrorCategory missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(missing, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

void write_feature_file(const fs::path& path, const FeatureFile& file) {
  if (file.values.size() != static_cast<size_t>(file.count) * file.dim) {
    fail(ErrorCategory::kShape, "feature file payload does not match count x dim");
  }
  numerics::ByteWriter out;
  out.raw("SAFV");
  out.u16(FeatureFile::kVersion);
  out.u32(file.count);
  out.u32(file.dim);
  for (const float v : file.values) {
    out.f32(v);
  }
  std::ofstream stream(path, std::ios::binary);
  if (!stream) {
    fail(ErrorCategory::kLoad, "cannot write " + path.string());
  }
  stream << out.bytes();
}

FeatureFile parse_feature_file(std::string_view bytes, const std::string& what) {
  numerics::ByteReader in(bytes, what);
  if (bytes.size() < FeatureFile::kHeaderBytes || in.raw(4) != "SAFV") {
    fail(ErrorCategory::kFormat, what + ": bad magic (expected SAFV)");
  }
  const uint16_t version = in.u16();
  if (version != FeatureFile::kVersion) {
    fail(ErrorCategory::kFormat, what + ": unsupported version " + std::to_string(version));
  }
  FeatureFile file;
  file.count = in.u32();
  file.dim = in.u32();
  const uint64_t expected = FeatureFile::kHeaderBytes + 4ULL * file.count * file.dim;
  if (bytes.size() != expected) {
    fail(ErrorCategory::kFormat, what + ": size " + std::to_string(bytes.size()) + " bytes, header implies " +
                                     std::to_string(expected));
  }
  file.values.resize(static_cast<size_t>(file.count) * file.dim);
  for (float& v : file.values) {
    v = in.f32();
  }
  return file;
}

FeatureFile read_feature_file(const fs::path& path) {
  return parse_feature_file(read_file(path, ErrorCategory::kLoad), path.string());
}

const std::vector<AnchorAssignment>& StorySequence::anchors_for(PosClass pos) const {
  const auto it = anchors.find(pos);
  if (it == anchors.end()) {
    fail(ErrorCategory::kData,
         "story '" + story.album_id + "' has no " + std::string(pos_key(pos)) + " anchors; run prepare first");
  }
  return it->second;
}

std::vector<PosSet> StorySequence::sentence_tags(size_t i, const PosLexicon* lexicon) const {
  if (!pos_tags.empty()) {
    return pos_tags.at(i);
  }
  if (lexicon == nullptr) {
    return std::vector<PosSet>(story.sentences.at(i).size());
  }
  return tag_pos(story.sentences.at(i), *lexicon);
}

std::vector<Story> Dataset::stories() const {
  std::vector<Story> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) {
    out.push_back(s.story);
  }
  return out;
}

std::map<std::string, std::vector<Tokens>> Dataset::references() const {
  std::map<std::string, std::vector<Tokens>> refs;
  for (const auto& s : sequences) {
    Tokens joined;
    for (const auto& sentence : s.story.sentences) {
      joined.insert(joined.end(), sentence.begin(), sentence.end());
    }
    refs[s.story.album_id].push_back(std::move(joined));
  }
  return refs;
}

std::vector<const StorySequence*> Dataset::unique_albums() const {
  std::vector<const StorySequence*> out;
  std::unordered_map<std::string, bool> seen;
  for (const auto& s : sequences) {
    if (seen.emplace(s.story.album_id, true).second) {
      out.push_back(&s);
    }
  }
  return out;
}

namespace {

Tokens sentence_from_json(const json& value, const std::string& where) {
  if (value.is_string()) {
    return tokenize(value.get<std::string>());
  }
  if (!value.is_array()) {
    fail(ErrorCategory::kFormat, where + ": sentence must be a string or a token list");
  }
  Tokens tokens;
  for (const auto& t : value) {
    tokens.push_back(t.get<std::string>());
  }
  return tokens;
}

using LinePatch = std::function<void(json& obj, const std::string& where)>;

Dataset read_manifest_lines(const fs::path& manifest_path, const LinePatch& patch) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open manifest " + manifest_path.string());
  }
  const fs::path base = manifest_path.parent_path();
  std::unordered_map<std::string, FeatureFile> feature_cache;

  Dataset dataset;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    StorySequence seq;
    try {
      json obj = json::parse(line);
      if (patch) patch(obj, where);
      seq.story.album_id = obj.at("album_id").get<std::string>();
      seq.story.image_ids = obj.at("image_ids").get<std::vector<std::string>>();
      for (const auto& s : obj.at("sentences")) {
        seq.story.sentences.push_back(sentence_from_json(s, where));
      }
      if (obj.contains("pos_tags") && !obj.at("pos_tags").is_null()) {
        for (const auto& sentence_tags : obj.at("pos_tags")) {
          std::vector<PosSet> tags;
          for (const auto& token_tags : sentence_tags) {
            PosSet set;
            for (const auto& tag : token_tags) {
              if (const auto pos = parse_pos(tag.get<std::string>())) {
                set.insert(*pos);
              }
            }
            tags.push_back(set);
          }
          seq.pos_tags.push_back(std::move(tags));
        }
      }
      seq.feature_file = obj.at("feature_file").get<std::string>();
      seq.feature_indices = obj.at("feature_indices").get<std::vector<uint32_t>>();
      if (obj.contains("anchors")) {
        for (const auto& [key, list] : obj.at("anchors").items()) {
          const auto pos = parse_pos(key);
          if (!pos) {
            fail(ErrorCategory::kFormat, where + ": unknown anchor class '" + key + "'");
          }
          std::vector<AnchorAssignment> assigned;
          for (const auto& a : list) {
            AnchorAssignment anchor;
            anchor.word = a.at("word").get<std::string>();
            anchor.vocab_id = a.at("id").get<TokenId>();
            anchor.pos_class = *pos;
            anchor.is_unk = anchor.word == Vocabulary::kUnkWord;
            assigned.push_back(std::move(anchor));
          }
          seq.anchors.emplace(*pos, std::move(assigned));
        }
      }
    } catch (const json::exception& e) {
      fail(ErrorCategory::kFormat, where + ": " + e.what());
    }

    seq.story.validate();
    const size_t n = seq.story.size();
    if (seq.feature_indices.size() != n) {
      fail(ErrorCategory::kFormat, where + ": " + std::to_string(seq.feature_indices.size()) +
                                       " feature indices for " + std::to_string(n) + " images");
    }
    if (!seq.pos_tags.empty()) {
      bool ok = seq.pos_tags.size() == n;
      for (size_t i = 0; ok && i < n; ++i) {
        ok = seq.pos_tags[i].size() == seq.story.sentences[i].size();
      }
      if (!ok) {
        fail(ErrorCategory::kFormat, where + ": pos_tags do not line up with the sentences");
      }
    }
    for (const auto& [pos, list] : seq.anchors) {
      if (list.size() != n) {
        fail(ErrorCategory::kFormat, where + ": anchor list length differs from the story length");
      }
    }

    auto cached = feature_cache.find(seq.feature_file);
    if (cached == feature_cache.end()) {
      const fs::path feature_path = base / seq.feature_file;
      if (!fs::exists(feature_path)) {
        fail(ErrorCategory::kLoad, where + ": feature file " + feature_path.string() + " not found (needed for image '" +
                                       seq.story.image_ids.front() + "')");
      }
      cached = feature_cache.emplace(seq.feature_file, read_feature_file(feature_path)).first;
    }
    const FeatureFile& features = cached->second;
    if (dataset.feature_dim == 0) {
      dataset.feature_dim = features.dim;
    } else if (features.dim != dataset.feature_dim) {
      fail(ErrorCategory::kFormat, where + ": feature dimension " + std::to_string(features.dim) +
                                       " differs from corpus dimension " + std::to_string(dataset.feature_dim));
    }
    for (size_t i = 0; i < n; ++i) {
      const uint32_t row = seq.feature_indices[i];
      if (row >= features.count) {
        fail(ErrorCategory::kLoad, where + ": missing features for image '" + seq.story.image_ids[i] + "' (row " +
                                       std::to_string(row) + " of " + std::to_string(features.count) + ")");
      }
      const auto values = features.row(row);
      seq.features.push_back(FeatureVector{std::vector<double>(values.begin(), values.end())});
    }
    dataset.sequences.push_back(std::move(seq));
  }
  return dataset;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) { return read_manifest_lines(manifest_path, nullptr); }

std::map<std::string, uint32_t> read_feature_index(const fs::path& feature_path) {
  fs::path index_path = feature_path;
  index_path.replace_extension(".json");
  std::ifstream in(index_path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open feature index " + index_path.string());
  }
  std::map<std::string, uint32_t> rows;
  try {
    const json obj = json::parse(in);
    const json& table = obj.contains("rows") ? obj.at("rows") : obj;
    for (const auto& [id, row] : table.items()) {
      rows.emplace(id, row.get<uint32_t>());
    }
  } catch (const json::exception& e) {
    fail(ErrorCategory::kFormat, index_path.string() + ": " + e.what());
  }
  return rows;
}

Dataset load_stories_with_features(const fs::path& stories_path, const fs::path& feature_path) {
  const auto rows = read_feature_index(feature_path);
  const std::string feature_abs = fs::absolute(feature_path).string();
  return read_manifest_lines(stories_path, [&](json& obj, const std::string& where) {
    std::vector<uint32_t> indices;
    for (const auto& id : obj.at("image_ids")) {
      const auto it = rows.find(id.get<std::string>());
      if (it == rows.end()) {
        fail(ErrorCategory::kLoad, where + ": missing features for image '" + id.get<std::string>() + "'");
      }
      indices.push_back(it->second);
    }
    obj["feature_file"] = feature_abs;
    obj["feature_indices"] = std::move(indices);
  });
}

void write_manifest(const fs::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(ErrorCategory::kLoad, "cannot write manifest " + path.string());
  }
  for (const auto& seq : dataset.sequences) {
    json obj;
    obj["album_id"] = seq.story.album_id;
    obj["image_ids"] = seq.story.image_ids;
    obj["sentences"] = seq.story.sentences;
    if (!seq.pos_tags.empty()) {
      json tags = json::array();
      for (const auto& sentence : seq.pos_tags) {
        json s = json::array();
        for (const PosSet set : sentence) {
          json t = json::array();
          for (const PosClass c : kAllPosClasses) {
            if (set.contains(c)) {
              t.push_back(std::string(pos_name(c)));
            }
          }
          s.push_back(std::move(t));
        }
        tags.push_back(std::move(s));
      }
      obj["pos_tags"] = std::move(tags);
    }
    obj["feature_file"] = seq.feature_file;
    obj["feature_indices"] = seq.feature_indices;
    if (!seq.anchors.empty()) {
      json anchors = json::object();
      for (const auto& [pos, list] : seq.anchors) {
        json entries = json::array();
        for (const auto& a : list) {
          entries.push_back({{"word", a.word}, {"id", a.vocab_id}});
        }
        anchors[std::string(pos_key(pos))] = std::move(entries);
      }
      obj["anchors"] = std::move(anchors);
    }
    out << obj.dump() << '\n';
  }
}

void assign_anchors(Dataset& dataset, const Vocabulary& vocab, const PosLexicon* lexicon, uint64_t data_seed) {
  for (size_t s = 0; s < dataset.sequences.size(); ++s) {
    StorySequence& seq = dataset.sequences[s];
    seq.anchors.clear();
    for (const PosClass pos : kAllPosClasses) {
      std::vector<AnchorAssignment> assigned;
      for (size_t i = 0; i < seq.size(); ++i) {
        const auto tags = seq.sentence_tags(i, lexicon);
        assigned.push_back(
            extract_anchor(seq.story.sentences[i], tags, pos, anchor_seed(data_seed, s, i, pos), vocab));
      }
      seq.anchors.emplace(pos, std::move(assigned));
    }
  }
}

VocabSpec VocabSpec::standard() {
  VocabSpec spec;
  spec.nouns = {"dog",  "cat",   "beach", "house",  "tree",   "car",    "boat",   "cake",
                "park", "river", "bird",  "horse", "church", "garden", "bridge", "train"};
  spec.verbs = {"saw", "found", "liked", "visited", "watched", "painted", "chased", "built", "followed", "cleaned"};
  spec.adjectives = {"big", "small", "red", "old", "happy", "quiet", "bright", "tall"};
  spec.adverbs = {"slowly", "quickly", "happily", "quietly", "today", "again"};
  spec.templates = {
      "the {ADJ} {NOUN} {VERB} the {NOUN2} {ADV} .",
      "we {VERB} a {NOUN} near the {NOUN2} .",
      "the {NOUN} and the {NOUN2} were {ADJ} .",
  };
  return spec;
}

VocabSpec VocabSpec::single_noun() {
  VocabSpec spec = standard();
  spec.templates = {
      "the {ADJ} {NOUN} {VERB} {ADV} .",
      "we {VERB} a {ADJ} {NOUN} .",
      "the {NOUN} was very {ADJ} .",
  };
  return spec;
}

namespace {

const std::string& pick(Rng& rng, const std::vector<std::string>& words) { return words[rng.below(words.size())]; }

size_t pick_ranked(Rng& rng, size_t n, double zipf) {
  double total = 0.0;
  for (size_t r = 0; r < n; ++r) total += std::pow(static_cast<double>(r + 1), -zipf);
  double u = rng.uniform() * total;
  for (size_t r = 0; r + 1 < n; ++r) {
    u -= std::pow(static_cast<double>(r + 1), -zipf);
    if (u < 0.0) return r;
  }
  return n - 1;
}

const std::string& pick_ranked(Rng& rng, const std::vector<std::string>& words, double zipf) {
  return words[pick_ranked(rng, words.size(), zipf)];
}

}  // namespace

SyntheticCorpus synth_corpus(const SynthConfig& config) {
  if (!(config.correlation >= 0.0 && config.correlation <= 1.0)) {
    fail(ErrorCategory::kInvalidArgument, "synth_corpus: correlation must lie in [0, 1]");
  }
  const VocabSpec& spec = config.vocab;
  if (spec.nouns.empty() || spec.verbs.empty() || spec.adjectives.empty() || spec.adverbs.empty() ||
      spec.templates.empty()) {
    fail(ErrorCategory::kInvalidArgument, "synth_corpus: every word list and the template list must be non-empty");
  }
  if (!(spec.zipf >= 0.0 && std::isfinite(spec.zipf))) {
    fail(ErrorCategory::kInvalidArgument, "synth_corpus: zipf must be finite and non-negative");
  }

  SyntheticCorpus out;
  for (const auto& w : spec.nouns) out.lexicon.add(w, {PosClass::kNoun});
  for (const auto& w : spec.verbs) out.lexicon.add(w, {PosClass::kVerb});
  for (const auto& w : spec.adjectives) out.lexicon.add(w, {PosClass::kAdj});
  for (const auto& w : spec.adverbs) out.lexicon.add(w, {PosClass::kAdv});

  Rng rng(derive_seed(config.seed, "synth"));
  const size_t dim = config.feature_dim;
  std::vector<std::vector<double>> centroids(spec.nouns.size(), std::vector<double>(dim));
  for (auto& c : centroids) {
    for (double& v : c) {
      v = rng.normal();
    }
  }

  out.features.dim = static_cast<uint32_t>(dim);
  out.dataset.feature_dim = dim;
  for (size_t a = 0; a < config.n_albums; ++a) {
    const std::string album_id = config.album_prefix + std::to_string(a);
    std::vector<size_t> clusters(config.images_per_album);
    std::vector<FeatureVector> features;
    std::vector<uint32_t> rows;
    std::vector<std::string> image_ids;
    for (size_t i = 0; i < config.images_per_album; ++i) {
      clusters[i] = rng.below(spec.nouns.size());
      FeatureVector f;
      for (size_t d = 0; d < dim; ++d) {
        const auto value = static_cast<float>(centroids[clusters[i]][d] + config.noise * rng.normal());
        out.features.values.push_back(value);
        f.values.push_back(static_cast<double>(value));
      }
      rows.push_back(out.features.count++);
      features.push_back(std::move(f));
      image_ids.push_back(album_id + "_img" + std::to_string(i));
    }
    out.clusters.push_back(clusters);

    for (size_t s = 0; s < config.stories_per_album; ++s) {
      StorySequence seq;
      seq.story.album_id = album_id;
      seq.story.image_ids = image_ids;
      seq.features = features;
      seq.feature_file = "features.safv";
      seq.feature_indices = rows;
      for (size_t i = 0; i < config.images_per_album; ++i) {
        const bool tied = rng.uniform() < config.correlation;
        const size_t noun = tied ? clusters[i] : rng.below(spec.nouns.size());
        const std::string& tmpl = spec.templates[pick_ranked(rng, spec.templates.size(), spec.zipf)];
        Tokens sentence;
        std::istringstream words(tmpl);
        std::string slot;
        while (words >> slot) {
          if (slot == "{NOUN}") sentence.push_back(spec.nouns[noun]);
          else if (slot == "{NOUN2}") sentence.push_back(pick(rng, spec.nouns));
          else if (slot == "{VERB}") sentence.push_back(pick_ranked(rng, spec.verbs, spec.zipf));
          else if (slot == "{ADJ}") sentence.push_back(pick_ranked(rng, spec.adjectives, spec.zipf));
          else if (slot == "{ADV}") sentence.push_back(pick_ranked(rng, spec.adverbs, spec.zipf));
          else sentence.push_back(slot);
        }
        seq.story.sentences.push_back(std::move(sentence));
      }
      out.dataset.sequences.push_back(std::move(seq));
    }
  }
  out.centroids = std::move(centroids);
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  write_feature_file(dir / "features.safv", corpus.features);
  write_manifest(dir / "manifest.jsonl", corpus.dataset);
  corpus.lexicon.save(dir / "lexicon.tsv");
}

}  // namespace storyanchor::corpus
