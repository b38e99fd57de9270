#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "storyanchor/corpus.hpp"

namespace storyanchor::corpus {

/// Rows of 32-bit features as stored on disk ("SAFV" v1):
///   magic "SAFV" | u16 version | u32 count | u32 dim | count*dim f32, all LE.
struct FeatureFile {
  static constexpr uint16_t kVersion = 1;
  static constexpr size_t kHeaderBytes = 14;

  uint32_t count = 0;
  uint32_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(size_t i) const { return std::span<const float>(values).subspan(i * dim, dim); }
};

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);
/// Throws format-error on bad magic, unknown version or a size mismatch.
FeatureFile read_feature_file(const std::filesystem::path& path);
FeatureFile parse_feature_file(std::string_view bytes, const std::string& what);

/// One album sample with its image features and, once prepared, one anchor
/// per sentence for every POS class.
struct StorySequence {
  Story story;
  std::vector<FeatureVector> features;
  /// Per-token tags carried by the manifest; empty when the lexicon is used.
  std::vector<std::vector<PosSet>> pos_tags;
  std::map<PosClass, std::vector<AnchorAssignment>> anchors;

  /// Where the features came from, kept so a prepared manifest can point at
  /// the same feature file.
  std::string feature_file;
  std::vector<uint32_t> feature_indices;

  size_t size() const noexcept { return story.size(); }
  bool has_anchors(PosClass pos) const { return anchors.count(pos) != 0; }
  const std::vector<AnchorAssignment>& anchors_for(PosClass pos) const;
  /// Manifest tags when present, otherwise lexicon lookups.
  std::vector<PosSet> sentence_tags(size_t i, const PosLexicon* lexicon) const;
};

struct Dataset {
  std::vector<StorySequence> sequences;
  size_t feature_dim = 0;

  std::vector<Story> stories() const;
  /// Reference stories grouped by album id, in manifest order.
  std::map<std::string, std::vector<Tokens>> references() const;
  /// First sequence of every album, in first-appearance order.
  std::vector<const StorySequence*> unique_albums() const;
};

/// Reads a JSON-lines manifest. Feature files are resolved relative to the
/// manifest's directory. Throws load-error naming a missing image id and
/// format-error on dimension mismatches or malformed lines.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Row index of every image id, read from the JSON next to a feature file
/// (`x.safv` -> `x.json`): either {"rows": {id: row}, ...} or a flat
/// {id: row} object. Throws load-error when missing, format-error when malformed.
std::map<std::string, uint32_t> read_feature_index(const std::filesystem::path& feature_path);

/// Reads stories (manifest lines whose feature_file / feature_indices may be
/// absent) and points every image at its row of `feature_path`. Throws
/// load-error naming an image id the index does not list.
Dataset load_stories_with_features(const std::filesystem::path& stories_path,
                                   const std::filesystem::path& feature_path);

/// Writes one manifest line per sequence (anchors included when present).
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

/// Computes anchors for every POS class with seeds derived from `data_seed`.
/// Uses manifest tags when a sequence carries them, else `lexicon`.
void assign_anchors(Dataset& dataset, const Vocabulary& vocab, const PosLexicon* lexicon, uint64_t data_seed);

/// Word lists and sentence templates for synthetic corpora. Templates use the
/// slots {NOUN} (tied to the image), {NOUN2} (free), {VERB}, {ADJ}, {ADV}.
struct VocabSpec {
  std::vector<std::string> nouns;
  std::vector<std::string> verbs;
  std::vector<std::string> adjectives;
  std::vector<std::string> adverbs;
  std::vector<std::string> templates;
  /// Verbs, adjectives, adverbs and templates are drawn with probability
  /// proportional to 1 / rank^zipf; 0 draws them uniformly. Nouns are always
  /// uniform.
  double zipf = 1.0;

  /// Roughly fifty words, two nouns per sentence, every template eight tokens long.
  static VocabSpec standard();
  /// Same words, one noun per sentence.
  static VocabSpec single_noun();
};

struct SynthConfig {
  uint64_t seed = 0;
  size_t n_albums = 8;
  VocabSpec vocab = VocabSpec::standard();
  /// Probability that an image's feature cluster is its sentence's {NOUN}.
  double correlation = 1.0;
  size_t images_per_album = 5;
  size_t stories_per_album = 1;
  size_t feature_dim = 16;
  double noise = 0.3;
  std::string album_prefix = "album";
};

struct SyntheticCorpus {
  Dataset dataset;
  PosLexicon lexicon;
  FeatureFile features;
  /// Ground truth for tests: noun index of every image's cluster, per album,
  /// and the cluster centres.
  std::vector<std::vector<size_t>> clusters;
  std::vector<std::vector<double>> centroids;
};

/// Deterministic in `config.seed`. Feature values are rounded to float so the
/// in-memory dataset equals what a reload of the written files produces.
SyntheticCorpus synth_corpus(const SynthConfig& config);

/// Writes features.safv, manifest.jsonl and lexicon.tsv into `dir`.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace storyanchor::corpus
