#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace storyanchor::corpus {

using Tokens = std::vector<std::string>;
using TokenId = uint32_t;

enum class PosClass : uint8_t { kNoun = 0, kVerb = 1, kAdj = 2, kAdv = 3 };

inline constexpr std::array<PosClass, 4> kAllPosClasses = {PosClass::kNoun, PosClass::kVerb, PosClass::kAdj,
                                                           PosClass::kAdv};

/// "NOUN", "VERB", "ADJ", "ADV".
std::string_view pos_name(PosClass pos);
/// Lowercase key used in manifests and on the command line: "noun", ...
std::string_view pos_key(PosClass pos);
/// Accepts class names in any case (noun, ADJ, ...) and Penn Treebank tags
/// (NN*, VB*, JJ*, RB*). Returns nullopt for anything else.
std::optional<PosClass> parse_pos(std::string_view tag);

class PosSet {
 public:
  PosSet() = default;
  PosSet(std::initializer_list<PosClass> classes) {
    for (const PosClass c : classes) insert(c);
  }

  void insert(PosClass c) { bits_ |= static_cast<uint8_t>(1u << static_cast<unsigned>(c)); }
  bool contains(PosClass c) const { return (bits_ >> static_cast<unsigned>(c)) & 1u; }
  bool empty() const { return bits_ == 0; }

  friend bool operator==(PosSet, PosSet) = default;

 private:
  uint8_t bits_ = 0;
};

/// Lowercases ASCII, splits on whitespace, makes every punctuation character
/// its own token, and splits contraction suffixes ("it's" -> "it" "'s",
/// "don't" -> "do" "n't"). Bytes >= 0x80 are kept inside words unchanged.
Tokens tokenize(std::string_view text);

struct Story {
  std::string album_id;
  std::vector<Tokens> sentences;
  std::vector<std::string> image_ids;

  size_t size() const noexcept { return sentences.size(); }
  /// Throws data-error when lengths disagree or a sentence is empty.
  void validate() const;
};

struct FeatureVector {
  std::vector<double> values;
  size_t dim() const noexcept { return values.size(); }
};

struct AnchorAssignment {
  std::string word;
  TokenId vocab_id = 0;
  PosClass pos_class = PosClass::kNoun;
  bool is_unk = false;
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr size_t kNumSpecials = 4;
  static constexpr std::string_view kUnkWord = "UNK";

  /// Specials only.
  Vocabulary();
  /// `words` are the non-special tokens in id order.
  Vocabulary(const std::vector<std::string>& words, size_t min_frequency);

  size_t size() const noexcept { return id_to_token_.size(); }
  size_t min_frequency() const noexcept { return min_frequency_; }
  bool contains(std::string_view token) const;
  bool is_special(TokenId id) const noexcept { return id < kNumSpecials; }
  /// Out-of-vocabulary tokens map to kUnk.
  TokenId id(std::string_view token) const;
  /// Throws index-error for ids outside the vocabulary.
  const std::string& token(TokenId id) const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  Tokens decode(std::span<const TokenId> ids) const;

  /// One token per line in id order, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
  size_t min_frequency_ = 1;
};

/// Ids ordered by frequency (descending), then lexicographically.
/// Throws invalid-argument for min_freq < 1 or an empty corpus.
Vocabulary build_vocab(std::span<const Story> corpus, size_t min_freq);

class PosLexicon {
 public:
  void add(const std::string& token, PosSet classes) { entries_[token] = classes; }
  /// Unknown tokens map to the empty set.
  PosSet lookup(std::string_view token) const;
  size_t size() const noexcept { return entries_.size(); }

  /// `token<TAB>pos1,pos2` per line; blank lines and lines starting with '#'
  /// are ignored. Unknown class names are a format-error.
  static PosLexicon load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, PosSet, std::less<>> entries_;
};

std::vector<PosSet> tag_pos(std::span<const std::string> tokens, const PosLexicon& lexicon);

/// Picks one distinct in-vocabulary word of `pos` uniformly with Rng(seed);
/// returns the UNK assignment when the sentence has none. `tags` must be
/// parallel to `sentence`.
AnchorAssignment extract_anchor(std::span<const std::string> sentence, std::span<const PosSet> tags, PosClass pos,
                                uint64_t seed, const Vocabulary& vocab);

/// Seed used for the anchor of sentence `sentence` in story `story`.
uint64_t anchor_seed(uint64_t data_seed, size_t story, size_t sentence, PosClass pos);

struct CorpusStats {
  size_t vocab_size = 0;
  double avg_sentence_length = 0.0;
  size_t sentences = 0;
  size_t tokens = 0;
  size_t nouns = 0;
  size_t verbs = 0;
  size_t adjectives = 0;
  size_t adverbs = 0;
};

struct PosAverages {
  double nouns = 0.0;
  double verbs = 0.0;
  double adjectives = 0.0;
  double adverbs = 0.0;
};

/// A sentence and its per-token tag sets.
struct TaggedSentence {
  std::span<const std::string> tokens;
  std::vector<PosSet> tags;
};

/// Distinct words per class, vocabulary size and mean sentence length.
CorpusStats corpus_stats(std::span<const TaggedSentence> sentences);
CorpusStats corpus_stats(std::span<const Story> corpus, const PosLexicon& lexicon);
/// Mean number of tagged occurrences per sentence.
PosAverages avg_pos_per_sentence(std::span<const TaggedSentence> sentences);
PosAverages avg_pos_per_sentence(std::span<const Story> corpus, const PosLexicon& lexicon);

}  // namespace storyanchor::corpus
