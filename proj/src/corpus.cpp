#include "storyanchor/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_set>

#include "storyanchor/error.hpp"
#include "storyanchor/rng.hpp"

namespace storyanchor::corpus {

std::string_view pos_name(PosClass pos) {
  switch (pos) {
    case PosClass::kNoun: return "NOUN";
    case PosClass::kVerb: return "VERB";
    case PosClass::kAdj: return "ADJ";
    case PosClass::kAdv: return "ADV";
  }
  return "?";
}

std::string_view pos_key(PosClass pos) {
  switch (pos) {
    case PosClass::kNoun: return "noun";
    case PosClass::kVerb: return "verb";
    case PosClass::kAdj: return "adj";
    case PosClass::kAdv: return "adv";
  }
  return "?";
}

std::optional<PosClass> parse_pos(std::string_view tag) {
  std::string upper(tag);
  for (char& c : upper) {
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  if (upper == "NOUN") return PosClass::kNoun;
  if (upper == "VERB") return PosClass::kVerb;
  if (upper == "ADJ" || upper == "ADJECTIVE") return PosClass::kAdj;
  if (upper == "ADV" || upper == "ADVERB") return PosClass::kAdv;
  // Penn Treebank tags. NNP/NNPS count as nouns; WRB is not an adverb here.
  if (upper.starts_with("NN")) return PosClass::kNoun;
  if (upper.starts_with("VB")) return PosClass::kVerb;
  if (upper.starts_with("JJ")) return PosClass::kAdj;
  if (upper.starts_with("RB")) return PosClass::kAdv;
  return std::nullopt;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_punct(char c) { return static_cast<unsigned char>(c) < 0x80 && std::ispunct(static_cast<unsigned char>(c)) != 0; }

bool is_word_char(char c) { return !is_space(c) && !is_punct(c); }

void flush_word(std::string& word, Tokens& out) {
  if (word.empty()) {
    return;
  }
  if (word.size() > 3 && word.ends_with("n't")) {
    out.push_back(word.substr(0, word.size() - 3));
    out.emplace_back("n't");
  } else if (const size_t p = word.find('\''); p != std::string::npos && p > 0) {
    out.push_back(word.substr(0, p));
    out.push_back(word.substr(p));
  } else {
    out.push_back(word);
  }
  word.clear();
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string word;
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (is_space(c)) {
      flush_word(word, out);
    } else if (c == '\'') {
      const bool inside_word = !word.empty() && i + 1 < text.size() && is_word_char(text[i + 1]);
      if (inside_word) {
        word.push_back(c);
      } else {
        flush_word(word, out);
        out.emplace_back("'");
      }
    } else if (is_punct(c)) {
      flush_word(word, out);
      out.emplace_back(1, c);
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush_word(word, out);
  return out;
}

void Story::validate() const {
  if (sentences.empty()) {
    fail(ErrorCategory::kData, "story '" + album_id + "' has no sentences");
  }
  if (sentences.size() != image_ids.size()) {
    fail(ErrorCategory::kData, "story '" + album_id + "' has " + std::to_string(sentences.size()) +
                                   " sentences but " + std::to_string(image_ids.size()) + " images");
  }
  for (size_t i = 0; i < sentences.size(); ++i) {
    if (sentences[i].empty()) {
      fail(ErrorCategory::kData, "story '" + album_id + "' sentence " + std::to_string(i) + " is empty");
    }
  }
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}, 1) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words, size_t min_frequency)
    : min_frequency_(min_frequency) {
  id_to_token_ = {"<pad>", "<bos>", "<eos>", std::string(kUnkWord)};
  id_to_token_.insert(id_to_token_.end(), words.begin(), words.end());
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i)).second) {
      fail(ErrorCategory::kConsistency, "duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) != 0; }

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= id_to_token_.size()) {
    fail(ErrorCategory::kIndex,
         "token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
  }
  return id_to_token_[id];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    ids.push_back(id(t));
  }
  return ids;
}

Tokens Vocabulary::decode(std::span<const TokenId> ids) const {
  Tokens tokens;
  tokens.reserve(ids.size());
  for (const TokenId i : ids) {
    tokens.push_back(token(i));
  }
  return tokens;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(ErrorCategory::kLoad, "cannot write vocabulary to " + path.string());
  }
  out << "#min_frequency " << min_frequency_ << '\n';
  for (const auto& t : id_to_token_) {
    out << t << '\n';
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open vocabulary " + path.string());
  }
  std::string line;
  size_t min_frequency = 1;
  std::vector<std::string> tokens;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && line.starts_with("#min_frequency ")) {
      min_frequency = std::stoul(line.substr(15));
      first = false;
      continue;
    }
    first = false;
    tokens.push_back(line);
  }
  if (tokens.size() < kNumSpecials || tokens[kUnk] != kUnkWord) {
    fail(ErrorCategory::kFormat, path.string() + ": missing special tokens");
  }
  return Vocabulary(std::vector<std::string>(tokens.begin() + kNumSpecials, tokens.end()), min_frequency);
}

Vocabulary build_vocab(std::span<const Story> corpus, size_t min_freq) {
  if (min_freq < 1) {
    fail(ErrorCategory::kInvalidArgument, "build_vocab: min_freq must be at least 1");
  }
  if (corpus.empty()) {
    fail(ErrorCategory::kInvalidArgument, "build_vocab: empty corpus");
  }
  const Vocabulary specials;
  std::unordered_map<std::string, size_t> counts;
  for (const Story& story : corpus) {
    for (const Tokens& sentence : story.sentences) {
      for (const std::string& token : sentence) {
        if (!specials.contains(token)) {
          ++counts[token];
        }
      }
    }
  }
  std::vector<std::pair<std::string, size_t>> kept;
  for (auto& [token, count] : counts) {
    if (count >= min_freq) {
      kept.emplace_back(token, count);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& entry : kept) {
    words.push_back(std::move(entry.first));
  }
  return Vocabulary(words, min_freq);
}

PosSet PosLexicon::lookup(std::string_view token) const {
  const auto it = entries_.find(token);
  return it == entries_.end() ? PosSet{} : it->second;
}

PosLexicon PosLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open lexicon " + path.string());
  }
  PosLexicon lexicon;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty() || line.front() == '#') {
      continue;
    }
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      fail(ErrorCategory::kFormat, path.string() + ":" + std::to_string(line_no) + ": expected token<TAB>classes");
    }
    PosSet classes;
    std::string_view rest(line);
    rest.remove_prefix(tab + 1);
    while (!rest.empty()) {
      const size_t comma = rest.find(',');
      const std::string_view name = rest.substr(0, comma);
      const auto pos = parse_pos(name);
      if (!pos) {
        fail(ErrorCategory::kFormat,
             path.string() + ":" + std::to_string(line_no) + ": unknown class '" + std::string(name) + "'");
      }
      classes.insert(*pos);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    lexicon.add(line.substr(0, tab), classes);
  }
  return lexicon;
}

void PosLexicon::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(ErrorCategory::kLoad, "cannot write lexicon to " + path.string());
  }
  for (const auto& [token, classes] : entries_) {
    if (classes.empty()) {
      continue;
    }
    out << token << '\t';
    bool first = true;
    for (const PosClass c : kAllPosClasses) {
      if (classes.contains(c)) {
        out << (first ? "" : ",") << pos_name(c);
        first = false;
      }
    }
    out << '\n';
  }
}

std::vector<PosSet> tag_pos(std::span<const std::string> tokens, const PosLexicon& lexicon) {
  std::vector<PosSet> tags;
  tags.reserve(tokens.size());
  for (const auto& t : tokens) {
    tags.push_back(lexicon.lookup(t));
  }
  return tags;
}

AnchorAssignment extract_anchor(std::span<const std::string> sentence, std::span<const PosSet> tags, PosClass pos,
                                uint64_t seed, const Vocabulary& vocab) {
  if (tags.size() != sentence.size()) {
    fail(ErrorCategory::kShape, "extract_anchor: " + std::to_string(sentence.size()) + " tokens but " +
                                    std::to_string(tags.size()) + " tag sets");
  }
  std::vector<std::string_view> candidates;
  for (size_t i = 0; i < sentence.size(); ++i) {
    if (!tags[i].contains(pos) || !vocab.contains(sentence[i]) || vocab.is_special(vocab.id(sentence[i]))) {
      continue;
    }
    if (std::find(candidates.begin(), candidates.end(), sentence[i]) == candidates.end()) {
      candidates.push_back(sentence[i]);
    }
  }
  if (candidates.empty()) {
    return AnchorAssignment{std::string(Vocabulary::kUnkWord), Vocabulary::kUnk, pos, true};
  }
  Rng rng(seed);
  const std::string_view chosen = candidates[rng.below(candidates.size())];
  return AnchorAssignment{std::string(chosen), vocab.id(chosen), pos, false};
}

uint64_t anchor_seed(uint64_t data_seed, size_t story, size_t sentence, PosClass pos) {
  uint64_t s = derive_seed(data_seed, static_cast<uint64_t>(story));
  s = derive_seed(s, static_cast<uint64_t>(sentence));
  return derive_seed(s, pos_key(pos));
}

namespace {

std::vector<TaggedSentence> tag_corpus(std::span<const Story> corpus, const PosLexicon& lexicon) {
  std::vector<TaggedSentence> tagged;
  for (const Story& story : corpus) {
    for (const Tokens& sentence : story.sentences) {
      tagged.push_back(TaggedSentence{sentence, tag_pos(sentence, lexicon)});
    }
  }
  return tagged;
}

}  // namespace

CorpusStats corpus_stats(std::span<const TaggedSentence> sentences) {
  CorpusStats stats;
  if (sentences.empty()) {
    return stats;
  }
  std::unordered_set<std::string_view> vocab;
  std::array<std::unordered_set<std::string_view>, 4> per_class;
  for (const TaggedSentence& s : sentences) {
    ++stats.sentences;
    stats.tokens += s.tokens.size();
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      vocab.insert(s.tokens[i]);
      for (const PosClass c : kAllPosClasses) {
        if (s.tags[i].contains(c)) {
          per_class[static_cast<size_t>(c)].insert(s.tokens[i]);
        }
      }
    }
  }
  stats.vocab_size = vocab.size();
  stats.avg_sentence_length = static_cast<double>(stats.tokens) / static_cast<double>(stats.sentences);
  stats.nouns = per_class[0].size();
  stats.verbs = per_class[1].size();
  stats.adjectives = per_class[2].size();
  stats.adverbs = per_class[3].size();
  return stats;
}

CorpusStats corpus_stats(std::span<const Story> corpus, const PosLexicon& lexicon) {
  const auto tagged = tag_corpus(corpus, lexicon);
  return corpus_stats(tagged);
}

PosAverages avg_pos_per_sentence(std::span<const TaggedSentence> sentences) {
  PosAverages avg;
  if (sentences.empty()) {
    return avg;
  }
  std::array<size_t, 4> counts{};
  for (const TaggedSentence& s : sentences) {
    for (const PosSet tags : s.tags) {
      for (const PosClass c : kAllPosClasses) {
        if (tags.contains(c)) {
          ++counts[static_cast<size_t>(c)];
        }
      }
    }
  }
  const double n = static_cast<double>(sentences.size());
  avg.nouns = static_cast<double>(counts[0]) / n;
  avg.verbs = static_cast<double>(counts[1]) / n;
  avg.adjectives = static_cast<double>(counts[2]) / n;
  avg.adverbs = static_cast<double>(counts[3]) / n;
  return avg;
}

PosAverages avg_pos_per_sentence(std::span<const Story> corpus, const PosLexicon& lexicon) {
  const auto tagged = tag_corpus(corpus, lexicon);
  return avg_pos_per_sentence(tagged);
}

}  // namespace storyanchor::corpus
