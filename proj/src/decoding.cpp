#include "storyanchor/decoding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "storyanchor/error.hpp"

namespace storyanchor::decoding {

using corpus::Vocabulary;
using json = nlohmann::json;

namespace {

bool generable(TokenId id) { return id != Vocabulary::kPad && id != Vocabulary::kBos; }

double rank_score(const Hypothesis& h, bool length_normalize) {
  return length_normalize ? h.log_prob / static_cast<double>(h.tokens.size()) : h.log_prob;
}

/// Strict ordering used everywhere a best hypothesis is chosen.
bool better(const Hypothesis& a, const Hypothesis& b, bool length_normalize) {
  const double sa = rank_score(a, length_normalize);
  const double sb = rank_score(b, length_normalize);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

void check_options(const BeamOptions& options) {
  if (options.beam_size == 0 || options.max_len == 0) {
    fail(ErrorCategory::kInvalidArgument, "beam_search: beam_size and max_len must be at least 1");
  }
}

BeamResult finish(std::vector<Hypothesis> pool, bool length_normalize) {
  const auto best = std::min_element(pool.begin(), pool.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return better(a, b, length_normalize);
  });
  BeamResult result;
  result.tokens = best->tokens;
  result.tokens.pop_back();
  result.log_prob = best->log_prob;
  result.finished = std::move(pool);
  return result;
}

}  // namespace

BeamResult beam_search(const StepFunction& step, const Tensor& initial_state, const BeamOptions& options) {
  check_options(options);
  std::vector<Hypothesis> live{Hypothesis{{}, 0.0, initial_state, false}};
  std::vector<Hypothesis> pool;

  for (size_t t = 0; t < options.max_len && !live.empty(); ++t) {
    const bool last = t + 1 == options.max_len;
    std::vector<Hypothesis> candidates;
    for (const Hypothesis& h : live) {
      const TokenId input = h.tokens.empty() ? Vocabulary::kBos : h.tokens.back();
      StepOutput out = step(h.state, input);
      for (TokenId tok = 0; tok < out.log_probs.size(); ++tok) {
        if (!generable(tok) || (last && tok != Vocabulary::kEos)) continue;
        Hypothesis c{h.tokens, h.log_prob + out.log_probs[tok], out.state, tok == Vocabulary::kEos};
        c.tokens.push_back(tok);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, false); });

    live.clear();
    for (Hypothesis& c : candidates) {
      if (live.size() == options.beam_size) break;
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    if (!pool.empty()) {
      const auto best_finished = std::min_element(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
        return better(a, b, false);
      });
      // Log-probs only fall as tokens are appended.
      if (!options.length_normalize && !live.empty() && live.front().log_prob <= best_finished->log_prob) {
        live.clear();
      }
    }
  }
  return finish(std::move(pool), options.length_normalize);
}

BeamResult greedy_decode(const StepFunction& step, const Tensor& initial_state, size_t max_len) {
  check_options(BeamOptions{1, max_len, false});
  Hypothesis h{{}, 0.0, initial_state, false};
  for (size_t t = 0; t < max_len; ++t) {
    const TokenId input = h.tokens.empty() ? Vocabulary::kBos : h.tokens.back();
    StepOutput out = step(h.state, input);
    TokenId choice = Vocabulary::kEos;
    if (t + 1 < max_len) {
      double best = -INFINITY;
      for (TokenId tok = 0; tok < out.log_probs.size(); ++tok) {
        if (generable(tok) && out.log_probs[tok] > best) {
          best = out.log_probs[tok];
          choice = tok;
        }
      }
    }
    h.log_prob += out.log_probs[choice];
    h.tokens.push_back(choice);
    h.state = std::move(out.state);
    if (choice == Vocabulary::kEos) break;
  }
  h.finished = true;
  return finish({h}, false);
}

Tensor initial_state(const model::Model& model, const Tensor& context) {
  numerics::Tape tape;
  return tape.value(model::decoder_initial_state(tape, model.params, tape.constant(context)));
}

StepFunction model_step(const model::Model& model, const Tensor& context) {
  return [&model, context](const Tensor& state, TokenId input) {
    numerics::Tape tape;
    const model::DecoderStep s =
        model::decoder_step(tape, model, tape.constant(state), input, tape.constant(context));
    return StepOutput{tape.value(s.hidden), numerics::log_softmax(tape.value(s.logits).values())};
  };
}

Tokens GeneratedStory::joined() const {
  Tokens out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

GeneratedStory generate_story(const model::Model& model, const Vocabulary& vocab, const std::string& album_id,
                              std::span<const corpus::FeatureVector> features, model::AnchorMode mode,
                              std::span<const TokenId> oracle_ids, const BeamOptions& options) {
  GeneratedStory story;
  story.album_id = album_id;
  for (const Tensor& context : model::story_contexts(model, features, mode, oracle_ids)) {
    const BeamResult r = beam_search(model_step(model, context), initial_state(model, context), options);
    story.sentences.push_back(vocab.decode(r.tokens));
    story.log_probs.push_back(r.log_prob);
  }
  return story;
}

std::vector<GeneratedStory> generate_dataset(const model::Model& model, const Vocabulary& vocab,
                                             const corpus::Dataset& dataset, model::AnchorMode mode,
                                             corpus::PosClass pos, const BeamOptions& options, size_t threads) {
  const auto albums = dataset.unique_albums();
  std::vector<GeneratedStory> out(albums.size());
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (size_t i = next++; i < albums.size(); i = next++) {
      try {
        const corpus::StorySequence& seq = *albums[i];
        std::vector<TokenId> ids;
        if (mode == model::AnchorMode::kOracle) {
          for (const auto& a : seq.anchors_for(pos)) ids.push_back(a.vocab_id);
        }
        out[i] = generate_story(model, vocab, seq.story.album_id, seq.features, mode, ids, options);
      } catch (...) {
        const std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const size_t n = std::max<size_t>(1, std::min(threads, albums.size()));
  std::vector<std::thread> pool;
  for (size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

void write_generated(const std::filesystem::path& path, std::span<const GeneratedStory> stories) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    fail(ErrorCategory::kLoad, "cannot write " + path.string());
  }
  for (const auto& s : stories) {
    json story = json::array();
    for (const auto& sentence : s.sentences) {
      std::string text;
      for (const auto& tok : sentence) {
        if (!text.empty()) text += ' ';
        text += tok;
      }
      story.push_back(text);
    }
    out << json{{"album_id", s.album_id}, {"story", story}, {"log_probs", s.log_probs}}.dump() << '\n';
  }
}

std::vector<GeneratedStory> read_generated(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(ErrorCategory::kLoad, "cannot open " + path.string());
  }
  std::vector<GeneratedStory> stories;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      GeneratedStory s;
      s.album_id = obj.at("album_id").get<std::string>();
      for (const auto& text : obj.at("story")) {
        std::istringstream words(text.get<std::string>());
        Tokens sentence;
        for (std::string w; words >> w;) sentence.push_back(w);
        s.sentences.push_back(std::move(sentence));
      }
      if (obj.contains("log_probs")) s.log_probs = obj.at("log_probs").get<std::vector<double>>();
      stories.push_back(std::move(s));
    } catch (const json::exception& e) {
      fail(ErrorCategory::kFormat, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return stories;
}

}  // namespace storyanchor::decoding
