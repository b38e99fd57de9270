#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "storyanchor/corpus.hpp"

namespace storyanchor::metrics {

using corpus::Tokens;

struct EvalInstance {
  Tokens hypothesis;
  std::vector<Tokens> references;
};

/// Corpus BLEU-n with per-n-gram max reference clipping and the brevity
/// penalty against the closest reference length (ties to the shorter one).
/// Throws invalid-argument for an empty instance set or n outside 1..4.
double bleu(std::span<const EvalInstance> instances, int n);
/// BLEU-1 .. BLEU-4 in one pass.
std::array<double, 4> bleu_all(std::span<const EvalInstance> instances);

/// LCS length of two token sequences.
size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
/// ROUGE-L of one instance: F(beta = 1.2) from the best precision and the
/// best recall over the references. An empty hypothesis scores 0.
double rouge_l(const EvalInstance& instance);
double rouge_l(std::span<const EvalInstance> instances);

/// Consensus tf-idf similarity over 1..4-grams with clipped hypothesis
/// weights and a Gaussian length penalty (sigma 6), scaled by 10. Document
/// frequencies come from the references of `instances`; a single instance
/// makes every idf zero and logs a warning.
double cider(std::span<const EvalInstance> instances);
std::vector<double> cider_per_instance(std::span<const EvalInstance> instances);

/// Porter (1980) stemmer.
std::string porter_stem(std::string_view word);

/// Unigram alignment over exact and Porter-stem matches, chosen by beam
/// search for the most matches, then the fewest chunks, then the smallest
/// position shift. Score is Fmean * (1 - 0.5 * (chunks / matches)^3) with
/// Fmean = 10PR / (R + 9P).
double meteor_lite(const Tokens& hypothesis, const Tokens& reference);
/// Best score over the references.
double meteor_lite(const EvalInstance& instance);
double meteor_lite(std::span<const EvalInstance> instances);

/// One evaluation run.
struct MetricScores {
  std::array<double, 4> bleu{};
  double meteor_lite = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

MetricScores score_all(std::span<const EvalInstance> instances);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and population standard deviation over runs.
struct MetricReport {
  std::array<MeanStd, 4> bleu{};
  MeanStd meteor_lite;
  MeanStd rouge_l;
  MeanStd cider;
  size_t n_instances = 0;
  size_t n_runs = 0;
};

/// Throws invalid-argument when `runs` is empty.
MetricReport aggregate(std::span<const MetricScores> runs, size_t n_instances);

/// Table row: B@1 B@2 B@3 B@4 M R C. BLEU, METEOR-lite and ROUGE-L are
/// printed as percentages, CIDEr times 10.
std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

std::string report_json(const MetricReport& report);

struct ScoredStory {
  std::string album_id;
  Tokens tokens;
};

using ReferenceMap = std::map<std::string, std::vector<Tokens>>;

/// Instances for one run: each story against the first `k_refs` references
/// of its album. Throws data-error naming an album that has fewer.
std::vector<EvalInstance> build_instances(std::span<const ScoredStory> stories, const ReferenceMap& references,
                                          size_t k_refs);

MetricScores evaluate_run(std::span<const ScoredStory> stories, const ReferenceMap& references, size_t k_refs = 5);

struct HumanBaseline {
  MetricReport human;
  /// One report per model, scored against the same four references the
  /// human story was scored against.
  std::vector<MetricReport> models;
  /// Held-out reference index per run and album.
  std::vector<std::map<std::string, size_t>> held_out;
  std::vector<std::string> skipped_albums;
};

/// Per run and album, one of the five references (drawn with the run's RNG)
/// plays the generated story and is scored against the other four. Albums
/// without exactly five references are skipped with a warning.
/// `models[m]` holds model m's story per album id.
HumanBaseline human_baseline(const ReferenceMap& references, size_t runs, uint64_t seed,
                             const std::vector<std::map<std::string, Tokens>>& models = {});

}  // namespace storyanchor::metrics
