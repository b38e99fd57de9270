#include "storyanchor/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "storyanchor/error.hpp"
#include "storyanchor/log.hpp"
#include "storyanchor/rng.hpp"

namespace storyanchor::metrics {
namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, int>;

NgramCounts count_ngrams(const Tokens& tokens, int max_n) {
  NgramCounts counts;
  for (int k = 1; k <= max_n; ++k) {
    for (size_t i = 0; i + static_cast<size_t>(k) <= tokens.size(); ++i) {
      ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(i) + k)];
    }
  }
  return counts;
}

void require_instances(std::span<const EvalInstance> instances, const char* what) {
  if (instances.empty()) {
    fail(ErrorCategory::kInvalidArgument, std::string(what) + ": no instances to score");
  }
  for (const auto& inst : instances) {
    if (inst.references.empty()) {
      fail(ErrorCategory::kInvalidArgument, std::string(what) + ": an instance has no references");
    }
  }
}

}  // namespace

std::array<double, 4> bleu_all(std::span<const EvalInstance> instances) {
  require_instances(instances, "bleu");
  constexpr double kTiny = 1e-15;
  constexpr double kSmall = 1e-9;
  std::array<double, 4> correct{};
  std::array<double, 4> guess{};
  double test_len = 0.0;
  double ref_len = 0.0;
  for (const auto& inst : instances) {
    NgramCounts max_ref;
    for (const auto& ref : inst.references) {
      for (const auto& [ngram, c] : count_ngrams(ref, 4)) {
        int& slot = max_ref[ngram];
        slot = std::max(slot, c);
      }
    }
    const size_t len = inst.hypothesis.size();
    // Closest reference length; ties go to the shorter reference.
    size_t closest = inst.references.front().size();
    for (const auto& ref : inst.references) {
      const size_t diff = ref.size() > len ? ref.size() - len : len - ref.size();
      const size_t best = closest > len ? closest - len : len - closest;
      if (diff < best || (diff == best && ref.size() < closest)) closest = ref.size();
    }
    test_len += static_cast<double>(len);
    ref_len += static_cast<double>(closest);
    for (int k = 0; k < 4; ++k) {
      guess[k] += static_cast<double>(len >= static_cast<size_t>(k + 1) ? len - static_cast<size_t>(k) : 0);
    }
    for (const auto& [ngram, c] : count_ngrams(inst.hypothesis, 4)) {
      const auto it = max_ref.find(ngram);
      if (it != max_ref.end()) correct[ngram.size() - 1] += std::min(c, it->second);
    }
  }
  std::array<double, 4> scores{};
  double product = 1.0;
  for (int k = 0; k < 4; ++k) {
    product *= (correct[k] + kTiny) / (guess[k] + kSmall);
    scores[k] = std::pow(product, 1.0 / (k + 1));
  }
  const double ratio = (test_len + kTiny) / (ref_len + kSmall);
  if (ratio < 1.0) {
    for (double& s : scores) s *= std::exp(1.0 - 1.0 / ratio);
  }
  return scores;
}

double bleu(std::span<const EvalInstance> instances, int n) {
  if (n < 1 || n > 4) {
    fail(ErrorCategory::kInvalidArgument, "bleu: n must be between 1 and 4");
  }
  return bleu_all(instances)[static_cast<size_t>(n - 1)];
}

size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<size_t> prev(b.size() + 1, 0);
  std::vector<size_t> cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const EvalInstance& instance) {
  constexpr double kBeta = 1.2;
  if (instance.hypothesis.empty()) return 0.0;
  double best_p = 0.0;
  double best_r = 0.0;
  for (const auto& ref : instance.references) {
    if (ref.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(instance.hypothesis, ref));
    best_p = std::max(best_p, lcs / static_cast<double>(instance.hypothesis.size()));
    best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  return (1 + kBeta * kBeta) * best_p * best_r / (best_r + kBeta * kBeta * best_p);
}

double rouge_l(std::span<const EvalInstance> instances) {
  require_instances(instances, "rouge_l");
  double total = 0.0;
  for (const auto& inst : instances) total += rouge_l(inst);
  return total / static_cast<double>(instances.size());
}

namespace {

struct TfIdf {
  std::array<std::map<Ngram, double>, 4> vec;
  std::array<double, 4> norm{};
  /// Bigram count, which is what the reference scorer uses as length.
  double length = 0.0;
};

TfIdf tfidf(const Tokens& tokens, const std::map<Ngram, double>& df, double log_n) {
  TfIdf out;
  for (const auto& [ngram, tf] : count_ngrams(tokens, 4)) {
    const auto it = df.find(ngram);
    const double log_df = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
    const size_t n = ngram.size() - 1;
    const double w = static_cast<double>(tf) * (log_n - log_df);
    out.vec[n][ngram] = w;
    out.norm[n] += w * w;
    if (n == 1) out.length += tf;
  }
  for (double& v : out.norm) v = std::sqrt(v);
  return out;
}

double cider_similarity(const TfIdf& hyp, const TfIdf& ref) {
  constexpr double kSigma = 6.0;
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2 * kSigma * kSigma));
  double total = 0.0;
  for (size_t n = 0; n < 4; ++n) {
    double val = 0.0;
    for (const auto& [ngram, h] : hyp.vec[n]) {
      const auto it = ref.vec[n].find(ngram);
      if (it != ref.vec[n].end()) val += std::min(h, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
    total += val * penalty;
  }
  return total / 4.0;
}

}  // namespace

std::vector<double> cider_per_instance(std::span<const EvalInstance> instances) {
  require_instances(instances, "cider");
  if (instances.size() == 1) {
    log::warn("cider: a single instance makes every document frequency equal; the score is 0");
  }
  std::map<Ngram, double> df;
  for (const auto& inst : instances) {
    std::set<Ngram> seen;
    for (const auto& ref : inst.references) {
      for (const auto& entry : count_ngrams(ref, 4)) seen.insert(entry.first);
    }
    for (const auto& ngram : seen) df[ngram] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(instances.size()));
  std::vector<double> scores;
  for (const auto& inst : instances) {
    const TfIdf hyp = tfidf(inst.hypothesis, df, log_n);
    double total = 0.0;
    for (const auto& ref : inst.references) total += cider_similarity(hyp, tfidf(ref, df, log_n));
    scores.push_back(10.0 * total / static_cast<double>(inst.references.size()));
  }
  return scores;
}

double cider(std::span<const EvalInstance> instances) {
  const auto scores = cider_per_instance(instances);
  double total = 0.0;
  for (const double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

namespace {

struct AlignState {
  std::vector<bool> ref_used;
  /// Reference position matched by the previous hypothesis word, -2 if none.
  int last = -2;
  size_t matches = 0;
  size_t chunks = 0;
  size_t distance = 0;
};

/// More matches, then fewer chunks, then the smaller summed |i - j|.
bool better_alignment(const AlignState& a, const AlignState& b) {
  if (a.matches != b.matches) return a.matches > b.matches;
  if (a.chunks != b.chunks) return a.chunks < b.chunks;
  if (a.distance != b.distance) return a.distance < b.distance;
  if (a.last != b.last) return a.last < b.last;
  return a.ref_used < b.ref_used;
}

constexpr size_t kAlignBeam = 40;

}  // namespace

double meteor_lite(const Tokens& hypothesis, const Tokens& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  std::vector<std::string> hyp_stems;
  std::vector<std::string> ref_stems;
  for (const auto& w : hypothesis) hyp_stems.push_back(porter_stem(w));
  for (const auto& w : reference) ref_stems.push_back(porter_stem(w));

  // Beam search over hypothesis positions; each word is left unmatched or
  // linked to a free reference word with the same surface form or stem.
  std::vector<AlignState> beam{AlignState{std::vector<bool>(reference.size(), false)}};
  for (size_t i = 0; i < hypothesis.size(); ++i) {
    std::vector<AlignState> next;
    for (const AlignState& s : beam) {
      AlignState skip = s;
      skip.last = -2;
      next.push_back(std::move(skip));
      for (size_t j = 0; j < reference.size(); ++j) {
        if (s.ref_used[j] || (hypothesis[i] != reference[j] && hyp_stems[i] != ref_stems[j])) continue;
        AlignState link = s;
        link.ref_used[j] = true;
        ++link.matches;
        if (static_cast<int>(j) != s.last + 1 || s.last < 0) ++link.chunks;
        link.distance += i > j ? i - j : j - i;
        link.last = static_cast<int>(j);
        next.push_back(std::move(link));
      }
    }
    std::sort(next.begin(), next.end(), better_alignment);
    next.erase(std::unique(next.begin(), next.end(),
                           [](const AlignState& a, const AlignState& b) {
                             return a.last == b.last && a.ref_used == b.ref_used;
                           }),
               next.end());
    if (next.size() > kAlignBeam) next.resize(kAlignBeam);
    beam = std::move(next);
  }
  const AlignState& best = beam.front();
  if (best.matches == 0) return 0.0;
  const double m = static_cast<double>(best.matches);
  const double p = m / static_cast<double>(hypothesis.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(best.chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_lite(const EvalInstance& instance) {
  double best = 0.0;
  for (const auto& ref : instance.references) best = std::max(best, meteor_lite(instance.hypothesis, ref));
  return best;
}

double meteor_lite(std::span<const EvalInstance> instances) {
  require_instances(instances, "meteor_lite");
  double total = 0.0;
  for (const auto& inst : instances) total += meteor_lite(inst);
  return total / static_cast<double>(instances.size());
}

MetricScores score_all(std::span<const EvalInstance> instances) {
  MetricScores s;
  s.bleu = bleu_all(instances);
  s.meteor_lite = meteor_lite(instances);
  s.rouge_l = rouge_l(instances);
  s.cider = cider(instances);
  return s;
}

namespace {

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  for (const double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const double v : values) var += (v - out.mean) * (v - out.mean);
  out.std = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size())) : 0.0;
  return out;
}

}  // namespace

MetricReport aggregate(std::span<const MetricScores> runs, size_t n_instances) {
  if (runs.empty()) {
    fail(ErrorCategory::kInvalidArgument, "aggregate: no runs");
  }
  MetricReport report;
  auto collect = [&](auto field) {
    std::vector<double> values;
    for (const auto& r : runs) values.push_back(field(r));
    return mean_std(values);
  };
  for (size_t k = 0; k < 4; ++k) report.bleu[k] = collect([k](const MetricScores& r) { return r.bleu[k]; });
  report.meteor_lite = collect([](const MetricScores& r) { return r.meteor_lite; });
  report.rouge_l = collect([](const MetricScores& r) { return r.rouge_l; });
  report.cider = collect([](const MetricScores& r) { return r.cider; });
  report.n_instances = n_instances;
  report.n_runs = runs.size();
  return report;
}

std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  size_t width = 6;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Method";
  for (const char* h : {"B@1", "B@2", "B@3", "B@4", "M", "R", "C"}) out << "  " << std::right << std::setw(13) << h;
  out << '\n';
  auto cell = [&](const MeanStd& v, double scale) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(1) << v.mean * scale << " +- " << v.std * scale;
    out << "  " << std::right << std::setw(13) << c.str();
  };
  for (const auto& [name, r] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name;
    for (const auto& b : r.bleu) cell(b, 100.0);
    cell(r.meteor_lite, 100.0);
    cell(r.rouge_l, 100.0);
    cell(r.cider, 10.0);
    out << '\n';
  }
  return out.str();
}

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  auto put = [&](const char* name, const MeanStd& v) { j[name] = {{"mean", v.mean}, {"std", v.std}}; };
  put("bleu1", r.bleu[0]);
  put("bleu2", r.bleu[1]);
  put("bleu3", r.bleu[2]);
  put("bleu4", r.bleu[3]);
  put("meteor_lite", r.meteor_lite);
  put("rouge_l", r.rouge_l);
  put("cider", r.cider);
  j["n_instances"] = r.n_instances;
  j["n_runs"] = r.n_runs;
  return j.dump(2);
}

std::vector<EvalInstance> build_instances(std::span<const ScoredStory> stories, const ReferenceMap& references,
                                          size_t k_refs) {
  std::vector<EvalInstance> instances;
  for (const auto& story : stories) {
    const auto it = references.find(story.album_id);
    const size_t have = it == references.end() ? 0 : it->second.size();
    if (have < k_refs) {
      fail(ErrorCategory::kData, "album '" + story.album_id + "' has " + std::to_string(have) +
                                     " reference stories, evaluation needs " + std::to_string(k_refs));
    }
    instances.push_back(
        EvalInstance{story.tokens, std::vector<Tokens>(it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(k_refs))});
  }
  return instances;
}

MetricScores evaluate_run(std::span<const ScoredStory> stories, const ReferenceMap& references, size_t k_refs) {
  return score_all(build_instances(stories, references, k_refs));
}

HumanBaseline human_baseline(const ReferenceMap& references, size_t runs, uint64_t seed,
                             const std::vector<std::map<std::string, Tokens>>& models) {
  if (runs == 0) {
    fail(ErrorCategory::kInvalidArgument, "human_baseline: runs must be at least 1");
  }
  HumanBaseline out;
  std::vector<std::string> albums;
  for (const auto& [album, refs] : references) {
    if (refs.size() == 5) {
      albums.push_back(album);
    } else {
      out.skipped_albums.push_back(album);
      log::warn("human baseline: skipping album '", album, "' with ", refs.size(), " references");
    }
  }
  if (albums.empty()) {
    fail(ErrorCategory::kData, "human baseline: no album has exactly five references");
  }
  std::vector<MetricScores> human_runs;
  std::vector<std::vector<MetricScores>> model_runs(models.size());
  for (size_t run = 0; run < runs; ++run) {
    Rng rng(derive_seed(derive_seed(seed, "human-baseline"), static_cast<uint64_t>(run)));
    std::map<std::string, size_t> held_out;
    std::vector<EvalInstance> human;
    std::vector<std::vector<EvalInstance>> rescored(models.size());
    for (const auto& album : albums) {
      const auto& refs = references.at(album);
      const size_t pick = rng.below(5);
      held_out[album] = pick;
      std::vector<Tokens> others;
      for (size_t i = 0; i < 5; ++i) {
        if (i != pick) others.push_back(refs[i]);
      }
      human.push_back(EvalInstance{refs[pick], others});
      for (size_t m = 0; m < models.size(); ++m) {
        const auto it = models[m].find(album);
        if (it == models[m].end()) {
          fail(ErrorCategory::kData, "human baseline: model " + std::to_string(m) + " has no story for album '" +
                                         album + "'");
        }
        rescored[m].push_back(EvalInstance{it->second, others});
      }
    }
    human_runs.push_back(score_all(human));
    for (size_t m = 0; m < models.size(); ++m) model_runs[m].push_back(score_all(rescored[m]));
    out.held_out.push_back(std::move(held_out));
  }
  out.human = aggregate(human_runs, albums.size());
  for (const auto& r : model_runs) out.models.push_back(aggregate(r, albums.size()));
  return out;
}

}  // namespace storyanchor::metrics
