#ifndef IMPACTS_METRICS_HPP
#define IMPACTS_METRICS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "impacts/bio.hpp"

namespace impacts {

/// Token masses and scores for one entity type. In relaxed mode the masses
/// are token counts; in strict mode tp is the exact-match count and
/// pred/gold are span counts.
struct TypeScore {
  std::string entity_type;
  long long tp = 0;
  long long pred = 0;
  long long gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string model = "model";
  std::string split;
  std::string mode = "relaxed";  // relaxed | strict
  std::vector<TypeScore> per_type;
  TypeScore overall;
  std::vector<std::pair<std::string, std::array<double, 2>>> ci;
  std::uint64_t bootstrap_b = 0;
  double bootstrap_level = 0.0;
  std::uint64_t bootstrap_seed = 0;
  std::uint64_t degenerate_resamples = 0;
};

struct KappaResult {
  double observed_agreement = 0.0;
  double expected_agreement = 0.0;
  double kappa = 0.0;
  bool degenerate = false;
  std::vector<std::string> label_alphabet;
};

/// A span tied to the sequence it came from; spans never pair across ids.
struct SpanInstance {
  std::string sequence_id;
  EntitySpan span;
};

/// Shared token count of two spans; 0 when the entity types differ.
long long overlap_tokens(const EntitySpan& g, const EntitySpan& p);

/// GreedyOneToOne: each gold and pred span joins at most one pair, picked by
/// descending overlap with (gold start, pred start) tie-breaking. AllPairs
/// sums overlap over every overlapping pair; it can push TP past the masses
/// and is exposed for comparison only.
enum class MatchPolicy { GreedyOneToOne, AllPairs };

struct ScoreOptions {
  MatchPolicy policy = MatchPolicy::GreedyOneToOne;
};

EvalReport relaxed_scores(const std::vector<SpanInstance>& gold,
                          const std::vector<SpanInstance>& pred,
                          const std::vector<std::string>& alphabet,
                          const ScoreOptions& options = {});

/// Exact (type, start, end) matching over span counts.
EvalReport strict_scores(const std::vector<SpanInstance>& gold,
                         const std::vector<SpanInstance>& pred,
                         const std::vector<std::string>& alphabet,
                         const ScoreOptions& options = {});

struct MetricSelector {
  enum class Metric { Precision, Recall, F1 };
  enum class Mode { Relaxed, Strict };
  Metric metric = Metric::F1;
  Mode mode = Mode::Relaxed;
  std::string entity_type;  // empty selects the micro-averaged overall score
};

struct BootstrapResult {
  double lower = 0.0;
  double upper = 0.0;
  std::uint64_t degenerate_resamples = 0;
};

/// Percentile bootstrap over posts: resamples sequence ids with replacement
/// b times and takes the empirical (1-level)/2 and 1-(1-level)/2 quantiles.
/// Resample r draws from a stream derived from (seed, r), so results are
/// reproducible and independent of evaluation order. Resamples with a zero
/// denominator score 0 and are counted as degenerate.
BootstrapResult bootstrap_ci(const CorpusSplit& gold, const CorpusSplit& pred,
                             const MetricSelector& selector, std::uint64_t b,
                             double level, std::uint64_t seed,
                             const ScoreOptions& options = {});

/// Chance-corrected token-level agreement over full BIO labels.
KappaResult cohens_kappa(const std::vector<Label>& a,
                         const std::vector<Label>& b);

/// Spans of every sequence in the split, tagged with their sequence ids.
std::vector<SpanInstance> corpus_spans(const CorpusSplit& split);

/// Scores pred against gold using gold's declared alphabet. Requires the
/// same sequence-id set on both sides. b > 0 adds bootstrap CIs for the
/// overall and per-type F1.
EvalReport evaluate_corpora(const CorpusSplit& gold, const CorpusSplit& pred,
                            MetricSelector::Mode mode, std::uint64_t b = 0,
                            double level = 0.95, std::uint64_t seed = 0,
                            const ScoreOptions& options = {});

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Split identity used to refuse cross-split comparisons: name plus a hash
/// of the serialized corpus.
std::string split_id(const CorpusSplit& split);

std::string kappa_to_json(const KappaResult& result);

}  // namespace impacts

#endif  // IMPACTS_METRICS_HPP
