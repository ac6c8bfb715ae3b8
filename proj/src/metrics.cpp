#include "impacts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "impacts/conll.hpp"
#include "impacts/errors.hpp"
#include "impacts/hash.hpp"
#include "impacts/rng.hpp"

namespace impacts {

long long overlap_tokens(const EntitySpan& g, const EntitySpan& p) {
  if (g.entity_type != p.entity_type) return 0;
  auto lo = static_cast<long long>(std::max(g.start, p.start));
  auto hi = static_cast<long long>(std::min(g.end, p.end));
  return std::max(0LL, hi - lo + 1);
}

namespace {

// Per-sequence, per-type counts for both scoring modes. Matching never
// crosses sequence ids, so these are additive and bootstrap resampling can
// just sum them.
struct Counts {
  long long tp_overlap = 0;
  long long pred_mass = 0;
  long long gold_mass = 0;
  long long matched_exact = 0;
  long long pred_spans = 0;
  long long gold_spans = 0;
};

using TypeCounts = std::map<std::string, Counts>;
using SeqCounts = std::map<std::string, TypeCounts>;

void check_side(const std::string& side,
                const std::map<std::string, std::vector<EntitySpan>>& by_id,
                const std::set<std::string>& alphabet) {
  for (const auto& [id, spans] : by_id) {
    std::vector<EntitySpan> sorted = spans;
    std::sort(sorted.begin(), sorted.end(),
              [](const EntitySpan& a, const EntitySpan& b) {
                return a.start < b.start;
              });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted[i].start > sorted[i].end) {
        throw ValidationError(side + " span in sequence '" + id +
                              "' has start > end");
      }
      if (!alphabet.count(sorted[i].entity_type)) {
        throw ValidationError("unknown entity type '" +
                              sorted[i].entity_type + "' in " + side +
                              " sequence '" + id + "'");
      }
      if (i > 0 && sorted[i].start <= sorted[i - 1].end) {
        throw ValidationError("overlapping " + side + " spans in sequence '" +
                              id + "' at token " +
                              std::to_string(sorted[i].start));
      }
    }
  }
}

long long greedy_matched_overlap(const std::vector<EntitySpan>& gold,
                                 const std::vector<EntitySpan>& pred) {
  struct Pair {
    long long overlap;
    std::size_t g_start, p_start;
    std::size_t gi, pi;
  };
  std::vector<Pair> pairs;
  for (std::size_t gi = 0; gi < gold.size(); ++gi) {
    for (std::size_t pi = 0; pi < pred.size(); ++pi) {
      long long ov = overlap_tokens(gold[gi], pred[pi]);
      if (ov > 0) pairs.push_back({ov, gold[gi].start, pred[pi].start, gi, pi});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.overlap != b.overlap) return a.overlap > b.overlap;
    if (a.g_start != b.g_start) return a.g_start < b.g_start;
    return a.p_start < b.p_start;
  });
  std::vector<bool> g_used(gold.size(), false), p_used(pred.size(), false);
  long long total = 0;
  for (const auto& pair : pairs) {
    if (g_used[pair.gi] || p_used[pair.pi]) continue;
    g_used[pair.gi] = p_used[pair.pi] = true;
    total += pair.overlap;
  }
  return total;
}

SeqCounts build_counts(const std::vector<SpanInstance>& gold,
                       const std::vector<SpanInstance>& pred,
                       const std::vector<std::string>& alphabet,
                       const ScoreOptions& options) {
  std::set<std::string> types(alphabet.begin(), alphabet.end());
  std::map<std::string, std::vector<EntitySpan>> gold_by_id, pred_by_id;
  for (const auto& inst : gold) gold_by_id[inst.sequence_id].push_back(inst.span);
  for (const auto& inst : pred) pred_by_id[inst.sequence_id].push_back(inst.span);
  check_side("gold", gold_by_id, types);
  check_side("pred", pred_by_id, types);

  SeqCounts counts;
  std::set<std::string> ids;
  for (const auto& [id, _] : gold_by_id) ids.insert(id);
  for (const auto& [id, _] : pred_by_id) ids.insert(id);
  for (const auto& id : ids) {
    for (const auto& type : alphabet) {
      std::vector<EntitySpan> g, p;
      auto git = gold_by_id.find(id);
      if (git != gold_by_id.end()) {
        for (const auto& s : git->second)
          if (s.entity_type == type) g.push_back(s);
      }
      auto pit = pred_by_id.find(id);
      if (pit != pred_by_id.end()) {
        for (const auto& s : pit->second)
          if (s.entity_type == type) p.push_back(s);
      }
      if (g.empty() && p.empty()) continue;
      Counts& c = counts[id][type];
      for (const auto& s : g) c.gold_mass += static_cast<long long>(s.length());
      for (const auto& s : p) c.pred_mass += static_cast<long long>(s.length());
      c.gold_spans = static_cast<long long>(g.size());
      c.pred_spans = static_cast<long long>(p.size());
      if (options.policy == MatchPolicy::GreedyOneToOne) {
        c.tp_overlap = greedy_matched_overlap(g, p);
      } else {
        for (const auto& gs : g)
          for (const auto& ps : p) c.tp_overlap += overlap_tokens(gs, ps);
      }
      for (const auto& gs : g) {
        if (std::find(p.begin(), p.end(), gs) != p.end()) ++c.matched_exact;
      }
    }
  }
  return counts;
}

void finish(TypeScore& score) {
  score.precision =
      score.pred > 0 ? static_cast<double>(score.tp) / score.pred : 0.0;
  score.recall =
      score.gold > 0 ? static_cast<double>(score.tp) / score.gold : 0.0;
  // Harmonic mean computed from the masses directly: 2tp/(p+g) equals
  // 2PR/(P+R) and avoids compounding division rounding.
  score.f1 = (score.pred + score.gold) > 0
                 ? 2.0 * static_cast<double>(score.tp) /
                       static_cast<double>(score.pred + score.gold)
                 : 0.0;
}

EvalReport report_from_counts(const SeqCounts& counts,
                              const std::vector<std::string>& alphabet,
                              bool relaxed) {
  EvalReport report;
  report.mode = relaxed ? "relaxed" : "strict";
  for (const auto& type : alphabet) {
    TypeScore score;
    score.entity_type = type;
    for (const auto& [id, by_type] : counts) {
      auto it = by_type.find(type);
      if (it == by_type.end()) continue;
      const Counts& c = it->second;
      score.tp += relaxed ? c.tp_overlap : c.matched_exact;
      score.pred += relaxed ? c.pred_mass : c.pred_spans;
      score.gold += relaxed ? c.gold_mass : c.gold_spans;
    }
    finish(score);
    report.overall.tp += score.tp;
    report.overall.pred += score.pred;
    report.overall.gold += score.gold;
    report.per_type.push_back(std::move(score));
  }
  report.overall.entity_type = "overall";
  finish(report.overall);
  return report;
}

}  // namespace

EvalReport relaxed_scores(const std::vector<SpanInstance>& gold,
                          const std::vector<SpanInstance>& pred,
                          const std::vector<std::string>& alphabet,
                          const ScoreOptions& options) {
  return report_from_counts(build_counts(gold, pred, alphabet, options),
                            alphabet, true);
}

EvalReport strict_scores(const std::vector<SpanInstance>& gold,
                         const std::vector<SpanInstance>& pred,
                         const std::vector<std::string>& alphabet,
                         const ScoreOptions& options) {
  return report_from_counts(build_counts(gold, pred, alphabet, options),
                            alphabet, false);
}

namespace {

double quantile_sorted(const std::vector<double>& xs, double q) {
  const double h = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  const double frac = h - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

struct MetricAccumulator {
  long long tp = 0, denom_p = 0, denom_g = 0;

  void add(const Counts& c, bool relaxed) {
    tp += relaxed ? c.tp_overlap : c.matched_exact;
    denom_p += relaxed ? c.pred_mass : c.pred_spans;
    denom_g += relaxed ? c.gold_mass : c.gold_spans;
  }

  // Returns (value, degenerate) under the zero-denominator convention.
  std::pair<double, bool> value(MetricSelector::Metric metric) const {
    switch (metric) {
      case MetricSelector::Metric::Precision:
        return denom_p > 0
                   ? std::make_pair(static_cast<double>(tp) / denom_p, false)
                   : std::make_pair(0.0, true);
      case MetricSelector::Metric::Recall:
        return denom_g > 0
                   ? std::make_pair(static_cast<double>(tp) / denom_g, false)
                   : std::make_pair(0.0, true);
      case MetricSelector::Metric::F1:
        return (denom_p + denom_g) > 0
                   ? std::make_pair(2.0 * static_cast<double>(tp) /
                                        static_cast<double>(denom_p + denom_g),
                                    false)
                   : std::make_pair(0.0, true);
    }
    return {0.0, true};
  }
};

std::vector<std::string> sorted_ids(const CorpusSplit& split) {
  std::vector<std::string> ids;
  ids.reserve(split.sequences.size());
  for (const auto& seq : split.sequences) ids.push_back(seq.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void require_same_ids(const CorpusSplit& gold, const CorpusSplit& pred) {
  if (gold.sequences.empty()) throw ValidationError("empty gold corpus");
  if (sorted_ids(gold) != sorted_ids(pred)) {
    throw ValidationError(
        "gold and pred corpora must cover the same sequence ids");
  }
}

}  // namespace

std::vector<SpanInstance> corpus_spans(const CorpusSplit& split) {
  std::vector<SpanInstance> out;
  for (const auto& seq : split.sequences) {
    for (const auto& span : extract_spans(seq)) out.push_back({seq.id, span});
  }
  return out;
}

BootstrapResult bootstrap_ci(const CorpusSplit& gold, const CorpusSplit& pred,
                             const MetricSelector& selector, std::uint64_t b,
                             double level, std::uint64_t seed,
                             const ScoreOptions& options) {
  require_same_ids(gold, pred);
  if (b < 100) {
    throw ValidationError("bootstrap resample count must be >= 100");
  }
  if (!(level > 0.0) || !(level < 1.0)) {
    throw ValidationError("confidence level must be in (0, 1)");
  }
  std::vector<std::string> alphabet = gold.entity_types();
  if (!selector.entity_type.empty() &&
      std::find(alphabet.begin(), alphabet.end(), selector.entity_type) ==
          alphabet.end()) {
    throw ValidationError("unknown entity type '" + selector.entity_type +
                          "' in metric selector");
  }
  SeqCounts counts =
      build_counts(corpus_spans(gold), corpus_spans(pred), alphabet, options);
  const bool relaxed = selector.mode == MetricSelector::Mode::Relaxed;

  // Collapse each sequence to one accumulator up front; a resample is then
  // just a sum over drawn ids.
  std::vector<std::string> ids = sorted_ids(gold);
  std::vector<MetricAccumulator> per_id(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = counts.find(ids[i]);
    if (it == counts.end()) continue;
    for (const auto& [type, c] : it->second) {
      if (selector.entity_type.empty() || selector.entity_type == type) {
        per_id[i].add(c, relaxed);
      }
    }
  }

  BootstrapResult result;
  std::vector<double> stats(b);
  const std::size_t n = ids.size();
  for (std::uint64_t r = 0; r < b; ++r) {
    Rng rng(mix_seed(seed, r));
    MetricAccumulator acc;
    for (std::size_t draw = 0; draw < n; ++draw) {
      const auto& src = per_id[rng.below(n)];
      acc.tp += src.tp;
      acc.denom_p += src.denom_p;
      acc.denom_g += src.denom_g;
    }
    auto [value, degenerate] = acc.value(selector.metric);
    stats[r] = value;
    if (degenerate) ++result.degenerate_resamples;
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  result.lower = quantile_sorted(stats, alpha);
  result.upper = quantile_sorted(stats, 1.0 - alpha);
  return result;
}

KappaResult cohens_kappa(const std::vector<Label>& a,
                         const std::vector<Label>& b) {
  if (a.size() != b.size()) {
    throw ValidationError("annotator label lists differ in length: " +
                          std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
  }
  if (a.empty()) throw ValidationError("empty label lists");

  const double n = static_cast<double>(a.size());
  std::map<std::string, std::size_t> marg_a, marg_b;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++agree;
    ++marg_a[to_string(a[i])];
    ++marg_b[to_string(b[i])];
  }
  KappaResult result;
  result.observed_agreement = static_cast<double>(agree) / n;
  std::set<std::string> categories;
  for (const auto& [label, _] : marg_a) categories.insert(label);
  for (const auto& [label, _] : marg_b) categories.insert(label);
  result.label_alphabet.assign(categories.begin(), categories.end());
  for (const auto& label : categories) {
    const double pa = marg_a.count(label) ? marg_a[label] / n : 0.0;
    const double pb = marg_b.count(label) ? marg_b[label] / n : 0.0;
    result.expected_agreement += pa * pb;
  }
  if (result.expected_agreement >= 1.0) {
    result.degenerate = true;
    result.kappa = result.observed_agreement == 1.0 ? 1.0 : 0.0;
  } else {
    result.kappa = (result.observed_agreement - result.expected_agreement) /
                   (1.0 - result.expected_agreement);
  }
  return result;
}

EvalReport evaluate_corpora(const CorpusSplit& gold, const CorpusSplit& pred,
                            MetricSelector::Mode mode, std::uint64_t b,
                            double level, std::uint64_t seed,
                            const ScoreOptions& options) {
  require_same_ids(gold, pred);
  std::vector<std::string> alphabet = gold.entity_types();
  const bool relaxed = mode == MetricSelector::Mode::Relaxed;
  EvalReport report = report_from_counts(
      build_counts(corpus_spans(gold), corpus_spans(pred), alphabet, options),
      alphabet, relaxed);
  report.split = split_id(gold);
  if (b > 0) {
    report.bootstrap_b = b;
    report.bootstrap_level = level;
    report.bootstrap_seed = seed;
    MetricSelector selector;
    selector.mode = mode;
    BootstrapResult overall =
        bootstrap_ci(gold, pred, selector, b, level, seed, options);
    report.ci.emplace_back("f1", std::array<double, 2>{overall.lower,
                                                       overall.upper});
    report.degenerate_resamples += overall.degenerate_resamples;
    for (const auto& type : alphabet) {
      selector.entity_type = type;
      BootstrapResult r =
          bootstrap_ci(gold, pred, selector, b, level, seed, options);
      report.ci.emplace_back(type + ".f1",
                             std::array<double, 2>{r.lower, r.upper});
      report.degenerate_resamples += r.degenerate_resamples;
    }
  }
  return report;
}

namespace {

nlohmann::ordered_json score_json(const TypeScore& score) {
  nlohmann::ordered_json j;
  j["tp_tokens"] = score.tp;
  j["pred_tokens"] = score.pred;
  j["gold_tokens"] = score.gold;
  j["precision"] = score.precision;
  j["recall"] = score.recall;
  j["f1"] = score.f1;
  return j;
}

TypeScore score_from_json(const std::string& type, const nlohmann::json& j) {
  TypeScore score;
  score.entity_type = type;
  score.tp = j.at("tp_tokens").get<long long>();
  score.pred = j.at("pred_tokens").get<long long>();
  score.gold = j.at("gold_tokens").get<long long>();
  score.precision = j.at("precision").get<double>();
  score.recall = j.at("recall").get<double>();
  score.f1 = j.at("f1").get<double>();
  return score;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["split"] = report.split;
  j["mode"] = report.mode;
  j["per_type"] = nlohmann::ordered_json::object();
  for (const auto& score : report.per_type) {
    j["per_type"][score.entity_type] = score_json(score);
  }
  j["overall"] = score_json(report.overall);
  j["ci"] = nlohmann::ordered_json::object();
  for (const auto& [name, bounds] : report.ci) {
    j["ci"][name] = {bounds[0], bounds[1]};
  }
  if (report.bootstrap_b > 0) {
    j["bootstrap"] = {{"b", report.bootstrap_b},
                      {"level", report.bootstrap_level},
                      {"seed", report.bootstrap_seed},
                      {"degenerate_resamples", report.degenerate_resamples}};
  } else {
    j["bootstrap"] = nullptr;
  }
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid report JSON: ") + e.what());
  }
  try {
    EvalReport report;
    report.model = j.at("model").get<std::string>();
    report.split = j.at("split").get<std::string>();
    report.mode = j.value("mode", "relaxed");
    for (const auto& [type, score] : j.at("per_type").items()) {
      report.per_type.push_back(score_from_json(type, score));
    }
    std::sort(report.per_type.begin(), report.per_type.end(),
              [](const TypeScore& a, const TypeScore& b) {
                return a.entity_type < b.entity_type;
              });
    report.overall = score_from_json("overall", j.at("overall"));
    if (j.contains("ci")) {
      for (const auto& [name, bounds] : j.at("ci").items()) {
        report.ci.emplace_back(
            name, std::array<double, 2>{bounds.at(0).get<double>(),
                                        bounds.at(1).get<double>()});
      }
    }
    if (j.contains("bootstrap") && !j.at("bootstrap").is_null()) {
      const auto& bs = j.at("bootstrap");
      report.bootstrap_b = bs.at("b").get<std::uint64_t>();
      report.bootstrap_level = bs.at("level").get<double>();
      report.bootstrap_seed = bs.at("seed").get<std::uint64_t>();
      report.degenerate_resamples =
          bs.value("degenerate_resamples", std::uint64_t{0});
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report JSON missing fields: ") + e.what());
  }
}

std::string split_id(const CorpusSplit& split) {
  return split.name + "#" + hex64(fnv1a64(serialize_conll(split)));
}

std::string kappa_to_json(const KappaResult& result) {
  nlohmann::ordered_json j;
  j["observed_agreement"] = result.observed_agreement;
  j["expected_agreement"] = result.expected_agreement;
  j["kappa"] = result.kappa;
  j["degenerate"] = result.degenerate;
  j["label_alphabet"] = result.label_alphabet;
  return j.dump(2);
}

}  // namespace impacts
