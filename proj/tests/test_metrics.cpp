#include "doctest.h"

#include <cmath>

#include "impacts/conll.hpp"
#include "impacts/errors.hpp"
#include "impacts/metrics.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace impacts;

namespace {

const std::vector<std::string> kXY = {"X", "Y"};

EvalReport score(const std::vector<SpanInstance>& gold,
                 const std::vector<SpanInstance>& pred,
                 const std::vector<std::string>& alphabet = kXY) {
  return relaxed_scores(gold, pred, alphabet);
}

}  // namespace

TEST_CASE("overlap formula") {
  CHECK(overlap_tokens({"X", 2, 4}, {"X", 2, 4}) == 3);
  CHECK(overlap_tokens({"X", 1, 3}, {"X", 3, 6}) == 1);  // shared index {3}
  CHECK(overlap_tokens({"X", 1, 3}, {"Y", 1, 3}) == 0);  // type mismatch
  CHECK(overlap_tokens({"X", 0, 1}, {"X", 3, 4}) == 0);  // disjoint
}

TEST_CASE("overlap is symmetric") {
  Rng rng(7);
  for (int iter = 0; iter < 200; ++iter) {
    EntitySpan a{kXY[rng.below(2)], 0, 0};
    a.start = rng.below(12);
    a.end = a.start + rng.below(4);
    EntitySpan b{kXY[rng.below(2)], 0, 0};
    b.start = rng.below(12);
    b.end = b.start + rng.below(4);
    CHECK(overlap_tokens(a, b) == overlap_tokens(b, a));
  }
}

TEST_CASE("relaxed exact match scores 1.0") {
  auto report = score({{"s", {"X", 1, 3}}}, {{"s", {"X", 1, 3}}});
  CHECK(report.overall.precision == 1.0);
  CHECK(report.overall.recall == 1.0);
  CHECK(report.overall.f1 == 1.0);
}

TEST_CASE("relaxed partial overlap: the 2/3 fixture") {
  auto report = score({{"s", {"X", 1, 3}}}, {{"s", {"X", 2, 4}}});
  CHECK(report.overall.tp == 2);  // shared indices {2, 3}
  CHECK(report.overall.pred == 3);
  CHECK(report.overall.gold == 3);
  CHECK(report.overall.precision == 2.0 / 3.0);
  CHECK(report.overall.recall == 2.0 / 3.0);
  CHECK(report.overall.f1 == 2.0 / 3.0);
}

TEST_CASE("relaxed micro aggregation: the 4/7 fixture") {
  auto report =
      score({{"s", {"X", 1, 3}}, {"s", {"Y", 6, 6}}}, {{"s", {"X", 2, 4}}});
  const TypeScore* x = nullptr;
  const TypeScore* y = nullptr;
  for (const auto& t : report.per_type) {
    if (t.entity_type == "X") x = &t;
    if (t.entity_type == "Y") y = &t;
  }
  REQUIRE(x);
  REQUIRE(y);
  CHECK(x->f1 == 2.0 / 3.0);
  CHECK(y->f1 == 0.0);
  CHECK(report.overall.tp == 2);
  CHECK(report.overall.pred == 3);
  CHECK(report.overall.gold == 4);
  CHECK(report.overall.precision == 2.0 / 3.0);
  CHECK(report.overall.recall == 0.5);
  CHECK(report.overall.f1 == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  // micro aggregation law: overall masses are sums of per-type masses
  CHECK(report.overall.tp == x->tp + y->tp);
  CHECK(report.overall.pred == x->pred + y->pred);
  CHECK(report.overall.gold == x->gold + y->gold);
}

TEST_CASE("spans never pair across sequences") {
  auto report = score({{"a", {"X", 0, 2}}}, {{"b", {"X", 0, 2}}});
  CHECK(report.overall.tp == 0);
  CHECK(report.overall.pred == 3);
  CHECK(report.overall.gold == 3);
}

TEST_CASE("matching is one-to-one and greedy by overlap") {
  // One gold span, two predictions touching it: only the larger overlap
  // counts.
  auto report = score({{"s", {"X", 0, 4}}},
                      {{"s", {"X", 0, 1}}, {"s", {"X", 3, 4}}});
  CHECK(report.overall.tp == 2);  // best single pair, not 4
  CHECK(report.overall.pred == 4);
  CHECK(report.overall.gold == 5);

  ScoreOptions all_pairs;
  all_pairs.policy = MatchPolicy::AllPairs;
  auto loose = relaxed_scores({{"s", {"X", 0, 4}}},
                              {{"s", {"X", 0, 1}}, {"s", {"X", 3, 4}}}, kXY,
                              all_pairs);
  CHECK(loose.overall.tp == 4);  // both pairs counted under the variant
}

TEST_CASE("relaxed errors: overlap within one side and unknown types") {
  CHECK_THROWS_AS(score({{"s", {"X", 0, 2}}, {"s", {"X", 2, 3}}}, {}),
                  ValidationError);
  CHECK_THROWS_AS(score({{"s", {"X", 0, 2}}, {"s", {"Y", 1, 1}}}, {}),
                  ValidationError);
  CHECK_THROWS_AS(score({{"s", {"Z", 0, 2}}}, {}), ValidationError);
  CHECK_THROWS_AS(score({}, {{"s", {"Z", 0, 2}}}), ValidationError);
}

TEST_CASE("strict scores count exact span matches") {
  auto exact = strict_scores({{"s", {"X", 1, 3}}}, {{"s", {"X", 1, 3}}}, kXY);
  CHECK(exact.overall.f1 == 1.0);

  auto off = strict_scores({{"s", {"X", 1, 3}}}, {{"s", {"X", 2, 4}}}, kXY);
  CHECK(off.overall.f1 == 0.0);

  auto half = strict_scores({{"s", {"X", 1, 3}}, {"s", {"X", 5, 5}}},
                            {{"s", {"X", 1, 3}}}, kXY);
  CHECK(half.overall.precision == 1.0);
  CHECK(half.overall.recall == 0.5);
  CHECK(half.overall.f1 == 2.0 / 3.0);
}

TEST_CASE("relaxed and strict agree at 1.0 on identical span sets") {
  Rng rng(11);
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<SpanInstance> spans;
    for (int s = 0; s < 3; ++s) {
      for (const auto& span :
           fixtures::random_spans(rng, 12, 3, kXY)) {
        spans.push_back({std::to_string(s), span});
      }
    }
    if (spans.empty()) continue;
    CHECK(score(spans, spans).overall.f1 == 1.0);
    CHECK(strict_scores(spans, spans, kXY).overall.f1 == 1.0);
  }
}

TEST_CASE("relaxed scores match the token-set oracle") {
  Rng rng(12);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<SpanInstance> gold, pred;
    const std::size_t seqs = 1 + rng.below(5);
    for (std::size_t s = 0; s < seqs; ++s) {
      const std::string id = std::to_string(s);
      for (const auto& span : fixtures::random_spans(rng, 14, 4, kXY)) {
        gold.push_back({id, span});
      }
      for (const auto& span : fixtures::random_spans(rng, 14, 4, kXY)) {
        pred.push_back({id, span});
      }
    }
    EvalReport report = score(gold, pred);
    auto expected = oracles::relaxed_masses(gold, pred, kXY);
    long long tp = 0, pm = 0, gm = 0;
    for (const auto& t : report.per_type) {
      CHECK(t.tp == expected[t.entity_type].tp);
      CHECK(t.pred == expected[t.entity_type].pred);
      CHECK(t.gold == expected[t.entity_type].gold);
      tp += expected[t.entity_type].tp;
      pm += expected[t.entity_type].pred;
      gm += expected[t.entity_type].gold;
      // sanity bound from the one-to-one rule
      CHECK(t.tp <= std::min(t.pred, t.gold));
      CHECK(t.precision <= 1.0);
      CHECK(t.recall <= 1.0);
      CHECK(t.f1 <= 1.0);
    }
    CHECK(report.overall.tp == tp);
    CHECK(report.overall.pred == pm);
    CHECK(report.overall.gold == gm);
  }
}

TEST_CASE("bootstrap on identical corpora is the point interval") {
  CorpusSplit gold;
  gold.sequences = {fixtures::table1_sequence("a"),
                    fixtures::table1_sequence("b")};
  auto ci = bootstrap_ci(gold, gold, MetricSelector{}, 500, 0.95, 3);
  CHECK(ci.lower == 1.0);
  CHECK(ci.upper == 1.0);
  CHECK(ci.degenerate_resamples == 0);
}

TEST_CASE("bootstrap is deterministic under seed") {
  Rng rng(13);
  CorpusSplit gold = fixtures::random_corpus(rng, 8, kXY);
  CorpusSplit pred = fixtures::random_corpus(rng, 8, kXY);
  for (std::size_t i = 0; i < pred.sequences.size(); ++i) {
    pred.sequences[i].id = gold.sequences[i].id;
    pred.sequences[i].tokens = gold.sequences[i].tokens;
    pred.sequences[i].labels.resize(gold.sequences[i].labels.size(),
                                    Label::outside());
    pred.sequences[i] = validate_bio(pred.sequences[i], ValidateMode::Repair);
  }
  auto a = bootstrap_ci(gold, pred, MetricSelector{}, 300, 0.95, 99);
  auto b = bootstrap_ci(gold, pred, MetricSelector{}, 300, 0.95, 99);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.lower <= a.upper);
  CHECK(a.lower >= 0.0);
  CHECK(a.upper <= 1.0);
}

TEST_CASE("bootstrap validates its inputs") {
  CorpusSplit gold;
  gold.sequences = {fixtures::table1_sequence("a")};
  CHECK_THROWS_AS(bootstrap_ci(gold, gold, MetricSelector{}, 50, 0.95, 1),
                  ValidationError);
  CHECK_THROWS_AS(bootstrap_ci(gold, gold, MetricSelector{}, 500, 1.5, 1),
                  ValidationError);
  CHECK_THROWS_AS(bootstrap_ci(CorpusSplit{}, CorpusSplit{}, MetricSelector{},
                               500, 0.95, 1),
                  ValidationError);
  CorpusSplit other;
  other.sequences = {fixtures::table1_sequence("zz")};
  CHECK_THROWS_AS(bootstrap_ci(gold, other, MetricSelector{}, 500, 0.95, 1),
                  ValidationError);
}

TEST_CASE("bootstrap width shrinks in expectation with corpus size") {
  // i.i.d. duplication of posts: 4 base posts vs the same posts repeated
  // four times. Averaged over a fixed seed set, the larger corpus gives a
  // narrower interval.
  CorpusSplit base_gold, base_pred;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "p" + std::to_string(i);
    base_gold.sequences.push_back(
        fixtures::make_sequence(id, {"t", "u", "v"}, {"B-X", "I-X", "O"}));
    base_pred.sequences.push_back(fixtures::make_sequence(
        id, {"t", "u", "v"},
        i % 2 == 0 ? std::vector<std::string>{"B-X", "I-X", "O"}
                   : std::vector<std::string>{"O", "O", "O"}));
  }
  CorpusSplit big_gold, big_pred;
  for (int copy = 0; copy < 4; ++copy) {
    for (int i = 0; i < 4; ++i) {
      auto g = base_gold.sequences[i];
      auto p = base_pred.sequences[i];
      g.id = p.id = "c" + std::to_string(copy) + "-" + g.id;
      big_gold.sequences.push_back(g);
      big_pred.sequences.push_back(p);
    }
  }
  double small_width = 0.0, big_width = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = bootstrap_ci(base_gold, base_pred, MetricSelector{}, 400, 0.95,
                          seed);
    auto b = bootstrap_ci(big_gold, big_pred, MetricSelector{}, 400, 0.95,
                          seed);
    small_width += s.upper - s.lower;
    big_width += b.upper - b.lower;
  }
  CHECK(big_width < small_width);
}

TEST_CASE("two-post enumeration fixture brackets the full range") {
  // Post a scores f1 = 1, post b scores f1 = 0; resamples are all-a,
  // all-b or mixed, so the 95% interval spans [0, 1].
  CorpusSplit gold, pred;
  gold.sequences = {
      fixtures::make_sequence("a", {"t", "u"}, {"B-X", "I-X"}),
      fixtures::make_sequence("b", {"t", "u"}, {"B-X", "I-X"})};
  pred.sequences = {
      fixtures::make_sequence("a", {"t", "u"}, {"B-X", "I-X"}),
      fixtures::make_sequence("b", {"t", "u"}, {"O", "O"})};
  auto ci = bootstrap_ci(gold, pred, MetricSelector{}, 10000, 0.95, 5);
  CHECK(ci.lower == 0.0);
  CHECK(ci.upper == 1.0);
}

TEST_CASE("cohens kappa on the 2x2 hand fixture") {
  auto X = Label::begin("X");
  auto O = Label::outside();
  KappaResult result = cohens_kappa({X, X, O, O}, {X, O, X, O});
  CHECK(result.observed_agreement == 0.5);
  CHECK(result.expected_agreement == 0.5);
  CHECK(result.kappa == 0.0);
  CHECK_FALSE(result.degenerate);
}

TEST_CASE("cohens kappa perfect agreement and degenerate cases") {
  auto X = Label::begin("X");
  auto O = Label::outside();
  CHECK(cohens_kappa({X, O, X}, {X, O, X}).kappa == 1.0);

  KappaResult constant = cohens_kappa({O, O}, {O, O});
  CHECK(constant.kappa == 1.0);
  CHECK(constant.degenerate);

  KappaResult bad = cohens_kappa({O, O}, {X, X});
  CHECK(bad.kappa == 0.0);  // p_e = 0 here, so kappa = p_o = 0 via formula
  CHECK_FALSE(bad.degenerate);

  CHECK_THROWS_AS(cohens_kappa({O}, {O, O}), ValidationError);
  CHECK_THROWS_AS(cohens_kappa({}, {}), ValidationError);
}

TEST_CASE("cohens kappa symmetry and relabeling invariance") {
  Rng rng(17);
  const auto alphabet = fixtures::label_alphabet(kXY);
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<Label> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(parse_label(alphabet[rng.below(alphabet.size())]));
      b.push_back(parse_label(alphabet[rng.below(alphabet.size())]));
    }
    KappaResult ab = cohens_kappa(a, b);
    KappaResult ba = cohens_kappa(b, a);
    CHECK(ab.kappa == ba.kappa);
    CHECK(cohens_kappa(a, a).kappa == 1.0);

    // bijective relabeling X <-> Y on both sides leaves kappa unchanged
    auto swap_type = [](std::vector<Label> ls) {
      for (auto& l : ls) {
        if (l.entity_type == "X") l.entity_type = "Y";
        else if (l.entity_type == "Y") l.entity_type = "X";
      }
      return ls;
    };
    KappaResult swapped = cohens_kappa(swap_type(a), swap_type(b));
    CHECK(swapped.kappa == doctest::Approx(ab.kappa).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_corpora wires ids, alphabet and CIs together") {
  CorpusSplit gold;
  gold.name = "test";
  gold.sequences = {fixtures::table1_sequence("p0"),
                    fixtures::make_sequence("p1", {"a"}, {"O"})};
  CorpusSplit pred = gold;
  pred.sequences[0].labels[1] = Label::outside();  // drop one token of a span
  pred.sequences[0] = validate_bio(pred.sequences[0], ValidateMode::Repair);

  EvalReport report = evaluate_corpora(gold, pred,
                                       MetricSelector::Mode::Relaxed, 200,
                                       0.95, 123);
  CHECK(report.per_type.size() == 2);
  CHECK(report.split == split_id(gold));
  REQUIRE(report.ci.size() == 3);  // overall f1 + one per type
  CHECK(report.ci[0].first == "f1");
  for (const auto& [name, bounds] : report.ci) {
    CHECK(bounds[0] >= 0.0);
    CHECK(bounds[0] <= bounds[1]);
    CHECK(bounds[1] <= 1.0);
  }

  CorpusSplit mismatched = pred;
  mismatched.sequences[1].id = "other";
  CHECK_THROWS_AS(evaluate_corpora(gold, mismatched,
                                   MetricSelector::Mode::Relaxed, 0, 0.95, 0),
                  ValidationError);
}

TEST_CASE("report JSON round trip") {
  CorpusSplit gold;
  gold.name = "test";
  gold.sequences = {fixtures::table1_sequence("p0")};
  EvalReport report = evaluate_corpora(gold, gold,
                                       MetricSelector::Mode::Relaxed, 100,
                                       0.9, 7);
  report.model = "unit";
  const std::string text = report_to_json(report);
  EvalReport parsed = report_from_json(text);
  CHECK(parsed.model == report.model);
  CHECK(parsed.split == report.split);
  CHECK(parsed.overall.f1 == report.overall.f1);
  CHECK(parsed.per_type.size() == report.per_type.size());
  CHECK(parsed.ci.size() == report.ci.size());
  CHECK(parsed.bootstrap_b == 100);
  CHECK(report_to_json(parsed) == text);
}
