// Acceptance suite: one criterion per function, one PASS/FAIL line each.
// Run via ctest (-R acceptance) or directly.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "impacts/cli.hpp"
#include "impacts/conll.hpp"
#include "impacts/errors.hpp"
#include "impacts/crf.hpp"
#include "impacts/harness.hpp"
#include "impacts/icl.hpp"
#include "impacts/metrics.hpp"
#include "impacts/sampling.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace impacts;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& what) {
  if (!condition) throw Failure(what);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const std::vector<std::string> kXY = {"X", "Y"};

// --- criterion 1 -----------------------------------------------------------

void criterion_relaxed_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(1001);
  for (int iter = 0; iter < 500; ++iter) {
    std::vector<SpanInstance> gold, pred;
    const std::size_t seqs = 1 + rng.below(5);
    for (std::size_t s = 0; s < seqs; ++s) {
      const std::string id = std::to_string(s);
      for (const auto& span : fixtures::random_spans(rng, 16, 4, kXY)) {
        gold.push_back({id, span});
      }
      for (const auto& span : fixtures::random_spans(rng, 16, 4, kXY)) {
        pred.push_back({id, span});
      }
    }
    EvalReport report = relaxed_scores(gold, pred, kXY);
    auto expected = oracles::relaxed_masses(gold, pred, kXY);
    long long tp = 0, pm = 0, gm = 0;
    for (const auto& t : report.per_type) {
      const auto& e = expected.at(t.entity_type);
      require(t.tp == e.tp && t.pred == e.pred && t.gold == e.gold,
              "per-type masses diverge from the token-set oracle");
      tp += e.tp;
      pm += e.pred;
      gm += e.gold;
    }
    require(report.overall.tp == tp && report.overall.pred == pm &&
                report.overall.gold == gm,
            "micro masses diverge from the oracle");
  }
  require(seconds_since(start) < 10.0, "oracle comparison exceeded 10 s");
}

// --- criterion 2 -----------------------------------------------------------

void criterion_hand_fixture() {
  EvalReport partial =
      relaxed_scores({{"s", {"X", 1, 3}}}, {{"s", {"X", 2, 4}}}, kXY);
  require(partial.overall.precision == 2.0 / 3.0, "precision != 2/3");
  require(partial.overall.recall == 2.0 / 3.0, "recall != 2/3");
  require(partial.overall.f1 == 2.0 / 3.0, "f1 != 2/3");

  EvalReport micro = relaxed_scores(
      {{"s", {"X", 1, 3}}, {"s", {"Y", 6, 6}}}, {{"s", {"X", 2, 4}}}, kXY);
  require(std::abs(micro.overall.f1 - 4.0 / 7.0) < 1e-12,
          "micro f1 != 4/7 to 12 decimals");
  require(micro.overall.precision == 2.0 / 3.0, "micro precision != 2/3");
  require(micro.overall.recall == 0.5, "micro recall != 1/2");
}

// --- criterion 3 -----------------------------------------------------------

void criterion_crf_normalization() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(3003);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t n_types = 1 + rng.below(2);  // m = 3 or 5
    std::vector<std::string> types;
    for (std::size_t i = 0; i < n_types; ++i) {
      types.push_back("T" + std::to_string(i));
    }
    CrfModel model = make_crf_model(types, FeatureMode::Dense, 4,
                                    iter % 2 == 0, 0.0);
    for (auto& w : model.weights) w = rng.gaussian(0.0, 0.5);
    const std::size_t n = 1 + rng.below(6);
    SequenceFeatures feats(n);
    for (auto& fv : feats) {
      fv.emplace_back(static_cast<std::int32_t>(rng.below(4)),
                      rng.uniform(-1.0, 1.0));
    }
    const double brute = oracles::brute_force_logz(model, feats);
    require(std::abs(forward_logz(model, feats) - brute) <= 1e-8,
            "forward log Z off by more than 1e-8");
    auto decoded = viterbi(model, feats);
    auto best = oracles::brute_force_argmax(model, feats);
    std::vector<Label> expected;
    for (std::size_t y : best) expected.push_back(model.parsed_labels[y]);
    require(decoded == expected, "viterbi differs from brute-force argmax");
  }

  // Constrained zero-weight fixture over {O, B-X, I-X}, n = 2: the strict
  // BIO rule keeps 5 of 9 paths (OO, OB, BO, BB, BI), so log Z = log 5 and
  // it must equal the valid-path enumeration exactly.
  CrfModel constrained =
      make_crf_model({"X"}, FeatureMode::Dense, 2, true, 0.0);
  SequenceFeatures two(2);
  const double brute = oracles::brute_force_logz(constrained, two);
  require(std::abs(brute - std::log(5.0)) < 1e-12,
          "enumeration of BIO-valid paths is not log 5");
  require(std::abs(forward_logz(constrained, two) - brute) <= 1e-8,
          "constrained log Z does not sum only BIO-valid paths");
  require(seconds_since(start) < 30.0, "CRF criterion exceeded 30 s");
}

// --- criterion 4 -----------------------------------------------------------

void criterion_gradient_check() {
  Rng rng(4004);
  int pairs = 0;
  while (pairs < 50) {
    for (double l2 : {0.0, 0.01}) {
      if (pairs >= 50) break;
      std::vector<std::string> types = {"T0"};
      if (rng.below(2) == 1) types.push_back("T1");
      CrfModel model = make_crf_model(types, FeatureMode::Dense, 3,
                                      rng.below(2) == 0, l2);
      for (auto& w : model.weights) w = rng.gaussian(0.0, 0.5);
      TrainingBatch batch;
      const std::size_t seqs = 1 + rng.below(3);
      for (std::size_t s = 0; s < seqs; ++s) {
        const std::size_t n = 1 + rng.below(4);
        SequenceFeatures feats(n);
        for (auto& fv : feats) {
          fv.emplace_back(static_cast<std::int32_t>(rng.below(3)),
                          rng.uniform(-1.0, 1.0));
        }
        auto path = oracles::brute_force_argmax(model, feats);
        std::vector<Label> labels;
        for (std::size_t y : path) labels.push_back(model.parsed_labels[y]);
        batch.emplace_back(std::move(feats), std::move(labels));
      }
      Gradient grad = nll_and_gradient(model, batch);
      auto fd = oracles::finite_difference_gradient(model, batch, 1e-5);
      for (std::size_t i = 0; i < grad.values.size(); ++i) {
        const double scale =
            std::max({1.0, std::abs(grad.values[i]), std::abs(fd[i])});
        require(std::abs(grad.values[i] - fd[i]) <= 1e-4 * scale,
                "gradient coordinate diverges from central differences");
      }
      ++pairs;
    }
  }
}

// --- criterion 5 -----------------------------------------------------------

void criterion_toy_training() {
  const auto start = std::chrono::steady_clock::now();
  CorpusSplit corpus = fixtures::toy_separable_corpus();
  TrainConfig config;
  config.max_epochs = 50;
  config.seed = 7;
  TrainResult first = train_crf(corpus, config);
  TrainResult second = train_crf(corpus, config);
  require(first.model.weights == second.model.weights,
          "training is not deterministic under a fixed seed");

  auto preds = predict(first.model, corpus);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t t = 0; t < preds[i].labels.size(); ++t) {
      ++total;
      if (preds[i].labels[t] == corpus.sequences[i].labels[t]) ++correct;
    }
  }
  require(correct == total, "toy corpus token accuracy below 100%");

  CorpusSplit pred_split;
  pred_split.name = corpus.name;
  pred_split.sequences = preds;
  EvalReport report =
      evaluate_corpora(corpus, pred_split, MetricSelector::Mode::Relaxed);
  require(report.overall.f1 == 1.0, "toy corpus relaxed micro F1 below 1.0");
  require(seconds_since(start) < 20.0, "toy training exceeded 20 s");
}

// --- criterion 6 -----------------------------------------------------------

void criterion_bio_round_trips() {
  Rng rng(6006);
  const std::vector<std::string> types = {"ClinicalImpacts", "SocialImpacts"};
  for (int iter = 0; iter < 1000; ++iter) {
    auto seq = fixtures::random_sequence(rng, "r", types);
    require(spans_to_bio(extract_spans(seq), seq.labels.size()) == seq.labels,
            "spans -> BIO -> spans is not the identity");
  }
  for (int iter = 0; iter < 1000; ++iter) {
    CorpusSplit corpus = fixtures::random_corpus(rng, 1 + rng.below(4), types);
    const std::string text = serialize_conll(corpus);
    CorpusSplit parsed = parse_conll(text);
    require(parsed.sequences == corpus.sequences,
            "parse -> serialize -> parse is not the identity");
    require(serialize_conll(parsed) == text, "serializer is not byte-stable");
  }
  const auto alphabet = fixtures::label_alphabet(types);
  for (int iter = 0; iter < 1000; ++iter) {
    TaggedSequence seq;
    seq.id = "c";
    const std::size_t n = 1 + rng.below(12);
    for (std::size_t t = 0; t < n; ++t) {
      seq.tokens.push_back("w");
      seq.labels.push_back(parse_label(alphabet[rng.below(alphabet.size())]));
    }
    auto once = validate_bio(seq, ValidateMode::Repair);
    require(validate_bio(once, ValidateMode::Repair) == once,
            "repair is not idempotent");
    require(is_bio_valid(once), "repair left an invalid sequence");
  }
}

// --- criterion 7 -----------------------------------------------------------

void criterion_kappa() {
  auto X = Label::begin("X");
  auto O = Label::outside();
  require(cohens_kappa({X, O, X, O}, {X, O, X, O}).kappa == 1.0,
          "perfect agreement kappa != 1");
  KappaResult hand = cohens_kappa({X, X, O, O}, {X, O, X, O});
  require(hand.kappa == 0.0, "2x2 hand case kappa != 0 exactly");
  Rng rng(7007);
  const auto alphabet = fixtures::label_alphabet(kXY);
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<Label> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(parse_label(alphabet[rng.below(alphabet.size())]));
      b.push_back(parse_label(alphabet[rng.below(alphabet.size())]));
    }
    require(cohens_kappa(a, b).kappa == cohens_kappa(b, a).kappa,
            "kappa is not symmetric under argument swap");
  }
}

// --- criterion 8 -----------------------------------------------------------

void criterion_bootstrap() {
  Rng rng(8008);
  const std::vector<std::string> types = {"X", "Y"};
  for (int iter = 0; iter < 100; ++iter) {
    CorpusSplit gold = fixtures::random_corpus(rng, 2 + rng.below(6), types);
    CorpusSplit pred = gold;
    for (auto& seq : pred.sequences) {
      if (rng.below(2) == 0) {
        for (auto& label : seq.labels) label = Label::outside();
      }
    }
    auto a = bootstrap_ci(gold, pred, MetricSelector{}, 150, 0.95, iter);
    auto b = bootstrap_ci(gold, pred, MetricSelector{}, 150, 0.95, iter);
    require(a.lower == b.lower && a.upper == b.upper,
            "bootstrap is not bit-exact under a fixed seed");
    require(0.0 <= a.lower && a.lower <= a.upper && a.upper <= 1.0,
            "bootstrap bounds leave [0, 1] or invert");
  }

  CorpusSplit gold, pred;
  gold.sequences = {fixtures::make_sequence("a", {"t", "u"}, {"B-X", "I-X"}),
                    fixtures::make_sequence("b", {"t", "u"}, {"B-X", "I-X"})};
  pred.sequences = {fixtures::make_sequence("a", {"t", "u"}, {"B-X", "I-X"}),
                    fixtures::make_sequence("b", {"t", "u"}, {"O", "O"})};
  auto ci = bootstrap_ci(gold, pred, MetricSelector{}, 10000, 0.95, 5);
  require(ci.lower == 0.0 && ci.upper == 1.0,
          "two-post enumeration fixture CI is not (0, 1)");
}

// --- criterion 9 -----------------------------------------------------------

void criterion_icl_pipeline() {
  CorpusSplit pool = fixtures::table2_test_corpus();
  pool.sequences.resize(10);
  pool.name = "train";
  CorpusSplit targets;
  targets.name = "test";
  for (int i = 0; i < 5; ++i) {
    targets.sequences.push_back(
        fixtures::table2_test_corpus().sequences[50 + i]);
    targets.sequences.back().id = "t" + std::to_string(i);
  }
  LexicalTfidfProvider provider(pool);

  class Oracle : public CompletionClient {
   public:
    explicit Oracle(const CorpusSplit& targets) {
      for (const auto& seq : targets.sequences) {
        std::string key;
        for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
          if (i > 0) key += ", ";
          key += seq.tokens[i];
        }
        by_key_["Tokens: [" + key + "]"] =
            exemplar_stream(seq.tokens, seq.labels);
      }
    }
    std::string complete(const PromptBundle& bundle) override {
      for (const auto& [key, stream] : by_key_) {
        if (bundle.text.find(key) != std::string::npos) return stream;
      }
      throw TransportError("unknown target");
    }
    std::map<std::string, std::string> by_key_;
  } oracle(targets);

  IclRunConfig config;
  config.k = 3;
  config.bootstrap_b = 200;
  config.seed = 2;
  IclRunResult perfect = run_icl_eval(pool, targets, provider, oracle, config);
  require(perfect.report.overall.f1 == 1.0, "oracle stub F1 != 1.0");

  class Empty : public CompletionClient {
   public:
    std::string complete(const PromptBundle&) override { return ""; }
  } empty;
  IclRunConfig no_ci = config;
  no_ci.bootstrap_b = 0;
  IclRunResult blank = run_icl_eval(pool, targets, provider, empty, no_ci);
  require(blank.report.overall.pred == 0, "empty stub predicted mass != 0");
  require(blank.report.overall.f1 == 0.0, "empty stub F1 != 0");
  for (const auto& record : blank.records) {
    for (const auto& label : record.response.repaired) {
      require(label == Label::outside(), "empty stub output is not all O");
    }
  }

  // parse_response totality fuzz
  Rng rng(9009);
  const std::vector<std::string> type_alphabet = {"ClinicalImpacts",
                                                  "SocialImpacts"};
  for (int iter = 0; iter < 10000; ++iter) {
    const std::size_t len = rng.below(80);
    std::string raw;
    for (std::size_t i = 0; i < len; ++i) {
      raw.push_back(static_cast<char>(rng.below(256)));
    }
    std::vector<std::string> tokens;
    const std::size_t n = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      tokens.push_back("tok" + std::to_string(rng.below(8)));
    }
    LlmResponse response = parse_response(raw, tokens, type_alphabet);
    require(response.repaired.size() == tokens.size(),
            "parse_response output length mismatch");
    TaggedSequence seq;
    seq.id = "fuzz";
    seq.tokens = tokens;
    seq.labels = response.repaired;
    require(is_bio_valid(seq), "parse_response output fails strict BIO");
  }

  // byte-identical prompt rendering against the golden file
  auto table1 = fixtures::table1_sequence();
  std::vector<Exemplar> exemplars = {
      {"0", 0.9, table1.tokens, table1.labels},
      {"1",
       0.5,
       {"went", "to", "rehab"},
       {Label::outside(), Label::outside(), Label::begin("ClinicalImpacts")}},
      {"2",
       0.25,
       {"feeling", "tired", "and", "crummy"},
       {Label::outside(), Label::begin("ClinicalImpacts"),
        Label::inside("ClinicalImpacts"), Label::inside("ClinicalImpacts")}}};
  const std::vector<std::string> target = {"I", "lost", "my", "job"};
  PromptBundle a = render_prompt(default_prompt_template(), exemplars, target, 3);
  PromptBundle b = render_prompt(default_prompt_template(), exemplars, target, 3);
  require(a.text == b.text, "prompt rendering is not byte-stable");
  const std::string golden =
      read_file(std::filesystem::path(IMPACTS_GOLDEN_DIR) / "prompt_k3.txt");
  require(a.text == golden, "prompt does not match the golden file");
  require(golden.find("You are a medical AI assistant") != std::string::npos,
          "golden prompt lost the instruction header");
}

// --- criterion 10 ----------------------------------------------------------

void criterion_harness_determinism() {
  auto dir = std::filesystem::temp_directory_path() / "impacts_acceptance_h";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CorpusSplit train = fixtures::toy_separable_corpus();
  CorpusSplit test = fixtures::toy_separable_corpus();
  for (auto& seq : test.sequences) seq.id = "te-" + seq.id;
  save_corpus(train, dir / "train.bio");
  save_corpus(test, dir / "test.bio");

  ExperimentSpec spec;
  spec.name = "toy-crf";
  spec.train_path = dir / "train.bio";
  spec.test_path = dir / "test.bio";
  spec.model_kind = "crf";
  spec.crf.max_epochs = 50;
  spec.metrics_b = 200;
  spec.metrics_seed = 3;
  spec.seed = 17;
  spec.fractions = {0.5, 1.0};
  spec.output_dir = dir / "run1";
  run_experiment(spec);
  spec.output_dir = dir / "run2";
  run_experiment(spec);
  require(read_file(dir / "run1" / "report.json") ==
              read_file(dir / "run2" / "report.json"),
          "report.json differs between identical runs");
  require(read_file(dir / "run1" / "curve.csv") ==
              read_file(dir / "run2" / "curve.csv"),
          "curve.csv differs between identical runs");

  save_corpus(fixtures::table2_test_corpus(), dir / "t2.bio");
  std::ostringstream out, err;
  const int code = cli::run({"stats", "--gold", (dir / "t2.bio").string(),
                             "--split", "test"},
                            out, err);
  require(code == 0, "stats command failed: " + err.str());
  auto stats = nlohmann::json::parse(out.str());
  require(stats.at("posts") == 278, "fixture posts != 278");
  require(stats.at("entities").at("SocialImpacts") == 256,
          "fixture SocialImpacts != 256");
  require(stats.at("entities").at("ClinicalImpacts") == 108,
          "fixture ClinicalImpacts != 108");
  require(stats.at("total_entities") == 364, "fixture total entities != 364");
  std::filesystem::remove_all(dir);
}

struct Criterion {
  int number;
  const char* name;
  std::function<void()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "relaxed-metric oracle equivalence (500 corpora)",
       criterion_relaxed_oracle},
      {2, "hand-worked 2/3 and 4/7 fixtures", criterion_hand_fixture},
      {3, "CRF normalization + Viterbi vs enumeration (200 models)",
       criterion_crf_normalization},
      {4, "gradient vs central finite differences (50 pairs)",
       criterion_gradient_check},
      {5, "toy end-to-end training to F1 = 1.0", criterion_toy_training},
      {6, "BIO round trips and repair idempotence (1000 each)",
       criterion_bio_round_trips},
      {7, "Cohen's kappa fixtures and symmetry", criterion_kappa},
      {8, "bootstrap determinism, bounds and the two-post fixture",
       criterion_bootstrap},
      {9, "ICL stub pipeline, parse fuzz and golden prompt",
       criterion_icl_pipeline},
      {10, "harness determinism and the statistics fixture",
       criterion_harness_determinism},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.run();
      std::printf("[PASS] criterion %2d: %s (%.2fs)\n", criterion.number,
                  criterion.name, seconds_since(start));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] criterion %2d: %s -- %s\n", criterion.number,
                  criterion.name, e.what());
    }
    std::fflush(stdout);
  }
  if (failures == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("acceptance: %d criteria FAILED\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
