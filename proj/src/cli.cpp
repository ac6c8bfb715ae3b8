#include "impacts/cli.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include "CLI11.hpp"

#include "impacts/conll.hpp"
#include "impacts/crf.hpp"
#include "impacts/errors.hpp"
#include "impacts/harness.hpp"
#include "impacts/icl.hpp"
#include "impacts/metrics.hpp"
#include "impacts/sampling.hpp"

namespace impacts::cli {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

struct Options {
  std::string gold, pred, train, dev, test, model, out, endpoint_config;
  std::string spec, tags, embeddings, provider = "lexical";
  std::string mode = "strict";
  std::string features = "discrete";
  std::string dense_dir;
  std::string optimizer = "line-search";
  std::string model_name = "model";
  std::string split_name = "custom";
  std::vector<std::string> runs;
  std::uint64_t b = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t k = 3;
  std::size_t jobs = 1;
  double rps = 0.0;
  double l2 = 0.01;
  double learning_rate = 0.5;
  double clip_norm = 0.0;
  double fraction = 1.0;
  int max_epochs = 100;
  int patience = 3;
  bool constrained = true;
  bool strict_metric = false;
  bool all_pairs = false;
  bool skip_failures = false;
};

const DenseFeatureStore* maybe_dense(const Options& opt,
                                     std::optional<DenseFeatureStore>& slot) {
  if (opt.dense_dir.empty()) return nullptr;
  slot.emplace(DenseFeatureStore::load_dir(opt.dense_dir));
  return &*slot;
}

int cmd_validate(const Options& opt, std::ostream& out) {
  CorpusSplit corpus = load_corpus(opt.gold);
  if (opt.mode == "strict") {
    for (const auto& seq : corpus.sequences) {
      validate_bio(seq, ValidateMode::Strict);
    }
    out << "ok: " << corpus.sequences.size() << " sequences\n";
    return 0;
  }
  CorpusSplit repaired = corpus;
  for (auto& seq : repaired.sequences) seq = validate_bio(seq, ValidateMode::Repair);
  const std::string text = serialize_conll(repaired);
  if (opt.out.empty()) {
    out << text;
  } else {
    write_file(opt.out, text);
  }
  return 0;
}

int cmd_stats(const Options& opt, std::ostream& out) {
  CorpusSplit corpus = load_corpus(opt.gold, opt.split_name);
  out << stats_json(corpus) << '\n';
  return 0;
}

int cmd_train(const Options& opt, std::ostream&, std::ostream& err) {
  if (opt.out.empty()) throw ConfigError("--out model path is required");
  CorpusSplit train = load_corpus(opt.train, "train");
  std::optional<CorpusSplit> dev;
  if (!opt.dev.empty()) dev = load_corpus(opt.dev, "dev");

  TrainConfig config;
  config.mode = opt.features == "dense" ? FeatureMode::Dense
                                        : FeatureMode::Discrete;
  config.constrained = opt.constrained;
  config.l2 = opt.l2;
  config.optimizer = opt.optimizer == "fixed-step"
                         ? TrainConfig::Optimizer::FixedStep
                         : TrainConfig::Optimizer::LineSearch;
  config.max_epochs = opt.max_epochs;
  config.patience = opt.patience;
  config.learning_rate = opt.learning_rate;
  config.clip_norm = opt.clip_norm;
  config.seed = opt.seed;

  std::optional<DenseFeatureStore> store;
  TrainResult result = train_crf(train, config, dev ? &*dev : nullptr,
                                 maybe_dense(opt, store));
  save_model(result.model, opt.out);
  for (const auto& epoch : result.log) {
    err << "epoch " << epoch.epoch << " loss " << epoch.train_loss
        << " val " << epoch.validation_loss << " step " << epoch.step << '\n';
  }
  err << "stopped: " << result.stop_reason << " (" << result.log.size()
      << " epochs); model written to " << opt.out << '\n';
  return 0;
}

int cmd_predict(const Options& opt, std::ostream& out) {
  CrfModel model = load_model(opt.model);
  CorpusSplit test = load_corpus(opt.test, "test");
  std::optional<DenseFeatureStore> store;
  std::vector<TaggedSequence> preds =
      predict(model, test, maybe_dense(opt, store));
  CorpusSplit result;
  result.name = test.name;
  result.sequences = std::move(preds);
  const std::string text = serialize_conll(result);
  if (opt.out.empty()) {
    out << text;
  } else {
    write_file(opt.out, text);
  }
  return 0;
}

int cmd_eval(const Options& opt, std::ostream& out) {
  CorpusSplit gold = load_corpus(opt.gold, opt.split_name);
  CorpusSplit pred = load_corpus(opt.pred, opt.split_name);
  ScoreOptions score_options;
  score_options.policy = opt.all_pairs ? MatchPolicy::AllPairs
                                       : MatchPolicy::GreedyOneToOne;
  EvalReport report = evaluate_corpora(
      gold, pred,
      opt.strict_metric ? MetricSelector::Mode::Strict
                        : MetricSelector::Mode::Relaxed,
      opt.b, opt.level, opt.seed, score_options);
  report.model = opt.model_name;
  out << report_to_json(report) << '\n';
  if (!opt.out.empty()) write_file(opt.out, report_to_json(report) + "\n");
  return 0;
}

int cmd_kappa(const Options& opt, std::ostream& out) {
  CorpusSplit a = load_corpus(opt.gold);
  CorpusSplit b = load_corpus(opt.pred);
  std::vector<Label> labels_a, labels_b;
  for (const auto& seq : a.sequences) {
    labels_a.insert(labels_a.end(), seq.labels.begin(), seq.labels.end());
  }
  for (const auto& seq : b.sequences) {
    labels_b.insert(labels_b.end(), seq.labels.begin(), seq.labels.end());
  }
  out << kappa_to_json(cohens_kappa(labels_a, labels_b)) << '\n';
  return 0;
}

int cmd_icl(const Options& opt, std::ostream& out) {
  if (opt.endpoint_config.empty()) {
    throw ConfigError("--endpoint-config is required");
  }
  CorpusSplit pool = load_corpus(opt.train, "train");
  CorpusSplit targets = load_corpus(opt.test, "test");

  std::unique_ptr<EmbeddingProvider> provider;
  if (opt.provider == "file") {
    if (opt.embeddings.empty()) {
      throw ConfigError("--provider file needs --embeddings");
    }
    provider = std::make_unique<FileEmbeddingProvider>(
        FileEmbeddingProvider::load(opt.embeddings));
  } else if (opt.provider == "lexical") {
    provider = std::make_unique<LexicalTfidfProvider>(pool);
  } else {
    throw ConfigError("--provider must be lexical or file");
  }

  EndpointConfig endpoint = load_endpoint_config(opt.endpoint_config);
  std::unique_ptr<CompletionClient> client = make_completion_client(endpoint);

  IclRunConfig config;
  config.k = opt.k;
  config.bootstrap_b = opt.b;
  config.level = opt.level;
  config.seed = opt.seed;
  config.fail_fast = !opt.skip_failures;
  config.jobs = opt.jobs;
  config.requests_per_second = opt.rps;
  config.model_name = endpoint.model.empty() ? "icl" : endpoint.model;
  config.decoding.model = endpoint.model;
  config.decoding.temperature = endpoint.temperature;
  config.decoding.max_tokens = endpoint.max_tokens;

  IclRunResult result = run_icl_eval(pool, targets, *provider, *client, config);
  out << report_to_json(result.report) << '\n';
  if (!opt.out.empty()) {
    std::filesystem::create_directories(opt.out);
    write_file(std::filesystem::path(opt.out) / "report.json",
               report_to_json(result.report) + "\n");
    write_run_log(result.records,
                  std::filesystem::path(opt.out) / "runlog.jsonl");
  }
  return 0;
}

int cmd_curve(const Options& opt, std::ostream& out) {
  ExperimentSpec spec = load_experiment_spec(opt.spec);
  if (!opt.out.empty()) spec.output_dir = opt.out;
  if (opt.seed != 0) spec.seed = opt.seed;
  run_experiment(spec);
  std::ifstream in(spec.output_dir / "curve.csv");
  out << in.rdbuf();
  return 0;
}

int cmd_report(const Options& opt, std::ostream& out) {
  if (!opt.tags.empty()) {
    CorpusSplit gold = load_corpus(opt.gold, "gold");
    CorpusSplit pred = load_corpus(opt.pred, "pred");
    std::vector<ErrorTag> tags = load_error_tags(opt.tags);
    const std::string text = tag_errors_json(gold, pred, tags);
    out << text << '\n';
    if (!opt.out.empty()) write_file(opt.out, text + "\n");
    return 0;
  }
  if (opt.runs.empty()) {
    throw ConfigError("report needs run files, or --gold/--pred/--tags");
  }
  std::vector<EvalReport> reports;
  for (const auto& path : opt.runs) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open report " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    reports.push_back(report_from_json(buf.str()));
  }
  out << compare_report_text(reports);
  if (!opt.out.empty()) write_file(opt.out, compare_report_json(reports) + "\n");
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Token-level extraction toolkit for ClinicalImpacts/"
               "SocialImpacts BIO corpora",
               "impacts"};
  app.require_subcommand(1);
  Options opt;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", opt.seed, "Deterministic seed");
  };
  auto add_bootstrap = [&](CLI::App* cmd) {
    cmd->add_option("--b", opt.b, "Bootstrap resamples (0 disables)");
    cmd->add_option("--level", opt.level, "Confidence level");
  };

  auto* validate = app.add_subcommand(
      "validate", "Check (or repair) BIO transitions in a corpus");
  validate->add_option("--gold", opt.gold, "Corpus file")->required();
  validate->add_option("--mode", opt.mode, "strict or repair")
      ->check(CLI::IsMember({"strict", "repair"}));
  validate->add_option("--out", opt.out, "Repaired corpus destination");

  auto* stats = app.add_subcommand(
      "stats", "Corpus statistics (posts, tokens, entities per type)");
  stats->add_option("--gold", opt.gold, "Corpus file")->required();
  stats->add_option("--split", opt.split_name, "Split name for the report");

  auto* train = app.add_subcommand("train", "Train a linear-chain CRF");
  train->add_option("--train", opt.train, "Training corpus")->required();
  train->add_option("--dev", opt.dev, "Validation corpus");
  train->add_option("--out", opt.out, "Model checkpoint destination")
      ->required();
  train->add_option("--l2", opt.l2, "L2 regularization strength");
  train->add_option("--max-epochs", opt.max_epochs, "Epoch cap");
  train->add_option("--patience", opt.patience, "Early stopping patience");
  train->add_option("--optimizer", opt.optimizer,
                    "line-search or fixed-step")
      ->check(CLI::IsMember({"line-search", "fixed-step"}));
  train->add_option("--learning-rate", opt.learning_rate,
                    "Fixed-step learning rate");
  train->add_option("--clip-norm", opt.clip_norm,
                    "Gradient clipping max norm (0 disables)");
  train->add_option("--features", opt.features, "discrete or dense")
      ->check(CLI::IsMember({"discrete", "dense"}));
  train->add_option("--dense-dir", opt.dense_dir,
                    "Dense feature directory (dense mode)");
  train->add_flag("--constrained,!--unconstrained", opt.constrained,
                  "Mask BIO-invalid transitions");
  add_seed(train);

  auto* predict_cmd =
      app.add_subcommand("predict", "Viterbi-decode a corpus with a model");
  predict_cmd->add_option("--model", opt.model, "Model checkpoint")->required();
  predict_cmd->add_option("--test", opt.test, "Corpus to label")->required();
  predict_cmd->add_option("--out", opt.out, "Prediction destination");
  predict_cmd->add_option("--dense-dir", opt.dense_dir,
                          "Dense feature directory (dense mode)");

  auto* eval = app.add_subcommand(
      "eval", "Relaxed token-overlap scores with bootstrap CIs");
  eval->add_option("--gold", opt.gold, "Gold corpus")->required();
  eval->add_option("--pred", opt.pred, "Predicted corpus")->required();
  eval->add_flag("--strict", opt.strict_metric,
                 "Exact span matching instead of relaxed overlap");
  eval->add_flag("--all-pairs", opt.all_pairs,
                 "Sum overlap over all pairs instead of one-to-one matching");
  eval->add_option("--model-name", opt.model_name, "Name in the report");
  eval->add_option("--split", opt.split_name, "Split name for the report");
  eval->add_option("--out", opt.out, "Also write the report here");
  add_bootstrap(eval);
  add_seed(eval);

  auto* kappa = app.add_subcommand(
      "kappa", "Cohen's kappa between two token-aligned annotations");
  kappa->add_option("--gold", opt.gold, "First annotator corpus")->required();
  kappa->add_option("--pred", opt.pred, "Second annotator corpus")->required();

  auto* icl = app.add_subcommand(
      "icl", "Few-shot in-context-learning evaluation over an endpoint");
  icl->add_option("--train", opt.train, "Exemplar pool corpus")->required();
  icl->add_option("--test", opt.test, "Targets to label")->required();
  icl->add_option("--k", opt.k, "Exemplars per prompt (0 = zero-shot)");
  icl->add_option("--endpoint-config", opt.endpoint_config,
                  "Endpoint config JSON")
      ->required();
  icl->add_option("--provider", opt.provider, "lexical or file")
      ->check(CLI::IsMember({"lexical", "file"}));
  icl->add_option("--embeddings", opt.embeddings,
                  "Embeddings JSONL (file provider)");
  icl->add_option("--out", opt.out, "Directory for report.json + runlog.jsonl");
  icl->add_option("--jobs", opt.jobs, "Concurrent completions");
  icl->add_option("--rps", opt.rps, "Request rate limit per second");
  icl->add_flag("--skip-failures", opt.skip_failures,
                "Log and skip failed targets instead of failing fast");
  add_bootstrap(icl);
  add_seed(icl);

  auto* curve = app.add_subcommand(
      "curve", "Learning-curve sweep from an experiment spec");
  curve->add_option("--spec", opt.spec, "Experiment spec JSON")->required();
  curve->add_option("--out", opt.out, "Override the spec's output_dir");
  add_seed(curve);

  auto* report = app.add_subcommand(
      "report", "Compare run reports, or join error tags with disagreements");
  report->add_option("runs", opt.runs, "EvalReport JSON files");
  report->add_option("--gold", opt.gold, "Gold corpus (tag mode)");
  report->add_option("--pred", opt.pred, "Predicted corpus (tag mode)");
  report->add_option("--tags", opt.tags, "ErrorTag JSONL (tag mode)");
  report->add_option("--out", opt.out, "Also write JSON output here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e, out, err);  // --help
    }
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (app.got_subcommand(validate)) return cmd_validate(opt, out);
    if (app.got_subcommand(stats)) return cmd_stats(opt, out);
    if (app.got_subcommand(train)) return cmd_train(opt, out, err);
    if (app.got_subcommand(predict_cmd)) return cmd_predict(opt, out);
    if (app.got_subcommand(eval)) return cmd_eval(opt, out);
    if (app.got_subcommand(kappa)) return cmd_kappa(opt, out);
    if (app.got_subcommand(icl)) return cmd_icl(opt, out);
    if (app.got_subcommand(curve)) return cmd_curve(opt, out);
    if (app.got_subcommand(report)) return cmd_report(opt, out);
    err << "error: no subcommand\n";
    return 2;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const TransportError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace impacts::cli
