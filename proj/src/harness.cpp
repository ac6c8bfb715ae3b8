#include "impacts/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

#include "impacts/conll.hpp"
#include "impacts/errors.hpp"
#include "impacts/rng.hpp"
#include "impacts/sampling.hpp"

namespace impacts {

namespace {

// Shortest round-trip decimal form, so emitted numbers are stable bytes.
std::string dtos(double value) { return nlohmann::json(value).dump(); }

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& path) {
  if (path.empty()) return {};
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

ExperimentSpec experiment_spec_from_json(const std::string& text,
                                         const std::filesystem::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid experiment spec: ") + e.what());
  }
  ExperimentSpec spec;
  try {
    spec.name = j.value("name", "experiment");
    const auto& corpus = j.at("corpus");
    spec.train_path = resolve(base_dir, corpus.at("train").get<std::string>());
    spec.test_path = resolve(base_dir, corpus.at("test").get<std::string>());
    spec.dev_path = resolve(base_dir, corpus.value("dev", ""));

    const auto& model = j.at("model");
    spec.model_kind = model.at("kind").get<std::string>();
    if (spec.model_kind != "crf" && spec.model_kind != "icl") {
      throw ConfigError("model.kind must be crf or icl");
    }
    spec.crf.constrained = model.value("constrained", true);
    spec.crf.l2 = model.value("l2", 0.01);
    spec.crf.max_epochs = model.value("max_epochs", 100);
    spec.crf.patience = model.value("patience", 3);
    spec.crf.learning_rate = model.value("learning_rate", 0.5);
    spec.crf.clip_norm = model.value("clip_norm", 0.0);
    spec.crf.seed = model.value("seed", 0);
    const std::string optimizer = model.value("optimizer", "line-search");
    if (optimizer == "line-search") {
      spec.crf.optimizer = TrainConfig::Optimizer::LineSearch;
    } else if (optimizer == "fixed-step") {
      spec.crf.optimizer = TrainConfig::Optimizer::FixedStep;
    } else {
      throw ConfigError("optimizer must be line-search or fixed-step");
    }
    spec.crf.mode = model.value("features", "discrete") == "dense"
                        ? FeatureMode::Dense
                        : FeatureMode::Discrete;

    if (j.contains("icl")) {
      const auto& icl = j.at("icl");
      spec.icl.k = icl.value("k", 3);
      spec.icl.model_name = icl.value("model_name", "icl");
      spec.icl.jobs = icl.value("jobs", 1);
      spec.icl.fail_fast = icl.value("fail_fast", true);
      spec.icl.requests_per_second = icl.value("requests_per_second", 0.0);
    }
    if (j.contains("endpoint")) {
      spec.endpoint = endpoint_config_from_json(j.at("endpoint").dump());
      if (spec.endpoint.kind == "replay" &&
          spec.endpoint.replay_path.is_relative()) {
        spec.endpoint.replay_path = base_dir / spec.endpoint.replay_path;
      }
    }
    if (j.contains("provider")) {
      spec.provider_kind = j.at("provider").value("kind", "lexical");
      spec.embeddings_path =
          resolve(base_dir, j.at("provider").value("embeddings", ""));
    }
    if (j.contains("metrics")) {
      spec.metrics_b = j.at("metrics").value("b", 1000);
      spec.metrics_level = j.at("metrics").value("level", 0.95);
      spec.metrics_seed = j.at("metrics").value("seed", 0);
    }
    spec.seed = j.value("seed", 0);
    if (j.contains("fractions")) {
      spec.fractions = j.at("fractions").get<std::vector<double>>();
    }
    spec.holdout = j.value("holdout", 0.0);
    spec.output_dir = resolve(base_dir, j.value("output_dir", ""));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment spec missing fields: ") +
                     e.what());
  }
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return experiment_spec_from_json(buf.str(),
                                   std::filesystem::absolute(path).parent_path());
}

std::pair<CorpusSplit, CorpusSplit> merge_train_dev(const CorpusSplit& train,
                                                    const CorpusSplit& dev,
                                                    double holdout_fraction,
                                                    std::uint64_t seed) {
  CorpusSplit merged;
  merged.name = "train";
  merged.sequences = train.sequences;
  merged.sequences.insert(merged.sequences.end(), dev.sequences.begin(),
                          dev.sequences.end());
  if (merged.sequences.empty()) throw ValidationError("nothing to merge");
  std::set<std::string> ids;
  for (const auto& seq : merged.sequences) {
    if (!ids.insert(seq.id).second) {
      throw ValidationError(
          "duplicate sequence id '" + seq.id +
          "' across train and dev; give explicit `# id = ...` lines");
    }
  }
  return stratified_holdout(merged, holdout_fraction, seed);
}

namespace {

struct FractionOutcome {
  CurveRow row;
  std::optional<EvalReport> report;
  std::vector<std::string> log_lines;
};

FractionOutcome run_crf_fraction(const ExperimentSpec& spec,
                                 const CorpusSplit& train,
                                 const CorpusSplit* validation,
                                 const CorpusSplit& test, double fraction,
                                 std::size_t index,
                                 const DenseFeatureStore* store) {
  FractionOutcome out;
  out.row.fraction = fraction;
  CorpusSplit sample = subsample(train, fraction, mix_seed(spec.seed, index));
  out.row.samples = sample.sequences.size();
  if (sample.stats().total_entities == 0) {
    out.row.degenerate = true;
    nlohmann::ordered_json line;
    line["fraction"] = fraction;
    line["samples"] = sample.sequences.size();
    line["degenerate"] = true;
    line["reason"] = "sampled training set has no entities";
    out.log_lines.push_back(line.dump());
    return out;
  }
  TrainResult trained = train_crf(sample, spec.crf, validation, store);
  std::vector<TaggedSequence> preds = predict(trained.model, test, store);
  CorpusSplit pred;
  pred.name = test.name;
  pred.sequences = std::move(preds);
  EvalReport report = evaluate_corpora(
      test, pred, MetricSelector::Mode::Relaxed, spec.metrics_b,
      spec.metrics_level, mix_seed(spec.metrics_seed, index));
  report.model = spec.name;
  out.row.f1 = report.overall.f1;
  for (const auto& [name, bounds] : report.ci) {
    if (name == "f1") {
      out.row.lower = bounds[0];
      out.row.upper = bounds[1];
    }
  }
  nlohmann::ordered_json line;
  line["fraction"] = fraction;
  line["samples"] = sample.sequences.size();
  line["epochs"] = trained.log.size();
  line["stop_reason"] = trained.stop_reason;
  line["f1"] = report.overall.f1;
  out.log_lines.push_back(line.dump());
  out.report = std::move(report);
  return out;
}

FractionOutcome run_icl_fraction(const ExperimentSpec& spec,
                                 const CorpusSplit& pool_full,
                                 const CorpusSplit& test, double fraction,
                                 std::size_t index, CompletionClient* client) {
  FractionOutcome out;
  out.row.fraction = fraction;
  CorpusSplit pool =
      subsample(pool_full, fraction, mix_seed(spec.seed, index));
  out.row.samples = pool.sequences.size();

  std::unique_ptr<EmbeddingProvider> provider;
  if (spec.provider_kind == "file") {
    provider = std::make_unique<FileEmbeddingProvider>(
        FileEmbeddingProvider::load(spec.embeddings_path));
  } else if (spec.provider_kind == "lexical") {
    provider = std::make_unique<LexicalTfidfProvider>(pool);
  } else {
    throw ConfigError("provider kind must be lexical or file, got '" +
                      spec.provider_kind + "'");
  }
  std::unique_ptr<CompletionClient> owned;
  if (!client) {
    owned = make_completion_client(spec.endpoint);
    client = owned.get();
  }
  IclRunConfig config = spec.icl;
  config.bootstrap_b = spec.metrics_b;
  config.level = spec.metrics_level;
  config.seed = mix_seed(spec.metrics_seed, index);
  if (config.decoding.model.empty()) config.decoding.model = spec.endpoint.model;
  config.decoding.temperature = spec.endpoint.temperature;
  config.decoding.max_tokens = spec.endpoint.max_tokens;

  IclRunResult run = run_icl_eval(pool, test, *provider, *client, config);
  run.report.model = spec.name;
  out.row.f1 = run.report.overall.f1;
  for (const auto& [name, bounds] : run.report.ci) {
    if (name == "f1") {
      out.row.lower = bounds[0];
      out.row.upper = bounds[1];
    }
  }
  nlohmann::ordered_json summary;
  summary["fraction"] = fraction;
  summary["pool_samples"] = pool.sequences.size();
  summary["f1"] = run.report.overall.f1;
  out.log_lines.push_back(summary.dump());
  for (const auto& record : run.records) {
    nlohmann::ordered_json line;
    line["fraction"] = fraction;
    line["target_id"] = record.target_id;
    line["prompt_hash"] = record.prompt_hash;
    line["status"] = record.failed ? "failed" : "ok";
    if (record.failed) {
      line["error"] = record.error;
    } else {
      line["raw_response"] = record.response.raw_text;
      nlohmann::ordered_json labels = nlohmann::ordered_json::array();
      for (const auto& label : record.response.repaired) {
        labels.push_back(to_string(label));
      }
      line["labels"] = labels;
    }
    out.log_lines.push_back(line.dump());
  }
  out.report = std::move(run.report);
  return out;
}

}  // namespace

ExperimentResult run_experiment_in_memory(const ExperimentSpec& spec,
                                          CompletionClient* client) {
  CorpusSplit train = load_corpus(spec.train_path, "train");
  CorpusSplit test = load_corpus(spec.test_path, "test");

  CorpusSplit validation;
  bool have_validation = false;
  if (spec.holdout > 0.0) {
    if (!spec.dev_path.empty()) {
      CorpusSplit dev = load_corpus(spec.dev_path, "dev");
      std::tie(train, validation) =
          merge_train_dev(train, dev, spec.holdout, spec.seed);
    } else {
      std::tie(train, validation) =
          stratified_holdout(train, spec.holdout, spec.seed);
    }
    have_validation = true;
  }

  DenseFeatureStore store;
  const DenseFeatureStore* store_ptr = nullptr;
  if (spec.model_kind == "crf" && spec.crf.mode == FeatureMode::Dense) {
    if (spec.embeddings_path.empty()) {
      throw ConfigError("dense CRF features need provider.embeddings (a dense"
                        " feature directory)");
    }
    store = DenseFeatureStore::load_dir(spec.embeddings_path);
    store_ptr = &store;
  }

  std::vector<double> fractions =
      spec.fractions.empty() ? std::vector<double>{1.0} : spec.fractions;

  ExperimentResult result;
  std::optional<EvalReport> last_report;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    FractionOutcome outcome =
        spec.model_kind == "crf"
            ? run_crf_fraction(spec, train,
                               have_validation ? &validation : nullptr, test,
                               fractions[i], i, store_ptr)
            : run_icl_fraction(spec, train, test, fractions[i], i, client);
    result.rows.push_back(outcome.row);
    for (auto& line : outcome.log_lines) {
      result.runlog_lines.push_back(std::move(line));
    }
    if (outcome.report) last_report = std::move(outcome.report);
  }
  if (!last_report) {
    throw ValidationError("every fraction was degenerate; nothing to report");
  }
  result.final_report = std::move(*last_report);
  return result;
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out << "fraction,n,f1,lo,hi\n";
  for (const auto& row : rows) {
    out << dtos(row.fraction) << ',' << row.samples << ',';
    if (row.f1) out << dtos(*row.f1);
    out << ',';
    if (row.lower) out << dtos(*row.lower);
    out << ',';
    if (row.upper) out << dtos(*row.upper);
    out << '\n';
  }
  return out.str();
}

void run_experiment(const ExperimentSpec& spec, CompletionClient* client) {
  if (spec.output_dir.empty()) {
    throw ConfigError("experiment spec has no output_dir");
  }
  ExperimentResult result = run_experiment_in_memory(spec, client);
  std::filesystem::create_directories(spec.output_dir);
  {
    std::ofstream out(spec.output_dir / "report.json", std::ios::binary);
    out << report_to_json(result.final_report) << '\n';
  }
  {
    std::ofstream out(spec.output_dir / "report.txt", std::ios::binary);
    out << compare_report_text({result.final_report});
  }
  {
    std::ofstream out(spec.output_dir / "curve.csv", std::ios::binary);
    out << curve_csv(result.rows);
  }
  {
    std::ofstream out(spec.output_dir / "runlog.jsonl", std::ios::binary);
    for (const auto& line : result.runlog_lines) out << line << '\n';
  }
}

namespace {

void require_same_split(const std::vector<EvalReport>& runs) {
  if (runs.empty()) throw ValidationError("no reports to compare");
  for (const auto& run : runs) {
    if (run.split != runs.front().split) {
      throw ValidationError("reports evaluate different splits: '" +
                            runs.front().split + "' vs '" + run.split + "'");
    }
  }
}

std::pair<long, long> best_and_second(const std::vector<EvalReport>& runs) {
  long best = -1, second = -1;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (best < 0 || runs[i].overall.f1 > runs[best].overall.f1) {
      second = best;
      best = static_cast<long>(i);
    } else if (second < 0 || runs[i].overall.f1 > runs[second].overall.f1) {
      second = static_cast<long>(i);
    }
  }
  return {best, second};
}

std::string ci_text(const EvalReport& report, const std::string& key) {
  for (const auto& [name, bounds] : report.ci) {
    if (name == key) {
      std::ostringstream out;
      out << std::fixed << std::setprecision(3) << '[' << bounds[0] << ", "
          << bounds[1] << ']';
      return out.str();
    }
  }
  return "-";
}

}  // namespace

std::string compare_report_text(const std::vector<EvalReport>& runs) {
  require_same_split(runs);
  auto [best, second] = best_and_second(runs);
  std::ostringstream out;
  out << std::left << std::setw(24) << "Model" << std::setw(11) << "Precision"
      << std::setw(9) << "Recall" << std::setw(9) << "F1" << std::setw(18)
      << "95% CI" << "Rank\n";
  out << std::string(75, '-') << '\n';
  out << std::fixed << std::setprecision(3);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    out << std::left << std::setw(24) << r.model << std::setw(11)
        << r.overall.precision << std::setw(9) << r.overall.recall
        << std::setw(9) << r.overall.f1 << std::setw(18) << ci_text(r, "f1")
        << (static_cast<long>(i) == best
                ? "best"
                : (static_cast<long>(i) == second ? "2nd" : ""))
        << '\n';
  }
  out << '\n' << "Per-entity:\n";
  out << std::left << std::setw(24) << "Model" << std::setw(18) << "Entity"
      << std::setw(11) << "Precision" << std::setw(9) << "Recall"
      << std::setw(9) << "F1" << "95% CI\n";
  out << std::string(89, '-') << '\n';
  for (const auto& r : runs) {
    for (const auto& score : r.per_type) {
      out << std::left << std::setw(24) << r.model << std::setw(18)
          << score.entity_type << std::setw(11) << score.precision
          << std::setw(9) << score.recall << std::setw(9) << score.f1
          << ci_text(r, score.entity_type + ".f1") << '\n';
    }
  }
  return out.str();
}

std::string compare_report_json(const std::vector<EvalReport>& runs) {
  require_same_split(runs);
  auto [best, second] = best_and_second(runs);
  nlohmann::ordered_json j;
  j["split"] = runs.front().split;
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    j["models"].push_back(nlohmann::ordered_json::parse(report_to_json(r)));
  }
  j["best"] = best;
  if (second >= 0) {
    j["second"] = second;
  } else {
    j["second"] = nullptr;
  }
  return j.dump(2);
}

std::vector<ErrorTag> load_error_tags(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open tags file " + path.string());
  std::vector<ErrorTag> tags;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
    ErrorTag tag;
    try {
      tag.sequence_id = j.at("sequence_id").get<std::string>();
      if (j.contains("position")) {
        tag.start = tag.end = j.at("position").get<std::size_t>();
      } else {
        tag.start = j.at("start").get<std::size_t>();
        tag.end = j.value("end", tag.start);
      }
      tag.category = j.at("category").get<std::string>();
      tag.note = j.value("note", "");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " +
                       e.what());
    }
    tags.push_back(std::move(tag));
  }
  return tags;
}

std::string tag_errors_json(const CorpusSplit& gold, const CorpusSplit& pred,
                            const std::vector<ErrorTag>& tags) {
  static const std::set<std::string> kCategories = {
      "label-confusion", "missed-implicit", "negation-false-positive",
      "guideline-violation", "other"};

  std::map<std::string, const TaggedSequence*> gold_by_id, pred_by_id;
  for (const auto& seq : gold.sequences) gold_by_id[seq.id] = &seq;
  for (const auto& seq : pred.sequences) pred_by_id[seq.id] = &seq;
  if (gold_by_id.size() != gold.sequences.size()) {
    throw ValidationError("duplicate ids in gold corpus");
  }

  // Disagreement sites, in corpus order.
  struct Site {
    std::string id;
    std::size_t position;
    std::string gold_label, pred_label;
  };
  std::vector<Site> sites;
  for (const auto& seq : gold.sequences) {
    auto it = pred_by_id.find(seq.id);
    if (it == pred_by_id.end()) {
      throw ValidationError("pred corpus is missing sequence '" + seq.id +
                            "'");
    }
    const TaggedSequence& p = *it->second;
    if (p.tokens != seq.tokens) {
      throw ValidationError("token stream differs for sequence '" + seq.id +
                            "'");
    }
    for (std::size_t t = 0; t < seq.labels.size(); ++t) {
      if (!(seq.labels[t] == p.labels[t])) {
        sites.push_back({seq.id, t, to_string(seq.labels[t]),
                         to_string(p.labels[t])});
      }
    }
  }

  std::map<std::string, std::size_t> category_counts;
  std::vector<std::string> warnings;
  std::vector<bool> covered(sites.size(), false);
  nlohmann::ordered_json tags_out = nlohmann::ordered_json::array();
  for (const auto& tag : tags) {
    if (!kCategories.count(tag.category)) {
      throw ValidationError("unknown error category '" + tag.category + "'");
    }
    auto git = gold_by_id.find(tag.sequence_id);
    if (git == gold_by_id.end()) {
      throw ValidationError("tag references unknown sequence '" +
                            tag.sequence_id + "'");
    }
    if (tag.start > tag.end || tag.end >= git->second->tokens.size()) {
      throw ValidationError("tag span out of range for sequence '" +
                            tag.sequence_id + "'");
    }
    ++category_counts[tag.category];
    bool hits = false;
    for (std::size_t s = 0; s < sites.size(); ++s) {
      if (sites[s].id == tag.sequence_id && sites[s].position >= tag.start &&
          sites[s].position <= tag.end) {
        covered[s] = true;
        hits = true;
      }
    }
    if (!hits) {
      warnings.push_back("tag on sequence '" + tag.sequence_id + "' [" +
                         std::to_string(tag.start) + ", " +
                         std::to_string(tag.end) +
                         "] covers no disagreement site");
    }
    nlohmann::ordered_json t;
    t["sequence_id"] = tag.sequence_id;
    t["start"] = tag.start;
    t["end"] = tag.end;
    t["category"] = tag.category;
    if (!tag.note.empty()) t["note"] = tag.note;
    tags_out.push_back(std::move(t));
  }

  nlohmann::ordered_json residue = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < sites.size(); ++s) {
    if (covered[s]) continue;
    const Site& site = sites[s];
    const auto& tokens = gold_by_id[site.id]->tokens;
    const std::size_t lo = site.position >= 5 ? site.position - 5 : 0;
    const std::size_t hi = std::min(tokens.size() - 1, site.position + 5);
    std::string context;
    for (std::size_t t = lo; t <= hi; ++t) {
      if (t > lo) context += ' ';
      context += tokens[t];
    }
    nlohmann::ordered_json r;
    r["sequence_id"] = site.id;
    r["position"] = site.position;
    r["gold"] = site.gold_label;
    r["pred"] = site.pred_label;
    r["context"] = context;
    residue.push_back(std::move(r));
  }

  nlohmann::ordered_json j;
  j["disagreement_sites"] = sites.size();
  j["category_counts"] = nlohmann::ordered_json::object();
  for (const auto& [category, count] : category_counts) {
    j["category_counts"][category] = count;
  }
  j["tags"] = tags_out;
  j["warnings"] = warnings;
  j["untagged_residue"] = residue;
  return j.dump(2);
}

}  // namespace impacts
