#ifndef IMPACTS_HARNESS_HPP
#define IMPACTS_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "impacts/bio.hpp"
#include "impacts/crf.hpp"
#include "impacts/icl.hpp"
#include "impacts/metrics.hpp"

namespace impacts {

/// Everything a run needs; a spec plus corpus files determines every output
/// byte (given a replay or stub endpoint for ICL).
struct ExperimentSpec {
  std::string name = "experiment";
  std::filesystem::path train_path;
  std::filesystem::path dev_path;   // optional
  std::filesystem::path test_path;
  std::string model_kind = "crf";   // crf | icl
  TrainConfig crf;
  IclRunConfig icl;
  EndpointConfig endpoint;
  std::string provider_kind = "lexical";  // lexical | file
  std::filesystem::path embeddings_path;  // provider_kind == file
  std::uint64_t metrics_b = 1000;
  double metrics_level = 0.95;
  std::uint64_t metrics_seed = 0;
  std::uint64_t seed = 0;  // master seed for per-fraction subsampling
  std::vector<double> fractions;  // empty = {1.0}
  double holdout = 0.0;           // >0 carves a validation split
  std::filesystem::path output_dir;
};

ExperimentSpec experiment_spec_from_json(const std::string& text,
                                         const std::filesystem::path& base_dir);
ExperimentSpec load_experiment_spec(const std::filesystem::path& path);

/// Pools the two splits and carves a stratified validation set. The outputs
/// partition the merged set; sequence ids must be unique across both inputs.
std::pair<CorpusSplit, CorpusSplit> merge_train_dev(const CorpusSplit& train,
                                                    const CorpusSplit& dev,
                                                    double holdout_fraction,
                                                    std::uint64_t seed);

struct CurveRow {
  double fraction = 0.0;
  std::size_t samples = 0;
  bool degenerate = false;  // no entities in the sampled training set
  std::optional<double> f1, lower, upper;
};

struct ExperimentResult {
  std::vector<CurveRow> rows;
  EvalReport final_report;  // last fraction
  std::vector<std::string> runlog_lines;
};

/// Trains (or prompts) per fraction with seeds derived from (master seed,
/// fraction index), evaluating each on the fixed test split.
ExperimentResult run_experiment_in_memory(const ExperimentSpec& spec,
                                          CompletionClient* client = nullptr);

/// run_experiment_in_memory plus file outputs under spec.output_dir:
/// report.json, report.txt, curve.csv, runlog.jsonl.
void run_experiment(const ExperimentSpec& spec,
                    CompletionClient* client = nullptr);

std::string curve_csv(const std::vector<CurveRow>& rows);

/// Table rows per model (precision/recall/F1/CI) plus per-entity sub-rows,
/// best and second-best F1 marked; earlier runs win ties. All reports must
/// share the same split id.
std::string compare_report_text(const std::vector<EvalReport>& runs);
std::string compare_report_json(const std::vector<EvalReport>& runs);

struct ErrorTag {
  std::string sequence_id;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string category;  // label-confusion | missed-implicit |
                         // negation-false-positive | guideline-violation |
                         // other
  std::string note;
};

std::vector<ErrorTag> load_error_tags(const std::filesystem::path& path);

/// Joins machine-found disagreement sites (gold label != pred label) with
/// human tags: per-category counts, warnings for tags on agreeing
/// positions, and the untagged residue with +-5 tokens of context.
std::string tag_errors_json(const CorpusSplit& gold, const CorpusSplit& pred,
                            const std::vector<ErrorTag>& tags);

}  // namespace impacts

#endif  // IMPACTS_HARNESS_HPP
