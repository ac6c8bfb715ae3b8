#ifndef IMPACTS_CRF_HPP
#define IMPACTS_CRF_HPP

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "impacts/bio.hpp"
#include "impacts/features.hpp"

namespace impacts {

/// Log-domain zero: the score of anything forbidden. Set explicitly, never
/// produced by overflow.
constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Linear-chain CRF over per-token feature vectors. The label alphabet is
/// O followed by B-T/I-T for each entity type in sorted order; weights are
/// a flat vector laid out as [emission F*m | transition m*m | start m |
/// stop m]. When constrained, transitions that strict BIO validation would
/// reject score kLogZero both at decode time and inside Z.
struct CrfModel {
  std::vector<std::string> entity_types;
  std::vector<std::string> labels;
  std::vector<Label> parsed_labels;
  FeatureMode mode = FeatureMode::Discrete;
  std::vector<std::string> feature_names;  // discrete mode id -> name
  std::int32_t feature_dim = 0;
  bool constrained = true;
  double l2 = 0.01;
  std::vector<double> weights;

  std::size_t num_labels() const { return labels.size(); }
  std::size_t weight_count() const {
    const std::size_t m = labels.size();
    return static_cast<std::size_t>(feature_dim) * m + m * m + 2 * m;
  }
  std::size_t emission_at(std::int32_t feature, std::size_t label) const {
    return static_cast<std::size_t>(feature) * labels.size() + label;
  }
  std::size_t transition_at(std::size_t prev, std::size_t next) const {
    const std::size_t m = labels.size();
    return static_cast<std::size_t>(feature_dim) * m + prev * m + next;
  }
  std::size_t start_at(std::size_t label) const {
    const std::size_t m = labels.size();
    return static_cast<std::size_t>(feature_dim) * m + m * m + label;
  }
  std::size_t stop_at(std::size_t label) const {
    const std::size_t m = labels.size();
    return static_cast<std::size_t>(feature_dim) * m + m * m + m + label;
  }

  /// Index into labels; throws ValidationError for labels outside the
  /// alphabet.
  std::size_t label_index(const Label& label) const;

  bool transition_allowed(std::size_t prev, std::size_t next) const;
  bool start_allowed(std::size_t label) const;
};

CrfModel make_crf_model(std::vector<std::string> entity_types,
                        FeatureMode mode, std::int32_t feature_dim,
                        bool constrained = true, double l2 = 0.01);

struct SequenceScore {
  double log_z = 0.0;
  double path_score = 0.0;
  double log_prob = 0.0;
};

/// Unnormalized path score (emissions + transitions incl. start/stop),
/// log Z via the forward algorithm, and their difference. A constrained
/// model scores BIO-invalid paths at kLogZero.
SequenceScore score_path(const CrfModel& model, const SequenceFeatures& feats,
                         const std::vector<Label>& labels);

/// Log normalizer by log-sum-exp dynamic programming.
double forward_logz(const CrfModel& model, const SequenceFeatures& feats);

struct Gradient {
  double loss = 0.0;
  std::vector<double> values;
};

using TrainingBatch =
    std::vector<std::pair<SequenceFeatures, std::vector<Label>>>;

/// Negative log-likelihood plus (l2/2)*||w||^2, with its exact gradient:
/// expected feature counts from forward-backward marginals minus observed
/// counts, plus l2*w. Throws NumericError naming the sequence if anything
/// goes non-finite.
Gradient nll_and_gradient(const CrfModel& model, const TrainingBatch& batch,
                          const std::vector<std::string>* sequence_ids = nullptr);

struct TrainConfig {
  enum class Optimizer { LineSearch, FixedStep };
  FeatureMode mode = FeatureMode::Discrete;
  bool constrained = true;
  double l2 = 0.01;               // mirrors the reference weight decay
  Optimizer optimizer = Optimizer::LineSearch;
  int max_epochs = 100;
  int patience = 3;               // early stopping, reference default
  double learning_rate = 0.5;     // fixed-step only
  bool linear_decay = true;       // fixed-step only
  double clip_norm = 0.0;         // 0 disables; 1.0 mirrors the reference
  double init_scale = 0.0;        // 0 = zero init
  std::uint64_t seed = 0;
  double tol = 1e-9;              // relative loss improvement floor
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double step = 0.0;
};

struct TrainResult {
  CrfModel model;
  std::vector<EpochStats> log;
  std::string stop_reason;
};

/// Full-batch training. Line search backtracks until the training objective
/// decreases, so accepted steps never increase it. Early stopping watches
/// the validation NLL (training objective when no validation split is
/// given) with the configured patience. Deterministic under config.seed.
TrainResult train_crf(const CorpusSplit& train, const TrainConfig& config,
                      const CorpusSplit* validation = nullptr,
                      const DenseFeatureStore* store = nullptr);

/// Highest-scoring label sequence; ties resolved toward the lowest label
/// index at every backtrack step. Constrained models only consider
/// BIO-valid paths.
std::vector<Label> viterbi(const CrfModel& model,
                           const SequenceFeatures& feats);

/// Feature extraction plus viterbi per sequence; ids and tokens pass
/// through untouched. Dense models need the store they were trained with.
std::vector<TaggedSequence> predict(const CrfModel& model,
                                    const CorpusSplit& corpus,
                                    const DenseFeatureStore* store = nullptr);

/// Per-sequence features as used by train/predict.
SequenceFeatures model_features(const CrfModel& model,
                                const TaggedSequence& seq,
                                const DenseFeatureStore* store = nullptr);

void save_model(const CrfModel& model, const std::filesystem::path& path);
CrfModel load_model(const std::filesystem::path& path);

}  // namespace impacts

#endif  // IMPACTS_CRF_HPP
