#include "impacts/crf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "impacts/errors.hpp"
#include "impacts/hash.hpp"
#include "impacts/rng.hpp"

namespace impacts {

namespace {

double log_sum_exp(const std::vector<double>& xs) {
  double m = kLogZero;
  for (double x : xs) m = std::max(m, x);
  if (m == kLogZero) return kLogZero;
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - m);
  return m + std::log(sum);
}

}  // namespace

std::size_t CrfModel::label_index(const Label& label) const {
  const std::string text = to_string(label);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == text) return i;
  }
  throw ValidationError("label '" + text + "' outside the model alphabet");
}

bool CrfModel::transition_allowed(std::size_t prev, std::size_t next) const {
  if (!constrained) return true;
  const Label& to = parsed_labels[next];
  if (to.kind != LabelKind::Inside) return true;
  const Label& from = parsed_labels[prev];
  return from.kind != LabelKind::Outside &&
         from.entity_type == to.entity_type;
}

bool CrfModel::start_allowed(std::size_t label) const {
  if (!constrained) return true;
  return parsed_labels[label].kind != LabelKind::Inside;
}

CrfModel make_crf_model(std::vector<std::string> entity_types,
                        FeatureMode mode, std::int32_t feature_dim,
                        bool constrained, double l2) {
  std::sort(entity_types.begin(), entity_types.end());
  entity_types.erase(std::unique(entity_types.begin(), entity_types.end()),
                     entity_types.end());
  CrfModel model;
  model.entity_types = std::move(entity_types);
  model.labels.push_back("O");
  for (const auto& type : model.entity_types) {
    model.labels.push_back("B-" + type);
    model.labels.push_back("I-" + type);
  }
  for (const auto& text : model.labels) {
    model.parsed_labels.push_back(parse_label(text));
  }
  model.mode = mode;
  model.feature_dim = feature_dim;
  model.constrained = constrained;
  model.l2 = l2;
  model.weights.assign(model.weight_count(), 0.0);
  return model;
}

namespace {

// Emission score table: scores[t][y].
std::vector<std::vector<double>> emission_scores(const CrfModel& model,
                                                 const SequenceFeatures& feats) {
  const std::size_t m = model.num_labels();
  std::vector<std::vector<double>> scores(feats.size(),
                                          std::vector<double>(m, 0.0));
  for (std::size_t t = 0; t < feats.size(); ++t) {
    for (const auto& [feature, value] : feats[t]) {
      if (feature < 0 || feature >= model.feature_dim) {
        throw ValidationError("feature id " + std::to_string(feature) +
                              " outside the model's dimension " +
                              std::to_string(model.feature_dim));
      }
      for (std::size_t y = 0; y < m; ++y) {
        scores[t][y] += model.weights[model.emission_at(feature, y)] * value;
      }
    }
  }
  return scores;
}

struct ForwardResult {
  std::vector<std::vector<double>> alpha;
  double log_z = 0.0;
};

ForwardResult forward_pass(const CrfModel& model,
                           const std::vector<std::vector<double>>& emit) {
  const std::size_t n = emit.size();
  const std::size_t m = model.num_labels();
  ForwardResult result;
  result.alpha.assign(n, std::vector<double>(m, kLogZero));
  for (std::size_t y = 0; y < m; ++y) {
    if (!model.start_allowed(y)) continue;
    result.alpha[0][y] = model.weights[model.start_at(y)] + emit[0][y];
  }
  std::vector<double> terms(m);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < m; ++y) {
      for (std::size_t p = 0; p < m; ++p) {
        terms[p] = model.transition_allowed(p, y)
                       ? result.alpha[t - 1][p] +
                             model.weights[model.transition_at(p, y)]
                       : kLogZero;
      }
      double acc = log_sum_exp(terms);
      result.alpha[t][y] = acc == kLogZero ? kLogZero : acc + emit[t][y];
    }
  }
  std::vector<double> finals(m);
  for (std::size_t y = 0; y < m; ++y) {
    finals[y] = result.alpha[n - 1][y] == kLogZero
                    ? kLogZero
                    : result.alpha[n - 1][y] + model.weights[model.stop_at(y)];
  }
  result.log_z = log_sum_exp(finals);
  return result;
}

std::vector<std::vector<double>> backward_pass(
    const CrfModel& model, const std::vector<std::vector<double>>& emit) {
  const std::size_t n = emit.size();
  const std::size_t m = model.num_labels();
  std::vector<std::vector<double>> beta(n, std::vector<double>(m, kLogZero));
  for (std::size_t y = 0; y < m; ++y) {
    beta[n - 1][y] = model.weights[model.stop_at(y)];
  }
  std::vector<double> terms(m);
  for (std::size_t t = n - 1; t > 0; --t) {
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t y = 0; y < m; ++y) {
        terms[y] = model.transition_allowed(p, y)
                       ? model.weights[model.transition_at(p, y)] +
                             emit[t][y] + beta[t][y]
                       : kLogZero;
      }
      beta[t - 1][p] = log_sum_exp(terms);
    }
  }
  return beta;
}

void check_features(const CrfModel& model, const SequenceFeatures& feats) {
  if (feats.empty()) throw ValidationError("empty feature sequence");
}

}  // namespace

double forward_logz(const CrfModel& model, const SequenceFeatures& feats) {
  check_features(model, feats);
  return forward_pass(model, emission_scores(model, feats)).log_z;
}

SequenceScore score_path(const CrfModel& model, const SequenceFeatures& feats,
                         const std::vector<Label>& labels) {
  check_features(model, feats);
  if (feats.size() != labels.size()) {
    throw ValidationError("feature/label length mismatch");
  }
  auto emit = emission_scores(model, feats);
  SequenceScore score;
  score.log_z = forward_pass(model, emit).log_z;

  std::vector<std::size_t> path;
  path.reserve(labels.size());
  for (const auto& label : labels) path.push_back(model.label_index(label));

  bool valid = model.start_allowed(path[0]);
  for (std::size_t t = 1; valid && t < path.size(); ++t) {
    valid = model.transition_allowed(path[t - 1], path[t]);
  }
  if (!valid) {
    score.path_score = kLogZero;
    score.log_prob = kLogZero;
    return score;
  }
  double total = model.weights[model.start_at(path[0])] + emit[0][path[0]];
  for (std::size_t t = 1; t < path.size(); ++t) {
    total += model.weights[model.transition_at(path[t - 1], path[t])] +
             emit[t][path[t]];
  }
  total += model.weights[model.stop_at(path.back())];
  score.path_score = total;
  score.log_prob = total - score.log_z;
  return score;
}

Gradient nll_and_gradient(const CrfModel& model, const TrainingBatch& batch,
                          const std::vector<std::string>* sequence_ids) {
  const std::size_t m = model.num_labels();
  Gradient grad;
  grad.values.assign(model.weight_count(), 0.0);

  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& [feats, labels] = batch[s];
    const std::string seq_name =
        sequence_ids && s < sequence_ids->size() ? (*sequence_ids)[s]
                                                 : std::to_string(s);
    check_features(model, feats);
    if (feats.size() != labels.size()) {
      throw ValidationError("sequence '" + seq_name +
                            "': feature/label length mismatch");
    }
    const std::size_t n = feats.size();
    auto emit = emission_scores(model, feats);
    ForwardResult fwd = forward_pass(model, emit);
    auto beta = backward_pass(model, emit);

    std::vector<std::size_t> path;
    path.reserve(n);
    for (const auto& label : labels) path.push_back(model.label_index(label));
    if (model.constrained) {
      bool valid = model.start_allowed(path[0]);
      for (std::size_t t = 1; valid && t < n; ++t) {
        valid = model.transition_allowed(path[t - 1], path[t]);
      }
      if (!valid) {
        throw ValidationError("sequence '" + seq_name +
                              "' is BIO-invalid under a constrained model");
      }
    }

    double path_score =
        model.weights[model.start_at(path[0])] + emit[0][path[0]];
    for (std::size_t t = 1; t < n; ++t) {
      path_score += model.weights[model.transition_at(path[t - 1], path[t])] +
                    emit[t][path[t]];
    }
    path_score += model.weights[model.stop_at(path.back())];
    const double log_prob = path_score - fwd.log_z;
    if (!std::isfinite(fwd.log_z) || !std::isfinite(log_prob)) {
      throw NumericError("non-finite likelihood for sequence '" + seq_name +
                         "'");
    }
    grad.loss -= log_prob;

    // Node marginals -> emission/start/stop expectations.
    std::vector<double> node(m);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t y = 0; y < m; ++y) {
        const double a = fwd.alpha[t][y];
        node[y] = a == kLogZero ? 0.0 : std::exp(a + beta[t][y] - fwd.log_z);
      }
      for (const auto& [feature, value] : feats[t]) {
        for (std::size_t y = 0; y < m; ++y) {
          if (node[y] != 0.0) {
            grad.values[model.emission_at(feature, y)] += node[y] * value;
          }
        }
      }
      if (t == 0) {
        for (std::size_t y = 0; y < m; ++y) {
          grad.values[model.start_at(y)] += node[y];
        }
      }
      if (t == n - 1) {
        for (std::size_t y = 0; y < m; ++y) {
          grad.values[model.stop_at(y)] += node[y];
        }
      }
    }
    // Edge marginals -> transition expectations.
    for (std::size_t t = 1; t < n; ++t) {
      for (std::size_t p = 0; p < m; ++p) {
        if (fwd.alpha[t - 1][p] == kLogZero) continue;
        for (std::size_t y = 0; y < m; ++y) {
          if (!model.transition_allowed(p, y)) continue;
          const double logm = fwd.alpha[t - 1][p] +
                              model.weights[model.transition_at(p, y)] +
                              emit[t][y] + beta[t][y] - fwd.log_z;
          grad.values[model.transition_at(p, y)] += std::exp(logm);
        }
      }
    }

    // Observed counts.
    for (std::size_t t = 0; t < n; ++t) {
      for (const auto& [feature, value] : feats[t]) {
        grad.values[model.emission_at(feature, path[t])] -= value;
      }
    }
    grad.values[model.start_at(path[0])] -= 1.0;
    grad.values[model.stop_at(path.back())] -= 1.0;
    for (std::size_t t = 1; t < n; ++t) {
      grad.values[model.transition_at(path[t - 1], path[t])] -= 1.0;
    }
  }

  if (model.l2 > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
      sq += model.weights[i] * model.weights[i];
      grad.values[i] += model.l2 * model.weights[i];
    }
    grad.loss += 0.5 * model.l2 * sq;
  }
  if (!std::isfinite(grad.loss)) throw NumericError("non-finite batch loss");
  return grad;
}

std::vector<Label> viterbi(const CrfModel& model,
                           const SequenceFeatures& feats) {
  check_features(model, feats);
  const std::size_t n = feats.size();
  const std::size_t m = model.num_labels();
  auto emit = emission_scores(model, feats);

  std::vector<std::vector<double>> delta(n, std::vector<double>(m, kLogZero));
  std::vector<std::vector<std::size_t>> back(n, std::vector<std::size_t>(m, 0));
  for (std::size_t y = 0; y < m; ++y) {
    if (!model.start_allowed(y)) continue;
    delta[0][y] = model.weights[model.start_at(y)] + emit[0][y];
  }
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < m; ++y) {
      double best = kLogZero;
      std::size_t arg = 0;
      for (std::size_t p = 0; p < m; ++p) {
        if (delta[t - 1][p] == kLogZero) continue;
        if (!model.transition_allowed(p, y)) continue;
        const double cand =
            delta[t - 1][p] + model.weights[model.transition_at(p, y)];
        if (cand > best) {  // strict: ties keep the lowest p
          best = cand;
          arg = p;
        }
      }
      if (best == kLogZero) continue;
      delta[t][y] = best + emit[t][y];
      back[t][y] = arg;
    }
  }
  double best = kLogZero;
  std::size_t arg = 0;
  for (std::size_t y = 0; y < m; ++y) {
    if (delta[n - 1][y] == kLogZero) continue;
    const double cand = delta[n - 1][y] + model.weights[model.stop_at(y)];
    if (cand > best) {
      best = cand;
      arg = y;
    }
  }
  if (best == kLogZero) {
    throw NumericError("no admissible label path");  // unreachable: O is valid
  }
  std::vector<std::size_t> path(n);
  path[n - 1] = arg;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  std::vector<Label> out;
  out.reserve(n);
  for (std::size_t y : path) out.push_back(model.parsed_labels[y]);
  return out;
}

SequenceFeatures model_features(const CrfModel& model,
                                const TaggedSequence& seq,
                                const DenseFeatureStore* store) {
  if (model.mode == FeatureMode::Discrete) {
    auto extractor = DiscreteFeatureExtractor::from_names(model.feature_names);
    return extractor.extract(seq.tokens);
  }
  if (!store) {
    throw ConfigError("dense model needs a dense feature store");
  }
  if (store->dimension() != model.feature_dim) {
    throw ValidationError("dense store dimension " +
                          std::to_string(store->dimension()) +
                          " does not match model dimension " +
                          std::to_string(model.feature_dim));
  }
  return store->features_for(seq.id, seq.tokens.size());
}

namespace {

double l2_norm(const std::vector<double>& xs) {
  double sq = 0.0;
  for (double x : xs) sq += x * x;
  return std::sqrt(sq);
}

double batch_nll(const CrfModel& model, const TrainingBatch& batch) {
  double total = 0.0;
  for (const auto& [feats, labels] : batch) {
    total -= score_path(model, feats, labels).log_prob;
  }
  if (!std::isfinite(total)) throw NumericError("non-finite likelihood");
  return total;
}

// Training objective: batch NLL plus the l2 term.
double objective(const CrfModel& model, const TrainingBatch& batch) {
  double total = batch_nll(model, batch);
  if (model.l2 > 0.0) {
    double sq = 0.0;
    for (double w : model.weights) sq += w * w;
    total += 0.5 * model.l2 * sq;
  }
  return total;
}

}  // namespace

TrainResult train_crf(const CorpusSplit& train, const TrainConfig& config,
                      const CorpusSplit* validation,
                      const DenseFeatureStore* store) {
  if (train.sequences.empty()) throw ValidationError("empty training corpus");

  std::vector<std::string> types = train.entity_types();
  if (validation) {
    for (const auto& t : validation->entity_types()) {
      if (std::find(types.begin(), types.end(), t) == types.end()) {
        types.push_back(t);
      }
    }
  }

  CrfModel model;
  if (config.mode == FeatureMode::Discrete) {
    DiscreteFeatureExtractor extractor;
    extractor.fit(train);
    model = make_crf_model(types, FeatureMode::Discrete,
                           extractor.dimension(), config.constrained,
                           config.l2);
    model.feature_names = extractor.feature_names();
  } else {
    if (!store) throw ConfigError("dense training needs a feature store");
    model = make_crf_model(types, FeatureMode::Dense, store->dimension(),
                           config.constrained, config.l2);
  }

  if (config.init_scale > 0.0) {
    Rng rng(config.seed);
    for (auto& w : model.weights) w = rng.gaussian(0.0, config.init_scale);
  }

  auto make_batch = [&](const CorpusSplit& corpus, TrainingBatch& batch,
                        std::vector<std::string>& ids) {
    for (const auto& seq : corpus.sequences) {
      validate_bio(seq, ValidateMode::Strict);
      batch.emplace_back(model_features(model, seq, store), seq.labels);
      ids.push_back(seq.id);
    }
  };
  TrainingBatch batch;
  std::vector<std::string> ids;
  make_batch(train, batch, ids);
  TrainingBatch val_batch;
  std::vector<std::string> val_ids;
  if (validation) make_batch(*validation, val_batch, val_ids);

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  result.stop_reason = "max_epochs";

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Gradient grad = nll_and_gradient(model, batch, &ids);
    if (config.clip_norm > 0.0) {
      const double norm = l2_norm(grad.values);
      if (norm > config.clip_norm) {
        const double scale = config.clip_norm / norm;
        for (auto& g : grad.values) g *= scale;
      }
    }
    const double grad_norm = l2_norm(grad.values);
    if (grad_norm < 1e-12) {
      result.stop_reason = "gradient_converged";
      break;
    }

    double step = 0.0;
    if (config.optimizer == TrainConfig::Optimizer::LineSearch) {
      // Backtracking Armijo on the training objective.
      const double gg = grad_norm * grad_norm;
      double t = 1.0;
      bool accepted = false;
      std::vector<double> saved = model.weights;
      for (int halving = 0; halving < 60; ++halving) {
        for (std::size_t i = 0; i < model.weights.size(); ++i) {
          model.weights[i] = saved[i] - t * grad.values[i];
        }
        double candidate = objective(model, batch);
        if (candidate <= grad.loss - 1e-4 * t * gg) {
          accepted = true;
          step = t;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        model.weights = saved;
        result.stop_reason = "line_search_exhausted";
        break;
      }
    } else {
      step = config.learning_rate;
      if (config.linear_decay) {
        step *= 1.0 - static_cast<double>(epoch - 1) /
                          static_cast<double>(config.max_epochs);
      }
      for (std::size_t i = 0; i < model.weights.size(); ++i) {
        model.weights[i] -= step * grad.values[i];
      }
    }
    for (double w : model.weights) {
      if (!std::isfinite(w)) throw NumericError("weights diverged");
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = grad.loss;
    stats.step = step;
    stats.validation_loss =
        validation ? batch_nll(model, val_batch) : objective(model, batch);
    result.log.push_back(stats);

    const bool improved =
        !std::isfinite(best_val) ||
        stats.validation_loss <
            best_val - config.tol * std::max(1.0, std::abs(best_val));
    if (improved) {
      best_val = stats.validation_loss;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= config.patience) {
        result.stop_reason = "early_stopping";
        break;
      }
    }
  }
  result.model = std::move(model);
  return result;
}

std::vector<TaggedSequence> predict(const CrfModel& model,
                                    const CorpusSplit& corpus,
                                    const DenseFeatureStore* store) {
  std::vector<TaggedSequence> out;
  out.reserve(corpus.sequences.size());
  for (const auto& seq : corpus.sequences) {
    TaggedSequence pred;
    pred.id = seq.id;
    pred.tokens = seq.tokens;
    pred.labels = viterbi(model, model_features(model, seq, store));
    out.push_back(std::move(pred));
  }
  return out;
}

namespace {

std::string config_hash(const CrfModel& model) {
  std::ostringstream canon;
  canon << (model.mode == FeatureMode::Discrete ? "discrete" : "dense") << '|'
        << model.feature_dim << '|' << model.constrained << '|' << model.l2;
  for (const auto& label : model.labels) canon << '|' << label;
  return hex64(fnv1a64(canon.str()));
}

}  // namespace

void save_model(const CrfModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "impacts-crf";
  j["version"] = 1;
  j["entity_types"] = model.entity_types;
  j["labels"] = model.labels;
  j["mode"] = model.mode == FeatureMode::Discrete ? "discrete" : "dense";
  j["feature_dim"] = model.feature_dim;
  j["feature_names"] = model.feature_names;
  j["constrained"] = model.constrained;
  j["l2"] = model.l2;
  j["weights"] = model.weights;
  j["config_hash"] = config_hash(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write model file " + path.string());
  out << j.dump() << '\n';
}

CrfModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "impacts-crf" || j.value("version", 0) != 1) {
    throw ParseError(path.string() + ": not an impacts-crf v1 checkpoint");
  }
  CrfModel model = make_crf_model(
      j.at("entity_types").get<std::vector<std::string>>(),
      j.at("mode").get<std::string>() == "dense" ? FeatureMode::Dense
                                                 : FeatureMode::Discrete,
      j.at("feature_dim").get<std::int32_t>(), j.at("constrained").get<bool>(),
      j.at("l2").get<double>());
  model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  model.weights = j.at("weights").get<std::vector<double>>();
  if (model.weights.size() != model.weight_count()) {
    throw ParseError(path.string() + ": weight vector has wrong length");
  }
  if (j.at("labels").get<std::vector<std::string>>() != model.labels) {
    throw ParseError(path.string() + ": label alphabet mismatch");
  }
  return model;
}

}  // namespace impacts
