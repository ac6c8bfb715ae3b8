#ifndef IMPACTS_FEATURES_HPP
#define IMPACTS_FEATURES_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "impacts/bio.hpp"

namespace impacts {

/// Sparse per-token feature vector: (feature id, value) pairs, ids unique.
using FeatureVector = std::vector<std::pair<std::int32_t, double>>;
using SequenceFeatures = std::vector<FeatureVector>;

enum class FeatureMode { Discrete, Dense };

/// Template set for the discrete baseline: token identity, lowercase form,
/// 1-3 char prefixes/suffixes, word shape, digit/punctuation flags and a
/// +-2 token identity window, plus an always-on bias.
std::vector<std::string> token_feature_strings(
    const std::vector<std::string>& tokens, std::size_t position);

class DiscreteFeatureExtractor {
 public:
  DiscreteFeatureExtractor() = default;

  /// Builds the feature index from a corpus, ids in first-seen order.
  void fit(const CorpusSplit& corpus);

  /// Rebuilds an extractor from a checkpointed id -> name table.
  static DiscreteFeatureExtractor from_names(std::vector<std::string> names);

  /// Features for every token; unknown feature strings are dropped.
  SequenceFeatures extract(const std::vector<std::string>& tokens) const;

  std::int32_t dimension() const {
    return static_cast<std::int32_t>(names_.size());
  }
  const std::vector<std::string>& feature_names() const { return names_; }

 private:
  std::map<std::string, std::int32_t> index_;
  std::vector<std::string> names_;
};

/// Externally computed per-token vectors, keyed by sequence id. On disk each
/// sequence is a row-major n x d matrix of little-endian float32 in
/// `<id>.f32` with a JSON sidecar `<id>.json` holding {id, n, d}.
class DenseFeatureStore {
 public:
  void add(const std::string& id, std::size_t n, std::size_t d,
           std::vector<float> values);

  static DenseFeatureStore load_dir(const std::filesystem::path& dir);
  void save_dir(const std::filesystem::path& dir) const;

  /// Throws ValidationError for unknown ids or a token-count mismatch.
  SequenceFeatures features_for(const std::string& id,
                                std::size_t expected_tokens) const;

  std::int32_t dimension() const { return dimension_; }
  bool empty() const { return matrices_.empty(); }

 private:
  struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;
  };
  std::map<std::string, Matrix> matrices_;
  std::int32_t dimension_ = 0;
};

}  // namespace impacts

#endif  // IMPACTS_FEATURES_HPP
