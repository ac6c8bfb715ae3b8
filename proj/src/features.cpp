#include "impacts/features.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "json.hpp"

#include "impacts/errors.hpp"

namespace impacts {

namespace {

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string word_shape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (std::isupper(c)) out.push_back('X');
    else if (std::islower(c)) out.push_back('x');
    else if (std::isdigit(c)) out.push_back('d');
    else out.push_back(static_cast<char>(c));
  }
  return out;
}

bool all_of_token(const std::string& s, int (*pred)(int)) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [&](unsigned char c) {
    return pred(c) != 0;
  });
}

const std::string kBos = "<s>";
const std::string kEos = "</s>";

}  // namespace

std::vector<std::string> token_feature_strings(
    const std::vector<std::string>& tokens, std::size_t position) {
  const std::string& tok = tokens[position];
  std::vector<std::string> feats;
  feats.reserve(16);
  feats.push_back("bias");
  feats.push_back("w0=" + tok);
  feats.push_back("lw0=" + lowercase(tok));
  for (std::size_t k = 1; k <= 3 && k <= tok.size(); ++k) {
    feats.push_back("pre" + std::to_string(k) + "=" + tok.substr(0, k));
    feats.push_back("suf" + std::to_string(k) + "=" +
                    tok.substr(tok.size() - k));
  }
  feats.push_back("shape=" + word_shape(tok));
  feats.push_back(std::string("isdigit=") +
                  (all_of_token(tok, std::isdigit) ? "1" : "0"));
  feats.push_back(std::string("ispunct=") +
                  (all_of_token(tok, std::ispunct) ? "1" : "0"));
  for (int offset : {-2, -1, 1, 2}) {
    const long j = static_cast<long>(position) + offset;
    const std::string& neighbor =
        j < 0 ? kBos
              : (j >= static_cast<long>(tokens.size()) ? kEos : tokens[j]);
    feats.push_back("w" + std::to_string(offset) + "=" + neighbor);
  }
  return feats;
}

void DiscreteFeatureExtractor::fit(const CorpusSplit& corpus) {
  index_.clear();
  names_.clear();
  for (const auto& seq : corpus.sequences) {
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      for (auto& name : token_feature_strings(seq.tokens, t)) {
        if (index_.emplace(name, static_cast<std::int32_t>(names_.size()))
                .second) {
          names_.push_back(std::move(name));
        }
      }
    }
  }
}

DiscreteFeatureExtractor DiscreteFeatureExtractor::from_names(
    std::vector<std::string> names) {
  DiscreteFeatureExtractor out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    out.index_.emplace(names[i], static_cast<std::int32_t>(i));
  }
  out.names_ = std::move(names);
  return out;
}

SequenceFeatures DiscreteFeatureExtractor::extract(
    const std::vector<std::string>& tokens) const {
  SequenceFeatures out(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (const auto& name : token_feature_strings(tokens, t)) {
      auto it = index_.find(name);
      if (it != index_.end()) out[t].emplace_back(it->second, 1.0);
    }
    std::sort(out[t].begin(), out[t].end());
  }
  return out;
}

void DenseFeatureStore::add(const std::string& id, std::size_t n,
                            std::size_t d, std::vector<float> values) {
  if (n == 0 || d == 0 || values.size() != n * d) {
    throw ValidationError("dense matrix for '" + id + "' has wrong size");
  }
  if (dimension_ == 0) {
    dimension_ = static_cast<std::int32_t>(d);
  } else if (dimension_ != static_cast<std::int32_t>(d)) {
    throw ValidationError("dense matrix for '" + id + "' has dimension " +
                          std::to_string(d) + ", store has " +
                          std::to_string(dimension_));
  }
  matrices_[id] = Matrix{n, d, std::move(values)};
}

DenseFeatureStore DenseFeatureStore::load_dir(
    const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("dense feature directory not found: " + dir.string());
  }
  DenseFeatureStore store;
  std::vector<std::filesystem::path> sidecars;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
  }
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& sidecar : sidecars) {
    std::ifstream meta_in(sidecar);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(sidecar.string() + ": " + e.what());
    }
    const auto id = meta.at("id").get<std::string>();
    const auto n = meta.at("n").get<std::size_t>();
    const auto d = meta.at("d").get<std::size_t>();
    std::filesystem::path bin = sidecar;
    bin.replace_extension(".f32");
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw ConfigError("missing dense matrix file " + bin.string());
    std::vector<float> values(n * d);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) !=
        values.size() * sizeof(float)) {
      throw ParseError(bin.string() + ": truncated matrix");
    }
    store.add(id, n, d, std::move(values));
  }
  if (store.empty()) {
    throw ConfigError("no dense feature sidecars in " + dir.string());
  }
  return store;
}

void DenseFeatureStore::save_dir(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [id, matrix] : matrices_) {
    nlohmann::ordered_json meta;
    meta["id"] = id;
    meta["n"] = matrix.rows;
    meta["d"] = matrix.cols;
    std::ofstream meta_out(dir / (id + ".json"));
    meta_out << meta.dump(2) << '\n';
    std::ofstream out(dir / (id + ".f32"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(matrix.values.data()),
              static_cast<std::streamsize>(matrix.values.size() *
                                           sizeof(float)));
  }
}

SequenceFeatures DenseFeatureStore::features_for(
    const std::string& id, std::size_t expected_tokens) const {
  auto it = matrices_.find(id);
  if (it == matrices_.end()) {
    throw ValidationError("no dense features for sequence id '" + id + "'");
  }
  const Matrix& m = it->second;
  if (m.rows != expected_tokens) {
    throw ValidationError("dense features for '" + id + "' cover " +
                          std::to_string(m.rows) + " tokens, sequence has " +
                          std::to_string(expected_tokens));
  }
  SequenceFeatures out(m.rows);
  for (std::size_t t = 0; t < m.rows; ++t) {
    out[t].reserve(m.cols);
    for (std::size_t f = 0; f < m.cols; ++f) {
      out[t].emplace_back(static_cast<std::int32_t>(f),
                          static_cast<double>(m.values[t * m.cols + f]));
    }
  }
  return out;
}

}  // namespace impacts
