#include "impacts/icl.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "impacts/errors.hpp"
#include "impacts/hash.hpp"

namespace impacts {

FileEmbeddingProvider FileEmbeddingProvider::load(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embeddings file " + path.string());
  FileEmbeddingProvider provider;
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
    auto id = j.at("id").get<std::string>();
    auto vec = j.at("vector").get<std::vector<double>>();
    if (vec.empty()) {
      throw ParseError(path.string() + ": empty vector for id '" + id + "'");
    }
    if (provider.dimension_ == 0) {
      provider.dimension_ = vec.size();
    } else if (provider.dimension_ != vec.size()) {
      throw ValidationError("embedding dimension mismatch for id '" + id +
                            "': " + std::to_string(vec.size()) + " vs " +
                            std::to_string(provider.dimension_));
    }
    provider.vectors_[id] = std::move(vec);
  }
  if (provider.vectors_.empty()) {
    throw ParseError("no embeddings in " + path.string());
  }
  return provider;
}

std::vector<double> FileEmbeddingProvider::embed(
    const TaggedSequence& seq) const {
  auto it = vectors_.find(seq.id);
  if (it == vectors_.end()) {
    throw ValidationError("no embedding for sequence id '" + seq.id + "'");
  }
  return it->second;
}

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

}  // namespace

LexicalTfidfProvider::LexicalTfidfProvider(const CorpusSplit& pool) {
  if (pool.sequences.empty()) {
    throw ValidationError("cannot fit TF-IDF on an empty pool");
  }
  std::map<std::string, std::size_t> df;
  for (const auto& seq : pool.sequences) {
    std::set<std::string> seen;
    for (const auto& tok : seq.tokens) seen.insert(lower(tok));
    for (const auto& tok : seen) ++df[tok];
  }
  for (const auto& [tok, _] : df) {
    vocabulary_.emplace(tok, vocabulary_.size());
  }
  idf_.resize(vocabulary_.size());
  const double n_docs = static_cast<double>(pool.sequences.size());
  for (const auto& [tok, idx] : vocabulary_) {
    idf_[idx] = std::log((1.0 + n_docs) /
                         (1.0 + static_cast<double>(df[tok]))) +
                1.0;
  }
}

std::vector<double> LexicalTfidfProvider::embed(
    const TaggedSequence& seq) const {
  std::vector<double> v(vocabulary_.size(), 0.0);
  for (const auto& tok : seq.tokens) {
    auto it = vocabulary_.find(lower(tok));
    if (it != vocabulary_.end()) v[it->second] += 1.0;
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] *= idf_[i];
    sq += v[i] * v[i];
  }
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
  }
  return v;
}

double cosine_similarity(const std::vector<double>& u,
                         const std::vector<double>& v) {
  if (u.size() != v.size()) {
    throw ValidationError("cosine: dimension mismatch " +
                          std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<std::pair<std::string, double>> top_k(
    const EmbeddingProvider& provider, const CorpusSplit& pool,
    const TaggedSequence& query, std::size_t k) {
  if (k == 0) return {};
  if (pool.sequences.empty()) {
    throw ValidationError("cannot retrieve from an empty pool");
  }
  std::vector<double> qv = provider.embed(query);
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(pool.sequences.size());
  for (const auto& seq : pool.sequences) {
    if (seq.id == query.id) continue;  // no leakage on pool/target overlap
    scored.emplace_back(seq.id, cosine_similarity(qv, provider.embed(seq)));
  }
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second > b.second;
              return a.first < b.first;
            });
  if (scored.size() > k) scored.resize(k);
  return scored;
}

const std::string& default_prompt_template() {
  static const std::string kTemplate =
      "You are a medical AI assistant that classifies tokens in a Reddit post "
      "into the following categories:\n"
      "\n"
      "ClinicalImpacts: Health and well-being effects.\n"
      "SocialImpacts: Societal or community-level effects.\n"
      "O: Tokens outside these categories.\n"
      "\n"
      "## Strict Annotation Rules ##\n"
      "1. Annotate ONLY first-person experiences. Ignore third-party "
      "reports.\n"
      "2. Label all drug names (e.g., heroin, fentanyl) as O.\n"
      "3. Label personal pronouns (e.g., I, my) as O -- they are not part of "
      "entity spans.\n"
      "4. ASSUME opioid involvement unless a non-opioid cause is clearly "
      "stated.\n"
      "5. If multiple substances are mentioned, default to opioid-related "
      "impact when unsure.\n"
      "6. Label mental health terms (e.g., depression) as ClinicalImpacts "
      "unless context clearly shows a non-opioid cause.\n"
      "7. Label non-integral words (e.g., adjectives, adverbs, or temporal "
      "words like very, suddenly) as O if they are not essential to the "
      "entity span.\n"
      "8. Corrupted or unreadable tokens (e.g., Ìm, ?, ##) must be "
      "labeled as O.\n"
      "9. Maintain the exact token order and label all tokens.\n"
      "10. If unsure about a token, label it as O.\n"
      "\n"
      "## Output Format ##\n"
      "Return token-label pairs in the following format:\n"
      "token-Label token-Label token-Label ...\n"
      "\n"
      "{examples}"
      "New Input:\n"
      "Tokens: [{tokens}]\n"
      "Output:\n";
  return kTemplate;
}

std::string exemplar_stream(const std::vector<std::string>& tokens,
                            const std::vector<Label>& labels) {
  if (tokens.size() != labels.size()) {
    throw ValidationError("exemplar token/label length mismatch");
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out << ' ';
    out << tokens[i] << '-' << to_string(labels[i]);
  }
  return out.str();
}

namespace {

bool placeholder_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

}  // namespace

PromptBundle render_prompt(const std::string& template_text,
                           const std::vector<Exemplar>& exemplars,
                           const std::vector<std::string>& target_tokens,
                           std::size_t k, const DecodingParams& decoding) {
  PromptBundle bundle;
  bundle.target_tokens = target_tokens;
  bundle.decoding = decoding;
  bundle.exemplars.assign(exemplars.begin(),
                          exemplars.begin() +
                              std::min(k, exemplars.size()));
  for (std::size_t i = 1; i < bundle.exemplars.size(); ++i) {
    if (bundle.exemplars[i].similarity >
        bundle.exemplars[i - 1].similarity) {
      throw ValidationError("exemplar similarities must be non-increasing");
    }
  }

  std::string examples_block;
  if (k > 0 && !bundle.exemplars.empty()) {
    std::ostringstream block;
    block << "Few-shot Examples (Top-" << bundle.exemplars.size()
          << ", dynamically retrieved):\n";
    for (std::size_t i = 0; i < bundle.exemplars.size(); ++i) {
      block << "Example " << (i + 1) << ": {"
            << exemplar_stream(bundle.exemplars[i].tokens,
                               bundle.exemplars[i].labels)
            << "}\n";
    }
    block << '\n';
    examples_block = block.str();
  }
  std::string tokens_line;
  for (std::size_t i = 0; i < target_tokens.size(); ++i) {
    if (i > 0) tokens_line += ", ";
    tokens_line += target_tokens[i];
  }

  // Single left-to-right pass: substituted content is never rescanned.
  std::string out;
  out.reserve(template_text.size() + examples_block.size() +
              tokens_line.size());
  std::size_t pos = 0;
  while (pos < template_text.size()) {
    if (template_text[pos] != '{') {
      out.push_back(template_text[pos++]);
      continue;
    }
    std::size_t end = pos + 1;
    while (end < template_text.size() &&
           placeholder_name_char(template_text[end])) {
      ++end;
    }
    if (end < template_text.size() && template_text[end] == '}' &&
        end > pos + 1) {
      const std::string name = template_text.substr(pos + 1, end - pos - 1);
      if (name == "examples") {
        out += examples_block;
      } else if (name == "tokens") {
        out += tokens_line;
      } else {
        throw ParseError("unknown placeholder {" + name + "} in template");
      }
      pos = end + 1;
    } else {
      out.push_back(template_text[pos++]);
    }
  }
  bundle.text = std::move(out);
  return bundle;
}

EndpointConfig endpoint_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid endpoint config: ") + e.what());
  }
  EndpointConfig cfg;
  cfg.kind = j.value("kind", "http");
  cfg.base_url = j.value("base_url", "");
  cfg.chat_path = j.value("chat_path", "/chat/completions");
  cfg.model = j.value("model", "");
  cfg.credential_env = j.value("credential_env", "");
  cfg.temperature = j.value("temperature", 0.2);
  cfg.max_tokens = j.value("max_tokens", 1024);
  cfg.timeout_s = j.value("timeout_s", 120);
  cfg.max_attempts = j.value("max_attempts", 5);
  cfg.retry_base_ms = j.value("retry_base_ms", 500);
  cfg.replay_path = j.value("replay_path", "");
  if (cfg.kind != "http" && cfg.kind != "replay") {
    throw ConfigError("endpoint kind must be http or replay, got '" +
                      cfg.kind + "'");
  }
  return cfg;
}

EndpointConfig load_endpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open endpoint config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  EndpointConfig cfg = endpoint_config_from_json(buf.str());
  if (cfg.kind == "replay" && cfg.replay_path.is_relative()) {
    cfg.replay_path = path.parent_path() / cfg.replay_path;
  }
  return cfg;
}

ReplayCompletionClient::ReplayCompletionClient(
    const std::filesystem::path& runlog) {
  std::ifstream in(runlog);
  if (!in) throw ConfigError("cannot open replay log " + runlog.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(runlog.string() + ": " + e.what());
    }
    // Run logs interleave summary lines and failed targets; replay only
    // completed requests.
    if (!j.contains("prompt_hash") || j.value("status", "ok") == "failed") {
      continue;
    }
    by_hash_[j.at("prompt_hash").get<std::string>()] =
        j.value("raw_response", "");
  }
}

std::string ReplayCompletionClient::complete(const PromptBundle& bundle) {
  auto it = by_hash_.find(hex64(fnv1a64(bundle.text)));
  if (it == by_hash_.end()) {
    throw TransportError("no recorded response for this prompt");
  }
  return it->second;
}

std::unique_ptr<CompletionClient> make_completion_client(
    const EndpointConfig& config) {
  if (config.kind == "replay") {
    return std::make_unique<ReplayCompletionClient>(config.replay_path);
  }
  return std::make_unique<HttpCompletionClient>(config);
}

std::string complete(const EndpointConfig& config,
                     const PromptBundle& bundle) {
  return make_completion_client(config)->complete(bundle);
}

namespace {

struct ResponseItem {
  std::string text;
  std::string token;
  std::optional<Label> label;
};

// Maximal trailing match of O | B-<type> | I-<type>. A B-/I- label wins
// over a bare O when both fit, since it is the longer trailing match.
ResponseItem parse_item(const std::string& text,
                        const std::set<std::string>& types) {
  ResponseItem item;
  item.text = text;
  const std::size_t h = text.rfind('-');
  if (h == std::string::npos || h == 0) {
    item.token = text;
    return item;
  }
  const std::string tail = text.substr(h + 1);
  if (h >= 2 && (text[h - 1] == 'B' || text[h - 1] == 'I') &&
      text[h - 2] == '-' && h - 2 > 0 && !tail.empty() &&
      (types.empty() || types.count(tail))) {
    item.token = text.substr(0, h - 2);
    item.label = text[h - 1] == 'B' ? Label::begin(tail) : Label::inside(tail);
    return item;
  }
  if (tail == "O") {
    item.token = text.substr(0, h);
    item.label = Label::outside();
    return item;
  }
  item.token = text;
  return item;
}

std::vector<std::string> whitespace_split(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

LlmResponse parse_response(const std::string& raw,
                           const std::vector<std::string>& target_tokens,
                           const std::vector<std::string>& entity_types) {
  LlmResponse response;
  response.raw_text = raw;
  const std::set<std::string> types(entity_types.begin(), entity_types.end());

  std::vector<ResponseItem> items;
  for (const auto& piece : whitespace_split(raw)) {
    items.push_back(parse_item(piece, types));
  }
  for (const auto& item : items) {
    response.parsed.emplace_back(item.token, item.label);
  }

  const std::size_t n = target_tokens.size();
  std::vector<Label> labels(n, Label::outside());
  std::size_t i = 0, j = 0;
  auto consume = [&](AlignKind kind) {
    if (kind != AlignKind::Missing && items[j].label.has_value()) {
      labels[i] = *items[j].label;
    }
    response.alignment.push_back(
        {kind, static_cast<long>(i),
         kind == AlignKind::Missing ? std::string() : items[j].text});
    if (kind != AlignKind::Missing) ++j;
    ++i;
  };
  while (i < n) {
    if (j >= items.size()) {
      response.alignment.push_back({AlignKind::Missing,
                                    static_cast<long>(i), std::string()});
      ++i;
      continue;
    }
    if (items[j].token == target_tokens[i]) {
      consume(items[j].label ? AlignKind::Matched : AlignKind::TokenMismatch);
      continue;
    }
    // Try to resynchronize: skip hallucinated items or missing targets,
    // whichever recovers sooner.
    std::size_t j2 = items.size();
    for (std::size_t jj = j + 1; jj < items.size(); ++jj) {
      if (items[jj].token == target_tokens[i]) {
        j2 = jj;
        break;
      }
    }
    std::size_t i2 = n;
    for (std::size_t ii = i + 1; ii < n; ++ii) {
      if (target_tokens[ii] == items[j].token) {
        i2 = ii;
        break;
      }
    }
    if (j2 < items.size() && (i2 == n || j2 - j <= i2 - i)) {
      while (j < j2) {
        response.alignment.push_back({AlignKind::Extra, -1, items[j].text});
        ++j;
      }
      continue;
    }
    if (i2 < n) {
      response.alignment.push_back({AlignKind::Missing,
                                    static_cast<long>(i), std::string()});
      ++i;
      continue;
    }
    consume(AlignKind::TokenMismatch);
  }
  while (j < items.size()) {
    response.alignment.push_back({AlignKind::Extra, -1, items[j].text});
    ++j;
  }

  if (n > 0) {
    TaggedSequence tmp;
    tmp.id = "response";
    tmp.tokens = target_tokens;
    tmp.labels = labels;
    TaggedSequence repaired = validate_bio(tmp, ValidateMode::Repair);
    for (std::size_t t = 0; t < n; ++t) {
      if (repaired.labels[t] != labels[t]) {
        response.bio_repaired_positions.push_back(t);
      }
    }
    response.repaired = std::move(repaired.labels);
  }
  return response;
}

namespace {

const char* align_kind_name(AlignKind kind) {
  switch (kind) {
    case AlignKind::Matched: return "matched";
    case AlignKind::TokenMismatch: return "token-mismatch";
    case AlignKind::Missing: return "missing";
    case AlignKind::Extra: return "extra";
  }
  return "matched";
}

nlohmann::ordered_json alignment_json(const LlmResponse& response) {
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  for (const auto& event : response.alignment) {
    nlohmann::ordered_json e;
    e["kind"] = align_kind_name(event.kind);
    if (event.target_index >= 0) e["target_index"] = event.target_index;
    if (!event.item.empty()) e["item"] = event.item;
    events.push_back(std::move(e));
  }
  return events;
}

}  // namespace

std::string llm_response_to_json(const LlmResponse& response) {
  nlohmann::ordered_json j;
  j["raw_text"] = response.raw_text;
  j["alignment"] = alignment_json(response);
  j["bio_repaired_positions"] = response.bio_repaired_positions;
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (const auto& label : response.repaired) labels.push_back(to_string(label));
  j["labels"] = labels;
  return j.dump();
}

namespace {

// Minimum-interval rate limiter (token bucket with burst 1).
class RateLimiter {
 public:
  explicit RateLimiter(double per_second) {
    if (per_second > 0.0) {
      interval_ = std::chrono::nanoseconds(
          static_cast<long long>(1e9 / per_second));
    }
  }
  void acquire() {
    if (interval_.count() == 0) return;
    std::chrono::steady_clock::time_point at;
    {
      std::lock_guard<std::mutex> lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      next_ = std::max(next_, now);
      at = next_;
      next_ += interval_;
    }
    std::this_thread::sleep_until(at);
  }

 private:
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
  std::chrono::nanoseconds interval_{0};
};

}  // namespace

IclRunResult run_icl_eval(const CorpusSplit& pool, const CorpusSplit& targets,
                          const EmbeddingProvider& provider,
                          CompletionClient& client,
                          const IclRunConfig& config) {
  if (targets.sequences.empty()) throw ValidationError("no targets to label");
  for (const auto& seq : targets.sequences) {
    validate_bio(seq, ValidateMode::Strict);
  }
  std::map<std::string, const TaggedSequence*> pool_by_id;
  for (const auto& seq : pool.sequences) pool_by_id[seq.id] = &seq;

  std::vector<std::string> alphabet = pool.entity_types();
  for (const auto& type : targets.entity_types()) {
    if (std::find(alphabet.begin(), alphabet.end(), type) == alphabet.end()) {
      alphabet.push_back(type);
    }
  }
  std::sort(alphabet.begin(), alphabet.end());

  const std::string& template_text = config.template_text.empty()
                                         ? default_prompt_template()
                                         : config.template_text;

  const std::size_t n = targets.sequences.size();
  std::vector<IclTargetRecord> records(n);
  RateLimiter limiter(config.requests_per_second);
  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> abort{false};

  auto work = [&]() {
    while (true) {
      const std::size_t idx = cursor.fetch_add(1);
      if (idx >= n) return;
      if (abort.load()) {
        records[idx].target_id = targets.sequences[idx].id;
        records[idx].failed = true;
        records[idx].error = "skipped after earlier failure";
        continue;
      }
      const TaggedSequence& target = targets.sequences[idx];
      IclTargetRecord& record = records[idx];
      record.target_id = target.id;
      try {
        record.exemplars = top_k(provider, pool, target, config.k);
        std::vector<Exemplar> exemplars;
        for (const auto& [id, sim] : record.exemplars) {
          const TaggedSequence& seq = *pool_by_id.at(id);
          exemplars.push_back({id, sim, seq.tokens, seq.labels});
        }
        PromptBundle bundle = render_prompt(template_text, exemplars,
                                            target.tokens, config.k,
                                            config.decoding);
        record.prompt = bundle.text;
        record.prompt_hash = hex64(fnv1a64(bundle.text));
        limiter.acquire();
        const std::string raw = client.complete(bundle);
        record.response = parse_response(raw, target.tokens, alphabet);
      } catch (const std::exception& e) {
        record.failed = true;
        record.error = e.what();
        if (config.fail_fast) abort.store(true);
      }
    }
  };

  if (config.jobs <= 1) {
    work();
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < config.jobs; ++w) workers.emplace_back(work);
    for (auto& t : workers) t.join();
  }

  for (const auto& record : records) {
    if (record.failed && config.fail_fast) {
      throw TransportError("target '" + record.target_id +
                           "' failed: " + record.error);
    }
  }

  CorpusSplit gold_kept, pred;
  gold_kept.name = targets.name;
  pred.name = targets.name;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (records[idx].failed) continue;
    const TaggedSequence& target = targets.sequences[idx];
    gold_kept.sequences.push_back(target);
    TaggedSequence out;
    out.id = target.id;
    out.tokens = target.tokens;
    out.labels = records[idx].response.repaired;
    pred.sequences.push_back(std::move(out));
  }
  if (gold_kept.sequences.empty()) {
    throw TransportError("every target failed; nothing to score");
  }

  IclRunResult result;
  result.report =
      evaluate_corpora(gold_kept, pred, MetricSelector::Mode::Relaxed,
                       config.bootstrap_b, config.level, config.seed);
  result.report.model = config.model_name;
  result.records = std::move(records);
  return result;
}

void write_run_log(const std::vector<IclTargetRecord>& records,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write run log " + path.string());
  for (const auto& record : records) {
    nlohmann::ordered_json j;
    j["target_id"] = record.target_id;
    j["prompt_hash"] = record.prompt_hash;
    j["exemplars"] = nlohmann::ordered_json::array();
    for (const auto& [id, sim] : record.exemplars) {
      j["exemplars"].push_back({id, sim});
    }
    j["status"] = record.failed ? "failed" : "ok";
    if (record.failed) {
      j["error"] = record.error;
    } else {
      j["raw_response"] = record.response.raw_text;
      j["alignment"] = alignment_json(record.response);
      nlohmann::ordered_json labels = nlohmann::ordered_json::array();
      for (const auto& label : record.response.repaired) {
        labels.push_back(to_string(label));
      }
      j["labels"] = labels;
    }
    j["prompt"] = record.prompt;
    out << j.dump() << '\n';
  }
}

}  // namespace impacts
