#ifndef IMPACTS_ICL_HPP
#define IMPACTS_ICL_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "impacts/bio.hpp"
#include "impacts/metrics.hpp"

namespace impacts {

/// Sequence -> embedding. All vectors from one provider share a dimension.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<double> embed(const TaggedSequence& seq) const = 0;
  virtual std::size_t dimension() const = 0;
};

/// Precomputed vectors keyed by sequence id, one JSON object
/// {"id": ..., "vector": [...]} per line. Unknown ids are an error, never a
/// zero vector.
class FileEmbeddingProvider : public EmbeddingProvider {
 public:
  static FileEmbeddingProvider load(const std::filesystem::path& path);
  std::vector<double> embed(const TaggedSequence& seq) const override;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::map<std::string, std::vector<double>> vectors_;
  std::size_t dimension_ = 0;
};

/// Self-contained fallback: L2-normalized unigram TF-IDF fit on a pool.
/// Tokens are lowercased; the vocabulary is sorted for stable indexing.
class LexicalTfidfProvider : public EmbeddingProvider {
 public:
  explicit LexicalTfidfProvider(const CorpusSplit& pool);
  std::vector<double> embed(const TaggedSequence& seq) const override;
  std::size_t dimension() const override { return vocabulary_.size(); }

 private:
  std::map<std::string, std::size_t> vocabulary_;
  std::vector<double> idf_;
};

/// cos(u, v); zero-norm vectors score 0 against everything.
double cosine_similarity(const std::vector<double>& u,
                         const std::vector<double>& v);

/// Top-k pool sequences by cosine similarity to the query, descending, ties
/// broken by sequence id ascending. The query's own id is excluded.
std::vector<std::pair<std::string, double>> top_k(
    const EmbeddingProvider& provider, const CorpusSplit& pool,
    const TaggedSequence& query, std::size_t k);

struct Exemplar {
  std::string sequence_id;
  double similarity = 0.0;
  std::vector<std::string> tokens;
  std::vector<Label> labels;
};

struct DecodingParams {
  double temperature = 0.2;  // reference decoding temperature
  int max_tokens = 1024;
  std::string model;
};

struct PromptBundle {
  std::string text;
  std::vector<Exemplar> exemplars;
  std::vector<std::string> target_tokens;
  DecodingParams decoding;
};

/// The tested instruction block. Placeholders: {examples}, {tokens}.
const std::string& default_prompt_template();

/// Space-separated token-Label stream for one exemplar.
std::string exemplar_stream(const std::vector<std::string>& tokens,
                            const std::vector<Label>& labels);

/// Byte-stable rendering. k = 0 omits the few-shot block entirely;
/// exemplars beyond k are dropped. Unknown {placeholders} in the template
/// are an error.
PromptBundle render_prompt(const std::string& template_text,
                           const std::vector<Exemplar>& exemplars,
                           const std::vector<std::string>& target_tokens,
                           std::size_t k, const DecodingParams& decoding = {});

struct EndpointConfig {
  std::string kind = "http";  // http | replay
  std::string base_url;
  std::string chat_path = "/chat/completions";
  std::string model;
  std::string credential_env;
  double temperature = 0.2;
  int max_tokens = 1024;
  int timeout_s = 120;
  int max_attempts = 5;
  int retry_base_ms = 500;
  std::filesystem::path replay_path;  // replay kind: a prior runlog.jsonl
};

EndpointConfig endpoint_config_from_json(const std::string& text);
EndpointConfig load_endpoint_config(const std::filesystem::path& path);

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  virtual std::string complete(const PromptBundle& bundle) = 0;
};

/// Chat-completion transport: one user message, temperature from the
/// bundle. Retries transport failures and 429 with exponential backoff up
/// to max_attempts; any other non-2xx status is an error carrying the
/// provider message. Logs request hash, latency and token usage to stderr.
class HttpCompletionClient : public CompletionClient {
 public:
  explicit HttpCompletionClient(EndpointConfig config);
  std::string complete(const PromptBundle& bundle) override;

 private:
  EndpointConfig config_;
  std::string credential_;
};

/// Replays responses recorded in a runlog.jsonl, keyed by prompt hash.
class ReplayCompletionClient : public CompletionClient {
 public:
  explicit ReplayCompletionClient(const std::filesystem::path& runlog);
  std::string complete(const PromptBundle& bundle) override;

 private:
  std::map<std::string, std::string> by_hash_;
};

std::unique_ptr<CompletionClient> make_completion_client(
    const EndpointConfig& config);

/// One-shot convenience over HttpCompletionClient.
std::string complete(const EndpointConfig& config, const PromptBundle& bundle);

enum class AlignKind { Matched, TokenMismatch, Missing, Extra };

struct AlignmentEvent {
  AlignKind kind = AlignKind::Matched;
  long target_index = -1;  // -1 for extras
  std::string item;        // raw response item involved, empty for missing
};

struct LlmResponse {
  std::string raw_text;
  std::vector<std::pair<std::string, std::optional<Label>>> parsed;
  std::vector<AlignmentEvent> alignment;
  std::vector<std::size_t> bio_repaired_positions;
  std::vector<Label> repaired;  // always |target_tokens| labels, BIO-valid
};

/// Total on arbitrary text. Items split on whitespace; each splits at the
/// maximal trailing `O|B-<type>|I-<type>` match (tokens may contain
/// hyphens, labels never do beyond the B-/I- prefix). Greedy in-order
/// alignment against the target tokens: unmatched targets become O
/// (missing), surplus items are recorded as extra, unparseable labels
/// become O (token-mismatch). The final labels go through
/// validate_bio(repair). entity_types restricts the label alphabet; empty
/// accepts any hyphen-free type.
LlmResponse parse_response(const std::string& raw,
                           const std::vector<std::string>& target_tokens,
                           const std::vector<std::string>& entity_types = {});

std::string llm_response_to_json(const LlmResponse& response);

struct IclRunConfig {
  std::size_t k = 3;
  std::uint64_t bootstrap_b = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool fail_fast = true;       // unset: failed targets are logged + skipped
  std::size_t jobs = 1;
  double requests_per_second = 0.0;  // 0 = unlimited
  std::string model_name = "icl";
  std::string template_text;   // empty = default_prompt_template()
  DecodingParams decoding;
};

struct IclTargetRecord {
  std::string target_id;
  std::string prompt;
  std::string prompt_hash;
  std::vector<std::pair<std::string, double>> exemplars;
  LlmResponse response;
  bool failed = false;
  std::string error;
};

struct IclRunResult {
  EvalReport report;
  std::vector<IclTargetRecord> records;  // in target order
};

/// Retrieve, render, complete, parse and score every target against its
/// gold labels. Records keep target order regardless of completion order.
IclRunResult run_icl_eval(const CorpusSplit& pool, const CorpusSplit& targets,
                          const EmbeddingProvider& provider,
                          CompletionClient& client, const IclRunConfig& config);

/// JSONL audit trail: {target id, prompt, prompt hash, raw response,
/// alignment, labels} per line.
void write_run_log(const std::vector<IclTargetRecord>& records,
                   const std::filesystem::path& path);

}  // namespace impacts

#endif  // IMPACTS_ICL_HPP
