#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "impacts/conll.hpp"
#include "impacts/crf.hpp"
#include "impacts/errors.hpp"
#include "impacts/harness.hpp"
#include "impacts/icl.hpp"
#include "impacts/metrics.hpp"
#include "impacts/sampling.hpp"

namespace py = pybind11;
using namespace impacts;

namespace {

// Labels cross the boundary as plain strings ("O", "B-X", "I-X").
std::vector<std::string> labels_out(const std::vector<Label>& labels) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& label : labels) out.push_back(to_string(label));
  return out;
}

std::vector<Label> labels_in(const std::vector<std::string>& labels) {
  std::vector<Label> out;
  out.reserve(labels.size());
  for (const auto& label : labels) out.push_back(parse_label(label));
  return out;
}

// Adapts a Python callable (prompt text -> raw response) to the client
// interface so stub endpoints can live in the test code.
class CallableClient : public CompletionClient {
 public:
  explicit CallableClient(py::function fn) : fn_(std::move(fn)) {}
  std::string complete(const PromptBundle& bundle) override {
    py::gil_scoped_acquire gil;
    return fn_(bundle.text).cast<std::string>();
  }

 private:
  py::function fn_;
};

TrainConfig make_train_config(bool constrained, double l2,
                              const std::string& optimizer, int max_epochs,
                              int patience, double learning_rate,
                              double clip_norm, std::uint64_t seed) {
  TrainConfig config;
  config.constrained = constrained;
  config.l2 = l2;
  config.optimizer = optimizer == "fixed-step"
                         ? TrainConfig::Optimizer::FixedStep
                         : TrainConfig::Optimizer::LineSearch;
  config.max_epochs = max_epochs;
  config.patience = patience;
  config.learning_rate = learning_rate;
  config.clip_norm = clip_norm;
  config.seed = seed;
  return config;
}

}  // namespace

PYBIND11_MODULE(_impacts, m) {
  m.doc() = "BIO sequence labeling toolkit: relaxed overlap scoring, "
            "linear-chain CRF, few-shot prompting helpers";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError",
                                          PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TransportError>(m, "TransportError",
                                         PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);

  py::class_<TaggedSequence>(m, "TaggedSequence")
      .def(py::init([](std::string id, std::vector<std::string> tokens,
                       std::vector<std::string> labels) {
             TaggedSequence seq;
             seq.id = std::move(id);
             seq.tokens = std::move(tokens);
             seq.labels = labels_in(labels);
             return seq;
           }),
           py::arg("id"), py::arg("tokens"), py::arg("labels"))
      .def_readonly("id", &TaggedSequence::id)
      .def_readonly("tokens", &TaggedSequence::tokens)
      .def_property_readonly(
          "labels",
          [](const TaggedSequence& seq) { return labels_out(seq.labels); })
      .def("__len__",
           [](const TaggedSequence& seq) { return seq.tokens.size(); });

  py::class_<EntitySpan>(m, "EntitySpan")
      .def(py::init([](std::string type, std::size_t start, std::size_t end) {
             return EntitySpan{std::move(type), start, end};
           }),
           py::arg("entity_type"), py::arg("start"), py::arg("end"))
      .def_readonly("entity_type", &EntitySpan::entity_type)
      .def_readonly("start", &EntitySpan::start)
      .def_readonly("end", &EntitySpan::end)
      .def("__repr__", [](const EntitySpan& s) {
        return "EntitySpan(" + s.entity_type + ", " +
               std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
      });

  py::class_<CorpusSplit>(m, "CorpusSplit")
      .def(py::init([](std::string name, std::vector<TaggedSequence> seqs) {
             CorpusSplit split;
             split.name = std::move(name);
             split.sequences = std::move(seqs);
             return split;
           }),
           py::arg("name"), py::arg("sequences"))
      .def_readonly("name", &CorpusSplit::name)
      .def_readonly("sequences", &CorpusSplit::sequences)
      .def("entity_types", &CorpusSplit::entity_types)
      .def("__len__",
           [](const CorpusSplit& s) { return s.sequences.size(); });

  py::class_<TypeScore>(m, "TypeScore")
      .def_readonly("entity_type", &TypeScore::entity_type)
      .def_readonly("tp", &TypeScore::tp)
      .def_readonly("pred", &TypeScore::pred)
      .def_readonly("gold", &TypeScore::gold)
      .def_readonly("precision", &TypeScore::precision)
      .def_readonly("recall", &TypeScore::recall)
      .def_readonly("f1", &TypeScore::f1);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("model", &EvalReport::model)
      .def_readonly("split", &EvalReport::split)
      .def_readonly("mode", &EvalReport::mode)
      .def_readonly("per_type", &EvalReport::per_type)
      .def_readonly("overall", &EvalReport::overall)
      .def_readonly("ci", &EvalReport::ci)
      .def("to_json", &report_to_json);

  py::class_<KappaResult>(m, "KappaResult")
      .def_readonly("observed_agreement", &KappaResult::observed_agreement)
      .def_readonly("expected_agreement", &KappaResult::expected_agreement)
      .def_readonly("kappa", &KappaResult::kappa)
      .def_readonly("degenerate", &KappaResult::degenerate);

  py::class_<CrfModel>(m, "CrfModel")
      .def_readonly("labels", &CrfModel::labels)
      .def_readonly("entity_types", &CrfModel::entity_types)
      .def_readonly("constrained", &CrfModel::constrained)
      .def("save", [](const CrfModel& model, const std::string& path) {
        save_model(model, path);
      });

  py::class_<LlmResponse>(m, "LlmResponse")
      .def_readonly("raw_text", &LlmResponse::raw_text)
      .def_property_readonly(
          "labels",
          [](const LlmResponse& r) { return labels_out(r.repaired); })
      .def_property_readonly("alignment", [](const LlmResponse& r) {
        std::vector<std::tuple<std::string, long, std::string>> out;
        for (const auto& event : r.alignment) {
          const char* kind = event.kind == AlignKind::Matched
                                 ? "matched"
                                 : event.kind == AlignKind::TokenMismatch
                                       ? "token-mismatch"
                                       : event.kind == AlignKind::Missing
                                             ? "missing"
                                             : "extra";
          out.emplace_back(kind, event.target_index, event.item);
        }
        return out;
      });

  py::class_<IclRunResult>(m, "IclRunResult")
      .def_readonly("report", &IclRunResult::report)
      .def_property_readonly("responses", [](const IclRunResult& r) {
        std::vector<LlmResponse> out;
        for (const auto& record : r.records) out.push_back(record.response);
        return out;
      });

  m.def("parse_conll", &parse_conll, py::arg("text"),
        py::arg("split_name") = "custom");
  m.def("serialize_conll", &serialize_conll);
  m.def("load_corpus", &load_corpus, py::arg("path"),
        py::arg("split_name") = "custom");
  m.def("save_corpus", &save_corpus);
  m.def("stats_json", &stats_json);
  m.def(
      "validate_bio",
      [](const TaggedSequence& seq, const std::string& mode) {
        return validate_bio(seq, mode == "repair" ? ValidateMode::Repair
                                                  : ValidateMode::Strict);
      },
      py::arg("seq"), py::arg("mode") = "strict");
  m.def("extract_spans", &extract_spans);
  m.def(
      "spans_to_bio",
      [](const std::vector<EntitySpan>& spans, std::size_t length) {
        return labels_out(spans_to_bio(spans, length));
      },
      py::arg("spans"), py::arg("length"));
  m.def("subsample", &subsample, py::arg("split"), py::arg("fraction"),
        py::arg("seed"));

  m.def(
      "overlap",
      [](const EntitySpan& g, const EntitySpan& p) {
        return overlap_tokens(g, p);
      },
      py::arg("gold"), py::arg("pred"));
  m.def(
      "evaluate",
      [](const CorpusSplit& gold, const CorpusSplit& pred, bool strict,
         std::uint64_t b, double level, std::uint64_t seed, bool all_pairs,
         const std::string& model_name) {
        ScoreOptions options;
        options.policy = all_pairs ? MatchPolicy::AllPairs
                                   : MatchPolicy::GreedyOneToOne;
        EvalReport report = evaluate_corpora(
            gold, pred,
            strict ? MetricSelector::Mode::Strict
                   : MetricSelector::Mode::Relaxed,
            b, level, seed, options);
        report.model = model_name;
        return report;
      },
      py::arg("gold"), py::arg("pred"), py::arg("strict") = false,
      py::arg("b") = 0, py::arg("level") = 0.95, py::arg("seed") = 0,
      py::arg("all_pairs") = false, py::arg("model_name") = "model");
  m.def(
      "cohens_kappa",
      [](const std::vector<std::string>& a, const std::vector<std::string>& b) {
        return cohens_kappa(labels_in(a), labels_in(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "train_crf",
      [](const CorpusSplit& train, const CorpusSplit* dev, bool constrained,
         double l2, const std::string& optimizer, int max_epochs, int patience,
         double learning_rate, double clip_norm, std::uint64_t seed) {
        return train_crf(train,
                         make_train_config(constrained, l2, optimizer,
                                           max_epochs, patience, learning_rate,
                                           clip_norm, seed),
                         dev)
            .model;
      },
      py::arg("train"), py::arg("dev") = nullptr, py::arg("constrained") = true,
      py::arg("l2") = 0.01, py::arg("optimizer") = "line-search",
      py::arg("max_epochs") = 100, py::arg("patience") = 3,
      py::arg("learning_rate") = 0.5, py::arg("clip_norm") = 0.0,
      py::arg("seed") = 0);
  m.def("load_crf", [](const std::string& path) { return load_model(path); });
  m.def(
      "predict",
      [](const CrfModel& model, const CorpusSplit& corpus) {
        return predict(model, corpus);
      },
      py::arg("model"), py::arg("corpus"));

  m.def(
      "top_k_lexical",
      [](const CorpusSplit& pool, const TaggedSequence& query, std::size_t k) {
        LexicalTfidfProvider provider(pool);
        return top_k(provider, pool, query, k);
      },
      py::arg("pool"), py::arg("query"), py::arg("k"));
  m.def("default_prompt_template", &default_prompt_template,
        py::return_value_policy::copy);
  m.def(
      "build_prompt",
      [](const CorpusSplit& pool, const TaggedSequence& query, std::size_t k) {
        LexicalTfidfProvider provider(pool);
        std::vector<Exemplar> exemplars;
        std::map<std::string, const TaggedSequence*> by_id;
        for (const auto& seq : pool.sequences) by_id[seq.id] = &seq;
        for (const auto& [id, sim] : top_k(provider, pool, query, k)) {
          const TaggedSequence& seq = *by_id.at(id);
          exemplars.push_back({id, sim, seq.tokens, seq.labels});
        }
        return render_prompt(default_prompt_template(), exemplars,
                             query.tokens, k)
            .text;
      },
      py::arg("pool"), py::arg("query"), py::arg("k"));
  m.def(
      "parse_response",
      [](const std::string& raw, const std::vector<std::string>& tokens,
         const std::vector<std::string>& entity_types) {
        return parse_response(raw, tokens, entity_types);
      },
      py::arg("raw"), py::arg("target_tokens"),
      py::arg("entity_types") = std::vector<std::string>{});
  m.def(
      "run_icl_eval",
      [](const CorpusSplit& pool, const CorpusSplit& targets, std::size_t k,
         py::function complete_fn, std::uint64_t b, double level,
         std::uint64_t seed, const std::string& model_name) {
        LexicalTfidfProvider provider(pool);
        CallableClient client(std::move(complete_fn));
        IclRunConfig config;
        config.k = k;
        config.bootstrap_b = b;
        config.level = level;
        config.seed = seed;
        config.jobs = 1;  // Python callables stay on this thread
        config.model_name = model_name;
        return run_icl_eval(pool, targets, provider, client, config);
      },
      py::arg("pool"), py::arg("targets"), py::arg("k"),
      py::arg("complete_fn"), py::arg("b") = 0, py::arg("level") = 0.95,
      py::arg("seed") = 0, py::arg("model_name") = "icl");

  m.attr("__version__") = "0.1.0";
}
