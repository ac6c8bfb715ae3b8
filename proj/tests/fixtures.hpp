#ifndef IMPACTS_TESTS_FIXTURES_HPP
#define IMPACTS_TESTS_FIXTURES_HPP

#include <string>
#include <vector>

#include "impacts/bio.hpp"
#include "impacts/rng.hpp"

namespace fixtures {

using impacts::CorpusSplit;
using impacts::EntitySpan;
using impacts::Label;
using impacts::Rng;
using impacts::TaggedSequence;

inline TaggedSequence make_sequence(std::string id,
                                    std::vector<std::string> tokens,
                                    std::vector<std::string> labels) {
  TaggedSequence seq;
  seq.id = std::move(id);
  seq.tokens = std::move(tokens);
  for (const auto& text : labels) seq.labels.push_back(impacts::parse_label(text));
  return seq;
}

// The worked 10-token example: "lost my job" SocialImpacts, "depressed"
// ClinicalImpacts.
inline TaggedSequence table1_sequence(std::string id = "0") {
  return make_sequence(
      std::move(id),
      {"I", "lost", "my", "job", "and", "felt", "depressed", "for", "weeks",
       "."},
      {"O", "B-SocialImpacts", "I-SocialImpacts", "I-SocialImpacts", "O", "O",
       "B-ClinicalImpacts", "O", "O", "O"});
}

inline std::string table1_file() {
  return "I\tO\n"
         "lost\tB-SocialImpacts\n"
         "my\tI-SocialImpacts\n"
         "job\tI-SocialImpacts\n"
         "and\tO\n"
         "felt\tO\n"
         "depressed\tB-ClinicalImpacts\n"
         "for\tO\n"
         "weeks\tO\n"
         ".\tO\n";
}

// Mirrors the annotated test split: 278 posts, 256 SocialImpacts,
// 108 ClinicalImpacts, 364 entities. Posts 0..107 carry one of each type,
// 108..255 one SocialImpacts, the rest none.
inline CorpusSplit table2_test_corpus() {
  CorpusSplit split;
  split.name = "test";
  for (int i = 0; i < 278; ++i) {
    const bool clinical = i < 108;
    const bool social = i < 256;
    std::vector<std::string> tokens;
    std::vector<std::string> labels;
    auto filler = [&](int count) {
      for (int f = 0; f < count; ++f) {
        tokens.push_back("w" + std::to_string((i + f) % 9));
        labels.push_back("O");
      }
    };
    filler(6);
    if (social) {
      tokens.insert(tokens.end(), {"lost", "my", "job"});
      labels.insert(labels.end(),
                    {"B-SocialImpacts", "I-SocialImpacts", "I-SocialImpacts"});
    }
    filler(6);
    if (clinical) {
      tokens.insert(tokens.end(), {"felt", "depressed"});
      labels.insert(labels.end(), {"B-ClinicalImpacts", "I-ClinicalImpacts"});
    }
    filler(7);
    split.sequences.push_back(
        make_sequence(std::to_string(i), std::move(tokens), std::move(labels)));
  }
  return split;
}

// Separable by token identity: every non-filler token always carries the
// same label, so discrete features can fit it exactly.
inline CorpusSplit toy_separable_corpus() {
  CorpusSplit split;
  split.name = "train";
  const std::vector<std::vector<std::string>> tokens = {
      {"x1", "cb", "ci", "x2"},       {"sb", "si", "x3"},
      {"x4", "x5", "cb", "ci"},       {"sb", "si", "si", "x1"},
      {"x2", "cb", "x3", "sb"},       {"cb", "ci", "ci", "x4"},
      {"x5", "sb", "x1", "x2"},       {"x3", "cb", "ci", "sb", "si"},
      {"x4", "x1", "sb", "si", "x5"}, {"cb", "x2", "x3", "x4"},
  };
  auto label_of = [](const std::string& tok) -> std::string {
    if (tok == "cb") return "B-ClinicalImpacts";
    if (tok == "ci") return "I-ClinicalImpacts";
    if (tok == "sb") return "B-SocialImpacts";
    if (tok == "si") return "I-SocialImpacts";
    return "O";
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<std::string> labels;
    for (const auto& tok : tokens[i]) labels.push_back(label_of(tok));
    split.sequences.push_back(
        make_sequence("toy" + std::to_string(i), tokens[i], labels));
  }
  return split;
}

// Entity vocabulary spread across sequences so that small subsamples miss
// most of it: more training data strictly helps.
inline CorpusSplit coverage_corpus(int copies, const std::string& prefix) {
  CorpusSplit split;
  split.name = prefix;
  int counter = 0;
  for (int c = 0; c < copies; ++c) {
    for (int v = 0; v < 10; ++v) {
      const std::string ent = "e" + std::to_string(v);
      const std::string type = v % 2 == 0 ? "ClinicalImpacts" : "SocialImpacts";
      split.sequences.push_back(make_sequence(
          prefix + std::to_string(counter++),
          {"f" + std::to_string(v), ent, "g" + std::to_string(v)},
          {"O", "B-" + type, "O"}));
    }
  }
  return split;
}

inline std::vector<std::string> label_alphabet(
    const std::vector<std::string>& types) {
  std::vector<std::string> labels = {"O"};
  for (const auto& type : types) {
    labels.push_back("B-" + type);
    labels.push_back("I-" + type);
  }
  return labels;
}

// Random BIO-valid sequence over the given entity types.
inline TaggedSequence random_sequence(Rng& rng, std::string id,
                                      const std::vector<std::string>& types,
                                      std::size_t min_len = 1,
                                      std::size_t max_len = 12) {
  const std::size_t n = min_len + rng.below(max_len - min_len + 1);
  TaggedSequence seq;
  seq.id = std::move(id);
  std::string open_type;
  for (std::size_t t = 0; t < n; ++t) {
    seq.tokens.push_back("tok" + std::to_string(rng.below(20)));
    const std::uint64_t kind = rng.below(open_type.empty() ? 2 : 3);
    if (kind == 0) {
      seq.labels.push_back(Label::outside());
      open_type.clear();
    } else if (kind == 1) {
      open_type = types[rng.below(types.size())];
      seq.labels.push_back(Label::begin(open_type));
    } else {
      seq.labels.push_back(Label::inside(open_type));
    }
  }
  return seq;
}

inline CorpusSplit random_corpus(Rng& rng, std::size_t n_sequences,
                                 const std::vector<std::string>& types) {
  CorpusSplit split;
  for (std::size_t i = 0; i < n_sequences; ++i) {
    split.sequences.push_back(
        random_sequence(rng, std::to_string(i), types));
  }
  return split;
}

// Up to max_spans non-overlapping spans inside [0, length).
inline std::vector<EntitySpan> random_spans(
    Rng& rng, std::size_t length, std::size_t max_spans,
    const std::vector<std::string>& types) {
  std::vector<EntitySpan> spans;
  std::size_t cursor = 0;
  const std::size_t count = rng.below(max_spans + 1);
  for (std::size_t s = 0; s < count && cursor < length; ++s) {
    const std::size_t start = cursor + rng.below(length - cursor);
    const std::size_t max_end = std::min(length - 1, start + 3);
    const std::size_t end = start + rng.below(max_end - start + 1);
    spans.push_back({types[rng.below(types.size())], start, end});
    cursor = end + 2;  // keep a gap so spans stay disjoint
  }
  return spans;
}

}  // namespace fixtures

#endif  // IMPACTS_TESTS_FIXTURES_HPP
