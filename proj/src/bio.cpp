#include "impacts/bio.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "impacts/errors.hpp"

namespace impacts {

Label parse_label(std::string_view text) {
  if (text == "O") return Label::outside();
  if (text.size() >= 3 && (text[0] == 'B' || text[0] == 'I') && text[1] == '-') {
    std::string type(text.substr(2));
    return text[0] == 'B' ? Label::begin(std::move(type))
                          : Label::inside(std::move(type));
  }
  throw ParseError("invalid label '" + std::string(text) +
                   "' (expected O, B-<type> or I-<type>)");
}

std::string to_string(const Label& label) {
  switch (label.kind) {
    case LabelKind::Outside:
      return "O";
    case LabelKind::Begin:
      return "B-" + label.entity_type;
    case LabelKind::Inside:
      return "I-" + label.entity_type;
  }
  return "O";
}

std::vector<std::string> CorpusSplit::entity_types() const {
  std::set<std::string> types;
  for (const auto& seq : sequences) {
    for (const auto& label : seq.labels) {
      if (label.kind != LabelKind::Outside) types.insert(label.entity_type);
    }
  }
  return {types.begin(), types.end()};
}

SplitStats CorpusSplit::stats() const {
  SplitStats out;
  out.posts = sequences.size();
  for (const auto& type : entity_types()) out.entities_by_type[type] = 0;
  for (const auto& seq : sequences) {
    out.tokens += seq.tokens.size();
    for (const auto& span : extract_spans(seq)) {
      ++out.entities_by_type[span.entity_type];
      ++out.total_entities;
    }
  }
  return out;
}

namespace {

void check_sequence_shape(const TaggedSequence& seq) {
  if (seq.tokens.empty()) {
    throw ValidationError("sequence '" + seq.id + "' is empty");
  }
  if (seq.tokens.size() != seq.labels.size()) {
    throw ValidationError("sequence '" + seq.id + "': " +
                          std::to_string(seq.tokens.size()) + " tokens vs " +
                          std::to_string(seq.labels.size()) + " labels");
  }
}

// An I-X label is an orphan when the previous label (start of sequence
// counts as O) is neither B-X nor I-X of the same type.
bool orphan_inside(const Label& prev, const Label& cur) {
  if (cur.kind != LabelKind::Inside) return false;
  if (prev.kind == LabelKind::Outside) return true;
  return prev.entity_type != cur.entity_type;
}

}  // namespace

TaggedSequence validate_bio(const TaggedSequence& seq, ValidateMode mode) {
  check_sequence_shape(seq);
  TaggedSequence out = seq;
  std::ostringstream violations;
  std::size_t bad = 0;
  Label prev = Label::outside();
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    Label cur = out.labels[i];
    if (orphan_inside(prev, cur)) {
      if (mode == ValidateMode::Repair) {
        out.labels[i].kind = LabelKind::Begin;
      } else {
        if (bad > 0) violations << "; ";
        violations << "position " << i << ": " << to_string(cur) << " after "
                   << (i == 0 ? std::string("start") : to_string(prev));
        ++bad;
      }
    }
    prev = out.labels[i];  // repaired value, so later repairs see the fix
  }
  if (bad > 0) {
    throw ValidationError("sequence '" + seq.id +
                          "' violates BIO: " + violations.str());
  }
  return out;
}

bool is_bio_valid(const TaggedSequence& seq) {
  if (seq.tokens.empty() || seq.tokens.size() != seq.labels.size()) {
    return false;
  }
  Label prev = Label::outside();
  for (const auto& cur : seq.labels) {
    if (orphan_inside(prev, cur)) return false;
    prev = cur;
  }
  return true;
}

std::vector<EntitySpan> extract_spans(const TaggedSequence& seq) {
  validate_bio(seq, ValidateMode::Strict);
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < seq.labels.size(); ++i) {
    if (seq.labels[i].kind != LabelKind::Begin) continue;
    std::size_t end = i;
    while (end + 1 < seq.labels.size() &&
           seq.labels[end + 1].kind == LabelKind::Inside) {
      ++end;
    }
    spans.push_back({seq.labels[i].entity_type, i, end});
    i = end;
  }
  return spans;
}

std::vector<Label> spans_to_bio(const std::vector<EntitySpan>& spans,
                                std::size_t length) {
  std::vector<EntitySpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end(),
            [](const EntitySpan& a, const EntitySpan& b) {
              return a.start < b.start;
            });
  std::vector<Label> labels(length, Label::outside());
  std::size_t next_free = 0;
  for (const auto& span : sorted) {
    if (span.start > span.end || span.end >= length) {
      throw ValidationError("span [" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + "] out of range for " +
                            std::to_string(length) + " tokens");
    }
    if (span.start < next_free) {
      throw ValidationError("overlapping spans at token " +
                            std::to_string(span.start));
    }
    if (span.entity_type.empty()) {
      throw ValidationError("span with empty entity type");
    }
    labels[span.start] = Label::begin(span.entity_type);
    for (std::size_t i = span.start + 1; i <= span.end; ++i) {
      labels[i] = Label::inside(span.entity_type);
    }
    next_free = span.end + 1;
  }
  return labels;
}

}  // namespace impacts
