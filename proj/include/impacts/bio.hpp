#ifndef IMPACTS_BIO_HPP
#define IMPACTS_BIO_HPP

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace impacts {

enum class LabelKind { Outside, Begin, Inside };

/// One BIO tag: O, B-<type> or I-<type>. entity_type is empty iff kind is O.
struct Label {
  LabelKind kind = LabelKind::Outside;
  std::string entity_type;

  bool operator==(const Label&) const = default;

  static Label outside() { return Label{}; }
  static Label begin(std::string type) {
    return Label{LabelKind::Begin, std::move(type)};
  }
  static Label inside(std::string type) {
    return Label{LabelKind::Inside, std::move(type)};
  }
};

/// Parses "O", "B-X" or "I-X". Throws ParseError on anything else.
Label parse_label(std::string_view text);

std::string to_string(const Label& label);

/// A post: parallel token and label streams of equal, nonzero length.
struct TaggedSequence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<Label> labels;

  bool operator==(const TaggedSequence&) const = default;
};

/// Contiguous mention: entity type plus inclusive 0-based token range.
struct EntitySpan {
  std::string entity_type;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool operator==(const EntitySpan&) const = default;
};

struct SplitStats {
  std::size_t posts = 0;
  std::size_t tokens = 0;
  std::size_t total_entities = 0;
  std::map<std::string, std::size_t> entities_by_type;

  bool operator==(const SplitStats&) const = default;
};

struct CorpusSplit {
  std::string name = "custom";
  std::vector<TaggedSequence> sequences;

  /// Distinct entity types present, sorted. This is the split's declared
  /// alphabet; scoring rejects types outside it.
  std::vector<std::string> entity_types() const;

  /// Recomputed from sequences on every call; requires BIO-valid labels.
  SplitStats stats() const;
};

enum class ValidateMode { Strict, Repair };

/// Checks the BIO transition rule: I-X may only follow B-X or I-X. Strict
/// mode throws ValidationError listing every (position, bigram) violation;
/// repair mode rewrites each orphan I-X to B-X. Repair is idempotent.
TaggedSequence validate_bio(const TaggedSequence& seq, ValidateMode mode);

/// True iff validate_bio(seq, Strict) would pass.
bool is_bio_valid(const TaggedSequence& seq);

/// Maximal B-X (I-X)* runs as spans, sorted by start. Input must be
/// BIO-valid (strict); throws ValidationError otherwise.
std::vector<EntitySpan> extract_spans(const TaggedSequence& seq);

/// Inverse of extract_spans. Spans must be in range and non-overlapping.
std::vector<Label> spans_to_bio(const std::vector<EntitySpan>& spans,
                                std::size_t length);

}  // namespace impacts

#endif  // IMPACTS_BIO_HPP
