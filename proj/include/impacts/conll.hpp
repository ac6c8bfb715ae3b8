#ifndef IMPACTS_CONLL_HPP
#define IMPACTS_CONLL_HPP

#include <filesystem>
#include <string>
#include <string_view>

#include "impacts/bio.hpp"

namespace impacts {

// Corpus file format: UTF-8, one `token<TAB>tag` per line, sequences
// separated by a blank line, optional `# id = <value>` line before a
// sequence. Sequences without an id line get their 0-based file position.

/// Throws ParseError with a line number on malformed input; empty corpora
/// are an error.
CorpusSplit parse_conll(std::string_view text, std::string split_name = "custom");

/// Canonical serialization: id lines only when the id differs from the
/// file-position default, exactly one blank line between sequences, single
/// trailing newline. parse(serialize(x)) == x.
std::string serialize_conll(const CorpusSplit& split);

CorpusSplit load_corpus(const std::filesystem::path& path,
                        std::string split_name = "custom");

void save_corpus(const CorpusSplit& split, const std::filesystem::path& path);

/// Table-shaped counts: {split, posts, tokens, entities per type, total}.
std::string stats_json(const CorpusSplit& split);

}  // namespace impacts

#endif  // IMPACTS_CONLL_HPP
