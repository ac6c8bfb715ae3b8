#include "impacts/conll.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "impacts/errors.hpp"

namespace impacts {

namespace {

constexpr std::string_view kIdPrefix = "# id = ";

[[noreturn]] void fail(std::size_t line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

CorpusSplit parse_conll(std::string_view text, std::string split_name) {
  CorpusSplit split;
  split.name = std::move(split_name);

  TaggedSequence current;
  bool has_pending_id = false;
  std::string pending_id;
  std::set<std::string> seen_ids;

  auto flush = [&](std::size_t line_no) {
    if (current.tokens.empty()) return;
    current.id = has_pending_id ? pending_id
                                : std::to_string(split.sequences.size());
    if (!seen_ids.insert(current.id).second) {
      fail(line_no, "duplicate sequence id '" + current.id + "'");
    }
    split.sequences.push_back(std::move(current));
    current = TaggedSequence{};
    has_pending_id = false;
    pending_id.clear();
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = (eol == std::string_view::npos)
                                ? text.substr(pos)
                                : text.substr(pos, eol - pos);
    pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      flush(line_no);
      continue;
    }
    std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      if (line.substr(0, kIdPrefix.size()) == kIdPrefix) {
        if (!current.tokens.empty()) {
          fail(line_no, "id comment inside a sequence");
        }
        if (has_pending_id) fail(line_no, "consecutive id comments");
        pending_id = std::string(line.substr(kIdPrefix.size()));
        if (pending_id.empty()) fail(line_no, "empty sequence id");
        has_pending_id = true;
        continue;
      }
      fail(line_no, "expected token<TAB>tag, got '" + std::string(line) + "'");
    }
    std::string_view token = line.substr(0, tab);
    std::string_view tag = line.substr(tab + 1);
    if (token.empty()) fail(line_no, "empty token");
    if (tag.find('\t') != std::string_view::npos) {
      fail(line_no, "more than two columns");
    }
    Label label;
    try {
      label = parse_label(tag);
    } catch (const ParseError& e) {
      fail(line_no, e.what());
    }
    current.tokens.emplace_back(token);
    current.labels.push_back(std::move(label));
  }
  flush(line_no);
  if (has_pending_id) {
    throw ParseError("id comment '" + pending_id + "' without a sequence");
  }
  if (split.sequences.empty()) throw ParseError("empty corpus");
  return split;
}

std::string serialize_conll(const CorpusSplit& split) {
  std::ostringstream out;
  for (std::size_t i = 0; i < split.sequences.size(); ++i) {
    const auto& seq = split.sequences[i];
    if (i > 0) out << '\n';
    if (seq.id != std::to_string(i)) out << kIdPrefix << seq.id << '\n';
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      out << seq.tokens[t] << '\t' << to_string(seq.labels[t]) << '\n';
    }
  }
  return out.str();
}

CorpusSplit load_corpus(const std::filesystem::path& path,
                        std::string split_name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_conll(buf.str(), std::move(split_name));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_corpus(const CorpusSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus file " + path.string());
  out << serialize_conll(split);
}

std::string stats_json(const CorpusSplit& split) {
  SplitStats stats = split.stats();
  nlohmann::ordered_json j;
  j["split"] = split.name;
  j["posts"] = stats.posts;
  j["tokens"] = stats.tokens;
  j["entities"] = nlohmann::ordered_json::object();
  for (const auto& [type, count] : stats.entities_by_type) {
    j["entities"][type] = count;
  }
  j["total_entities"] = stats.total_entities;
  return j.dump(2);
}

}  // namespace impacts
