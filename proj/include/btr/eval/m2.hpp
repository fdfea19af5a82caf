#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "btr/eval/edits.hpp"

namespace btr::eval {

struct M2Edit {
  Edit edit;
  std::string type;
  bool operator==(const M2Edit&) const = default;
};

struct M2Sentence {
  Tokens source;
  // One entry per annotator id 0..k-1; an annotator with no edits (or a
  // "noop" line) has an empty list. A block without A lines has a single
  // empty annotator.
  std::vector<std::vector<M2Edit>> annotators;
  bool operator==(const M2Sentence&) const = default;

  std::vector<EditSet> gold_sets() const;
};

/// Reads "S ..." lines followed by "A start end|||type|||correction|||
/// required|||comment|||annotator" lines, blocks separated by blank lines.
/// A correction of "-NONE-" or "" deletes the span. Malformed lines throw
/// ParseError with the 1-based line number.
std::vector<M2Sentence> parse_m2(std::istream& in);
std::vector<M2Sentence> parse_m2(const std::filesystem::path& path);

void emit_m2(std::ostream& out, const std::vector<M2Sentence>& sentences);
void emit_m2(const std::filesystem::path& path, const std::vector<M2Sentence>& sentences);

/// Single-annotator M2 block built from a reference via extract_edits.
M2Sentence m2_from_pair(const Tokens& source, const Tokens& target);

}  // namespace btr::eval
