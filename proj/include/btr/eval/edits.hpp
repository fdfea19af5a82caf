#pragma once

#include <compare>
#include <string>
#include <vector>

#include "btr/common/tokens.hpp"

namespace btr::eval {

using Tokens = std::vector<std::string>;

/// Replace source[start, end) with `repl`. Insertions have start == end.
struct Edit {
  int start = 0;
  int end = 0;
  Tokens repl;
  auto operator<=>(const Edit&) const = default;
};

using EditSet = std::vector<Edit>;

/// Minimal unit-cost Levenshtein alignment; runs of adjacent non-match
/// operations become one edit. Among optimal alignments the backtrace
/// prefers match, then substitution, then deletion, which places edits
/// leftmost.
EditSet extract_edits(const Tokens& source, const Tokens& target);

/// Applies sorted, non-overlapping edits. Throws ArgumentError otherwise.
Tokens apply_edits(const Tokens& source, const EditSet& edits);

/// Ids rendered as decimal strings, for metrics over token ids.
Tokens to_tokens(const TokenSeq& ids);

}  // namespace btr::eval
