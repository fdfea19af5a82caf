#include "btr/eval/edits.hpp"

#include <algorithm>

#include "btr/common/error.hpp"

namespace btr::eval {

EditSet extract_edits(const Tokens& source, const Tokens& target) {
  const std::size_t n = source.size(), m = target.size();
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (source[i - 1] == target[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});

  // Walk back from the end; 'M' match, 'S' substitute, 'D' delete, 'I' insert.
  std::vector<char> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && source[i - 1] == target[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      ops.push_back('M');
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      ops.push_back('S');
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back('D');
      --i;
    } else {
      ops.push_back('I');
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());

  EditSet edits;
  i = j = 0;
  for (std::size_t k = 0; k < ops.size();) {
    if (ops[k] == 'M') {
      ++i, ++j, ++k;
      continue;
    }
    Edit e{static_cast<int>(i), static_cast<int>(i), {}};
    for (; k < ops.size() && ops[k] != 'M'; ++k) {
      if (ops[k] != 'I') ++i;
      if (ops[k] != 'D') e.repl.push_back(target[j++]);
    }
    e.end = static_cast<int>(i);
    edits.push_back(std::move(e));
  }
  return edits;
}

Tokens apply_edits(const Tokens& source, const EditSet& edits) {
  Tokens out;
  int pos = 0;
  for (const Edit& e : edits) {
    if (e.start < pos || e.end < e.start || e.end > static_cast<int>(source.size())) {
      throw ArgumentError("apply_edits: edits must be sorted, non-overlapping and inside the source");
    }
    out.insert(out.end(), source.begin() + pos, source.begin() + e.start);
    out.insert(out.end(), e.repl.begin(), e.repl.end());
    pos = e.end;
  }
  out.insert(out.end(), source.begin() + pos, source.end());
  return out;
}

Tokens to_tokens(const TokenSeq& ids) {
  Tokens out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(std::to_string(id));
  return out;
}

}  // namespace btr::eval
