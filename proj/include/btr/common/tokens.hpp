#pragma once

#include <vector>

namespace btr {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

}  // namespace btr
