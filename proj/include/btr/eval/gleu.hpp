#pragma once

#include <cstdint>
#include <vector>

#include "btr/eval/edits.hpp"

namespace btr::eval {

/// Sentence GLEU against one reference. For each order n the hypothesis
/// n-grams matched by the reference (clipped) are credited and those that
/// also occur in the source but not in the reference are debited, floored
/// at zero, over the hypothesis n-gram count. The geometric mean over
/// n = 1..max_n is scaled by the brevity penalty exp(1 - r/h) when h <= r.
/// An empty hypothesis scores 0.
double gleu(const Tokens& hyp, const Tokens& source, const Tokens& reference, int max_n = 4);

/// Corpus GLEU: mean of sentence scores. With several references per
/// sentence one reference is drawn per sentence in each of `iterations`
/// seeded rounds and the round means are averaged.
double corpus_gleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& sources,
                   const std::vector<std::vector<Tokens>>& references, int max_n = 4, int iterations = 500,
                   std::uint64_t seed = 0);

}  // namespace btr::eval
