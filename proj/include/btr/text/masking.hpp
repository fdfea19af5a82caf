#pragma once

#include <vector>

#include "btr/common/rng.hpp"
#include "btr/common/tokens.hpp"
#include "btr/text/vocab.hpp"

namespace btr::text {

enum class MaskClass { mask, random, keep };

/// A target with masked positions kappa, the sequence after masking, and
/// the replacement class of each masked position (parallel to kappa).
struct MaskedExample {
  TokenSeq original;
  TokenSeq masked;
  std::vector<int> kappa;
  std::vector<MaskClass> classes;

  /// Throws ContractError when the structural invariants do not hold.
  void validate() const;
};

/// Builds a MaskedExample from explicit choices; `replacements[i]` is used
/// for positions of class random and ignored otherwise.
MaskedExample make_masked(const TokenSeq& original, std::vector<int> kappa, std::vector<MaskClass> classes,
                          const TokenSeq& replacements = {});

/// Pure <M> at one position, as used for pseudo-log-likelihood scoring.
MaskedExample mask_single(const TokenSeq& original, int position);

/// Restores the original tokens at kappa.
TokenSeq unmask(const MaskedExample& ex);

struct BertMaskOptions {
  double rate = 0.15;
  // If selection picks nothing, mask one uniformly chosen eligible position.
  bool force_minimum = true;
  // Select exactly round(rate * eligible) positions instead of per-token
  // Bernoulli draws.
  bool exact_count = false;
  double p_mask = 0.8;
  double p_random = 0.1;  // remainder keeps the token
};

/// BERT-style 8:1:1 masking. `eligible`, when non-empty, marks which
/// positions may be selected. Random replacements are drawn from the
/// vocabulary's content ids and always differ from the original token.
MaskedExample bert_mask(const TokenSeq& y, const Vocabulary& vocab, const BertMaskOptions& options, Rng& rng,
                        const std::vector<bool>& eligible = {});

struct SpanCorruption {
  TokenSeq input;
  TokenSeq target;
};

/// Span corruption with explicit [begin, end) spans, sorted and
/// non-overlapping. Span i becomes sentinel i in the input; the target lists
/// sentinel i followed by the dropped tokens, closed by one final sentinel.
SpanCorruption span_corrupt_at(const TokenSeq& y, const std::vector<std::pair<int, int>>& spans,
                               const Vocabulary& vocab);

/// Drops round(rate * |y|) tokens in spans with geometric lengths of the
/// given mean, separated by at least one kept token.
SpanCorruption span_corrupt(const TokenSeq& y, const Vocabulary& vocab, double rate, double mean_span, Rng& rng);

/// Inverse of span corruption.
TokenSeq span_reconstruct(const SpanCorruption& sc, const Vocabulary& vocab);

struct PretrainRates {
  double span_rate = 0.15;
  double mean_span = 3.0;
  BertMaskOptions bert{};
};

struct PretrainPair {
  TokenSeq input;         // span-corrupted source side
  MaskedExample target;   // span target passed through bert_mask, sentinels excluded
};

/// Self-supervised pair for the reranker: span corruption followed by
/// BERT-style masking of the non-sentinel target positions.
PretrainPair btr_pretrain_pair(const TokenSeq& y, const Vocabulary& vocab, const PretrainRates& rates, Rng& rng);

}  // namespace btr::text
