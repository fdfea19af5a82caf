#pragma once

#include "btr/eval/edits.hpp"

namespace btr::eval {

struct EditCounts {
  long tp = 0, fp = 0, fn = 0;
  EditCounts& operator+=(const EditCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn;
    return *this;
  }
};

struct PRF {
  double precision = 0.0, recall = 0.0, f = 0.0;
};

/// TP counts exact (span, replacement) matches.
EditCounts edit_counts(const EditSet& hyp, const EditSet& gold);

// P = TP/(TP+FP), or 1 if nothing was proposed and nothing was required,
// else 0; R = TP/(TP+FN), or 1 when nothing was required; F is 0 when
// beta^2 P + R is 0.
PRF prf(const EditCounts& c, double beta = 0.5);
PRF f_beta(const EditSet& hyp, const EditSet& gold, double beta = 0.5);

/// Corpus score with several annotators per sentence: each sentence adds
/// the counts of the annotator that maximizes the running corpus F (ties:
/// more TP, then fewer FP, then fewer FN, then lower annotator index).
EditCounts corpus_counts(const std::vector<EditSet>& hyps, const std::vector<std::vector<EditSet>>& golds,
                         double beta = 0.5);

}  // namespace btr::eval
