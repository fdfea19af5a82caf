#include "btr/eval/fscore.hpp"

#include <algorithm>
#include <tuple>

#include "btr/common/error.hpp"

namespace btr::eval {

EditCounts edit_counts(const EditSet& hyp, const EditSet& gold) {
  EditSet h = hyp, g = gold;
  std::sort(h.begin(), h.end());
  std::sort(g.begin(), g.end());
  h.erase(std::unique(h.begin(), h.end()), h.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  EditSet common;
  std::set_intersection(h.begin(), h.end(), g.begin(), g.end(), std::back_inserter(common));
  const auto tp = static_cast<long>(common.size());
  return {tp, static_cast<long>(h.size()) - tp, static_cast<long>(g.size()) - tp};
}

PRF prf(const EditCounts& c, double beta) {
  PRF r;
  r.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : (c.fn == 0 ? 1.0 : 0.0);
  r.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 1.0;
  const double b2 = beta * beta;
  const double den = b2 * r.precision + r.recall;
  r.f = den > 0.0 ? (1.0 + b2) * r.precision * r.recall / den : 0.0;
  return r;
}

PRF f_beta(const EditSet& hyp, const EditSet& gold, double beta) { return prf(edit_counts(hyp, gold), beta); }

EditCounts corpus_counts(const std::vector<EditSet>& hyps, const std::vector<std::vector<EditSet>>& golds,
                         double beta) {
  if (hyps.size() != golds.size()) throw ArgumentError("corpus_counts: hypothesis and gold counts differ");
  EditCounts total;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& anns = golds[s];
    if (anns.empty()) {
      total += edit_counts(hyps[s], {});
      continue;
    }
    EditCounts best_c;
    std::tuple<double, long, long, long> best_key{-1.0, 0, 0, 0};
    for (const EditSet& g : anns) {
      const EditCounts c = edit_counts(hyps[s], g);
      EditCounts t = total;
      t += c;
      const std::tuple<double, long, long, long> key{prf(t, beta).f, c.tp, -c.fp, -c.fn};
      if (key > best_key) {
        best_key = key;
        best_c = c;
      }
    }
    total += best_c;
  }
  return total;
}

}  // namespace btr::eval
