#include "btr/eval/gleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "btr/common/error.hpp"
#include "btr/common/rng.hpp"

namespace btr::eval {

namespace {

using NGramCounts = std::map<Tokens, int>;

NGramCounts ngrams(const Tokens& s, int n) {
  NGramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
    ++out[Tokens(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i) + n)];
  return out;
}

int count_of(const NGramCounts& c, const Tokens& g) {
  auto it = c.find(g);
  return it == c.end() ? 0 : it->second;
}

}  // namespace

double gleu(const Tokens& hyp, const Tokens& source, const Tokens& reference, int max_n) {
  if (hyp.empty()) return 0.0;
  if (max_n < 1) throw ArgumentError("gleu: max_n must be positive");
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const NGramCounts h = ngrams(hyp, n), r = ngrams(reference, n), s = ngrams(source, n);
    int total = 0, matched = 0, penalty = 0;
    for (const auto& [g, hc] : h) {
      const int rc = count_of(r, g), sc = count_of(s, g);
      total += hc;
      matched += std::min(hc, rc);
      penalty += std::min(hc, std::max(sc - rc, 0));
    }
    const int credit = std::max(matched - penalty, 0);
    if (total == 0 || credit == 0) return 0.0;
    log_sum += std::log(static_cast<double>(credit) / total);
  }
  const double h_len = static_cast<double>(hyp.size()), r_len = static_cast<double>(reference.size());
  const double bp = h_len > r_len ? 1.0 : std::exp(1.0 - r_len / h_len);
  return bp * std::exp(log_sum / max_n);
}

double corpus_gleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& sources,
                   const std::vector<std::vector<Tokens>>& references, int max_n, int iterations, std::uint64_t seed) {
  if (hyps.size() != sources.size() || hyps.size() != references.size()) throw ArgumentError("corpus_gleu: size mismatch");
  if (hyps.empty()) return 0.0;
  bool single = true;
  for (const auto& refs : references) {
    if (refs.empty()) throw ArgumentError("corpus_gleu: sentence without a reference");
    single = single && refs.size() == 1;
  }
  const double n = static_cast<double>(hyps.size());
  if (single) {
    double s = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) s += gleu(hyps[i], sources[i], references[i][0], max_n);
    return s / n;
  }
  // Sentence scores per reference are reused across rounds.
  std::vector<std::vector<double>> scores(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i)
    for (const auto& r : references[i]) scores[i].push_back(gleu(hyps[i], sources[i], r, max_n));
  Rng rng(seed);
  double total = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double s = 0.0;
    for (const auto& sc : scores) s += sc[static_cast<std::size_t>(rng.below(static_cast<int>(sc.size())))];
    total += s / n;
  }
  return total / iterations;
}

}  // namespace btr::eval
