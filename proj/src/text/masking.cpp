#include "btr/text/masking.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "btr/common/error.hpp"

namespace btr::text {

void MaskedExample::validate() const {
  if (masked.size() != original.size()) throw ContractError("masked example: length changed by masking");
  if (classes.size() != kappa.size()) throw ContractError("masked example: one class per masked position required");
  std::vector<bool> in_kappa(original.size(), false);
  for (std::size_t i = 0; i < kappa.size(); ++i) {
    const int k = kappa[i];
    if (k < 0 || static_cast<std::size_t>(k) >= original.size()) throw ContractError("masked example: position out of range");
    if (i > 0 && kappa[i - 1] >= k) throw ContractError("masked example: positions must be strictly increasing");
    in_kappa[static_cast<std::size_t>(k)] = true;
    const bool is_mask = masked[k] == Vocabulary::kMask;
    const bool same = masked[k] == original[k];
    switch (classes[i]) {
      case MaskClass::mask:
        if (!is_mask) throw ContractError("masked example: mask-class position without <M>");
        break;
      case MaskClass::random:
        if (is_mask || same) throw ContractError("masked example: random-class position must hold a different token");
        break;
      case MaskClass::keep:
        if (!same) throw ContractError("masked example: keep-class position was altered");
        break;
    }
  }
  for (std::size_t j = 0; j < original.size(); ++j) {
    if (!in_kappa[j] && masked[j] != original[j]) throw ContractError("masked example: unselected position altered");
  }
}

MaskedExample make_masked(const TokenSeq& original, std::vector<int> kappa, std::vector<MaskClass> classes,
                          const TokenSeq& replacements) {
  MaskedExample ex{original, original, std::move(kappa), std::move(classes)};
  if (ex.classes.size() != ex.kappa.size()) throw ArgumentError("make_masked: classes and positions differ in count");
  for (std::size_t i = 0; i < ex.kappa.size(); ++i) {
    const int k = ex.kappa[i];
    if (k < 0 || static_cast<std::size_t>(k) >= original.size()) throw ArgumentError("make_masked: position out of range");
    if (ex.classes[i] == MaskClass::mask) ex.masked[k] = Vocabulary::kMask;
    if (ex.classes[i] == MaskClass::random) {
      if (i >= replacements.size()) throw ArgumentError("make_masked: missing replacement token");
      ex.masked[k] = replacements[i];
    }
  }
  ex.validate();
  return ex;
}

MaskedExample mask_single(const TokenSeq& original, int position) {
  if (position < 0 || static_cast<std::size_t>(position) >= original.size()) {
    throw ArgumentError("mask_single: position " + std::to_string(position) + " outside sequence");
  }
  MaskedExample ex{original, original, {position}, {MaskClass::mask}};
  ex.masked[position] = Vocabulary::kMask;
  return ex;
}

TokenSeq unmask(const MaskedExample& ex) {
  TokenSeq out = ex.masked;
  for (int k : ex.kappa) out[k] = ex.original[k];
  return out;
}

MaskedExample bert_mask(const TokenSeq& y, const Vocabulary& vocab, const BertMaskOptions& options, Rng& rng,
                        const std::vector<bool>& eligible) {
  if (!(options.rate >= 0.0 && options.rate < 1.0)) throw ConfigError("bert_mask: rate must lie in [0, 1)");
  if (!eligible.empty() && eligible.size() != y.size()) throw ArgumentError("bert_mask: eligibility length mismatch");
  std::vector<int> candidates;
  for (std::size_t j = 0; j < y.size(); ++j)
    if (eligible.empty() || eligible[j]) candidates.push_back(static_cast<int>(j));

  std::vector<int> kappa;
  if (options.exact_count) {
    const auto want = static_cast<std::size_t>(std::lround(options.rate * static_cast<double>(candidates.size())));
    std::vector<int> pool = candidates;
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(std::min(want, pool.size()));
    kappa = std::move(pool);
  } else {
    for (int j : candidates)
      if (rng.bernoulli(options.rate)) kappa.push_back(j);
  }
  if (kappa.empty() && options.force_minimum && options.rate > 0.0 && !candidates.empty()) {
    kappa.push_back(candidates[static_cast<std::size_t>(rng.below(static_cast<int>(candidates.size())))]);
  }
  std::sort(kappa.begin(), kappa.end());

  const std::vector<TokenId> content = vocab.content_ids();
  MaskedExample ex{y, y, kappa, {}};
  ex.classes.reserve(kappa.size());
  for (int k : kappa) {
    const double u = rng.uniform();
    MaskClass c = u < options.p_mask ? MaskClass::mask
                  : u < options.p_mask + options.p_random ? MaskClass::random
                                                          : MaskClass::keep;
    if (c == MaskClass::random) {
      // Draw from content ids other than the original token.
      const bool orig_is_content = !vocab.is_reserved(y[k]);
      const int choices = static_cast<int>(content.size()) - (orig_is_content ? 1 : 0);
      if (choices <= 0) {
        c = MaskClass::mask;
      } else {
        int r = rng.below(choices);
        TokenId tok = content[static_cast<std::size_t>(r)];
        if (orig_is_content && tok >= y[k]) tok = content[static_cast<std::size_t>(r + 1)];
        ex.masked[k] = tok;
      }
    }
    if (c == MaskClass::mask) ex.masked[k] = Vocabulary::kMask;
    ex.classes.push_back(c);
  }
  return ex;
}

SpanCorruption span_corrupt_at(const TokenSeq& y, const std::vector<std::pair<int, int>>& spans,
                               const Vocabulary& vocab) {
  SpanCorruption sc;
  int pos = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [b, e] = spans[i];
    if (b < pos || e <= b || static_cast<std::size_t>(e) > y.size()) {
      throw ArgumentError("span_corrupt_at: spans must be sorted, non-empty and non-overlapping");
    }
    const TokenId s = vocab.sentinel(static_cast<int>(i));
    sc.input.insert(sc.input.end(), y.begin() + pos, y.begin() + b);
    sc.input.push_back(s);
    sc.target.push_back(s);
    sc.target.insert(sc.target.end(), y.begin() + b, y.begin() + e);
    pos = e;
  }
  sc.input.insert(sc.input.end(), y.begin() + pos, y.end());
  sc.target.push_back(vocab.sentinel(static_cast<int>(spans.size())));
  return sc;
}

SpanCorruption span_corrupt(const TokenSeq& y, const Vocabulary& vocab, double rate, double mean_span, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("span_corrupt: rate must lie in [0, 1]");
  const int n = static_cast<int>(y.size());
  const int n_noise = std::clamp(static_cast<int>(std::lround(rate * n)), 0, n);
  std::vector<int> lengths;
  for (int total = 0; total < n_noise;) {
    const int len = std::min(rng.geometric(mean_span), n_noise - total);
    lengths.push_back(len);
    total += len;
  }
  const int n_keep = n - n_noise;
  // Spans need a kept token between them; merge trailing spans if short of
  // separators.
  while (static_cast<int>(lengths.size()) > n_keep + 1) {
    const int last = lengths.back();
    lengths.pop_back();
    lengths.back() += last;
  }
  const int n_spans = static_cast<int>(lengths.size());
  std::vector<int> gaps(static_cast<std::size_t>(n_spans) + 1, 0);
  for (int i = 1; i < n_spans; ++i) gaps[static_cast<std::size_t>(i)] = 1;
  for (int extra = n_keep - std::max(0, n_spans - 1); extra > 0; --extra) {
    ++gaps[static_cast<std::size_t>(rng.below(n_spans + 1))];
  }
  std::vector<std::pair<int, int>> spans;
  int pos = 0;
  for (int i = 0; i < n_spans; ++i) {
    pos += gaps[static_cast<std::size_t>(i)];
    spans.emplace_back(pos, pos + lengths[static_cast<std::size_t>(i)]);
    pos += lengths[static_cast<std::size_t>(i)];
  }
  return span_corrupt_at(y, spans, vocab);
}

TokenSeq span_reconstruct(const SpanCorruption& sc, const Vocabulary& vocab) {
  std::map<TokenId, TokenSeq> fills;
  TokenId current = -1;
  for (TokenId t : sc.target) {
    if (vocab.is_sentinel(t)) {
      if (fills.count(t)) throw DataError("span_reconstruct: sentinel repeated in target");
      fills[t];
      current = t;
    } else {
      if (current < 0) throw DataError("span_reconstruct: target must start with a sentinel");
      fills[current].push_back(t);
    }
  }
  TokenSeq out;
  for (TokenId t : sc.input) {
    if (!vocab.is_sentinel(t)) {
      out.push_back(t);
      continue;
    }
    auto it = fills.find(t);
    if (it == fills.end()) throw DataError("span_reconstruct: input sentinel missing from target");
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

PretrainPair btr_pretrain_pair(const TokenSeq& y, const Vocabulary& vocab, const PretrainRates& rates, Rng& rng) {
  SpanCorruption sc = span_corrupt(y, vocab, rates.span_rate, rates.mean_span, rng);
  PretrainPair out;
  out.input = sc.input;
  if (rates.bert.rate <= 0.0) {
    out.target = MaskedExample{sc.target, sc.target, {}, {}};
    return out;
  }
  std::vector<bool> eligible(sc.target.size());
  for (std::size_t i = 0; i < sc.target.size(); ++i) eligible[i] = !vocab.is_sentinel(sc.target[i]);
  out.target = bert_mask(sc.target, vocab, rates.bert, rng, eligible);
  return out;
}

}  // namespace btr::text
