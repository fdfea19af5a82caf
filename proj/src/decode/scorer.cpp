#include "btr/decode/scorer.hpp"

#include <limits>

#include "btr/common/error.hpp"
#include "btr/text/vocab.hpp"

namespace btr::decode {

std::vector<std::vector<double>> FunctionScorer::next_log_probs(const std::vector<TokenSeq>& prefixes) {
  std::vector<std::vector<double>> out;
  out.reserve(prefixes.size());
  for (const auto& p : prefixes) {
    out.push_back(fn_(p));
    if (static_cast<int>(out.back().size()) != vocab_) throw DimensionError("stub scorer: wrong distribution size");
  }
  return out;
}

ModelScorer::ModelScorer(const nn::ParamStore& params, const model::ModelConfig& cfg, const TokenSeq& x,
                         std::vector<bool> allowed)
    : cfg_(cfg), decoder_(params, cfg, x), allowed_(std::move(allowed)) {
  if (static_cast<int>(allowed_.size()) != cfg.vocab_size) throw ArgumentError("model scorer: mask size differs from vocabulary");
}

int ModelScorer::eos() const { return text::Vocabulary::kEos; }

void ModelScorer::extend(const std::vector<TokenSeq>& missing) {
  std::vector<TokenSeq> parents;
  for (const auto& p : missing)
    if (!p.empty() && !entries_.count(TokenSeq(p.begin(), p.end() - 1))) parents.emplace_back(p.begin(), p.end() - 1);
  if (!parents.empty()) {
    std::sort(parents.begin(), parents.end());
    parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
    extend(parents);
  }
  std::vector<Entry> fresh(missing.size());
  std::vector<model::DecoderCache*> caches;
  std::vector<int> tokens;
  for (std::size_t i = 0; i < missing.size(); ++i) {
    const TokenSeq& p = missing[i];
    fresh[i].cache = p.empty() ? decoder_.empty_cache() : entries_.at(TokenSeq(p.begin(), p.end() - 1)).cache;
    caches.push_back(&fresh[i].cache);
    tokens.push_back(p.empty() ? text::Vocabulary::kBos : p.back());
  }
  const nn::Tensor lsm = decoder_.step(caches, tokens);
  const double ninf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < missing.size(); ++i) {
    auto row = lsm.row(static_cast<int>(i));
    fresh[i].log_probs.assign(row.begin(), row.end());
    for (int v = 0; v < cfg_.vocab_size; ++v)
      if (!allowed_[static_cast<std::size_t>(v)]) fresh[i].log_probs[static_cast<std::size_t>(v)] = ninf;
    entries_[missing[i]] = std::move(fresh[i]);
  }
}

std::vector<std::vector<double>> ModelScorer::next_log_probs(const std::vector<TokenSeq>& prefixes) {
  if (prefixes.empty()) return {};
  std::size_t shortest = prefixes.front().size();
  std::vector<TokenSeq> missing;
  for (const auto& p : prefixes) {
    shortest = std::min(shortest, p.size());
    if (!entries_.count(p)) missing.push_back(p);
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    extend(missing);
  }
  std::vector<std::vector<double>> out;
  for (const auto& p : prefixes) out.push_back(entries_.at(p).log_probs);
  for (auto it = entries_.begin(); it != entries_.end();) it = it->first.size() < shortest ? entries_.erase(it) : std::next(it);
  return out;
}

std::vector<bool> generation_mask(int vocab_size, int first_content_id) {
  std::vector<bool> m(static_cast<std::size_t>(vocab_size), false);
  for (int v = first_content_id; v < vocab_size; ++v) m[static_cast<std::size_t>(v)] = true;
  m[text::Vocabulary::kEos] = true;
  return m;
}

}  // namespace btr::decode
