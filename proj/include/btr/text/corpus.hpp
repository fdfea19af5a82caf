#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "btr/common/rng.hpp"
#include "btr/text/dataset_io.hpp"
#include "btr/text/vocab.hpp"
#include "json.hpp"

namespace btr::text {

struct LanguageParams {
  int alphabet_size = 30;  // a-z then A, B, ...
  int min_len = 4;
  int max_len = 12;
  // Each order-2 context strongly prefers this many successors.
  int preferred_successors = 3;
  double preferred_mass = 0.9;
  std::uint64_t seed = 7;
};

struct NoiseParams {
  double rate = 0.15;
  double clean_fraction = 0.1;
  // Relative weights of substitute, delete, insert, duplicate, swap.
  std::vector<double> op_weights{1, 1, 1, 1, 1};
};

void to_json(nlohmann::json& j, const LanguageParams& p);
void from_json(const nlohmann::json& j, LanguageParams& p);
void to_json(nlohmann::json& j, const NoiseParams& p);
void from_json(const nlohmann::json& j, NoiseParams& p);

/// Seeded order-2 Markov chain over a small symbol alphabet. Sentence length
/// is drawn uniformly from [min_len, max_len] and symbols from the
/// transition table of the two previous symbols.
class MarkovLanguage {
 public:
  explicit MarkovLanguage(const LanguageParams& params);

  const std::vector<std::string>& symbols() const { return symbols_; }
  std::vector<std::string> sample(Rng& rng) const;
  /// Vocabulary holding exactly the alphabet as content tokens.
  Vocabulary vocabulary(int n_sentinels = 16) const;

 private:
  int pick(int prev2, int prev1, Rng& rng) const;

  LanguageParams params_;
  std::vector<std::string> symbols_;
  std::vector<std::vector<double>> cdf_;  // indexed by context (prev2, prev1)
};

/// Corrupts `tgt` left to right: each position independently triggers one
/// edit with probability `rate`.
std::vector<std::string> corrupt(const std::vector<std::string>& tgt, const std::vector<std::string>& alphabet,
                                 const NoiseParams& noise, Rng& rng);

/// Pair i draws from rng.split(i), so any subset of the corpus can be
/// regenerated independently of the others.
std::vector<TextPair> synth_gec_corpus(int n, const LanguageParams& lang, const NoiseParams& noise, const Rng& rng);

std::string join_tokens(const std::vector<std::string>& toks);

}  // namespace btr::text
