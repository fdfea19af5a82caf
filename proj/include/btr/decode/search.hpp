#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "btr/common/rng.hpp"
#include "btr/decode/scorer.hpp"
#include "btr/eval/metric.hpp"
#include "btr/text/vocab.hpp"
#include "json.hpp"

namespace btr::decode {

struct Candidate {
  TokenSeq text;      // content tokens, no </s>
  double base_score;  // total log-prob including </s>
  int rank = 0;
  bool forced_eos = false;  // closed at max_len
};

/// Ranked, deduplicated hypotheses for one source. `generated` counts
/// hypotheses before deduplication.
struct CandidateSet {
  TokenSeq source;
  std::vector<Candidate> candidates;
  std::optional<TokenSeq> gold;
  int generated = 0;

  const TokenSeq& y_base() const;
};

/// Sorts by descending score (ties: lexicographic token order), drops
/// repeated token sequences keeping the best, assigns ranks 1..n and
/// truncates to `limit` when positive.
void finalize(CandidateSet& set, int limit = 0);

/// Length-completed beam search ranked by total log-prob. Each step takes
/// the best `beam` expansions of the live hypotheses; those ending in </s>
/// finish and the best `beam` others stay live. Search ends when nothing
/// is live or no live hypothesis can beat the `beam` finished ones. After
/// max_len content tokens a hypothesis is closed by scoring </s>.
CandidateSet beam_search(Scorer& scorer, const TokenSeq& x, int beam, int max_len);

/// Hamming-diverse beam search: `groups` sub-beams of beam/groups run in
/// lockstep; group g ranks its expansions after subtracting penalty times
/// the number of times the token was already chosen by groups < g at this
/// step. Stored scores are the unpenalized log-probs.
CandidateSet diverse_beam_search(Scorer& scorer, const TokenSeq& x, int beam, int groups, double penalty,
                                 int max_len);

struct SampleStrategy {
  enum Kind { top_k, nucleus } kind = top_k;
  int k = 50;
  double p = 0.95;
};

/// Token ids kept by the strategy, in descending probability (ties by id).
/// Nucleus keeps the shortest prefix whose mass reaches p.
std::vector<int> truncate_distribution(const std::vector<double>& log_probs, const SampleStrategy& s);

/// Ancestral sampling from the truncated, renormalized distribution. Scores
/// are the model's untruncated log-probs.
CandidateSet sample_decode(Scorer& scorer, const TokenSeq& x, const SampleStrategy& strategy, int n_samples,
                           int max_len, Rng& rng);

struct DecodeOptions {
  std::string method = "beam";  // beam | diverse | top_k | nucleus
  int beam = 5;
  int groups = 5;
  double penalty = 0.4;
  int top_k = 50;
  double top_p = 0.95;
  int n_samples = 5;
  int max_len = 32;
};

void to_json(nlohmann::json& j, const DecodeOptions& o);
void from_json(const nlohmann::json& j, DecodeOptions& o);

/// Decodes every source with a causal model. Sources are independent, so
/// the parallel path (OpenMP over sources) returns exactly what the serial
/// one does; sampling for source i draws from rng.split(i).
std::vector<CandidateSet> generate(const nn::ParamStore& params, const model::ModelConfig& cfg,
                                   const text::Vocabulary& vocab, const std::vector<TokenSeq>& sources,
                                   const DecodeOptions& options, const Rng& rng, bool parallel = true);

struct CandidateStats {
  double gold_pct = 0.0;
  double unique_pct = 0.0;
  double oracle = 0.0;
  double top1 = 0.0;
  long n = 0;
};

void to_json(nlohmann::json& j, const CandidateStats& s);

/// Gold %: sets whose candidates include the gold verbatim. Unique %:
/// distinct candidates over generated hypotheses. Oracle: corpus metric of
/// the per-set best candidate by sentence score (ties toward better rank).
/// Top-1: corpus metric of the rank-1 candidates.
CandidateStats candidate_stats(const std::vector<CandidateSet>& sets, const eval::Metric& metric,
                               const text::Vocabulary& vocab);

/// JSONL {"src", "gold"?, "candidates": [{"text", "base_score", "rank"}], "generated"}.
void save_candidates(const std::filesystem::path& path, const std::vector<CandidateSet>& sets,
                     const text::Vocabulary& vocab);
std::vector<CandidateSet> load_candidates(const std::filesystem::path& path, const text::Vocabulary& vocab);

eval::Tokens words(const text::Vocabulary& vocab, const TokenSeq& ids);

}  // namespace btr::decode
