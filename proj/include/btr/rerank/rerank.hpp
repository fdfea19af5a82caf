#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "btr/common/tokens.hpp"
#include "btr/decode/search.hpp"
#include "btr/eval/metric.hpp"
#include "btr/model/config.hpp"
#include "btr/nn/param_store.hpp"
#include "btr/text/vocab.hpp"

namespace btr::rerank {

/// Per-position log p(y_j | x, y with only position j masked) over y plus
/// </s>. `chunk` bounds the masked copies evaluated per forward pass; 0
/// evaluates all at once.
std::vector<double> pll_terms(const nn::ParamStore& params, const model::ModelConfig& cfg, const TokenSeq& x,
                              const TokenSeq& y, int chunk = 0);

/// Pseudo-log-likelihood of y plus </s>. btr and encoder_only roles;
/// empty y (nothing but </s>) is scored over the single </s> position.
double pll(const nn::ParamStore& params, const model::ModelConfig& cfg, const TokenSeq& x, const TokenSeq& y,
           int chunk = 0);

/// PLL of several candidates for one source, sharing forward passes.
std::vector<double> pll_many(const nn::ParamStore& params, const model::ModelConfig& cfg, const TokenSeq& x,
                             const std::vector<TokenSeq>& ys, int chunk = 0);

/// Scores used for the normalized selection: softmax of PLL / (|y| + 1).
/// Throws ArgumentError on an empty list, duplicate candidates or a size
/// mismatch.
std::vector<double> normalized_scores(const std::vector<TokenSeq>& candidates, const std::vector<double>& plls);

struct RerankDecision {
  std::vector<TokenSeq> candidates;  // rank order
  std::vector<double> f;             // parallel to candidates
  TokenSeq y_base;
  TokenSeq y_btr;
  TokenSeq chosen;
  eval::Verdict verdict = eval::Verdict::equal;
  double lambda = 0.0;
};

/// y_btr is the argmax of f (ties go to y_base, then the lower rank).
/// Equal when y_btr = y_base; otherwise Accept iff f(y_btr) - f(y_base) >
/// lambda, else Reject.
RerankDecision decide(const std::vector<TokenSeq>& candidates, const std::vector<double>& f, const TokenSeq& y_base,
                      double lambda);

/// Normalized scores of a candidate set's top `a_pred` candidates
/// (all when a_pred <= 0) under a btr or encoder_only model. Ensembles
/// average member PLLs.
struct ScoredSet {
  std::vector<TokenSeq> candidates;
  std::vector<double> plls;
  std::vector<double> f;
  TokenSeq y_base;
};

ScoredSet score_set(const std::vector<const nn::ParamStore*>& members, const model::ModelConfig& cfg,
                    const decode::CandidateSet& set, int a_pred, int chunk = 0);
std::vector<ScoredSet> score_sets(const std::vector<const nn::ParamStore*>& members, const model::ModelConfig& cfg,
                                  const std::vector<decode::CandidateSet>& sets, int a_pred, int chunk = 0,
                                  bool parallel = true);

RerankDecision decide(const ScoredSet& s, double lambda);

/// BTR reranking of one candidate set.
RerankDecision rerank_btr(const nn::ParamStore& params, const model::ModelConfig& cfg,
                          const decode::CandidateSet& set, double lambda, int a_pred = 0, int chunk = 0);
/// Same procedure with the encoder-only masked model.
RerankDecision rerank_encoder_only(const nn::ParamStore& params, const model::ModelConfig& cfg,
                                   const decode::CandidateSet& set, double lambda, int a_pred = 0);

struct Choice {
  int index = 0;  // into the candidate list (rank order)
  TokenSeq chosen;
  std::vector<double> scores;
};

/// Index of the highest score; ties go to the lower index.
int argmax_first(const std::vector<double>& scores);

/// argmax of L2R log-prob plus R2L log-prob of the reversed candidate. With
/// use_l2r false only the R2L term counts.
Choice rerank_r2l(const nn::ParamStore& l2r, const model::ModelConfig& l2r_cfg, const nn::ParamStore& r2l,
                  const model::ModelConfig& r2l_cfg, const decode::CandidateSet& set, bool use_l2r = true,
                  int a_pred = 0);

/// argmax of the classifier's p(<1>).
Choice rerank_classifier(const nn::ParamStore& params, const model::ModelConfig& cfg, const decode::CandidateSet& set,
                         int a_pred = 0);

/// Per-position log-probabilities of y plus </s> given x.
using PositionScorer = std::function<std::vector<double>(const TokenSeq& x, const TokenSeq& y)>;

PositionScorer causal_positions(const nn::ParamStore& params, const model::ModelConfig& cfg);
/// R2L model mapped back to left-to-right positions (</s> stays last).
PositionScorer r2l_positions(const nn::ParamStore& params, const model::ModelConfig& cfg);
/// L2R plus R2L terms at each position.
PositionScorer r2l_summed_positions(const nn::ParamStore& l2r, const model::ModelConfig& l2r_cfg,
                                    const nn::ParamStore& r2l, const model::ModelConfig& r2l_cfg);
/// Singleton-mask terms of a btr or encoder_only model.
PositionScorer masked_positions(const nn::ParamStore& params, const model::ModelConfig& cfg, int chunk = 0);

struct PositionProfile {
  std::vector<double> mean_ce;  // index j-1 holds position j
  std::vector<long> count;
};

/// Mean -log p(y_j) by content position over pairs whose target length lies
/// in [min_len, max_len]; other pairs are skipped. Throws ArgumentError if
/// none qualify.
PositionProfile position_loss_profile(const PositionScorer& scorer, const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs,
                                      int min_len, int max_len);

/// Mean f by original rank 1..a_pred. Every decision must hold exactly
/// a_pred candidates.
std::vector<double> rank_probability_profile(const std::vector<RerankDecision>& decisions, int a_pred);

void save_decisions(const std::filesystem::path& path, const std::vector<RerankDecision>& decisions,
                    const std::vector<TokenSeq>& sources, const text::Vocabulary& vocab);
std::vector<RerankDecision> load_decisions(const std::filesystem::path& path, const text::Vocabulary& vocab,
                                           std::vector<TokenSeq>* sources = nullptr);

/// Two-column CSV "position,value" (plus extra named columns if given).
void write_profile_csv(const std::filesystem::path& path, const std::string& value_name,
                       const std::vector<double>& values, const std::vector<long>& counts = {});

}  // namespace btr::rerank
