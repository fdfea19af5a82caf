#include "btr/rerank/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "btr/common/error.hpp"
#include "btr/common/parallel.hpp"
#include "btr/model/transformer.hpp"
#include "btr/text/masking.hpp"
#include "btr/training/train.hpp"

namespace btr::rerank {

using model::ModelConfig;
using model::Role;
using nn::ParamStore;

namespace {

// Singleton-mask log-probs for every position of every candidate, in
// candidate-major order.
std::vector<std::vector<double>> singleton_terms(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                                 const std::vector<TokenSeq>& ys, int chunk) {
  model::require_role(cfg, {Role::btr, Role::encoder_only}, "pll");
  if (chunk < 0) throw ArgumentError("pll: chunk must be non-negative");
  std::vector<text::MaskedExample> exs;
  for (const auto& y : ys) {
    const TokenSeq full = model::with_eos(y);
    for (int j = 0; j < static_cast<int>(full.size()); ++j) exs.push_back(text::mask_single(full, j));
  }
  const std::size_t step = chunk == 0 ? std::max<std::size_t>(exs.size(), 1) : static_cast<std::size_t>(chunk);
  std::vector<double> flat;
  flat.reserve(exs.size());
  for (std::size_t b = 0; b < exs.size(); b += step) {
    std::vector<text::MaskedExample> sub(exs.begin() + static_cast<long>(b),
                                         exs.begin() + static_cast<long>(std::min(exs.size(), b + step)));
    const auto lps = cfg.role == Role::btr ? model::btr_masked_log_probs(params, cfg, x, sub)
                                           : model::encoder_masked_log_probs(params, cfg, x, sub);
    for (const auto& v : lps) flat.push_back(v.front());
  }
  std::vector<std::vector<double>> out;
  std::size_t pos = 0;
  for (const auto& y : ys) {
    out.emplace_back(flat.begin() + static_cast<long>(pos), flat.begin() + static_cast<long>(pos + y.size() + 1));
    pos += y.size() + 1;
  }
  return out;
}

double sum_in_order(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

std::vector<TokenSeq> top_candidates(const decode::CandidateSet& set, int a_pred) {
  if (set.candidates.empty()) throw ArgumentError("rerank: empty candidate set");
  std::vector<TokenSeq> out;
  for (const auto& c : set.candidates) {
    if (a_pred > 0 && static_cast<int>(out.size()) >= a_pred) break;
    out.push_back(c.text);
  }
  return out;
}

Choice choose(std::vector<TokenSeq> cands, std::vector<double> scores) {
  Choice c;
  c.index = argmax_first(scores);
  c.chosen = cands[static_cast<std::size_t>(c.index)];
  c.scores = std::move(scores);
  return c;
}

std::string words(const text::Vocabulary& vocab, const TokenSeq& ids) { return vocab.decode(ids); }

}  // namespace

std::vector<double> pll_terms(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x, const TokenSeq& y,
                              int chunk) {
  return singleton_terms(params, cfg, x, {y}, chunk).front();
}

double pll(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x, const TokenSeq& y, int chunk) {
  return sum_in_order(pll_terms(params, cfg, x, y, chunk));
}

std::vector<double> pll_many(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                             const std::vector<TokenSeq>& ys, int chunk) {
  std::vector<double> out;
  for (const auto& t : singleton_terms(params, cfg, x, ys, chunk)) out.push_back(sum_in_order(t));
  return out;
}

std::vector<double> normalized_scores(const std::vector<TokenSeq>& candidates, const std::vector<double>& plls) {
  if (candidates.empty()) throw ArgumentError("normalized_scores: no candidates");
  if (candidates.size() != plls.size()) throw ArgumentError("normalized_scores: one PLL per candidate required");
  if (std::set<TokenSeq>(candidates.begin(), candidates.end()).size() != candidates.size()) {
    throw ArgumentError("normalized_scores: duplicate candidates");
  }
  std::vector<double> s(plls.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(plls[i])) throw NumericError("normalized_scores: PLL is not finite");
    s[i] = plls[i] / static_cast<double>(candidates[i].size() + 1);
  }
  const double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (auto& v : s) z += (v = std::exp(v - m));
  for (auto& v : s) v /= z;
  return s;
}

RerankDecision decide(const std::vector<TokenSeq>& candidates, const std::vector<double>& f, const TokenSeq& y_base,
                      double lambda) {
  if (!(lambda >= 0.0)) throw ArgumentError("decide: lambda must be non-negative");
  if (candidates.size() != f.size() || candidates.empty()) throw ArgumentError("decide: one score per candidate required");
  const auto it = std::find(candidates.begin(), candidates.end(), y_base);
  if (it == candidates.end()) throw ArgumentError("decide: y_base is not among the scored candidates");
  const std::size_t base = static_cast<std::size_t>(it - candidates.begin());
  std::size_t best = base;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (f[i] > f[best]) best = i;
  RerankDecision d;
  d.candidates = candidates;
  d.f = f;
  d.y_base = y_base;
  d.y_btr = candidates[best];
  d.lambda = lambda;
  if (best == base) {
    d.verdict = eval::Verdict::equal;
  } else {
    d.verdict = f[best] - f[base] > lambda ? eval::Verdict::accept : eval::Verdict::reject;
  }
  d.chosen = d.verdict == eval::Verdict::accept ? d.y_btr : d.y_base;
  return d;
}

ScoredSet score_set(const std::vector<const ParamStore*>& members, const ModelConfig& cfg,
                    const decode::CandidateSet& set, int a_pred, int chunk) {
  if (members.empty()) throw ArgumentError("score_set: no model");
  ScoredSet s;
  s.candidates = top_candidates(set, a_pred);
  s.y_base = set.y_base();
  s.plls.assign(s.candidates.size(), 0.0);
  for (const ParamStore* m : members) {
    const auto p = pll_many(*m, cfg, set.source, s.candidates, chunk);
    for (std::size_t i = 0; i < p.size(); ++i) s.plls[i] += p[i];
  }
  for (auto& v : s.plls) v /= static_cast<double>(members.size());
  s.f = normalized_scores(s.candidates, s.plls);
  return s;
}

std::vector<ScoredSet> score_sets(const std::vector<const ParamStore*>& members, const ModelConfig& cfg,
                                  const std::vector<decode::CandidateSet>& sets, int a_pred, int chunk,
                                  bool parallel) {
  std::vector<ScoredSet> out(sets.size());
  parallel_for(static_cast<long>(sets.size()), parallel, [&](long i) {
    out[static_cast<std::size_t>(i)] = score_set(members, cfg, sets[static_cast<std::size_t>(i)], a_pred, chunk);
  });
  return out;
}

RerankDecision decide(const ScoredSet& s, double lambda) { return decide(s.candidates, s.f, s.y_base, lambda); }

RerankDecision rerank_btr(const ParamStore& params, const ModelConfig& cfg, const decode::CandidateSet& set,
                          double lambda, int a_pred, int chunk) {
  model::require_role(cfg, {Role::btr}, "rerank_btr");
  return decide(score_set({&params}, cfg, set, a_pred, chunk), lambda);
}

RerankDecision rerank_encoder_only(const ParamStore& params, const ModelConfig& cfg, const decode::CandidateSet& set,
                                   double lambda, int a_pred) {
  model::require_role(cfg, {Role::encoder_only}, "rerank_encoder_only");
  return decide(score_set({&params}, cfg, set, a_pred), lambda);
}

int argmax_first(const std::vector<double>& scores) {
  if (scores.empty()) throw ArgumentError("argmax over no scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<int>(best);
}

Choice rerank_r2l(const ParamStore& l2r, const ModelConfig& l2r_cfg, const ParamStore& r2l, const ModelConfig& r2l_cfg,
                  const decode::CandidateSet& set, bool use_l2r, int a_pred) {
  model::require_role(l2r_cfg, {Role::base_l2r}, "rerank_r2l (left-to-right model)");
  model::require_role(r2l_cfg, {Role::r2l}, "rerank_r2l (right-to-left model)");
  auto cands = top_candidates(set, a_pred);
  std::vector<TokenSeq> rev;
  for (const auto& y : cands) rev.push_back(training::reversed(y));
  std::vector<double> scores = model::seq_log_probs(r2l, r2l_cfg, set.source, rev);
  if (use_l2r) {
    const auto l = model::seq_log_probs(l2r, l2r_cfg, set.source, cands);
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = l[i] + scores[i];
  }
  return choose(std::move(cands), std::move(scores));
}

Choice rerank_classifier(const ParamStore& params, const ModelConfig& cfg, const decode::CandidateSet& set,
                         int a_pred) {
  model::require_role(cfg, {Role::encoder_only}, "rerank_classifier");
  auto cands = top_candidates(set, a_pred);
  std::vector<TokenSeq> seqs;
  for (const auto& y : cands) seqs.push_back(model::classifier_input(y));
  return choose(std::move(cands), model::classify_batch(params, cfg, seqs));
}

PositionScorer causal_positions(const ParamStore& params, const ModelConfig& cfg) {
  model::require_role(cfg, {Role::base_l2r}, "causal position scorer");
  return [&params, cfg](const TokenSeq& x, const TokenSeq& y) { return model::token_log_probs(params, cfg, x, y); };
}

PositionScorer r2l_positions(const ParamStore& params, const ModelConfig& cfg) {
  model::require_role(cfg, {Role::r2l}, "right-to-left position scorer");
  return [&params, cfg](const TokenSeq& x, const TokenSeq& y) {
    const auto t = model::token_log_probs(params, cfg, x, training::reversed(y));
    const std::size_t n = y.size();
    std::vector<double> out(n + 1);
    for (std::size_t j = 0; j < n; ++j) out[j] = t[n - 1 - j];
    out[n] = t[n];
    return out;
  };
}

PositionScorer r2l_summed_positions(const ParamStore& l2r, const ModelConfig& l2r_cfg, const ParamStore& r2l,
                                    const ModelConfig& r2l_cfg) {
  auto a = causal_positions(l2r, l2r_cfg);
  auto b = r2l_positions(r2l, r2l_cfg);
  return [a, b](const TokenSeq& x, const TokenSeq& y) {
    auto out = a(x, y);
    const auto r = b(x, y);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
    return out;
  };
}

PositionScorer masked_positions(const ParamStore& params, const ModelConfig& cfg, int chunk) {
  model::require_role(cfg, {Role::btr, Role::encoder_only}, "masked position scorer");
  return [&params, cfg, chunk](const TokenSeq& x, const TokenSeq& y) { return pll_terms(params, cfg, x, y, chunk); };
}

PositionProfile position_loss_profile(const PositionScorer& scorer,
                                      const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs, int min_len,
                                      int max_len) {
  if (min_len < 1 || max_len < min_len) throw ArgumentError("position_loss_profile: bad length bucket");
  PositionProfile prof;
  prof.mean_ce.assign(static_cast<std::size_t>(max_len), 0.0);
  prof.count.assign(static_cast<std::size_t>(max_len), 0);
  long used = 0;
  for (const auto& [x, y] : pairs) {
    const int n = static_cast<int>(y.size());
    if (n < min_len || n > max_len) continue;
    ++used;
    const auto lp = scorer(x, y);
    for (int j = 0; j < n; ++j) {
      prof.mean_ce[static_cast<std::size_t>(j)] -= lp[static_cast<std::size_t>(j)];
      ++prof.count[static_cast<std::size_t>(j)];
    }
  }
  if (used == 0) throw ArgumentError("position_loss_profile: no target length in the bucket");
  for (std::size_t j = 0; j < prof.mean_ce.size(); ++j)
    if (prof.count[j] > 0) prof.mean_ce[j] /= static_cast<double>(prof.count[j]);
  return prof;
}

std::vector<double> rank_probability_profile(const std::vector<RerankDecision>& decisions, int a_pred) {
  if (a_pred < 1) throw ArgumentError("rank_probability_profile: a_pred must be at least 1");
  if (decisions.empty()) throw ArgumentError("rank_probability_profile: no decisions");
  std::vector<double> out(static_cast<std::size_t>(a_pred), 0.0);
  for (const auto& d : decisions) {
    if (static_cast<int>(d.f.size()) != a_pred) {
      throw ArgumentError("rank_probability_profile: decision with " + std::to_string(d.f.size()) +
                          " candidates, expected " + std::to_string(a_pred));
    }
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += d.f[r];
  }
  for (auto& v : out) v /= static_cast<double>(decisions.size());
  return out;
}

void save_decisions(const std::filesystem::path& path, const std::vector<RerankDecision>& decisions,
                    const std::vector<TokenSeq>& sources, const text::Vocabulary& vocab) {
  if (sources.size() != decisions.size()) throw ArgumentError("save_decisions: one source per decision required");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write decision file '" + path.string() + "'");
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& d = decisions[i];
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : d.candidates) cands.push_back(words(vocab, c));
    nlohmann::json j{{"src", words(vocab, sources[i])},
                     {"chosen", words(vocab, d.chosen)},
                     {"verdict", eval::to_string(d.verdict)},
                     {"f", d.f},
                     {"lambda", d.lambda},
                     {"y_base", words(vocab, d.y_base)},
                     {"y_btr", words(vocab, d.y_btr)},
                     {"candidates", cands}};
    out << j.dump() << '\n';
  }
}

std::vector<RerankDecision> load_decisions(const std::filesystem::path& path, const text::Vocabulary& vocab,
                                           std::vector<TokenSeq>* sources) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("decision file '" + path.string() + "' not found");
  std::vector<RerankDecision> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RerankDecision d;
      d.chosen = vocab.encode(j.at("chosen").get<std::string>());
      d.verdict = eval::parse_verdict(j.at("verdict").get<std::string>());
      d.f = j.at("f").get<std::vector<double>>();
      d.lambda = j.at("lambda").get<double>();
      d.y_base = vocab.encode(j.at("y_base").get<std::string>());
      d.y_btr = vocab.encode(j.at("y_btr").get<std::string>());
      for (const auto& c : j.at("candidates")) d.candidates.push_back(vocab.encode(c.get<std::string>()));
      if (sources) sources->push_back(vocab.encode(j.at("src").get<std::string>()));
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad decision record: ") + e.what(), lineno);
    }
  }
  return out;
}

void write_profile_csv(const std::filesystem::path& path, const std::string& value_name,
                       const std::vector<double>& values, const std::vector<long>& counts) {
  if (!counts.empty() && counts.size() != values.size()) throw ArgumentError("write_profile_csv: count size mismatch");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write profile '" + path.string() + "'");
  out.precision(17);
  out << "position," << value_name << (counts.empty() ? "" : ",count") << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << i + 1 << ',' << values[i];
    if (!counts.empty()) out << ',' << counts[i];
    out << '\n';
  }
}

}  // namespace btr::rerank
