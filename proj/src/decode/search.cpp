#include "btr/decode/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "btr/common/error.hpp"
#include "btr/common/parallel.hpp"
#include "btr/model/transformer.hpp"

namespace btr::decode {

namespace {

struct Hyp {
  TokenSeq tokens;
  double score = 0.0;
};

// Better first: higher score, then lexicographically smaller tokens.
bool better(double sa, const TokenSeq& a, double sb, const TokenSeq& b) {
  if (sa != sb) return sa > sb;
  return a < b;
}

struct Group {
  int width = 1;
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Candidate> finished;
  bool done = false;

  double worst_kept_finished() const {
    std::vector<double> s;
    for (const auto& c : finished) s.push_back(c.base_score);
    std::nth_element(s.begin(), s.begin() + (width - 1), s.end(), std::greater<>());
    return s[static_cast<std::size_t>(width - 1)];
  }
};

struct Expansion {
  double rank_score;
  double score;
  TokenSeq tokens;
  bool eos;
};

void check_common(int beam, int max_len) {
  if (beam < 1) throw ArgumentError("beam must be at least 1");
  if (max_len < 0) throw ArgumentError("max_len must be non-negative");
}

// Lockstep search over groups; one group with no penalty is plain beam
// search.
CandidateSet grouped_search(Scorer& scorer, const TokenSeq& x, int beam, int groups, double penalty, int max_len) {
  check_common(beam, max_len);
  if (groups < 1 || beam % groups != 0) throw ArgumentError("diverse beam: groups must divide beam");
  const int eos = scorer.eos();
  std::vector<Group> gs(static_cast<std::size_t>(groups));
  for (auto& g : gs) g.width = beam / groups;

  for (int step = 0;; ++step) {
    std::vector<TokenSeq> prefixes;
    for (const auto& g : gs)
      if (!g.done)
        for (const auto& h : g.alive) prefixes.push_back(h.tokens);
    if (prefixes.empty()) break;
    const auto dists = scorer.next_log_probs(prefixes);

    std::size_t row = 0;
    if (step == max_len) {
      for (auto& g : gs) {
        if (g.done) continue;
        for (const auto& h : g.alive) {
          const double lp = dists[row++][static_cast<std::size_t>(eos)];
          if (std::isfinite(lp)) g.finished.push_back({h.tokens, h.score + lp, 0, true});
        }
        g.alive.clear();
        g.done = true;
      }
      break;
    }

    std::map<int, int> chosen;  // token -> times picked by earlier groups this step
    for (auto& g : gs) {
      if (g.done) continue;
      std::vector<Expansion> ex;
      for (const auto& h : g.alive) {
        const auto& lp = dists[row++];
        for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
          if (!std::isfinite(lp[static_cast<std::size_t>(t)])) continue;
          TokenSeq tok = h.tokens;
          tok.push_back(t);
          const double s = h.score + lp[static_cast<std::size_t>(t)];
          auto it = chosen.find(t);
          const double pen = it == chosen.end() ? 0.0 : penalty * it->second;
          ex.push_back({s - pen, s, std::move(tok), t == eos});
        }
      }
      std::sort(ex.begin(), ex.end(), [](const Expansion& a, const Expansion& b) {
        return better(a.rank_score, a.tokens, b.rank_score, b.tokens);
      });
      std::vector<Hyp> next;
      for (std::size_t i = 0; i < ex.size(); ++i) {
        const bool in_top = i < static_cast<std::size_t>(g.width);
        if (!in_top && static_cast<int>(next.size()) >= g.width) break;
        if (ex[i].eos) {
          if (!in_top) continue;
          ex[i].tokens.pop_back();
          g.finished.push_back({std::move(ex[i].tokens), ex[i].score, 0, false});
          ++chosen[eos];
        } else if (static_cast<int>(next.size()) < g.width) {
          ++chosen[ex[i].tokens.back()];
          next.push_back({std::move(ex[i].tokens), ex[i].score});
        }
      }
      g.alive = std::move(next);
      if (g.alive.empty()) {
        g.done = true;
      } else if (static_cast<int>(g.finished.size()) >= g.width) {
        double best_alive = g.alive.front().score;
        for (const auto& h : g.alive) best_alive = std::max(best_alive, h.score);
        if (best_alive < g.worst_kept_finished()) g.done = true;
      }
    }
  }

  CandidateSet set;
  set.source = x;
  for (auto& g : gs) {
    std::sort(g.finished.begin(), g.finished.end(), [](const Candidate& a, const Candidate& b) {
      return better(a.base_score, a.text, b.base_score, b.text);
    });
    if (static_cast<int>(g.finished.size()) > g.width) g.finished.resize(static_cast<std::size_t>(g.width));
    set.generated += static_cast<int>(g.finished.size());
    for (auto& c : g.finished) set.candidates.push_back(std::move(c));
  }
  finalize(set, beam);
  return set;
}

}  // namespace

const TokenSeq& CandidateSet::y_base() const {
  if (candidates.empty()) throw ArgumentError("candidate set is empty");
  return candidates.front().text;
}

void finalize(CandidateSet& set, int limit) {
  auto& c = set.candidates;
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    return better(a.base_score, a.text, b.base_score, b.text);
  });
  std::set<TokenSeq> seen;
  std::vector<Candidate> kept;
  for (auto& cand : c)
    if (seen.insert(cand.text).second) kept.push_back(std::move(cand));
  if (limit > 0 && static_cast<int>(kept.size()) > limit) kept.resize(static_cast<std::size_t>(limit));
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i].rank = static_cast<int>(i) + 1;
  c = std::move(kept);
}

CandidateSet beam_search(Scorer& scorer, const TokenSeq& x, int beam, int max_len) {
  return grouped_search(scorer, x, beam, 1, 0.0, max_len);
}

CandidateSet diverse_beam_search(Scorer& scorer, const TokenSeq& x, int beam, int groups, double penalty,
                                 int max_len) {
  if (penalty < 0.0) throw ArgumentError("diverse beam: penalty must be non-negative");
  return grouped_search(scorer, x, beam, groups, penalty, max_len);
}

std::vector<int> truncate_distribution(const std::vector<double>& log_probs, const SampleStrategy& s) {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(log_probs.size()); ++i)
    if (std::isfinite(log_probs[static_cast<std::size_t>(i)])) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return log_probs[static_cast<std::size_t>(a)] > log_probs[static_cast<std::size_t>(b)];
  });
  if (s.kind == SampleStrategy::top_k) {
    if (s.k < 1) throw ArgumentError("top-k sampling needs k >= 1");
    if (static_cast<int>(ids.size()) > s.k) ids.resize(static_cast<std::size_t>(s.k));
    return ids;
  }
  if (!(s.p > 0.0 && s.p <= 1.0)) throw ArgumentError("nucleus sampling needs 0 < p <= 1");
  double total = 0.0;
  for (int i : ids) total += std::exp(log_probs[static_cast<std::size_t>(i)]);
  double cum = 0.0;
  for (std::size_t n = 0; n < ids.size(); ++n) {
    cum += std::exp(log_probs[static_cast<std::size_t>(ids[n])]) / total;
    if (cum >= s.p) {
      ids.resize(n + 1);
      break;
    }
  }
  return ids;
}

CandidateSet sample_decode(Scorer& scorer, const TokenSeq& x, const SampleStrategy& strategy, int n_samples,
                           int max_len, Rng& rng) {
  if (n_samples < 1) throw ArgumentError("sampling needs at least one sample");
  check_common(1, max_len);
  const int eos = scorer.eos();
  CandidateSet set;
  set.source = x;
  std::vector<Hyp> live(static_cast<std::size_t>(n_samples));
  for (int step = 0; !live.empty(); ++step) {
    std::vector<TokenSeq> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto dists = scorer.next_log_probs(prefixes);
    std::vector<Hyp> next;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto& lp = dists[i];
      Hyp h = std::move(live[i]);
      if (step == max_len) {
        set.candidates.push_back({std::move(h.tokens), h.score + lp[static_cast<std::size_t>(eos)], 0, true});
        continue;
      }
      const auto kept = truncate_distribution(lp, strategy);
      if (kept.empty()) throw NumericError("sampling: no token with finite probability");
      double mass = 0.0;
      for (int t : kept) mass += std::exp(lp[static_cast<std::size_t>(t)]);
      double u = rng.uniform() * mass;
      int pick = kept.back();
      for (int t : kept) {
        u -= std::exp(lp[static_cast<std::size_t>(t)]);
        if (u < 0.0) {
          pick = t;
          break;
        }
      }
      h.score += lp[static_cast<std::size_t>(pick)];
      if (pick == eos) {
        set.candidates.push_back({std::move(h.tokens), h.score, 0, false});
      } else {
        h.tokens.push_back(pick);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  set.generated = n_samples;
  finalize(set);
  return set;
}

void to_json(nlohmann::json& j, const DecodeOptions& o) {
  j = {{"method", o.method}, {"beam", o.beam},         {"groups", o.groups},       {"penalty", o.penalty},
       {"top_k", o.top_k},   {"top_p", o.top_p},       {"n_samples", o.n_samples}, {"max_len", o.max_len}};
}

void from_json(const nlohmann::json& j, DecodeOptions& o) {
  o.method = j.value("method", o.method);
  o.beam = j.value("beam", o.beam);
  o.groups = j.value("groups", o.groups);
  o.penalty = j.value("penalty", o.penalty);
  o.top_k = j.value("top_k", o.top_k);
  o.top_p = j.value("top_p", o.top_p);
  o.n_samples = j.value("n_samples", o.n_samples);
  o.max_len = j.value("max_len", o.max_len);
}

std::vector<CandidateSet> generate(const nn::ParamStore& params, const model::ModelConfig& cfg,
                                   const text::Vocabulary& vocab, const std::vector<TokenSeq>& sources,
                                   const DecodeOptions& o, const Rng& rng, bool parallel) {
  model::require_role(cfg, {model::Role::base_l2r, model::Role::r2l}, "generate");
  if (o.method != "beam" && o.method != "diverse" && o.method != "top_k" && o.method != "nucleus") {
    throw ConfigError("decode method '" + o.method + "' is not one of beam, diverse, top_k, nucleus");
  }
  const auto allowed = generation_mask(cfg.vocab_size, vocab.first_content_id());
  // Leave room for <s> and </s> inside the model's window.
  const int max_len = std::min(o.max_len, cfg.max_len - 1);
  std::vector<CandidateSet> out(sources.size());
  auto one = [&](std::size_t i) {
    ModelScorer scorer(params, cfg, sources[i], allowed);
    if (o.method == "beam") {
      out[i] = beam_search(scorer, sources[i], o.beam, max_len);
    } else if (o.method == "diverse") {
      out[i] = diverse_beam_search(scorer, sources[i], o.beam, o.groups, o.penalty, max_len);
    } else {
      SampleStrategy s;
      s.kind = o.method == "top_k" ? SampleStrategy::top_k : SampleStrategy::nucleus;
      s.k = o.top_k;
      s.p = o.top_p;
      Rng r = rng.split(static_cast<std::uint64_t>(i));
      out[i] = sample_decode(scorer, sources[i], s, o.n_samples, max_len, r);
    }
  };
  parallel_for(static_cast<long>(sources.size()), parallel, [&](long i) { one(static_cast<std::size_t>(i)); });
  return out;
}

void to_json(nlohmann::json& j, const CandidateStats& s) {
  j = {{"gold_pct", s.gold_pct}, {"unique_pct", s.unique_pct}, {"oracle", s.oracle}, {"top1", s.top1}, {"n", s.n}};
}

eval::Tokens words(const text::Vocabulary& vocab, const TokenSeq& ids) {
  eval::Tokens out;
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

CandidateStats candidate_stats(const std::vector<CandidateSet>& sets, const eval::Metric& metric,
                               const text::Vocabulary& vocab) {
  if (sets.empty()) throw ArgumentError("candidate_stats: no candidate sets");
  CandidateStats st;
  st.n = static_cast<long>(sets.size());
  long with_gold = 0, distinct = 0, generated = 0;
  std::vector<eval::Tokens> srcs, oracle, top1, golds;
  for (const auto& s : sets) {
    if (!s.gold) throw ArgumentError("candidate_stats: candidate set without gold");
    if (s.candidates.empty()) throw ArgumentError("candidate_stats: empty candidate set");
    const eval::Tokens src = words(vocab, s.source), gold = words(vocab, *s.gold);
    bool hit = false;
    double best = -1.0;
    const Candidate* pick = nullptr;
    for (const auto& c : s.candidates) {
      hit = hit || c.text == *s.gold;
      const double m = metric.sentence(src, words(vocab, c.text), gold);
      if (pick == nullptr || m > best) {
        best = m;
        pick = &c;
      }
    }
    with_gold += hit;
    distinct += static_cast<long>(s.candidates.size());
    generated += std::max(s.generated, static_cast<int>(s.candidates.size()));
    srcs.push_back(src);
    golds.push_back(gold);
    oracle.push_back(words(vocab, pick->text));
    top1.push_back(words(vocab, s.candidates.front().text));
  }
  st.gold_pct = 100.0 * static_cast<double>(with_gold) / static_cast<double>(sets.size());
  st.unique_pct = 100.0 * static_cast<double>(distinct) / static_cast<double>(generated);
  st.oracle = metric.corpus(srcs, oracle, golds);
  st.top1 = metric.corpus(srcs, top1, golds);
  return st;
}

void save_candidates(const std::filesystem::path& path, const std::vector<CandidateSet>& sets,
                     const text::Vocabulary& vocab) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write candidate file '" + path.string() + "'");
  for (const auto& s : sets) {
    nlohmann::json j;
    j["src"] = vocab.decode(s.source);
    if (s.gold) j["gold"] = vocab.decode(*s.gold);
    j["candidates"] = nlohmann::json::array();
    for (const auto& c : s.candidates) {
      nlohmann::json cj{{"text", vocab.decode(c.text)}, {"base_score", c.base_score}, {"rank", c.rank}};
      if (c.forced_eos) cj["forced_eos"] = true;
      j["candidates"].push_back(std::move(cj));
    }
    j["generated"] = s.generated;
    out << j.dump() << '\n';
  }
}

std::vector<CandidateSet> load_candidates(const std::filesystem::path& path, const text::Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("candidate file '" + path.string() + "' not found");
  std::vector<CandidateSet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CandidateSet s;
      s.source = vocab.encode(j.at("src").get<std::string>());
      if (j.contains("gold")) s.gold = vocab.encode(j.at("gold").get<std::string>());
      for (const auto& cj : j.at("candidates")) {
        s.candidates.push_back({vocab.encode(cj.at("text").get<std::string>()), cj.at("base_score").get<double>(),
                                cj.at("rank").get<int>(), cj.value("forced_eos", false)});
      }
      s.generated = j.value("generated", static_cast<int>(s.candidates.size()));
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad candidate record: ") + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace btr::decode
