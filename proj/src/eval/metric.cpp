#include "btr/eval/metric.hpp"

#include "btr/common/error.hpp"
#include "btr/eval/fscore.hpp"
#include "btr/eval/gleu.hpp"

namespace btr::eval {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw ArgumentError("metric: sources, hypotheses and references differ in count");
}

}  // namespace

Metric exact_match_metric() {
  Metric m;
  m.name = "exact_match";
  m.sentence = [](const Tokens&, const Tokens& hyp, const Tokens& gold) { return hyp == gold ? 1.0 : 0.0; };
  m.corpus = [](const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps, const std::vector<Tokens>& golds) {
    check_sizes(srcs.size(), hyps.size(), golds.size());
    if (hyps.empty()) return 0.0;
    long hit = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) hit += hyps[i] == golds[i];
    return static_cast<double>(hit) / static_cast<double>(hyps.size());
  };
  return m;
}

Metric f05_metric() {
  Metric m;
  m.name = "f05";
  m.sentence = [](const Tokens& src, const Tokens& hyp, const Tokens& gold) {
    return f_beta(extract_edits(src, hyp), extract_edits(src, gold)).f;
  };
  m.corpus = [](const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps, const std::vector<Tokens>& golds) {
    check_sizes(srcs.size(), hyps.size(), golds.size());
    EditCounts c;
    for (std::size_t i = 0; i < hyps.size(); ++i) c += edit_counts(extract_edits(srcs[i], hyps[i]), extract_edits(srcs[i], golds[i]));
    return prf(c).f;
  };
  return m;
}

Metric gleu_metric() {
  Metric m;
  m.name = "gleu";
  m.sentence = [](const Tokens& src, const Tokens& hyp, const Tokens& gold) { return gleu(hyp, src, gold); };
  m.corpus = [](const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps, const std::vector<Tokens>& golds) {
    check_sizes(srcs.size(), hyps.size(), golds.size());
    std::vector<std::vector<Tokens>> refs;
    for (const auto& g : golds) refs.push_back({g});
    return corpus_gleu(hyps, srcs, refs);
  };
  return m;
}

Metric metric_by_name(const std::string& name) {
  if (name == "exact_match") return exact_match_metric();
  if (name == "f05") return f05_metric();
  if (name == "gleu") return gleu_metric();
  throw ConfigError("unknown metric '" + name + "' (expected exact_match, f05 or gleu)");
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = {{"precision", r.precision}, {"recall", r.recall},           {"f05", r.f05},
       {"gleu", r.gleu},           {"exact_match", r.exact_match}, {"n", r.n}};
}

MetricReport evaluate(const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps, const std::vector<Tokens>& golds) {
  check_sizes(srcs.size(), hyps.size(), golds.size());
  MetricReport r;
  r.n = static_cast<long>(hyps.size());
  EditCounts c;
  for (std::size_t i = 0; i < hyps.size(); ++i) c += edit_counts(extract_edits(srcs[i], hyps[i]), extract_edits(srcs[i], golds[i]));
  const PRF p = prf(c);
  r.precision = p.precision;
  r.recall = p.recall;
  r.f05 = p.f;
  r.gleu = gleu_metric().corpus(srcs, hyps, golds);
  r.exact_match = exact_match_metric().corpus(srcs, hyps, golds);
  return r;
}

MetricReport evaluate_m2(const std::vector<Tokens>& hyps, const std::vector<M2Sentence>& gold) {
  if (hyps.size() != gold.size()) throw ArgumentError("evaluate_m2: hypothesis and M2 sentence counts differ");
  MetricReport r;
  r.n = static_cast<long>(hyps.size());
  std::vector<EditSet> hyp_edits;
  std::vector<std::vector<EditSet>> gold_edits;
  std::vector<Tokens> srcs;
  std::vector<std::vector<Tokens>> refs;
  long exact = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    srcs.push_back(gold[i].source);
    hyp_edits.push_back(extract_edits(gold[i].source, hyps[i]));
    gold_edits.push_back(gold[i].gold_sets());
    refs.emplace_back();
    bool hit = false;
    for (const EditSet& g : gold_edits.back()) {
      refs.back().push_back(apply_edits(gold[i].source, g));
      hit = hit || refs.back().back() == hyps[i];
    }
    exact += hit;
  }
  const PRF p = prf(corpus_counts(hyp_edits, gold_edits));
  r.precision = p.precision;
  r.recall = p.recall;
  r.f05 = p.f;
  r.gleu = hyps.empty() ? 0.0 : corpus_gleu(hyps, srcs, refs);
  r.exact_match = hyps.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(hyps.size());
  return r;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::accept: return "Accept";
    case Verdict::reject: return "Reject";
    case Verdict::equal: return "Equal";
  }
  return "?";
}

Verdict parse_verdict(const std::string& s) {
  for (Verdict v : {Verdict::accept, Verdict::reject, Verdict::equal})
    if (to_string(v) == s) return v;
  throw DataError("unknown verdict '" + s + "'");
}

void to_json(nlohmann::json& j, const VerdictTable& t) {
  auto cell = [](const VerdictCell& c) {
    return nlohmann::json{{"count", c.count}, {"proportion", c.proportion}, {"metric_base", c.metric_base}, {"metric_btr", c.metric_btr}};
  };
  j = {{"metric", t.metric}, {"Accept", cell(t.accept)}, {"Reject", cell(t.reject)}, {"Equal", cell(t.equal)}};
}

VerdictTable verdict_breakdown(const std::vector<VerdictRecord>& records, const Metric& metric) {
  VerdictTable t;
  t.metric = metric.name;
  for (Verdict v : {Verdict::accept, Verdict::reject, Verdict::equal}) {
    VerdictCell& cell = v == Verdict::accept ? t.accept : v == Verdict::reject ? t.reject : t.equal;
    std::vector<Tokens> srcs, base, btr, gold;
    for (const auto& r : records) {
      if (r.verdict != v) continue;
      srcs.push_back(r.src);
      base.push_back(r.y_base);
      btr.push_back(r.y_btr);
      gold.push_back(r.gold);
    }
    cell.count = static_cast<long>(srcs.size());
    cell.proportion = records.empty() ? 0.0 : 100.0 * static_cast<double>(cell.count) / static_cast<double>(records.size());
    if (cell.count > 0) {
      cell.metric_base = metric.corpus(srcs, base, gold);
      cell.metric_btr = metric.corpus(srcs, btr, gold);
    }
  }
  return t;
}

}  // namespace btr::eval
