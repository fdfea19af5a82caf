#pragma once

#include <functional>
#include <string>
#include <vector>

#include "btr/eval/edits.hpp"
#include "btr/eval/m2.hpp"
#include "json.hpp"

namespace btr::eval {

/// A correction metric with a per-sentence score (used for oracle
/// selection) and a corpus score (used for reporting and tuning).
struct Metric {
  std::string name;
  std::function<double(const Tokens& src, const Tokens& hyp, const Tokens& gold)> sentence;
  std::function<double(const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps,
                       const std::vector<Tokens>& golds)>
      corpus;
};

Metric exact_match_metric();
Metric f05_metric();
Metric gleu_metric();
/// "exact_match", "f05" or "gleu".
Metric metric_by_name(const std::string& name);

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f05 = 0.0;
  double gleu = 0.0;
  double exact_match = 0.0;
  long n = 0;
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// One reference per sentence.
MetricReport evaluate(const std::vector<Tokens>& srcs, const std::vector<Tokens>& hyps, const std::vector<Tokens>& golds);
/// Gold edits from M2 annotators; GLEU and exact match use the references
/// obtained by applying each annotator's edits.
MetricReport evaluate_m2(const std::vector<Tokens>& hyps, const std::vector<M2Sentence>& gold);

enum class Verdict { accept, reject, equal };
std::string to_string(Verdict v);
Verdict parse_verdict(const std::string& s);

struct VerdictRecord {
  Verdict verdict = Verdict::equal;
  Tokens src, y_base, y_btr, gold;
};

struct VerdictCell {
  long count = 0;
  double proportion = 0.0;  // percent of the corpus
  double metric_base = 0.0;
  double metric_btr = 0.0;
};

struct VerdictTable {
  VerdictCell accept, reject, equal;
  std::string metric;
};

void to_json(nlohmann::json& j, const VerdictTable& t);

/// Partitions the corpus by verdict and scores the base and reranker
/// selections within each cell with the metric's corpus score.
VerdictTable verdict_breakdown(const std::vector<VerdictRecord>& records, const Metric& metric);

}  // namespace btr::eval
