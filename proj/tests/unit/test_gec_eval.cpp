#include <cmath>
#include <filesystem>
#include <sstream>

#include "btr/common/error.hpp"
#include "btr/common/rng.hpp"
#include "btr/eval/edits.hpp"
#include "btr/eval/fscore.hpp"
#include "btr/eval/gleu.hpp"
#include "btr/eval/m2.hpp"
#include "btr/eval/metric.hpp"
#include "btr/text/vocab.hpp"
#include "doctest.h"

using namespace btr;
using namespace btr::eval;

namespace {

Tokens toks(const std::string& s) { return text::split_whitespace(s); }

Tokens random_tokens(Rng& rng, int max_len) {
  Tokens t;
  const int n = rng.below(max_len + 1);
  for (int i = 0; i < n; ++i) t.emplace_back(1, static_cast<char>('a' + rng.below(4)));
  return t;
}

EditSet edits_of(int n) {
  EditSet e;
  for (int i = 0; i < n; ++i) e.push_back({i, i + 1, {"x"}});
  return e;
}

}  // namespace

TEST_CASE("extract_edits: identity, single substitution and merging") {
  CHECK(extract_edits(toks("a b c"), toks("a b c")).empty());
  const EditSet e = extract_edits(toks("Speed camera can"), toks("Speed cameras can"));
  REQUIRE(e.size() == 1);
  CHECK(e[0] == Edit{1, 2, {"cameras"}});

  // Adjacent substitution and insertion merge into one span.
  const EditSet m = extract_edits(toks("a b c"), toks("a x y c"));
  REQUIRE(m.size() == 1);
  CHECK(m[0] == Edit{1, 2, {"x", "y"}});

  // Deleting one of two equal tokens picks the leftmost.
  const EditSet d = extract_edits(toks("the the cat"), toks("the cat"));
  REQUIRE(d.size() == 1);
  CHECK(d[0] == Edit{0, 1, {}});

  const EditSet ins = extract_edits(toks("a c"), toks("a b c"));
  REQUIRE(ins.size() == 1);
  CHECK(ins[0] == Edit{1, 1, {"b"}});
}

TEST_CASE("extract_edits: apply round trip and fixed point on 1000 pairs") {
  Rng rng(42);
  for (int t = 0; t < 1000; ++t) {
    const Tokens s = random_tokens(rng, 8), g = random_tokens(rng, 8);
    const EditSet e = extract_edits(s, g);
    CHECK(apply_edits(s, e) == g);
    CHECK(extract_edits(s, apply_edits(s, e)) == e);
  }
  CHECK_THROWS_AS(apply_edits(toks("a b"), {{1, 2, {}}, {0, 1, {}}}), ArgumentError);
}

TEST_CASE("f_beta: hand examples") {
  const PRF same = f_beta(edits_of(2), edits_of(2));
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f == 1.0);

  const PRF empty_hyp = f_beta({}, edits_of(2));
  CHECK(empty_hyp.recall == 0.0);
  CHECK(empty_hyp.f == 0.0);

  // TP = 3, |hyp| = 4, |gold| = 5.
  EditSet hyp = edits_of(3), gold = edits_of(3);
  hyp.push_back({10, 11, {"h"}});
  gold.push_back({20, 21, {"g"}});
  gold.push_back({22, 23, {"g"}});
  const PRF r = f_beta(hyp, gold);
  CHECK(r.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(std::abs(r.f - 0.714286) < 1e-6);
  // F0.5 leans toward precision: above F1 when P > R.
  CHECK(r.f > f_beta(hyp, gold, 1.0).f);
}

TEST_CASE("f_beta: corpus accumulation skips empty sentences") {
  const EditCounts c = corpus_counts({{}, edits_of(1)}, {{EditSet{}}, {edits_of(1)}});
  CHECK(c.tp == 1);
  CHECK(c.fp == 0);
  CHECK(c.fn == 0);
  CHECK(prf(c).f == 1.0);
}

TEST_CASE("parse_m2: hand-written fixture") {
  const auto sents = parse_m2(std::filesystem::path(BTR_FIXTURE_DIR) / "sample.m2");
  REQUIRE(sents.size() == 4);
  CHECK(sents[0].source == toks("Speed camera can be placed on road ."));
  REQUIRE(sents[0].annotators.size() == 2);
  CHECK(sents[0].annotators[0].size() == 2);
  CHECK(sents[0].annotators[0][0].edit == Edit{1, 2, {"cameras"}});
  CHECK(sents[0].annotators[0][0].type == "R:NOUN:NUM");
  CHECK(sents[0].annotators[0][1].edit == Edit{5, 6, {"in"}});
  CHECK(sents[0].annotators[1].size() == 1);

  REQUIRE(sents[1].annotators.size() == 1);
  CHECK(sents[1].annotators[0].empty());

  const auto& third = sents[2].annotators.at(0);
  REQUIRE(third.size() == 3);
  CHECK(third[1].edit == Edit{3, 4, {}});
  CHECK(third[2].edit == Edit{6, 6, {"today"}});
  CHECK(apply_edits(sents[2].source, sents[2].gold_sets()[0]) == toks("I have a book . today"));

  REQUIRE(sents[3].annotators.size() == 1);
  CHECK(sents[3].annotators[0].empty());
}

TEST_CASE("parse_m2: emit round trip and malformed lines") {
  const auto sents = parse_m2(std::filesystem::path(BTR_FIXTURE_DIR) / "sample.m2");
  std::stringstream ss;
  emit_m2(ss, sents);
  CHECK(parse_m2(ss) == sents);

  std::istringstream bad("S a b\nA 1 x|||R|||c|||REQUIRED|||-NONE-|||0\n");
  try {
    parse_m2(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream out_of_range("S a b\n\nS c\nA 0 5|||R|||c|||REQUIRED|||-NONE-|||0\n");
  CHECK_THROWS_AS(parse_m2(out_of_range), ParseError);
  std::istringstream orphan("A 0 1|||R|||c|||REQUIRED|||-NONE-|||0\n");
  CHECK_THROWS_AS(parse_m2(orphan), ParseError);
}

TEST_CASE("M2 scoring picks the best annotator per sentence") {
  const auto sents = parse_m2(std::filesystem::path(BTR_FIXTURE_DIR) / "sample.m2");
  // Hypothesis fixes only "cameras": annotator 1 matches it exactly.
  std::vector<Tokens> hyps{toks("Speed cameras can be placed on road ."), sents[1].source, sents[2].source,
                           sents[3].source};
  const MetricReport r = evaluate_m2(hyps, sents);
  // Sentence 0 -> TP 1 (annotator 1); sentence 2 -> FN 3.
  CHECK(r.precision == doctest::Approx(1.0));
  CHECK(r.recall == doctest::Approx(0.25));
  CHECK(r.f05 == doctest::Approx(1.25 * 0.25 / (0.25 + 0.25)));
  CHECK(r.exact_match == doctest::Approx(0.75));
}

TEST_CASE("gleu: identity, disjoint and hand-counted fixture") {
  const Tokens s = toks("the cat sat on the mat");
  CHECK(gleu(s, s, s) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(gleu(toks("x y z w v"), toks("a b c d"), toks("a b c d")) == 0.0);
  CHECK(gleu({}, s, s) == 0.0);

  // n = 1..4: credits 5/5, (3-1)/4, 2/3, 1/2; brevity penalty exp(1 - 6/5).
  const double g = gleu(toks("the cat sat on mat"), toks("a cat sit on mat"), toks("the cat sat on the mat"));
  CHECK(std::abs(g - 0.523122368913534) < 1e-6);
}

TEST_CASE("gleu: multi-reference sampling is seeded and bounded") {
  const std::vector<Tokens> hyps{toks("a b c d e")}, srcs{toks("a b c d f")};
  const std::vector<std::vector<Tokens>> refs{{toks("a b c d e"), toks("a b x d e")}};
  const double one = corpus_gleu(hyps, srcs, refs, 4, 500, 3);
  CHECK(one == corpus_gleu(hyps, srcs, refs, 4, 500, 3));
  CHECK(one > gleu(hyps[0], srcs[0], refs[0][1]));
  CHECK(one < 1.0);
}

TEST_CASE("metrics ignore how tokens are spelled") {
  const Tokens src = toks("a b c d"), hyp = toks("a x c d e"), ref = toks("a x c d");
  const Tokens src2 = toks("1 2 3 4"), hyp2 = toks("1 9 3 4 5"), ref2 = toks("1 9 3 4");
  CHECK(gleu(hyp, src, ref) == gleu(hyp2, src2, ref2));
  CHECK(f_beta(extract_edits(src, hyp), extract_edits(src, ref)).f ==
        f_beta(extract_edits(src2, hyp2), extract_edits(src2, ref2)).f);
}

TEST_CASE("verdict breakdown: proportions and all-equal case") {
  const Metric m = exact_match_metric();
  std::vector<VerdictRecord> recs;
  for (int i = 0; i < 7; ++i) recs.push_back({Verdict::equal, toks("a"), toks("b"), toks("b"), toks("b")});
  VerdictTable t = verdict_breakdown(recs, m);
  CHECK(t.accept.proportion == 0.0);
  CHECK(t.reject.proportion == 0.0);
  CHECK(t.equal.proportion == 100.0);
  CHECK(t.equal.metric_base == t.equal.metric_btr);

  recs.push_back({Verdict::accept, toks("a"), toks("a"), toks("b"), toks("b")});
  recs.push_back({Verdict::reject, toks("a"), toks("a"), toks("c"), toks("b")});
  t = verdict_breakdown(recs, m);
  CHECK(std::abs(t.accept.proportion + t.reject.proportion + t.equal.proportion - 100.0) < 1e-9);
  CHECK(t.accept.metric_btr == 1.0);
  CHECK(t.accept.metric_base == 0.0);
  nlohmann::json j = t;
  CHECK(j["Accept"]["count"] == 1);
}
