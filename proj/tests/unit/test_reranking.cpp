#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "btr/common/error.hpp"
#include "btr/model/transformer.hpp"
#include "btr/rerank/rerank.hpp"
#include "btr/text/masking.hpp"
#include "btr/training/train.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace btr;
using namespace btr::rerank;
using btr::testing::random_seq;
using btr::testing::small_vocab;
using btr::testing::tiny_config;
using eval::Verdict;
using model::Role;

namespace {

nn::ParamStore zero_params(const model::ModelConfig& cfg) {
  Rng rng(0);
  nn::ParamStore ps = model::init_params(cfg, rng);
  for (auto& [name, e] : ps)
    if (name.find(".g") == std::string::npos) e.value.fill(0.0);
  return ps;
}

decode::CandidateSet make_set(const TokenSeq& x, const std::vector<TokenSeq>& cands) {
  decode::CandidateSet s;
  s.source = x;
  for (std::size_t i = 0; i < cands.size(); ++i) s.candidates.push_back({cands[i], -static_cast<double>(i), static_cast<int>(i) + 1});
  s.generated = static_cast<int>(cands.size());
  return s;
}

std::vector<TokenSeq> distinct_seqs(const text::Vocabulary& v, int n, Rng& rng) {
  std::vector<TokenSeq> out;
  while (static_cast<int>(out.size()) < n) {
    TokenSeq s = random_seq(v, 2 + rng.below(4), rng);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("pll: uniform model, singleton oracle and chunking") {
  const auto v = small_vocab(6);
  const auto cfg = tiny_config(v.size(), Role::btr);
  const auto uniform = zero_params(cfg);
  const double lnv = std::log(static_cast<double>(v.size()));
  const int a = v.first_content_id();
  CHECK(pll(uniform, cfg, {a, a + 1}, {}) == doctest::Approx(-lnv).epsilon(1e-12));
  CHECK(pll(uniform, cfg, {a, a + 1}, {a + 2}) == doctest::Approx(-2 * lnv).epsilon(1e-12));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto ps = model::init_params(cfg, rng);
    const TokenSeq x = random_seq(v, 5, rng), y = random_seq(v, 6, rng);
    const TokenSeq full = model::with_eos(y);
    double oracle = 0.0;
    for (int j = 0; j < static_cast<int>(full.size()); ++j)
      oracle += model::btr_masked_log_probs(ps, cfg, x, text::mask_single(full, j)).front();
    const double p0 = pll(ps, cfg, x, y);
    CHECK(std::abs(p0 - oracle) < 1e-12);
    for (int chunk : {1, 2, 3, 5, 100}) CHECK(std::abs(pll(ps, cfg, x, y, chunk) - p0) < 1e-12);
    const auto many = pll_many(ps, cfg, x, {y, random_seq(v, 3, rng)}, 4);
    CHECK(std::abs(many[0] - p0) < 1e-12);
    CHECK(pll_terms(ps, cfg, x, y).size() == y.size() + 1);
  }
  CHECK_THROWS_AS(pll(uniform, tiny_config(v.size(), Role::base_l2r), {a}, {a}), RoleError);
  CHECK_THROWS_AS(pll(uniform, cfg, {a}, {a}, -1), ArgumentError);
}

TEST_CASE("normalized scores") {
  const int a = 30;
  CHECK(normalized_scores({{a}}, {-7.0}) == std::vector<double>{1.0});
  const auto eq = normalized_scores({{a}, {a, a}}, {-2.0, -3.0});
  CHECK(eq[0] == doctest::Approx(0.5));
  CHECK(eq[1] == doctest::Approx(0.5));
  // PLL / |y| = -1, -2, -3 with |y| = 2 (one token plus </s>).
  const auto f = normalized_scores({{a}, {a + 1}, {a + 2}}, {-2.0, -4.0, -6.0});
  CHECK(f[0] == doctest::Approx(0.66524).epsilon(1e-4));
  CHECK(f[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(f[2] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK_THROWS_AS(normalized_scores({{a}, {a}}, {-1.0, -2.0}), ArgumentError);
  CHECK_THROWS_AS(normalized_scores({}, {}), ArgumentError);
  CHECK_THROWS_AS(normalized_scores({{a}}, {-1.0, -2.0}), ArgumentError);
}

TEST_CASE("normalized scores: partition of unity and shift invariance") {
  Rng rng(17);
  const auto v = small_vocab(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cands = distinct_seqs(v, 1 + rng.below(6), rng);
    std::vector<double> plls, shifted;
    const double c = rng.normal(0.0, 5.0);
    for (const auto& y : cands) {
      plls.push_back(-30.0 * rng.uniform() * static_cast<double>(y.size() + 1));
      shifted.push_back(plls.back() + c * static_cast<double>(y.size() + 1));
    }
    const auto f = normalized_scores(cands, plls);
    const auto g = normalized_scores(cands, shifted);
    CHECK(std::abs(std::accumulate(f.begin(), f.end(), 0.0) - 1.0) < 1e-9);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(f[i] - g[i]) < 1e-12);
    CHECK(argmax_first(f) == argmax_first(g));
    const auto& base = cands[static_cast<std::size_t>(rng.below(static_cast<int>(cands.size())))];
    for (double lambda : {0.0, 0.2, 0.5}) {
      const auto d1 = decide(cands, f, base, lambda), d2 = decide(cands, g, base, lambda);
      CHECK(d1.verdict == d2.verdict);
      CHECK(d1.chosen == d2.chosen);
    }
  }
}

TEST_CASE("decide: verdict rules, tie-breaks and monotonicity in lambda") {
  const TokenSeq A{20}, B{21}, C{22};
  auto d = decide({A, B, C}, {0.6, 0.3, 0.1}, B, 0.2);
  CHECK(d.verdict == Verdict::accept);
  CHECK(d.chosen == A);
  CHECK(d.y_btr == A);
  d = decide({A, B, C}, {0.6, 0.3, 0.1}, B, 0.4);
  CHECK(d.verdict == Verdict::reject);
  CHECK(d.chosen == B);
  CHECK(d.y_btr == A);
  d = decide({A, B, C}, {0.2, 0.7, 0.1}, B, 0.0);
  CHECK(d.verdict == Verdict::equal);
  CHECK(d.chosen == B);
  // Ties go to y_base first, then to the lower rank.
  CHECK(decide({A, B, C}, {0.4, 0.4, 0.2}, B, 0.0).verdict == Verdict::equal);
  d = decide({A, B, C}, {0.2, 0.4, 0.4}, A, 0.0);
  CHECK(d.y_btr == B);
  CHECK_THROWS_AS(decide({A, B}, {0.5, 0.5}, C, 0.1), ArgumentError);
  CHECK_THROWS_AS(decide({A, B}, {0.5, 0.5}, A, -0.1), ArgumentError);

  Rng rng(3);
  const auto v = small_vocab(6);
  for (int trial = 0; trial < 500; ++trial) {
    const auto cands = distinct_seqs(v, 2 + rng.below(5), rng);
    std::vector<double> plls;
    for (std::size_t i = 0; i < cands.size(); ++i) plls.push_back(-10.0 * rng.uniform());
    const auto f = normalized_scores(cands, plls);
    const auto& base = cands[static_cast<std::size_t>(rng.below(static_cast<int>(cands.size())))];
    CHECK(decide(cands, f, base, 1.0).verdict != Verdict::accept);
    CHECK(decide(cands, f, base, 1.0).chosen == base);
    bool accepted_before = true;
    for (int k = 0; k <= 10; ++k) {
      const bool acc = decide(cands, f, base, k / 10.0).verdict == Verdict::accept;
      CHECK((!acc || accepted_before));  // once rejected, stays rejected for larger lambda
      accepted_before = acc;
    }
  }
}

TEST_CASE("rerank_btr and the encoder-only reranker") {
  const auto v = small_vocab(6);
  Rng rng(8);
  const auto btr_cfg = tiny_config(v.size(), Role::btr);
  const auto btr = model::init_params(btr_cfg, rng);
  const auto enc_cfg = tiny_config(v.size(), Role::encoder_only);
  const auto enc = model::init_params(enc_cfg, rng);
  const TokenSeq x = random_seq(v, 5, rng);
  const auto cands = distinct_seqs(v, 5, rng);
  const auto set = make_set(x, cands);

  const auto single = make_set(x, {cands[2]});
  CHECK(rerank_btr(btr, btr_cfg, single, 0.0).f == std::vector<double>{1.0});
  CHECK(rerank_encoder_only(enc, enc_cfg, single, 0.0).f == std::vector<double>{1.0});

  for (double lambda : {0.0, 0.3, 1.0}) {
    const auto d = rerank_btr(btr, btr_cfg, set, lambda);
    std::vector<double> plls;
    for (const auto& y : cands) plls.push_back(pll(btr, btr_cfg, x, y));
    const auto expect = decide(cands, normalized_scores(cands, plls), cands[0], lambda);
    CHECK(d.verdict == expect.verdict);
    CHECK(d.chosen == expect.chosen);
    for (std::size_t i = 0; i < cands.size(); ++i) CHECK(std::abs(d.f[i] - expect.f[i]) < 1e-12);
    if (lambda == 1.0) {
      CHECK(d.chosen == cands[0]);
      CHECK(rerank_encoder_only(enc, enc_cfg, set, 1.0).chosen == cands[0]);
    }
  }
  CHECK(rerank_btr(btr, btr_cfg, set, 0.0, 3).f.size() == 3);

  // Source conditioning is live in the encoder-only reranker.
  TokenSeq x2 = x;
  x2[0] = btr::testing::other_token(v, x2[0], rng);
  CHECK(pll(enc, enc_cfg, x, cands[0]) != pll(enc, enc_cfg, x2, cands[0]));
  auto small = enc_cfg;
  small.max_len = 6;
  CHECK_THROWS_AS(pll(enc, small, x, cands[0]), LengthError);
  CHECK_THROWS_AS(rerank_btr(enc, enc_cfg, set, 0.0), RoleError);

  // Ensembles average member PLLs; parallel scoring matches serial.
  const auto two = score_set({&btr, &btr}, btr_cfg, set, 0);
  const auto one = score_set({&btr}, btr_cfg, set, 0);
  for (std::size_t i = 0; i < cands.size(); ++i) CHECK(std::abs(two.plls[i] - one.plls[i]) < 1e-12);
  std::vector<decode::CandidateSet> sets;
  for (int i = 0; i < 6; ++i) sets.push_back(make_set(random_seq(v, 4, rng), distinct_seqs(v, 4, rng)));
  const auto par = score_sets({&btr}, btr_cfg, sets, 0, 0, true);
  const auto ser = score_sets({&btr}, btr_cfg, sets, 0, 0, false);
  for (std::size_t i = 0; i < sets.size(); ++i) CHECK(par[i].f == ser[i].f);
}

TEST_CASE("rerank_r2l: enumeration oracle and modes") {
  const auto v = small_vocab(6);
  Rng rng(12);
  const auto l2r_cfg = tiny_config(v.size(), Role::base_l2r);
  const auto r2l_cfg = tiny_config(v.size(), Role::r2l);
  const auto l2r = model::init_params(l2r_cfg, rng);
  const auto r2l = model::init_params(r2l_cfg, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSeq x = random_seq(v, 4, rng);
    const auto cands = distinct_seqs(v, 4, rng);
    const auto set = make_set(x, cands);
    for (bool use_l2r : {true, false}) {
      double best = -1e300;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const TokenSeq rev(cands[i].rbegin(), cands[i].rend());
        // The R2L model is a causal model over reversed targets.
        double s = model::seq_log_prob(r2l, r2l_cfg, x, rev);
        if (use_l2r) s = model::seq_log_prob(l2r, l2r_cfg, x, cands[i]) + s;
        if (s > best) {
          best = s;
          arg = i;
        }
      }
      const auto c = rerank_r2l(l2r, l2r_cfg, r2l, r2l_cfg, set, use_l2r);
      CHECK(c.index == static_cast<int>(arg));
      CHECK(c.chosen == cands[arg]);
    }
  }
  const auto single = make_set({v.first_content_id()}, {{v.first_content_id() + 1}});
  CHECK(rerank_r2l(l2r, l2r_cfg, r2l, r2l_cfg, single).chosen == single.candidates[0].text);
  CHECK_THROWS_AS(rerank_r2l(r2l, r2l_cfg, l2r, l2r_cfg, single), RoleError);
}

TEST_CASE("rerank_classifier: ties, oracle and role checks") {
  const auto v = small_vocab(6);
  const auto cfg = tiny_config(v.size(), Role::encoder_only);
  Rng rng(2);
  const auto cands = distinct_seqs(v, 5, rng);
  const auto set = make_set(random_seq(v, 3, rng), cands);
  const auto flat = zero_params(cfg);
  CHECK(rerank_classifier(flat, cfg, set).index == 0);
  CHECK(rerank_classifier(flat, cfg, make_set(set.source, {cands[3]})).chosen == cands[3]);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ps = model::init_params(cfg, rng);
    std::vector<double> p;
    for (const auto& y : cands) p.push_back(model::classify(ps, cfg, model::classifier_input(y)));
    const auto c = rerank_classifier(ps, cfg, set);
    CHECK(c.index == static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  CHECK_THROWS_AS(rerank_classifier(flat, tiny_config(v.size(), Role::btr), set), RoleError);
}

TEST_CASE("position loss profile") {
  const auto v = small_vocab(6);
  const double lnv = std::log(static_cast<double>(v.size()));
  Rng rng(4);
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (int i = 0; i < 12; ++i) pairs.emplace_back(random_seq(v, 4, rng), random_seq(v, 3 + i % 4, rng));

  const auto causal_cfg = tiny_config(v.size(), Role::base_l2r);
  const auto flat_prof = position_loss_profile(causal_positions(zero_params(causal_cfg), causal_cfg), pairs, 3, 6);
  REQUIRE(flat_prof.mean_ce.size() == 6);
  for (double c : flat_prof.mean_ce) CHECK(c == doctest::Approx(lnv).epsilon(1e-12));
  CHECK(flat_prof.count[0] == 12);
  CHECK(flat_prof.count[5] == 3);
  const auto btr_cfg = tiny_config(v.size(), Role::btr);
  for (double c : position_loss_profile(masked_positions(zero_params(btr_cfg), btr_cfg), pairs, 3, 6).mean_ce)
    CHECK(c == doctest::Approx(lnv).epsilon(1e-12));

  // Causal scores at position j ignore tokens after j; positions 2 on change.
  const auto ps = model::init_params(causal_cfg, rng);
  const auto scorer = causal_positions(ps, causal_cfg);
  for (const auto& [x, y] : pairs) {
    TokenSeq y2 = y;
    std::reverse(y2.begin() + 2, y2.end());
    y2.back() = btr::testing::other_token(v, y2.back(), rng);
    const auto a = scorer(x, y), b = scorer(x, y2);
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
  }

  const auto r2l_cfg = tiny_config(v.size(), Role::r2l);
  const auto r2l = model::init_params(r2l_cfg, rng);
  const auto r = r2l_positions(r2l, r2l_cfg)(pairs[0].first, pairs[0].second);
  const auto& y0 = pairs[0].second;
  const auto direct = model::token_log_probs(r2l, r2l_cfg, pairs[0].first, TokenSeq(y0.rbegin(), y0.rend()));
  CHECK(r.front() == direct[y0.size() - 1]);
  CHECK(r.back() == direct.back());
  const auto sum = r2l_summed_positions(ps, causal_cfg, r2l, r2l_cfg)(pairs[0].first, y0);
  CHECK(sum[0] == doctest::Approx(scorer(pairs[0].first, y0)[0] + r[0]));

  CHECK_THROWS_AS(position_loss_profile(scorer, pairs, 10, 12), ArgumentError);
}

TEST_CASE("rank probability profile and decision files") {
  const TokenSeq A{20}, B{21}, C{22};
  std::vector<RerankDecision> ds{decide({A, B, C}, {0.5, 0.3, 0.2}, A, 0.1), decide({B, A, C}, {0.1, 0.6, 0.3}, B, 0.1)};
  CHECK(rank_probability_profile({ds[0]}, 3) == ds[0].f);
  const auto prof = rank_probability_profile(ds, 3);
  CHECK(prof[0] == doctest::Approx(0.3));
  CHECK(prof[1] == doctest::Approx(0.45));
  CHECK(std::accumulate(prof.begin(), prof.end(), 0.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(rank_probability_profile(ds, 2), ArgumentError);
  CHECK_THROWS_AS(rank_probability_profile({}, 3), ArgumentError);

  const auto v = small_vocab(6);
  const int a = v.first_content_id();
  std::vector<RerankDecision> real{decide({{a}, {a, a + 1}}, {0.7, 0.3}, {a, a + 1}, 0.2)};
  const auto dir = std::filesystem::temp_directory_path() / "btr_rerank_test";
  save_decisions(dir / "d.jsonl", real, {{a + 2}}, v);
  std::vector<TokenSeq> srcs;
  const auto back = load_decisions(dir / "d.jsonl", v, &srcs);
  REQUIRE(back.size() == 1);
  CHECK(srcs == std::vector<TokenSeq>{{a + 2}});
  CHECK(back[0].chosen == real[0].chosen);
  CHECK(back[0].verdict == Verdict::accept);
  CHECK(back[0].f == real[0].f);
  CHECK(back[0].lambda == real[0].lambda);
  CHECK(back[0].candidates == real[0].candidates);
  CHECK(back[0].y_base == real[0].y_base);

  write_profile_csv(dir / "p.csv", "mean_f", {0.5, 0.25}, {3, 4});
  std::ifstream in(dir / "p.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "position,mean_f,count");
  CHECK(row == "1,0.5,3");
  std::filesystem::remove_all(dir);
}
