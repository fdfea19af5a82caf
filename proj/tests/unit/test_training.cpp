#include <cmath>
#include <set>

#include "btr/common/error.hpp"
#include "btr/decode/scorer.hpp"
#include "btr/decode/search.hpp"
#include "btr/model/transformer.hpp"
#include "btr/nn/grad_check.hpp"
#include "btr/nn/optim.hpp"
#include "btr/training/train.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace btr;
using namespace btr::training;
using btr::testing::random_seq;
using btr::testing::small_vocab;
using btr::testing::tiny_config;
using model::Role;

namespace {

model::ModelConfig train_config(int V, Role role) {
  model::ModelConfig c = tiny_config(V, role, 0.02);
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  return c;
}

std::vector<SeqPair> toy_pairs(const text::Vocabulary& v, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SeqPair> out;
  std::set<TokenSeq> sources;
  while (static_cast<int>(out.size()) < n) {
    SeqPair p;
    p.tgt = random_seq(v, 3 + rng.below(3), rng);
    p.src = p.tgt;
    const int j = rng.below(static_cast<int>(p.src.size()));
    p.src[static_cast<std::size_t>(j)] = btr::testing::other_token(v, p.src[static_cast<std::size_t>(j)], rng);
    // Distinct sources keep the memorization task well defined.
    if (sources.insert(p.src).second) out.push_back(std::move(p));
  }
  return out;
}

TokenSeq greedy_decode(const nn::ParamStore& params, const model::ModelConfig& cfg, const text::Vocabulary& v,
                       const TokenSeq& x) {
  decode::ModelScorer scorer(params, cfg, x, decode::generation_mask(cfg.vocab_size, v.first_content_id()));
  return decode::beam_search(scorer, x, 1, 12).y_base();
}

BtrInstance random_instance(const text::Vocabulary& v, Rng& rng, bool gold) {
  BtrInstance inst;
  inst.x = random_seq(v, 4, rng);
  text::BertMaskOptions opt;
  opt.rate = 0.3;
  inst.y = text::bert_mask(model::with_eos(random_seq(v, 5, rng)), v, opt, rng);
  inst.is_gold = gold;
  return inst;
}

// exp of each masked log-prob, summed.
double masked_prob_sum(const nn::ParamStore& ps, const model::ModelConfig& cfg, const BtrInstance& inst) {
  double s = 0.0;
  for (double lp : model::btr_masked_log_probs(ps, cfg, inst.x, inst.y)) s += std::exp(lp);
  return s;
}

}  // namespace

TEST_CASE("train config: validation and JSON") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  c.mask_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.a_train = -1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("a_train"), ConfigError);
  c = TrainConfig{};
  c.warmup = 4;
  CHECK(learning_rate(c, 0) == doctest::Approx(c.lr / 4));
  CHECK(learning_rate(c, 3) == doctest::Approx(c.lr));
  CHECK(learning_rate(c, 100) == doctest::Approx(c.lr));
}

TEST_CASE("token batches cover every item once within the budget") {
  Rng rng(3);
  std::vector<int> sizes;
  for (int i = 0; i < 200; ++i) sizes.push_back(1 + rng.below(20));
  sizes.push_back(80);  // larger than the budget
  const auto batches = token_batches(sizes, 50, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    REQUIRE(!b.empty());
    int total = 0;
    for (std::size_t i : b) {
      seen.insert(i);
      total += sizes[i];
    }
    if (b.size() > 1) CHECK(total <= 50);
  }
  CHECK(seen.size() == sizes.size());
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == sizes.size());
}

TEST_CASE("build_btr_batch: membership and labels") {
  const auto v = small_vocab(6);
  const int a = v.first_content_id();
  decode::CandidateSet s;
  s.source = {a, a + 1, a + 2};
  s.gold = TokenSeq{a, a + 1, a + 3};
  for (int r = 1; r <= 7; ++r) s.candidates.push_back({{a + r % 6, a + r / 6 + 2}, -static_cast<double>(r), r});
  s.candidates[2].text = *s.gold;
  Rng rng(1);

  auto only_gold = build_btr_batch({s}, 0, 0.15, v, rng);
  REQUIRE(only_gold.size() == 1);
  CHECK(only_gold[0].is_gold);
  CHECK(only_gold[0].y.original == model::with_eos(*s.gold));
  CHECK(!only_gold[0].y.kappa.empty());

  // Seven candidates, one equal to gold: union has 7 members.
  auto all = build_btr_batch({s}, 20, 0.15, v, rng);
  CHECK(all.size() == 7);
  int golds = 0;
  for (const auto& inst : all) {
    golds += inst.is_gold;
    CHECK(inst.x == s.source);
    CHECK_NOTHROW(inst.y.validate());
  }
  CHECK(golds == 1);

  // Seven distinct non-gold candidates: 8 instances.
  s.candidates[2].text = {a + 5, a + 5, a + 5};
  CHECK(build_btr_batch({s}, 20, 0.15, v, rng).size() == 8);
  CHECK(build_btr_batch({s}, 3, 0.15, v, rng).size() == 4);

  s.gold.reset();
  CHECK_THROWS_AS(build_btr_batch({s}, 2, 0.15, v, rng), DataError);
}

TEST_CASE("btr_loss: gold-only batches equal masked cross-entropy") {
  const auto v = small_vocab(6);
  for (Role role : {Role::btr, Role::encoder_only}) {
    const auto cfg = tiny_config(v.size(), role);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const auto ps = model::init_params(cfg, rng);
      std::vector<BtrInstance> batch;
      for (int i = 0; i < 4; ++i) batch.push_back(random_instance(v, rng, true));
      batch[1].x = batch[0].x;  // shared source segment
      double expect = 0.0;
      for (const auto& inst : batch) {
        const auto lps = role == Role::btr ? model::btr_masked_log_probs(ps, cfg, inst.x, inst.y)
                                           : model::encoder_masked_log_probs(ps, cfg, inst.x, {inst.y}).front();
        double s = 0.0;
        for (double lp : lps) s -= lp;
        expect += s / static_cast<double>(lps.size());
      }
      expect /= static_cast<double>(batch.size());
      nn::ParamBinder b(ps);
      CHECK(std::abs(btr_loss(b, cfg, batch, 1e-6).value()[0] - expect) < 1e-12);

      // Negatives contribute -mean log(1 - p).
      for (auto& inst : batch) inst.is_gold = false;
      double neg = 0.0;
      for (const auto& inst : batch) {
        const auto lps = role == Role::btr ? model::btr_masked_log_probs(ps, cfg, inst.x, inst.y)
                                           : model::encoder_masked_log_probs(ps, cfg, inst.x, {inst.y}).front();
        double s = 0.0;
        for (double lp : lps) s -= std::log1p(-std::exp(lp));
        neg += s / static_cast<double>(lps.size());
      }
      neg /= static_cast<double>(batch.size());
      nn::ParamBinder b2(ps);
      CHECK(std::abs(btr_loss(b2, cfg, batch, 1e-6).value()[0] - neg) < 1e-12);
    }
  }
  const auto cfg = tiny_config(v.size(), Role::btr);
  Rng rng(0);
  const auto ps = model::init_params(cfg, rng);
  auto inst = random_instance(v, rng, false);
  inst.y.kappa.clear();
  inst.y.classes.clear();
  inst.y.masked = inst.y.original;
  nn::ParamBinder b(ps);
  CHECK_THROWS_AS(btr_loss(b, cfg, {inst}, 1e-6), ArgumentError);
  CHECK_THROWS_AS(btr_loss(b, tiny_config(v.size(), Role::base_l2r), {random_instance(v, rng, true)}, 1e-6),
                  RoleError);
}

TEST_CASE("btr_loss: a confident negative contributes almost nothing once p is tiny") {
  // The unlikelihood term -log(1 - p) tends to 0 as p -> 0 and is capped
  // by the floor as p -> 1.
  const auto v = small_vocab(6);
  const auto cfg = tiny_config(v.size(), Role::btr);
  Rng rng(4);
  auto ps = model::init_params(cfg, rng);
  auto inst = random_instance(v, rng, false);
  // Push the output bias far away from the masked targets.
  auto& bias = ps.value("out.b");
  for (int k : inst.y.kappa) bias[static_cast<std::size_t>(inst.y.original[static_cast<std::size_t>(k)])] = -60.0;
  nn::ParamBinder b(ps);
  CHECK(btr_loss(b, cfg, {inst}, 1e-6).value()[0] < 1e-20);
  for (int k : inst.y.kappa) bias[static_cast<std::size_t>(inst.y.original[static_cast<std::size_t>(k)])] = 60.0;
  nn::ParamBinder b2(ps);
  const double capped = btr_loss(b2, cfg, {inst}, 1e-6).value()[0];
  CHECK(std::isfinite(capped));
  CHECK(capped <= -std::log(1e-6) + 1e-9);
}

TEST_CASE("btr_loss: gradients match finite differences") {
  const auto v = small_vocab(6);
  for (Role role : {Role::btr, Role::encoder_only}) {
    const auto cfg = tiny_config(v.size(), role);
    Rng rng(21);
    auto ps = model::init_params(cfg, rng);
    std::vector<BtrInstance> batch{random_instance(v, rng, true), random_instance(v, rng, false),
                                   random_instance(v, rng, false)};
    batch[1].x = batch[0].x;
    nn::GradCheckOptions opt;
    opt.max_coords_per_tensor = 12;
    const auto rep = nn::grad_check([&](nn::ParamBinder& b) { return btr_loss(b, cfg, batch, 1e-6); }, ps, opt);
    INFO(model::to_string(role), " worst ", rep.worst_param);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("btr_loss: one small gradient step moves masked probability the right way") {
  const auto v = small_vocab(6);
  const auto cfg = tiny_config(v.size(), Role::btr);
  int neg_ok = 0, gold_ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    for (bool gold : {false, true}) {
      Rng rng(seed);
      auto ps = model::init_params(cfg, rng);
      const auto inst = random_instance(v, rng, gold);
      const double before = masked_prob_sum(ps, cfg, inst);
      ps.zero_grad();
      {
        nn::ParamBinder b(ps, true);
        nn::backward(btr_loss(b, cfg, {inst}, 1e-6));
      }
      nn::sgd_step(ps, 1e-3);
      const double after = masked_prob_sum(ps, cfg, inst);
      (gold ? gold_ok : neg_ok) += gold ? after > before : after < before;
    }
  }
  CHECK(neg_ok == 100);
  CHECK(gold_ok == 100);
}

TEST_CASE("train_mle: learns, is deterministic and memorizes a small set") {
  const auto v = small_vocab(6);
  const auto cfg = train_config(v.size(), Role::base_l2r);
  const auto pairs = toy_pairs(v, 50, 8);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_tokens = 100;
  tc.warmup = 10;
  tc.lr = 3e-3;
  const auto r1 = train_mle(cfg, pairs, tc);
  const auto r2 = train_mle(cfg, pairs, tc);
  CHECK(r1.initial_loss == doctest::Approx(std::log(v.size())).epsilon(0.05));
  CHECK(r1.epochs.at(0).loss < r1.initial_loss);
  REQUIRE(r1.epochs.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) CHECK(r1.epochs[e].loss == r2.epochs[e].loss);
  CHECK(r1.params.identical(r2.params));

  tc.epochs = 300;
  tc.batch_tokens = 50;
  tc.lr = 2e-3;
  int validated = 0;
  const auto full = train_mle(cfg, pairs, tc, [&](const nn::ParamStore&, int) -> std::optional<double> {
    ++validated;
    return std::nullopt;
  });
  CHECK(validated == 300);
  int exact = 0;
  for (const auto& p : pairs) exact += greedy_decode(full.params, cfg, v, p.src) == p.tgt;
  CHECK(exact == 50);
}

TEST_CASE("train_mle: the r2l role learns reversed targets") {
  const auto v = small_vocab(6);
  const auto cfg = train_config(v.size(), Role::r2l);
  const auto pairs = toy_pairs(v, 20, 9);
  TrainConfig tc;
  tc.epochs = 300;
  tc.batch_tokens = 50;
  tc.warmup = 10;
  tc.lr = 2e-3;
  const auto res = train_mle(cfg, pairs, tc);
  int exact = 0;
  for (const auto& p : pairs) exact += greedy_decode(res.params, cfg, v, p.src) == reversed(p.tgt);
  CHECK(exact == 20);
  CHECK_THROWS_AS(train_mle(train_config(v.size(), Role::btr), pairs, tc), RoleError);
}

TEST_CASE("train_mle: divergence aborts with a diagnostic") {
  const auto v = small_vocab(6);
  const auto cfg = train_config(v.size(), Role::base_l2r);
  TrainConfig tc;
  tc.epochs = 5;
  tc.warmup = 0;
  tc.clip_norm = 0.0;
  tc.lr = 1e300;
  CHECK_THROWS_WITH_AS(train_mle(cfg, toy_pairs(v, 20, 1), tc), doctest::Contains("diverged"), NumericError);
}

TEST_CASE("train_btr: warm start, determinism and shape checks") {
  const auto v = small_vocab(6);
  const auto base_cfg = train_config(v.size(), Role::base_l2r);
  const auto pairs = toy_pairs(v, 30, 2);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_tokens = 120;
  tc.warmup = 10;
  tc.lr = 3e-3;
  const auto base = train_mle(base_cfg, pairs, tc);

  std::vector<TokenSeq> srcs;
  for (const auto& p : pairs) srcs.push_back(p.src);
  decode::DecodeOptions o;
  o.beam = 4;
  o.max_len = 8;
  auto sets = decode::generate(base.params, base_cfg, v, srcs, o, Rng(0));
  for (std::size_t i = 0; i < sets.size(); ++i) sets[i].gold = pairs[i].tgt;

  const auto btr_cfg = base_cfg.with_role(Role::btr);
  TrainConfig bt = tc;
  bt.epochs = 1;
  bt.a_train = 4;
  const auto cold = train_btr(btr_cfg, sets, v, bt);
  const auto warm = train_btr(btr_cfg, sets, v, bt, base.params);
  const auto warm2 = train_btr(btr_cfg, sets, v, bt, base.params);
  CHECK(warm.epochs.at(0).loss == warm2.epochs.at(0).loss);
  CHECK(warm.params.identical(warm2.params));
  CHECK(!warm.params.identical(cold.params));

  // Gold-only training: the base model's knowledge lowers the first-epoch loss.
  bt.a_train = 0;
  CHECK(train_btr(btr_cfg, sets, v, bt, base.params).epochs.at(0).loss <
        train_btr(btr_cfg, sets, v, bt).epochs.at(0).loss);
  bt.a_train = 4;

  auto wrong = train_config(v.size(), Role::base_l2r);
  wrong.d_model = 8;
  wrong.d_ff = 16;
  Rng rng(0);
  CHECK_THROWS_AS(train_btr(btr_cfg, sets, v, bt, model::init_params(wrong, rng)), CheckpointError);

  // The encoder-only reranker trains on the same instances.
  const auto enc = train_btr(base_cfg.with_role(Role::encoder_only), sets, v, bt);
  CHECK(std::isfinite(enc.epochs.at(0).loss));
}

TEST_CASE("train_classifier: separable data, random labels and determinism") {
  const auto v = small_vocab(6);
  const auto cfg = train_config(v.size(), Role::encoder_only);
  const int a = v.first_content_id();
  Rng rng(5);
  // Label 1 iff the sequence contains the first content symbol.
  std::vector<LabeledSeq> data;
  for (int i = 0; i < 80; ++i) {
    TokenSeq s = random_seq(v, 4, rng);
    bool has = false;
    for (int& t : s) {
      if (i % 2) {
        if (t == a) t = a + 1;
      } else {
        has = has || t == a;
      }
    }
    if (i % 2 == 0 && !has) s[static_cast<std::size_t>(rng.below(4))] = a;
    data.push_back({s, i % 2 == 0 ? 1 : 0});
  }
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_tokens = 120;
  tc.warmup = 10;
  tc.lr = 3e-3;
  const auto res = train_classifier(cfg, data, tc);
  int correct = 0;
  for (const auto& d : data)
    correct += (model::classify(res.params, cfg, model::classifier_input(d.seq)) > 0.5) == (d.label == 1);
  CHECK(static_cast<double>(correct) / data.size() > 0.95);

  std::vector<LabeledSeq> noise;
  for (int i = 0; i < 200; ++i) noise.push_back({random_seq(v, 4, rng), rng.below(2)});
  tc.epochs = 3;
  const auto flat = train_classifier(cfg, noise, tc);
  CHECK(flat.epochs.back().loss == doctest::Approx(std::log(2.0)).epsilon(0.05));
  const auto flat2 = train_classifier(cfg, noise, tc);
  CHECK(flat.params.identical(flat2.params));

  const auto cd = classifier_data({{{a, a}, {a, a + 1}}, {{a}, {a}}});
  REQUIRE(cd.size() == 3);
  CHECK(cd[0].label == 0);
  CHECK(cd[1].label == 1);
  CHECK(cd[2].label == 1);
  noise[0].label = 2;
  CHECK_THROWS_AS(train_classifier(cfg, noise, tc), DataError);
}
