#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "btr/common/error.hpp"
#include "btr/common/rng.hpp"
#include "btr/nn/checkpoint.hpp"
#include "btr/nn/grad_check.hpp"
#include "btr/nn/kernels.hpp"
#include "btr/nn/ops.hpp"
#include "btr/nn/optim.hpp"
#include "doctest.h"

using namespace btr;
using namespace btr::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

ParamStore random_attention_store(int d, Rng& rng) {
  ParamStore ps;
  for (const char* n : {"wq", "wk", "wv", "wo"}) ps.add(n, random_tensor({d, d}, rng, 0.5));
  for (const char* n : {"bq", "bk", "bv", "bo"}) ps.add(n, random_tensor({d}, rng, 0.1));
  return ps;
}

AttentionWeights bind_attention(ParamBinder& b) {
  return {b("wq"), b("bq"), b("wk"), b("bk"), b("wv"), b("bv"), b("wo"), b("bo")};
}

}  // namespace

TEST_CASE("linear: identity, constant and hand-multiplied cases") {
  Var x = constant(Tensor::matrix(1, 2, {1, 2}));
  Var eye = constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var zero2 = constant(Tensor::vector({0, 0}));
  Var y = linear(x, eye, zero2);
  CHECK(y.value()[0] == 1.0);
  CHECK(y.value()[1] == 2.0);

  Var w0 = constant(Tensor::matrix(2, 1, {0, 0}));
  Var b3 = constant(Tensor::vector({3}));
  CHECK(linear(constant(Tensor::matrix(1, 2, {-7.5, 11})), w0, b3).value()[0] == 3.0);

  Var w = constant(Tensor::matrix(2, 2, {1, 1, 0, 1}));
  Var y2 = linear(constant(Tensor::matrix(1, 2, {2, 3})), w, zero2);
  CHECK(y2.value()[0] == 2.0);
  CHECK(y2.value()[1] == 5.0);

  CHECK_THROWS_AS(linear(constant(Tensor::matrix(1, 3, {1, 2, 3})), w, zero2), DimensionError);
}

TEST_CASE("linear: higher-rank input maps the trailing dimension") {
  Var x = constant(Tensor({2, 1, 2}, {1, 2, 3, 4}));
  Var w = constant(Tensor::matrix(2, 1, {1, 1}));
  Var y = linear(x, w, Var());
  CHECK(y.shape() == Shape{2, 1, 1});
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 7.0);
}

TEST_CASE("attention: single key returns the projected value") {
  Rng rng(3);
  const int d = 4;
  ParamStore ps = random_attention_store(d, rng);
  ParamBinder b(ps);
  Var q = constant(random_tensor({1, d}, rng));
  Var mem = constant(random_tensor({1, d}, rng));
  Var out = multi_head_attention(q, mem, kernels::AttentionMask::full(1, 1), 2, bind_attention(b));
  Var vproj = linear(linear(mem, b("wv"), b("bv")), b("wo"), b("bo"));
  CHECK(max_abs_diff(out.value(), vproj.value()) < 1e-14);
}

TEST_CASE("attention: equal scores split weight evenly and blocked keys get exactly zero") {
  Tensor q = Tensor::matrix(1, 2, {1, 0});
  Tensor k = Tensor::matrix(3, 2, {0.5, 1, 0.5, -1, 9, 9});
  Tensor v = Tensor::matrix(3, 2, {1, 0, 0, 1, 5, 5});
  kernels::AttentionMask mask(1, 3, true);
  mask.set(0, 2, false);
  auto r = kernels::serial::attention_forward(q, k, v, mask, 1);
  CHECK(r.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.probs[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.probs[2] == 0.0);
  CHECK(r.out[0] == doctest::Approx(0.5));
}

TEST_CASE("attention: rows sum to one and blocked rows are a contract error") {
  Rng rng(5);
  Tensor q = random_tensor({6, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  kernels::AttentionMask mask(6, 5, true);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 5; ++j) mask.set(i, j, rng.bernoulli(0.6) || j == i % 5);
  auto r = kernels::serial::attention_forward(q, k, v, mask, 2);
  for (int h = 0; h < 2; ++h)
    for (int i = 0; i < 6; ++i) {
      double s = 0.0;
      for (int j = 0; j < 5; ++j) {
        const double p = r.probs[(static_cast<std::size_t>(h) * 6 + i) * 5 + j];
        if (!mask(i, j)) CHECK(p == 0.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }

  kernels::AttentionMask dead = mask;
  for (int j = 0; j < 5; ++j) dead.set(3, j, false);
  CHECK_THROWS_AS(kernels::serial::attention_forward(q, k, v, dead, 2), ContractError);
  CHECK_THROWS_AS(attention(constant(q), constant(k), constant(v), dead, 2), ContractError);
}

TEST_CASE("attention: causal rows ignore blocked keys and values bitwise") {
  Rng rng(11);
  const int n = 5, d = 8;
  ParamStore ps = random_attention_store(d, rng);
  ParamBinder b(ps);
  Tensor x = random_tensor({n, d}, rng);
  auto mask = kernels::AttentionMask::causal(n);
  Var base = multi_head_attention(constant(x), constant(x), mask, 2, bind_attention(b));
  for (int j = 0; j + 1 < n; ++j) {
    Tensor y = x;
    for (int t = 0; t < d; ++t) y.at(j + 1, t) += rng.normal();
    Var pert = multi_head_attention(constant(y), constant(y), mask, 2, bind_attention(b));
    for (int row = 0; row <= j; ++row)
      for (int t = 0; t < d; ++t) CHECK(pert.value().at(row, t) == base.value().at(row, t));
  }
}

TEST_CASE("softmax cross-entropy: uniform, large-margin and hand-evaluated cases") {
  std::vector<double> uniform(10, 0.25);
  for (int t = 0; t < 10; ++t) CHECK(softmax_cross_entropy(uniform, t) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  std::vector<double> peaked{0, 0, 60, 0};
  CHECK(softmax_cross_entropy(peaked, 2) < 1e-25);
  // ln(e + e^2 + e^3) - 3
  std::vector<double> l{1, 2, 3};
  std::vector<double> g;
  CHECK(softmax_cross_entropy(l, 2, &g) == doctest::Approx(0.40760596444).epsilon(1e-10));
  const double z = std::exp(1) + std::exp(2) + std::exp(3);
  CHECK(g[0] == doctest::Approx(std::exp(1) / z));
  CHECK(g[2] == doctest::Approx(std::exp(3) / z - 1.0));
  CHECK_THROWS_AS(softmax_cross_entropy(l, 3), ArgumentError);
  CHECK_THROWS_AS(softmax_cross_entropy(l, -1), ArgumentError);
}

TEST_CASE("backward: sum and half squared norm") {
  Var p = leaf(Tensor::vector({1.5, -2, 0.25}));
  backward(sum(p));
  for (double g : p.grad().data()) CHECK(g == 1.0);

  Var q = leaf(Tensor::matrix(1, 3, {1.5, -2, 0.25}));
  backward(scale(matmul_nt(q, q), 0.5));
  for (std::size_t i = 0; i < 3; ++i) CHECK(q.grad()[i] == doctest::Approx(q.value()[i]).epsilon(1e-15));
}

TEST_CASE("backward: repeated sweeps accumulate into parameter buffers") {
  ParamStore ps;
  ps.add("p", Tensor::vector({1, 2}));
  ParamBinder b(ps, true);
  Var loss = sum(b("p"));
  backward(loss);
  backward(loss);
  CHECK(ps.grad("p")[0] == 2.0);
  ps.zero_grad();
  CHECK(ps.grad("p")[0] == 0.0);
}

TEST_CASE("non-finite values are rejected") {
  Var a = constant(Tensor::vector({1e308}));
  CHECK_THROWS_AS(scale(a, 10.0), NumericError);
}

TEST_CASE("grad_check: linear layer to 1e-6") {
  Rng rng(7);
  ParamStore ps;
  ps.add("w", random_tensor({3, 4}, rng));
  ps.add("b", random_tensor({4}, rng));
  Tensor x = random_tensor({5, 3}, rng);
  std::vector<int> targets{0, 3, 1, 2, 2};
  auto report = grad_check(
      [&](ParamBinder& b) { return mean(softmax_cross_entropy(linear(constant(x), b("w"), b("b")), targets)); }, ps,
      {.eps = 1e-5});
  INFO("worst " << report.worst_param << "[" << report.worst_index << "]");
  CHECK(report.max_rel_error < 1e-6);
  CHECK(report.coords_checked == 16);
}

TEST_CASE("grad_check: every primitive below 1e-4") {
  Rng rng(9);
  const int n = 4, d = 8, vocab = 6;
  ParamStore ps;
  ps.add("emb", random_tensor({vocab, d}, rng, 0.7));
  ps.add("ln_g", random_tensor({d}, rng, 0.3));
  ps.add("ln_b", random_tensor({d}, rng, 0.3));
  Rng arng(21);
  ParamStore attn = random_attention_store(d, arng);
  for (auto& [name, e] : attn) ps.add("attn." + name, e.value);
  ps.add("w", random_tensor({d, vocab}, rng, 0.5));
  std::vector<int> ids{1, 4, 2, 5};
  std::vector<int> targets{2, 0, 5, 1};
  auto mask = kernels::AttentionMask::causal(n);
  mask.set(0, 3, true);

  auto report = grad_check(
      [&](ParamBinder& b) {
        Var h = embedding(b("emb"), ids);
        Var a = multi_head_attention(layer_norm(h, add(b("ln_g"), constant(Tensor({d}, 1.0))), b("ln_b")), h, mask, 2,
                                     {b("attn.wq"), b("attn.bq"), b("attn.wk"), b("attn.bk"), b("attn.wv"),
                                      b("attn.bv"), b("attn.wo"), b("attn.bo")});
        Var z = gelu(add(h, a));
        Var logits = add(matmul(z, b("w")), matmul_nt(z, b("emb")));
        Var lp = log_softmax_rows(logits);
        Var picked = gather(lp, std::vector<int>{0, 1, 2, 3}, targets);
        Var ul = log1m_exp(gather(lp, std::vector<int>{1, 2}, std::vector<int>{3, 3}), 1e-6);
        Var ce = softmax_cross_entropy(select_rows(logits, std::vector<int>{3, 0}), std::vector<int>{4, 4});
        std::vector<double> w{0.3, -0.2, 0.5, 1.0};
        return add(add(weighted_sum(picked, w), scale(sum(ul), -1.0)), mean(ce));
      },
      ps, {.eps = 1e-5, .max_coords_per_tensor = 64, .seed = 1});
  INFO("worst " << report.worst_param << "[" << report.worst_index << "] analytic " << report.worst_analytic
                << " numeric " << report.worst_numeric);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.skipped.empty());
}

TEST_CASE("grad_check: frozen entries are reported as skipped") {
  Rng rng(2);
  ParamStore ps;
  ps.add("emb", random_tensor({4, 3}, rng), /*trainable=*/false);
  ps.add("w", random_tensor({3, 4}, rng));
  std::vector<int> ids{0, 2};
  auto report = grad_check(
      [&](ParamBinder& b) {
        return mean(softmax_cross_entropy(matmul(embedding(b("emb"), ids), b("w")), std::vector<int>{1, 3}));
      },
      ps);
  REQUIRE(report.skipped.size() == 1);
  CHECK(report.skipped[0] == "emb");
  CHECK(report.coords_checked == 12);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: a non-deterministic closure is detected") {
  ParamStore ps;
  ps.add("w", Tensor::vector({1.0}));
  int calls = 0;
  CHECK_THROWS_AS(grad_check(
                      [&](ParamBinder& b) {
                        ++calls;
                        return scale(sum(b("w")), 1.0 + 1e-3 * calls);
                      },
                      ps),
                  ContractError);
}

TEST_CASE("adam: zero gradient, first-step magnitude, determinism, config errors") {
  ParamStore ps;
  ps.add("p", Tensor::vector({0.5, -1.0, 2.0}));
  const Tensor before = ps.value("p");
  adam_step(ps, {.lr = 0.01});
  CHECK(ps.value("p").identical(before));

  ps.grad("p") = Tensor::vector({3.0, -0.2, 1e-3});
  adam_step(ps, {.lr = 0.01});
  // From fresh moments the bias-corrected step is lr * g / (|g| + eps).
  ParamStore fresh;
  fresh.add("p", before);
  fresh.grad("p") = Tensor::vector({3.0, -0.2, 1e-3});
  adam_step(fresh, {.lr = 0.01});
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = fresh.grad("p")[i];
    const double expected = 0.01 * g / (std::abs(g) + 1e-8);
    CHECK(before[i] - fresh.value("p")[i] == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(before[i] - fresh.value("p")[i]) == doctest::Approx(0.01).epsilon(1e-4));
  }

  auto run = [] {
    ParamStore s;
    Rng rng(99);
    s.add("a", random_tensor({4, 4}, rng));
    for (int step = 0; step < 5; ++step) {
      for (double& g : s.grad("a").data()) g = rng.normal();
      adam_step(s, {.lr = 0.003});
    }
    return s;
  };
  CHECK(run().identical(run()));
  CHECK_THROWS_AS(adam_step(ps, {.lr = 0.0}), ConfigError);
  CHECK_THROWS_AS(adam_step(ps, {.lr = -1.0}), ConfigError);
}

TEST_CASE("kernels: parallel variants agree bitwise with the serial reference") {
  Rng rng(17);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 1 + rng.below(70), k = 1 + rng.below(70), m = 1 + rng.below(70);
    Tensor a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng), bt = random_tensor({m, k}, rng);
    Tensor an = random_tensor({n, m}, rng);
    Tensor c1({n, m}), c2({n, m});
    kernels::serial::gemm_nn(a, b, c1);
    kernels::parallel::gemm_nn(a, b, c2);
    CHECK(c1.identical(c2));
    Tensor d1({n, m}), d2({n, m});
    kernels::serial::gemm_nt(a, bt, d1);
    kernels::parallel::gemm_nt(a, bt, d2);
    CHECK(d1.identical(d2));
    Tensor e1({k, m}), e2({k, m});
    kernels::serial::gemm_tn(a, an, e1);
    kernels::parallel::gemm_tn(a, an, e2);
    CHECK(e1.identical(e2));
  }
  const int n = 40, m = 30, d = 16, heads = 4;
  Tensor q = random_tensor({n, d}, rng), k = random_tensor({m, d}, rng), v = random_tensor({m, d}, rng);
  Tensor dout = random_tensor({n, d}, rng);
  kernels::AttentionMask mask(n, m, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) mask.set(i, j, j <= i % m || rng.bernoulli(0.3));
  auto r1 = kernels::serial::attention_forward(q, k, v, mask, heads);
  auto r2 = kernels::parallel::attention_forward(q, k, v, mask, heads);
  CHECK(r1.out.identical(r2.out));
  CHECK(r1.probs.identical(r2.probs));
  Tensor dq1({n, d}), dk1({m, d}), dv1({m, d}), dq2({n, d}), dk2({m, d}), dv2({m, d});
  kernels::serial::attention_backward(q, k, v, r1.probs, mask, heads, dout, dq1, dk1, dv1);
  kernels::parallel::attention_backward(q, k, v, r2.probs, mask, heads, dout, dq2, dk2, dv2);
  CHECK(dq1.identical(dq2));
  CHECK(dk1.identical(dk2));
  CHECK(dv1.identical(dv2));
}

TEST_CASE("forward passes are bitwise deterministic") {
  Rng rng(4);
  ParamStore ps = random_attention_store(8, rng);
  Tensor x = random_tensor({7, 8}, rng);
  auto run = [&] {
    ParamBinder b(ps);
    return multi_head_attention(constant(x), constant(x), kernels::AttentionMask::full(7, 7), 4, bind_attention(b))
        .value();
  };
  CHECK(run().identical(run()));
}

TEST_CASE("checkpoint: bit-exact round trip with metadata") {
  Rng rng(12);
  ParamStore ps;
  ps.add("enc.w", random_tensor({3, 5}, rng));
  ps.add("tiny", Tensor::vector({-0.0, 5e-324, 1.0 / 3.0}));
  ps.add("frozen", random_tensor({2}, rng), false);
  ps.step = 42;
  const auto path = std::filesystem::temp_directory_path() / "btr_ckpt_roundtrip.bin";
  save_checkpoint(path, ps, {{"role", "btr"}, {"d_model", 8}});
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.params.identical(ps));
  CHECK(std::signbit(ck.params.value("tiny")[0]));
  CHECK_FALSE(ck.params.entry("frozen").trainable);
  CHECK(ck.params.step == 42);
  CHECK(ck.meta.at("role") == "btr");

  // Saving the loaded store reproduces the file byte for byte.
  const auto path2 = std::filesystem::temp_directory_path() / "btr_ckpt_roundtrip2.bin";
  save_checkpoint(path2, ck.params, ck.meta);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(path) == slurp(path2));

  std::string bytes = slurp(path);
  std::ofstream(path2, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(path2), CheckpointError);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
