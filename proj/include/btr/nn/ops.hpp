#pragma once

#include <span>
#include <vector>

#include "btr/nn/autodiff.hpp"
#include "btr/nn/kernels.hpp"

// Differentiable operations. Tensors of any rank are treated as a matrix
// of rows x trailing-dimension; shapes are checked and mismatches throw
// DimensionError.
namespace btr::nn {

Var matmul(const Var& a, const Var& b);     // [n,k] x [k,m]
Var matmul_nt(const Var& a, const Var& b);  // [n,k] x [m,k]^T
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& bias);  // bias broadcast over rows
Var scale(const Var& a, double s);

/// Affine map over the trailing dimension: x[.., d_in] * weight[d_in, d_out]
/// + bias[d_out]. `bias` may be empty.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var gelu(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Rows of `table` gathered by id.
Var embedding(const Var& table, std::span<const int> ids);

/// Scaled dot-product attention over `heads` column blocks; blocked keys get
/// kernels::kBlockedScore before the softmax. A query row with every key
/// blocked throws ContractError. Projections live in the caller.
Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionMask& mask, int heads);

/// Projection weights of one attention block; every matrix is
/// [d_model, d_model] and every bias [d_model].
struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Projects queries from `query_in` and keys/values from `memory`, runs
/// attention(), and applies the output projection.
Var multi_head_attention(const Var& query_in, const Var& memory, const kernels::AttentionMask& mask, int heads,
                         const AttentionWeights& w);

Var log_softmax_rows(const Var& logits);

/// Per-row -log softmax(logits)[target]; result shape [rows].
Var softmax_cross_entropy(const Var& logits, std::span<const int> targets);

/// Picks a[rows[i], cols[i]]; result shape [rows.size()].
Var gather(const Var& a, std::span<const int> rows, std::span<const int> cols);
Var select_rows(const Var& a, std::span<const int> rows);

/// Elementwise log(1 - min(exp(lp), 1 - floor)) for log-probabilities lp.
Var log1m_exp(const Var& log_probs, double floor);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a[i] * weights[i] with constant weights.
Var weighted_sum(const Var& a, std::span<const double> weights);

/// Non-graph loss for a single logit vector: returns -log softmax[target]
/// and, when `grad` is given, writes softmax - onehot into it.
double softmax_cross_entropy(std::span<const double> logits, int target, std::vector<double>* grad = nullptr);

}  // namespace btr::nn
