#include "btr/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "btr/common/error.hpp"

namespace btr::nn {

namespace kp = kernels::parallel;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// Views the trailing dimension as columns for kernels that want a matrix.
Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  return Tensor({t.rows(), t.cols()}, std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor reshape(Tensor t, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(t.data().begin(), t.data().end()));
}

void accumulate(Node& parent, const Tensor& g) {
  if (!parent.requires_grad) return;
  Tensor& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  kp::gemm_nn(a.value(), b.value(), out);
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kp::gemm_nt(self.grad, pb.value, pa.ensure_grad());
    if (pb.requires_grad) kp::gemm_tn(pa.value, self.grad, pb.ensure_grad());
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + shape_string(a.shape()) + " by transpose of " +
                         shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.rows()});
  kp::gemm_nt(a.value(), b.value(), out);
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kp::gemm_nn(self.grad, pb.value, pa.ensure_grad());
    if (pb.requires_grad) kp::gemm_tn(self.grad, pa.value, pb.ensure_grad());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Var add_row(const Var& a, const Var& bias) {
  if (bias.value().rank() != 1 || bias.value().size() != static_cast<std::size_t>(a.cols())) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match trailing dim of " +
                         shape_string(a.shape()));
  }
  Tensor out = a.value();
  const int n = out.rows(), m = out.cols();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(i, j) += bias.value()[j];
  return make_result(std::move(out), {a, bias}, [n, m](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Node& pb = *self.parents[1];
    if (!pb.requires_grad) return;
    Tensor& g = pb.ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) g[j] += self.grad.at(i, j);
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& w = weight.value();
  if (w.rank() != 2 || x.cols() != w.dim(0)) {
    throw DimensionError("linear: input trailing dim " + std::to_string(x.cols()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const bool flat = x.value().rank() == 2;
  Var xm = flat ? x : make_result(as_matrix(x.value()), {x}, [](Node& self) { accumulate(*self.parents[0], self.grad); });
  Var y = matmul(xm, weight);
  if (bias) y = add_row(y, bias);
  if (flat) return y;
  return make_result(reshape(y.value(), out_shape), {y}, [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var gelu(const Var& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  Tensor out = a.value();
  for (double& v : out.data()) {
    const double t = std::tanh(c * (v + 0.044715 * v * v * v));
    v = 0.5 * v * (1.0 + t);
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    Tensor& g = pa.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = pa.value[i];
      const double t = std::tanh(c * (x + 0.044715 * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
      g[i] += d * self.grad[i];
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int n = x.rows(), m = x.cols();
  if (gamma.value().size() != static_cast<std::size_t>(m) || beta.value().size() != static_cast<std::size_t>(m)) {
    throw DimensionError("layer_norm: gain/bias width does not match input " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  const Tensor& xv = x.value();
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < m; ++j) mu += xv.at(i, j);
    mu /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= m;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < m; ++j) {
      const double h = (xv.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = gamma.value()[j] * h + beta.value()[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const Tensor& gy = self.grad;
                       if (pg.requires_grad || pb.requires_grad) {
                         Tensor& gg = pg.ensure_grad();
                         Tensor& gb = pb.ensure_grad();
                         for (int i = 0; i < n; ++i)
                           for (int j = 0; j < m; ++j) {
                             gg[j] += gy.at(i, j) * xhat.at(i, j);
                             gb[j] += gy.at(i, j);
                           }
                       }
                       if (!px.requires_grad) return;
                       Tensor& gx = px.ensure_grad();
                       for (int i = 0; i < n; ++i) {
                         double mean_d = 0.0, mean_dx = 0.0;
                         for (int j = 0; j < m; ++j) {
                           const double d = gy.at(i, j) * pg.value[j];
                           mean_d += d;
                           mean_dx += d * xhat.at(i, j);
                         }
                         mean_d /= m;
                         mean_dx /= m;
                         for (int j = 0; j < m; ++j) {
                           const double d = gy.at(i, j) * pg.value[j];
                           gx.at(i, j) += inv_std[i] * (d - mean_d - xhat.at(i, j) * mean_dx);
                         }
                       }
                     });
}

Var embedding(const Var& table, std::span<const int> ids) {
  const int vocab = table.rows(), d = table.cols();
  Tensor out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    }
    std::copy_n(table.value().row(ids[i]).begin(), d, out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result(std::move(out), {table}, [idv = std::move(idv), d](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (int j = 0; j < d; ++j) g.at(idv[i], j) += self.grad.at(static_cast<int>(i), j);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const kernels::AttentionMask& mask, int heads) {
  auto r = kp::attention_forward(q.value(), k.value(), v.value(), mask, heads);
  return make_result(std::move(r.out), {q, k, v}, [probs = std::move(r.probs), mask, heads](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    // The kernel writes all three; scratch buffers stand in for inputs that
    // do not need gradient.
    Tensor sq, sk, sv;
    Tensor& dq = pq.requires_grad ? pq.ensure_grad() : (sq = Tensor(pq.value.shape()));
    Tensor& dk = pk.requires_grad ? pk.ensure_grad() : (sk = Tensor(pk.value.shape()));
    Tensor& dv = pv.requires_grad ? pv.ensure_grad() : (sv = Tensor(pv.value.shape()));
    kp::attention_backward(pq.value, pk.value, pv.value, probs, mask, heads, self.grad, dq, dk, dv);
  });
}

Var multi_head_attention(const Var& query_in, const Var& memory, const kernels::AttentionMask& mask, int heads,
                         const AttentionWeights& w) {
  Var q = linear(query_in, w.wq, w.bq);
  Var k = linear(memory, w.wk, w.bk);
  Var v = linear(memory, w.wv, w.bv);
  return linear(attention(q, k, v, mask, heads), w.wo, w.bo);
}

Var log_softmax_rows(const Var& logits) {
  const int n = logits.rows(), m = logits.cols();
  Tensor out(logits.shape());
  for (int i = 0; i < n; ++i) {
    auto row = logits.value().row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < m; ++j) out.at(i, j) = row[j] - lse;
  }
  check_finite(out, "log_softmax_rows");
  Tensor lsm = out;
  return make_result(std::move(out), {logits}, [n, m, lsm = std::move(lsm)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < n; ++i) {
      double gs = 0.0;
      for (int j = 0; j < m; ++j) gs += self.grad.at(i, j);
      for (int j = 0; j < m; ++j) g.at(i, j) += self.grad.at(i, j) - std::exp(lsm.at(i, j)) * gs;
    }
  });
}

double softmax_cross_entropy(std::span<const double> logits, int target, std::vector<double>* grad) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw ArgumentError("softmax_cross_entropy: target " + std::to_string(target) + " outside [0, " +
                        std::to_string(logits.size()) + ")");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  if (grad != nullptr) {
    grad->resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) (*grad)[j] = std::exp(logits[j] - lse);
    (*grad)[static_cast<std::size_t>(target)] -= 1.0;
  }
  return lse - logits[static_cast<std::size_t>(target)];
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> targets) {
  const int n = logits.rows(), m = logits.cols();
  if (targets.size() != static_cast<std::size_t>(n)) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  Tensor out({n});
  Tensor probs({n, m});
  std::vector<double> g;
  for (int i = 0; i < n; ++i) {
    out[i] = softmax_cross_entropy(logits.value().row(i), targets[i], &g);
    std::copy(g.begin(), g.end(), probs.row(i).begin());  // softmax - onehot
  }
  check_finite(out, "softmax_cross_entropy");
  return make_result(std::move(out), {logits}, [n, m, probs = std::move(probs)](Node& self) {
    Tensor& gl = self.parents[0]->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) gl.at(i, j) += self.grad[i] * probs.at(i, j);
  });
}

Var gather(const Var& a, std::span<const int> rows, std::span<const int> cols) {
  if (rows.size() != cols.size()) throw DimensionError("gather: row/col index lists differ in length");
  const int n = a.rows(), m = a.cols();
  Tensor out({static_cast<int>(rows.size())});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n || cols[i] < 0 || cols[i] >= m) throw DimensionError("gather: index out of range");
    out[i] = a.value().at(rows[i], cols[i]);
  }
  std::vector<int> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
  return make_result(std::move(out), {a}, [r = std::move(r), c = std::move(c)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r.size(); ++i) g.at(r[i], c[i]) += self.grad[i];
  });
}

Var select_rows(const Var& a, std::span<const int> rows) {
  const int m = a.cols();
  Tensor out({static_cast<int>(rows.size()), m});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw DimensionError("select_rows: row index out of range");
    std::copy_n(a.value().row(rows[i]).begin(), m, out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> r(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [r = std::move(r), m](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r.size(); ++i)
      for (int j = 0; j < m; ++j) g.at(r[i], j) += self.grad.at(static_cast<int>(i), j);
  });
}

Var log1m_exp(const Var& log_probs, double floor) {
  if (!(floor > 0.0 && floor < 1.0)) throw ArgumentError("log1m_exp: floor must lie in (0, 1)");
  const double cap = 1.0 - floor;
  Tensor out(log_probs.shape());
  std::vector<double> dfdx(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = std::exp(log_probs.value()[i]);
    if (p >= cap) {
      out[i] = std::log(floor);
      dfdx[i] = 0.0;  // clamped region is flat
    } else {
      out[i] = std::log1p(-p);
      dfdx[i] = -p / (1.0 - p);
    }
  }
  return make_result(std::move(out), {log_probs}, [dfdx = std::move(dfdx)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dfdx[i] * self.grad[i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_result(Tensor::scalar(s), {a}, [](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (double& v : g.data()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  if (a.value().empty()) throw ArgumentError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var weighted_sum(const Var& a, std::span<const double> weights) {
  if (weights.size() != a.value().size()) throw DimensionError("weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * a.value()[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(Tensor::scalar(s), {a}, [w = std::move(w)](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

}  // namespace btr::nn
