#include "btr/nn/kernels.hpp"

#include <cmath>
#include <limits>

#include "btr/common/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace btr::nn::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr long kParallelWork = 1L << 15;

template <bool Parallel, typename Fn>
void for_each_task(int count, long work, Fn&& fn) {
  if constexpr (Parallel) {
#pragma omp parallel for schedule(static) if (work >= kParallelWork && count > 1)
    for (int t = 0; t < count; ++t) fn(t);
  } else {
    (void)work;
    for (int t = 0; t < count; ++t) fn(t);
  }
}

void check_gemm(const char* name, int an, int ak, int bk, int bm, const Tensor& c, int cn, int cm) {
  if (ak != bk) {
    throw DimensionError(std::string(name) + ": inner dimensions differ (" + std::to_string(an) + "x" +
                         std::to_string(ak) + " vs " + std::to_string(bk) + "x" + std::to_string(bm) + ")");
  }
  if (c.rows() != cn || c.cols() != cm) {
    throw DimensionError(std::string(name) + ": output is " + std::to_string(c.rows()) + "x" +
                         std::to_string(c.cols()) + ", expected " + std::to_string(cn) + "x" + std::to_string(cm));
  }
}

template <bool Parallel>
void gemm_nn_impl(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  check_gemm("gemm_nn", n, k, b.rows(), m, c, n, m);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for_each_task<Parallel>(n, static_cast<long>(n) * k * m, [&](int i) {
    double* crow = pc + static_cast<std::size_t>(i) * m;
    const double* arow = pa + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      if (aip == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  });
}

template <bool Parallel>
void gemm_nt_impl(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows(), k = a.cols(), m = b.rows();
  check_gemm("gemm_nt", n, k, b.cols(), m, c, n, m);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for_each_task<Parallel>(n, static_cast<long>(n) * k * m, [&](int i) {
    const double* arow = pa + static_cast<std::size_t>(i) * k;
    double* crow = pc + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = pb + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  });
}

template <bool Parallel>
void gemm_tn_impl(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  check_gemm("gemm_tn", k, n, b.rows(), m, c, k, m);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* pc = c.ptr();
  for_each_task<Parallel>(k, static_cast<long>(n) * k * m, [&](int p) {
    double* crow = pc + static_cast<std::size_t>(p) * m;
    for (int i = 0; i < n; ++i) {
      const double aip = pa[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  });
}

// Per query row, the half-open range of columns holding every allowed key.
// Packed batches are block-diagonal, so most of each row lies outside it.
struct KeyRange {
  std::vector<int> lo, hi;
};

KeyRange key_range(const AttentionMask& mask) {
  KeyRange r{std::vector<int>(static_cast<std::size_t>(mask.rows)), std::vector<int>(static_cast<std::size_t>(mask.rows))};
  for (int i = 0; i < mask.rows; ++i) {
    int lo = 0, hi = mask.cols;
    while (lo < mask.cols && !mask(i, lo)) ++lo;
    while (hi > lo && !mask(i, hi - 1)) --hi;
    r.lo[static_cast<std::size_t>(i)] = lo;
    r.hi[static_cast<std::size_t>(i)] = hi;
  }
  return r;
}

KeyRange check_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask, int heads) {
  if (heads <= 0 || q.cols() % heads != 0) {
    throw DimensionError("attention: model width " + std::to_string(q.cols()) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows()) {
    throw DimensionError("attention: q/k/v shapes disagree");
  }
  if (mask.rows != q.rows() || mask.cols != k.rows()) {
    throw DimensionError("attention: mask is " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         ", expected " + std::to_string(q.rows()) + "x" + std::to_string(k.rows()));
  }
  KeyRange r = key_range(mask);
  for (int i = 0; i < mask.rows; ++i) {
    if (r.lo[static_cast<std::size_t>(i)] == mask.cols) {
      throw ContractError("attention: query row " + std::to_string(i) + " has every key blocked");
    }
  }
  return r;
}

template <bool Parallel>
AttentionResult attention_forward_impl(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                       int heads) {
  const KeyRange range = check_attention(q, k, v, mask, heads);
  const int n = q.rows(), m = k.rows(), d = q.cols(), dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult r{Tensor({n, d}), Tensor({heads, n, m})};
  for_each_task<Parallel>(heads * n, static_cast<long>(heads) * n * m * dh, [&](int task) {
    const int h = task / n, i = task % n, off = h * dh;
    const int lo = range.lo[static_cast<std::size_t>(i)], hi = range.hi[static_cast<std::size_t>(i)];
    double* p = r.probs.ptr() + (static_cast<std::size_t>(h) * n + i) * m;
    const double* qi = q.ptr() + static_cast<std::size_t>(i) * d + off;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = lo; j < hi; ++j) {
      if (!mask(i, j)) {
        p[j] = kBlockedScore;
        continue;
      }
      const double* kj = k.ptr() + static_cast<std::size_t>(j) * d + off;
      double s = 0.0;
      for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
      p[j] = s * scale;
      if (p[j] > mx) mx = p[j];
    }
    double sum = 0.0;
    for (int j = lo; j < hi; ++j) {
      // exp(kBlockedScore - mx) underflows to exactly 0; skip the call.
      p[j] = mask(i, j) ? std::exp(p[j] - mx) : 0.0;
      sum += p[j];
    }
    double* oi = r.out.ptr() + static_cast<std::size_t>(i) * d + off;
    for (int j = lo; j < hi; ++j) {
      p[j] /= sum;
      if (p[j] == 0.0) continue;
      const double* vj = v.ptr() + static_cast<std::size_t>(j) * d + off;
      for (int t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
    }
  });
  return r;
}

template <bool Parallel>
void attention_backward_impl(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& probs,
                             const AttentionMask& mask, int heads, const Tensor& dout, Tensor& dq, Tensor& dk,
                             Tensor& dv) {
  const int n = q.rows(), m = k.rows(), d = q.cols(), dh = d / heads;
  const KeyRange range = key_range(mask);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // One task per head: heads own disjoint column blocks of dq/dk/dv.
  for_each_task<Parallel>(heads, static_cast<long>(heads) * n * m * dh, [&](int h) {
    const int off = h * dh;
    std::vector<double> dp(static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
      const int lo = range.lo[static_cast<std::size_t>(i)], hi = range.hi[static_cast<std::size_t>(i)];
      const double* p = probs.ptr() + (static_cast<std::size_t>(h) * n + i) * m;
      const double* go = dout.ptr() + static_cast<std::size_t>(i) * d + off;
      double dot = 0.0;
      for (int j = lo; j < hi; ++j) {
        dp[j] = 0.0;
        if (!mask(i, j)) continue;
        const double* vj = v.ptr() + static_cast<std::size_t>(j) * d + off;
        double* dvj = dv.ptr() + static_cast<std::size_t>(j) * d + off;
        double s = 0.0;
        for (int t = 0; t < dh; ++t) {
          s += go[t] * vj[t];
          dvj[t] += p[j] * go[t];
        }
        dp[j] = s;
        dot += p[j] * s;
      }
      const double* qi = q.ptr() + static_cast<std::size_t>(i) * d + off;
      double* dqi = dq.ptr() + static_cast<std::size_t>(i) * d + off;
      for (int j = lo; j < hi; ++j) {
        if (!mask(i, j)) continue;
        const double ds = p[j] * (dp[j] - dot) * scale;
        if (ds == 0.0) continue;
        const double* kj = k.ptr() + static_cast<std::size_t>(j) * d + off;
        double* dkj = dk.ptr() + static_cast<std::size_t>(j) * d + off;
        for (int t = 0; t < dh; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  });
}

}  // namespace

AttentionMask AttentionMask::causal(int n) {
  AttentionMask m(n, n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

namespace serial {
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) { gemm_nn_impl<false>(a, b, c); }
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) { gemm_nt_impl<false>(a, b, c); }
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) { gemm_tn_impl<false>(a, b, c); }
AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                  int heads) {
  return attention_forward_impl<false>(q, k, v, mask, heads);
}
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& probs,
                        const AttentionMask& mask, int heads, const Tensor& dout, Tensor& dq, Tensor& dk,
                        Tensor& dv) {
  attention_backward_impl<false>(q, k, v, probs, mask, heads, dout, dq, dk, dv);
}
}  // namespace serial

namespace parallel {
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) { gemm_nn_impl<true>(a, b, c); }
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) { gemm_nt_impl<true>(a, b, c); }
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) { gemm_tn_impl<true>(a, b, c); }
AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                  int heads) {
  return attention_forward_impl<true>(q, k, v, mask, heads);
}
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& probs,
                        const AttentionMask& mask, int heads, const Tensor& dout, Tensor& dq, Tensor& dk,
                        Tensor& dv) {
  attention_backward_impl<true>(q, k, v, probs, mask, heads, dout, dq, dk, dv);
}
}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace btr::nn::kernels
