#pragma once

#include <cstdint>
#include <vector>

#include "btr/nn/tensor.hpp"

// Dense kernels behind the differentiable ops. Each kernel exists twice:
// serial:: is the reference loop nest, parallel:: distributes the same
// per-row work over OpenMP threads. Every output element is produced by one
// thread running the reference inner loop, so the two agree bitwise; the
// tests rely on that.
namespace btr::nn::kernels {

/// Boolean attention pattern, rows = queries, cols = keys; nonzero = attend.
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> allow;

  AttentionMask() = default;
  AttentionMask(int r, int c, bool value) : rows(r), cols(c), allow(static_cast<std::size_t>(r) * c, value ? 1 : 0) {}

  bool operator()(int r, int c) const { return allow[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { allow[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }

  static AttentionMask full(int r, int c) { return AttentionMask(r, c, true); }
  static AttentionMask causal(int n);
};

/// Value used for blocked scores before the softmax.
inline constexpr double kBlockedScore = -1e9;

struct AttentionResult {
  Tensor out;    // [n, d]
  Tensor probs;  // [heads, n, m]
};

namespace serial {
// c[n,m] += a[n,k] * b[k,m]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c);
// c[n,m] += a[n,k] * b[m,k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c);
// c[k,m] += a[n,k]^T * b[n,m]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c);
AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                  int heads);
// Accumulates into dq, dk, dv.
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& probs,
                        const AttentionMask& mask, int heads, const Tensor& dout, Tensor& dq, Tensor& dk,
                        Tensor& dv);
}  // namespace serial

namespace parallel {
// c[n,m] += a[n,k] * b[k,m]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c);
// c[n,m] += a[n,k] * b[m,k]^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c);
// c[k,m] += a[n,k]^T * b[n,m]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c);
AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                  int heads);
// Accumulates into dq, dk, dv.
void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& probs,
                        const AttentionMask& mask, int heads, const Tensor& dout, Tensor& dq, Tensor& dk,
                        Tensor& dv);
}  // namespace parallel

/// Threads OpenMP will use for parallel:: kernels (1 without OpenMP).
int max_threads();

}  // namespace btr::nn::kernels
