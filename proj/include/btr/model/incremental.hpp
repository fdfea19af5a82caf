#pragma once

#include <vector>

#include "btr/common/tokens.hpp"
#include "btr/model/config.hpp"
#include "btr/nn/param_store.hpp"
#include "btr/nn/tensor.hpp"

namespace btr::model {

/// Self-attention keys and values of one causal-decoder prefix, per layer,
/// stored row-major [length, d_model].
struct DecoderCache {
  std::vector<std::vector<double>> k, v;
  int length = 0;
};

/// Causal decoding one position at a time. Under a causal mask earlier
/// states never change when tokens are appended, so each step only runs
/// the new position against the cached keys and values; the arithmetic per
/// row is the same as in the full forward pass.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x);

  DecoderCache empty_cache() const;

  /// Feeds tokens[i] at the next position of caches[i] (the first token fed
  /// is <s>) and returns next-token log-probabilities, one row per cache.
  nn::Tensor step(const std::vector<DecoderCache*>& caches, const std::vector<int>& tokens);

 private:
  const nn::ParamStore& params_;
  ModelConfig cfg_;
  nn::ParamBinder binder_;
  std::vector<nn::Var> cross_k_, cross_v_;
  int src_len_ = 0;
};

}  // namespace btr::model
