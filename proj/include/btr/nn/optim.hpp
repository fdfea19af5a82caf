#pragma once

#include "btr/nn/param_store.hpp"

namespace btr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every trainable entry. Moments and the
/// step counter live in the store. Throws ConfigError when lr <= 0.
void adam_step(ParamStore& params, const AdamConfig& config);

/// Plain gradient descent on every trainable entry.
void sgd_step(ParamStore& params, double lr);

}  // namespace btr::nn
