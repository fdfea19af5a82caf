#include "btr/nn/optim.hpp"

#include <cmath>

#include "btr/common/error.hpp"

namespace btr::nn {

void adam_step(ParamStore& params, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  const long t = ++params.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& [name, e] : params) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.adam_m[i] = config.beta1 * e.adam_m[i] + (1.0 - config.beta1) * g;
      e.adam_v[i] = config.beta2 * e.adam_v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = e.adam_m[i] / c1;
      const double vhat = e.adam_v[i] / c2;
      e.value[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

void sgd_step(ParamStore& params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("sgd: learning rate must be positive");
  for (auto& [name, e] : params) {
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] -= lr * e.grad[i];
  }
}

}  // namespace btr::nn
