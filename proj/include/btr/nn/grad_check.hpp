#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "btr/nn/param_store.hpp"

namespace btr::nn {

struct GradCheckOptions {
  double eps = 1e-5;
  // Tensors larger than this are checked on a seeded random subset.
  std::size_t max_coords_per_tensor = 48;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
  // coordinates whose true gradient is round-off sized from dominating.
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::vector<std::string> skipped;  // frozen entries
};

/// Builds the loss on a binder over `params`.
using LossClosure = std::function<Var(ParamBinder&)>;

/// Compares reverse-mode gradients with central differences
/// (f(t + eps) - f(t - eps)) / 2 eps on every trainable parameter. The
/// closure is evaluated twice up front; differing results throw
/// ContractError. Parameter values are restored on return and gradients
/// are left zeroed.
GradCheckReport grad_check(const LossClosure& loss, ParamStore& params, const GradCheckOptions& options = {});

}  // namespace btr::nn
