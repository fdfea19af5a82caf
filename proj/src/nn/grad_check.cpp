#include "btr/nn/grad_check.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "btr/common/error.hpp"
#include "btr/common/rng.hpp"

namespace btr::nn {

namespace {

double evaluate(const LossClosure& loss, ParamStore& params) {
  ParamBinder binder(params, false);
  Var l = loss(binder);
  if (l.value().size() != 1) throw DimensionError("grad_check: loss is not a scalar");
  return l.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossClosure& loss, ParamStore& params, const GradCheckOptions& options) {
  GradCheckReport report;
  params.zero_grad();
  double f0 = 0.0;
  {
    ParamBinder binder(params, true);
    Var l = loss(binder);
    f0 = l.value()[0];
    backward(l);
  }
  const double f1 = evaluate(loss, params);
  if (std::bit_cast<std::uint64_t>(f0) != std::bit_cast<std::uint64_t>(f1)) {
    throw ContractError("grad_check: loss closure is not deterministic");
  }

  Rng rng(options.seed);
  for (auto& [name, e] : params) {
    if (!e.trainable) {
      report.skipped.push_back(name);
      continue;
    }
    std::vector<std::size_t> coords(e.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = e.value[i];
      e.value[i] = saved + options.eps;
      const double fp = evaluate(loss, params);
      e.value[i] = saved - options.eps;
      const double fm = evaluate(loss, params);
      e.value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double analytic = e.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace btr::nn
