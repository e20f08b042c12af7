#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "dualipw/numkit/graph.hpp"
#include "dualipw/numkit/tensor.hpp"

namespace dualipw::numkit {

/// Builds a scalar loss on a fresh graph from a parameter set. This is the
/// "graph" handed to forward/backward/finite_diff_check: rebuilding it with
/// perturbed parameters is how the finite-difference oracle re-evaluates.
using LossFn = std::function<Var(Graph&, const ParamSet&)>;

inline double forward(const LossFn& fn, const ParamSet& params) {
  Graph g;
  return g.value(fn(g, params)).item();
}

struct ValueAndGrad {
  double value = 0.0;
  ParamSet grads;
};

inline ValueAndGrad backward(const LossFn& fn, const ParamSet& params) {
  Graph g;
  const Var loss = fn(g, params);
  return {g.value(loss).item(), g.backward(loss)};
}

// Denominator floor for the relative error; below it the check is absolute.
inline constexpr double kGradCheckFloor = 1e-3;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central differences against `backward` for every scalar of every
/// parameter whose name passes `select` (all when empty). Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
inline GradCheckResult finite_diff_check(const LossFn& fn, ParamSet params, double eps = 1e-5,
                                         const std::function<bool(const std::string&)>& select = {}) {
  const ParamSet analytic = backward(fn, params).grads;
  GradCheckResult res;
  for (auto& [name, tensor] : params) {
    if (select && !select(name)) continue;
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + eps;
      const double up = forward(fn, params);
      tensor[i] = orig - eps;
      const double down = forward(fn, params);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = ga[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <class Rng>
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace dualipw::numkit
