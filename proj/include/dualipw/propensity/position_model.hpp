#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/tensor.hpp"

namespace dualipw::propensity {

inline const std::string kPositionLogits = "g.logits";

// g starts at equal logits, i.e. no position bias.
inline void init_position_model(numkit::ParamSet& params) {
  params[kPositionLogits] = numkit::Tensor(numkit::Shape{dataset::kListSize});
}

/// g(k_1)/g(k) read as a ratio of softmax-normalised logits,
/// exp(logit_1 - logit_k), clipped to [0, w_max].
inline double position_weight_ratio(const numkit::Tensor& logits, std::size_t k, double w_max) {
  if (k < 1 || k > dataset::kListSize) throw std::out_of_range("position outside 1..10");
  return std::clamp(std::exp(logits[0] - logits[k - 1]), 0.0, w_max);
}

}  // namespace dualipw::propensity
