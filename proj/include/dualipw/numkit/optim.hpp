#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "dualipw/numkit/tensor.hpp"

namespace dualipw::numkit {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient for " + param), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// AdamW with decoupled weight decay and bias-corrected moments:
///   p <- p - lr*wd*p
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
///   p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig config) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }

  // Updates every entry of `params` that has a gradient in `grads`.
  void step(ParamSet& params, const ParamSet& grads) {
    for (const auto& [name, g] : grads) {
      if (!g.all_finite()) throw NonFiniteGradient(name);
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    for (auto& [name, p] : params) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Tensor& g = git->second;
      if (g.shape() != p.shape()) {
        throw std::invalid_argument("gradient shape mismatch for " + name);
      }
      auto [mit, fresh] = first_.try_emplace(name, p.shape());
      Tensor& m = mit->second;
      Tensor& v = second_.try_emplace(name, p.shape()).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= config_.lr * config_.weight_decay * p[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
    }
  }

  const ParamSet& first_moments() const { return first_; }
  const ParamSet& second_moments() const { return second_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  ParamSet first_;
  ParamSet second_;
};

}  // namespace dualipw::numkit
