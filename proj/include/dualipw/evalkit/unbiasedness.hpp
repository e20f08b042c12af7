#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dualipw/dataset/synthetic.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/numkit/tensor.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "dualipw/training/ranking_model.hpp"

namespace dualipw::evalkit {

using dataset::kListSize;

enum class WeightSource { kOracle, kNaive, kLearned };

/// Learned DualIPW weights: g-ratio(k) * cp_{cs^1} / cp_{cs^q}.
struct LearnedWeights {
  const numkit::ParamSet* params = nullptr;  // needs g.logits and h.*
  propensity::DmpTable dmp = propensity::DmpTable::uniform();
  double tau = 0.1;
  double w_max = 10.0;
};

struct McResult {
  double truth = 0.0;
  double oracle_estimate = 0.0;
  double naive_estimate = 0.0;
  std::optional<double> learned_estimate;
  std::size_t draws = 0;

  static double rel(double est, double truth) { return std::abs(est - truth) / truth; }
  double oracle_error() const { return rel(oracle_estimate, truth); }
  double naive_error() const { return rel(naive_estimate, truth); }
  std::optional<double> learned_error() const {
    if (!learned_estimate) return std::nullopt;
    return rel(*learned_estimate, truth);
  }
  double error(WeightSource w) const {
    switch (w) {
      case WeightSource::kOracle: return oracle_error();
      case WeightSource::kNaive: return naive_error();
      case WeightSource::kLearned:
        if (!learned_estimate) throw std::invalid_argument("no learned weights supplied");
        return *learned_error();
    }
    return 0.0;
  }
};

/// Monte Carlo check of the unbiasedness of the inverse-propensity loss.
///
/// The truth is sum_q sum_d p(r_d) * l_d with l_d = -log softmax(f)_d for
/// the fixed ranker f. Each draw realises clicks for every query under the
/// dual click hypothesis; oracle, naive and (optionally) learned weights
/// are all applied to the same realisations.
inline McResult unbiasedness_mc(const dataset::SyntheticWorld& world, const dataset::BiasConfig& bias,
                                const numkit::ParamSet& f, std::size_t num_draws,
                                std::uint64_t seed, const LearnedWeights* learned = nullptr) {
  if (num_draws == 0) throw std::invalid_argument("unbiasedness_mc: num_draws must be >= 1");
  const std::size_t nq = world.queries.size();
  const auto observe = dataset::position_bias(bias);

  std::vector<std::array<double, kListSize>> loss(nq);
  std::vector<double> p_cq(nq);
  double truth = 0.0;
  for (std::size_t q = 0; q < nq; ++q) {
    const auto& sq = world.queries[q];
    const auto s = training::score_features(f, sq.features);
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < kListSize; ++k) {
      loss[q][k] = lse - s[k];
      truth += sq.relevance[k] * loss[q][k];
    }
    p_cq[q] = dataset::query_click_propensity(bias, sq.relevance);
  }
  if (!(truth > 0.0)) throw std::invalid_argument("unbiasedness_mc: full-information loss is 0");

  propensity::Row cp{};
  std::array<double, kListSize> g_ratio{};
  if (learned) {
    cp = propensity::qcp_forward(*learned->params, learned->dmp, learned->tau);
    const auto& logits = learned->params->at(propensity::kPositionLogits);
    for (std::size_t k = 0; k < kListSize; ++k) {
      g_ratio[k] = propensity::position_weight_ratio(logits, k + 1, learned->w_max);
    }
  }

  double sum_oracle = 0.0, sum_naive = 0.0, sum_learned = 0.0;
  for (std::size_t n = 0; n < num_draws; ++n) {
    auto rng = numkit::Rng::stream(seed, "mc", n);
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& sq = world.queries[q];
      const bool cq = rng.bernoulli(p_cq[q]);
      std::array<bool, kListSize> click{};
      for (std::size_t k = 0; k < kListSize; ++k) {
        const bool hit = rng.bernoulli(observe[k] * sq.relevance[k]);
        click[k] = cq && hit;
      }
      if (!cq) continue;
      double cp_q = 0.0;
      std::size_t nclicks = 0;
      for (std::size_t k = 0; k < kListSize; ++k) {
        if (!click[k]) continue;
        sum_oracle += loss[q][k] / (observe[k] * p_cq[q]);
        sum_naive += loss[q][k];
        cp_q += cp[k];
        ++nclicks;
      }
      if (learned && nclicks > 0) {
        cp_q = std::max(cp_q / static_cast<double>(nclicks), 1e-9);
        for (std::size_t k = 0; k < kListSize; ++k) {
          if (click[k]) sum_learned += g_ratio[k] * (cp[0] / cp_q) * loss[q][k];
        }
      }
    }
  }
  McResult r;
  const double nd = static_cast<double>(num_draws);
  r.truth = truth;
  r.oracle_estimate = sum_oracle / nd;
  r.naive_estimate = sum_naive / nd;
  if (learned) r.learned_estimate = sum_learned / nd;
  r.draws = num_draws;
  return r;
}

/// Relative error |MC - truth| / truth for one weight source.
inline double unbiasedness_mc_check(const dataset::SyntheticWorld& world,
                                    const numkit::ParamSet& f, WeightSource source,
                                    std::size_t num_draws, std::uint64_t seed,
                                    const LearnedWeights* learned = nullptr) {
  return unbiasedness_mc(world, world.config.bias, f, num_draws, seed, learned).error(source);
}

}  // namespace dualipw::evalkit
