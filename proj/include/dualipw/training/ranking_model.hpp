#pragma once

#include <span>
#include <string>
#include <vector>

#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/graph.hpp"

namespace dualipw::training {

using dataset::FeatureVector;
using dataset::kNumFeatures;

// 14 -> 64 projection, then 64 -> 32 -> 16 hidden layers, then a scalar
// score. ELU after every layer but the last.
struct DenseLayerSpec {
  const char* name;
  std::size_t in;
  std::size_t out;
};

inline constexpr DenseLayerSpec kRankingLayers[] = {
    {"f.proj", kNumFeatures, 64},
    {"f.h1", 64, 32},
    {"f.h2", 32, 16},
    {"f.out", 16, 1},
};

template <class Rng>
void init_ranking_model(numkit::ParamSet& params, Rng& rng) {
  for (const auto& layer : kRankingLayers) {
    const std::string n = layer.name;
    params[n + ".w"] = numkit::uniform_init({layer.out, layer.in}, layer.in, rng);
    params[n + ".b"] = numkit::uniform_init({layer.out}, layer.in, rng);
  }
}

// features [N,14] -> scores [N,1]
inline numkit::Var ranking_scores(numkit::Graph& g, const numkit::ParamSet& params,
                                  numkit::Var features) {
  numkit::Var x = features;
  const std::size_t last = std::size(kRankingLayers) - 1;
  for (std::size_t i = 0; i <= last; ++i) {
    const std::string n = kRankingLayers[i].name;
    x = g.affine(x, g.parameter(params, n + ".w"), g.parameter(params, n + ".b"));
    if (i != last) x = g.elu(x);
  }
  return x;
}

inline numkit::Tensor feature_matrix(std::span<const FeatureVector> rows) {
  numkit::Tensor t(numkit::Shape{rows.size(), kNumFeatures});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < kNumFeatures; ++j) t(i, j) = rows[i][j];
  }
  return t;
}

inline std::vector<double> score_features(const numkit::ParamSet& params,
                                          std::span<const FeatureVector> rows) {
  if (rows.empty()) return {};
  numkit::Graph g;
  const auto s = ranking_scores(g, params, g.input("features", feature_matrix(rows)));
  const auto& v = g.value(s).data();
  return {v.begin(), v.end()};
}

}  // namespace dualipw::training
