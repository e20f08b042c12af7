#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/graph.hpp"
#include "dualipw/numkit/lstm.hpp"
#include "dualipw/propensity/dmp.hpp"

namespace dualipw::propensity {

inline constexpr double kDmpFloor = 1e-6;
inline const std::string kQueryLstmPrefix = "h.lstm.";

struct QueryModelConfig {
  std::size_t hidden = 8;  // {4, 8, 16}
  std::size_t layers = 1;  // {1, 2}
  double tau = 0.1;        // click-sequence smoothing temperature
};

/// cs' = softmax(cs / tau).
inline Row smooth_click_sequence(const ClickSequence& cs, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  Row out{};
  double mx = 0.0;
  for (std::size_t k = 0; k < kListSize; ++k) mx = std::max(mx, cs.bits()[k] / tau);
  double z = 0.0;
  for (std::size_t k = 0; k < kListSize; ++k) z += (out[k] = std::exp(cs.bits()[k] / tau - mx));
  for (double& v : out) v /= z;
  return out;
}

/// t_i = cs'_i * log(cs'_i / max(D_mp(i), 1e-6)), with 0 log 0 = 0.
inline Row log_ratio_features(const Row& smoothed, const Row& dmp_row) {
  Row t{};
  for (std::size_t i = 0; i < kListSize; ++i) {
    const double p = smoothed[i];
    if (p <= 0.0) continue;
    t[i] = p * std::log(p / std::max(dmp_row[i], kDmpFloor));
  }
  return t;
}

template <class Rng>
void init_query_model(numkit::ParamSet& params, const QueryModelConfig& cfg, Rng& rng) {
  if (cfg.hidden == 0 || cfg.layers == 0) throw std::invalid_argument("empty query model");
  numkit::init_lstm_params(params, kQueryLstmPrefix, 1, cfg.hidden, cfg.layers, rng);
  params["h.ffn.w1"] = numkit::uniform_init({cfg.hidden, cfg.hidden}, cfg.hidden, rng);
  params["h.ffn.b1"] = numkit::uniform_init({cfg.hidden}, cfg.hidden, rng);
  params["h.ffn.w2"] = numkit::uniform_init({1, cfg.hidden}, cfg.hidden, rng);
  params["h.ffn.b2"] = numkit::uniform_init({1}, cfg.hidden, rng);
}

/// Listwise inputs for the ten single-click sequences: row i holds
/// t(cs^{i+1}) against D_mp row i.
inline std::array<Row, kListSize> single_click_inputs(const DmpTable& dmp, double tau) {
  std::array<Row, kListSize> t{};
  for (std::size_t i = 0; i < kListSize; ++i) {
    t[i] = log_ratio_features(smooth_click_sequence(ClickSequence::single(i + 1), tau),
                              dmp.rows[i]);
  }
  return t;
}

/// h(cs^i) for all ten sequences at once: the sequences form the batch
/// dimension and the ten t-values are the time steps. Returns [1,10] raw
/// scores.
inline numkit::Var query_scores(numkit::Graph& g, const numkit::ParamSet& params,
                                const DmpTable& dmp, double tau) {
  const auto t = single_click_inputs(dmp, tau);
  std::vector<numkit::Var> steps;
  for (std::size_t s = 0; s < kListSize; ++s) {
    numkit::Tensor col(numkit::Shape{kListSize, 1});
    for (std::size_t i = 0; i < kListSize; ++i) col[i] = t[i][s];
    steps.push_back(g.input("t" + std::to_string(s + 1), std::move(col)));
  }
  const auto layers = numkit::bind_lstm(g, params, kQueryLstmPrefix);
  const auto hidden = numkit::lstm_forward(g, steps, layers);
  const numkit::Var z = g.elu(g.affine(hidden.back(), g.parameter(params, "h.ffn.w1"),
                                       g.parameter(params, "h.ffn.b1")));
  const numkit::Var out =
      g.affine(z, g.parameter(params, "h.ffn.w2"), g.parameter(params, "h.ffn.b2"));
  return g.reshape(out, 1, kListSize);
}

// cp = softmax(h(cs^1), ..., h(cs^10)) as a [1,10] node.
inline numkit::Var qcp_forward(numkit::Graph& g, const numkit::ParamSet& params,
                               const DmpTable& dmp, double tau) {
  return g.softmax(query_scores(g, params, dmp, tau));
}

inline Row qcp_forward(const numkit::ParamSet& params, const DmpTable& dmp, double tau) {
  numkit::Graph g;
  const auto& v = g.value(qcp_forward(g, params, dmp, tau));
  Row cp{};
  std::copy(v.data().begin(), v.data().end(), cp.begin());
  return cp;
}

/// Mean of cp_i over the clicked positions of `cs`.
inline double query_propensity(const ClickSequence& cs, const Row& cp) {
  const auto pos = cs.clicked_positions();
  if (pos.empty()) throw std::invalid_argument("query_propensity: sequence has no clicks");
  double s = 0.0;
  for (std::size_t p : pos) s += cp[p - 1];
  return s / static_cast<double>(pos.size());
}

/// Row b of the result is the averaging vector of session b's clicks, so
/// that averaging[B,10] x cp^T[10,1] gives cp_{cs^q} per session.
inline numkit::Tensor click_averaging_matrix(std::span<const ClickSequence> seqs) {
  numkit::Tensor m(numkit::Shape{seqs.size(), kListSize});
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto pos = seqs[b].clicked_positions();
    if (pos.empty()) throw std::invalid_argument("session without clicks");
    for (std::size_t p : pos) m(b, p - 1) = 1.0 / static_cast<double>(pos.size());
  }
  return m;
}

}  // namespace dualipw::propensity
