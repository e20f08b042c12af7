#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "dualipw/dataset/batching.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/graph.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "dualipw/training/ranking_model.hpp"

namespace dualipw::training {

using dataset::kListSize;
using numkit::Graph;
using numkit::ParamSet;
using numkit::Tensor;
using numkit::Var;
using propensity::ClickSequence;

inline constexpr double kMinQueryPropensity = 1e-9;

/// Dense view of a batch of full-length sessions.
struct BatchTensors {
  std::size_t size = 0;
  Tensor features;  // [B*10, 14], session-major
  Tensor clicks;    // [B, 10]
  std::vector<ClickSequence> sequences;

  static BatchTensors from(std::span<const dataset::QuerySession* const> batch) {
    BatchTensors bt;
    bt.size = batch.size();
    bt.features = Tensor(numkit::Shape{bt.size * kListSize, dataset::kNumFeatures});
    bt.clicks = Tensor(numkit::Shape{bt.size, kListSize});
    for (std::size_t b = 0; b < bt.size; ++b) {
      const dataset::QuerySession& s = *batch[b];
      if (s.docs.size() != kListSize) {
        throw std::invalid_argument("session " + s.query_id + " does not have 10 documents");
      }
      for (std::size_t k = 0; k < kListSize; ++k) {
        for (std::size_t j = 0; j < dataset::kNumFeatures; ++j) {
          bt.features(b * kListSize + k, j) = s.docs[k].features[j];
        }
        bt.clicks(b, k) = s.docs[k].clicked ? 1.0 : 0.0;
      }
      bt.sequences.emplace_back(s.clicks());
    }
    return bt;
  }

  static BatchTensors from(const dataset::SessionSet& set) {
    std::vector<const dataset::QuerySession*> ptrs;
    for (const auto& s : set.sessions) ptrs.push_back(&s);
    return from(ptrs);
  }
};

/// -sum_{d: c_d=1} w_d * log softmax(scores)_d for one list.
inline double rank_softmax_ce(std::span<const double> scores, std::span<const double> clicks,
                              std::span<const double> weights) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  const double lse = mx + std::log(z);
  double loss = 0.0;
  for (std::size_t d = 0; d < scores.size(); ++d) {
    if (clicks[d] != 0.0) loss -= weights[d] * (scores[d] - lse);
  }
  return loss;
}

/// -(1/B) sum_b sum_d weights[b,d] * log_softmax(logits)[b,d]. `logits` may
/// be [B,10] or a broadcast [1,10] row.
inline Var weighted_listwise_ce(Graph& g, Var logits, Var weights, std::size_t batch) {
  const Var lp = g.log_softmax(logits);
  return g.scale(g.sum(g.mul(weights, lp)), -1.0 / static_cast<double>(batch));
}

inline Var batch_scores(Graph& g, const ParamSet& params, const BatchTensors& bt) {
  const Var x = g.input("features", bt.features);
  Var s = g.reshape(ranking_scores(g, params, x), bt.size, kListSize);
  g.label(s, "scores");
  return s;
}

// exp(logit_1 - logit_k) clipped to [0, w_max], as a [1,10] row.
inline Tensor position_ratio_row(const Tensor& logits, double w_max) {
  Tensor row(numkit::Shape{1, kListSize});
  for (std::size_t k = 1; k <= kListSize; ++k) {
    row[k - 1] = propensity::position_weight_ratio(logits, k, w_max);
  }
  return row;
}

// exp(f(x_1) - f(x_d)) clipped to [0, w_max], per session.
inline Tensor relevance_ratio_matrix(const Tensor& scores, double w_max) {
  Tensor m(scores.shape());
  for (std::size_t b = 0; b < scores.rows(); ++b) {
    for (std::size_t k = 0; k < kListSize; ++k) {
      m(b, k) = std::clamp(std::exp(scores(b, 0) - scores(b, k)), 0.0, w_max);
    }
  }
  return m;
}

inline Tensor click_weighted(const Tensor& clicks, const Tensor& row_or_matrix) {
  Tensor w(clicks.shape());
  const bool row = row_or_matrix.rows() == 1 && clicks.rows() != 1;
  for (std::size_t b = 0; b < clicks.rows(); ++b) {
    for (std::size_t k = 0; k < kListSize; ++k) {
      w(b, k) = clicks(b, k) * row_or_matrix(row ? 0 : b, k);
    }
  }
  return w;
}

// --- Naive / fixed-weight losses --------------------------------------------

inline Var naive_loss(Graph& g, const ParamSet& params, const BatchTensors& bt) {
  const Var s = batch_scores(g, params, bt);
  return weighted_listwise_ce(g, s, g.constant(bt.clicks), bt.size);
}

/// Softmax CE on f with an explicit [B,10] weight matrix (already masked).
inline Var fixed_weight_loss(Graph& g, const ParamSet& params, const BatchTensors& bt,
                             const Tensor& weights) {
  const Var s = batch_scores(g, params, bt);
  return weighted_listwise_ce(g, s, g.constant(weights), bt.size);
}

/// Clicks weighted by p(o_1)/p(o_k) for a fixed propensity vector.
inline Tensor ipw_fixed_weights(const BatchTensors& bt, std::span<const double> propensity,
                                double w_max) {
  if (propensity.size() != kListSize) {
    throw std::invalid_argument("propensity vector must have 10 entries");
  }
  Tensor row(numkit::Shape{1, kListSize});
  for (std::size_t k = 0; k < kListSize; ++k) {
    if (!(propensity[k] > 0.0)) throw std::invalid_argument("zero propensity at position " +
                                                            std::to_string(k + 1));
    row[k] = std::clamp(propensity[0] / propensity[k], 0.0, w_max);
  }
  return click_weighted(bt.clicks, row);
}

inline Var ipw_fixed_loss(Graph& g, const ParamSet& params, const BatchTensors& bt,
                          std::span<const double> propensity, double w_max) {
  return fixed_weight_loss(g, params, bt, ipw_fixed_weights(bt, propensity, w_max));
}

// --- DLA ------------------------------------------------------------------

struct DlaLosses {
  Var loss_f;
  Var loss_g;
};

/// loss_f: clicks weighted by the (detached) position ratio of g.
/// loss_g: position softmax CE weighted by the (detached) score ratio of f.
inline DlaLosses dla_losses(Graph& g, const ParamSet& params, const BatchTensors& bt,
                            double w_max) {
  const Var scores = batch_scores(g, params, bt);
  const Var logits = g.parameter(params, propensity::kPositionLogits);
  const Tensor g_ratio = position_ratio_row(g.value(logits), w_max);
  const Tensor f_ratio = relevance_ratio_matrix(g.value(scores), w_max);
  DlaLosses out;
  out.loss_f = weighted_listwise_ce(g, scores, g.constant(click_weighted(bt.clicks, g_ratio)),
                                    bt.size);
  out.loss_g = weighted_listwise_ce(g, g.reshape(logits, 1, kListSize),
                                    g.constant(click_weighted(bt.clicks, f_ratio)), bt.size);
  return out;
}

// --- DualIPW --------------------------------------------------------------

struct DualIpwHyper {
  double tau = 0.1;
  double w_max = 10.0;
};

/// cp_{cs^1} / cp_{cs^q} per session as a [B,1] node; gradient flows to h.
/// `clamped` counts sessions whose cp_{cs^q} hit kMinQueryPropensity.
inline Var query_weight_column(Graph& g, const ParamSet& params, const BatchTensors& bt,
                               const propensity::DmpTable& dmp, double tau,
                               std::size_t* clamped = nullptr) {
  const Var cp = propensity::qcp_forward(g, params, dmp, tau);
  const Var avg = g.constant(propensity::click_averaging_matrix(bt.sequences));
  const Var cp_q_raw = g.matmul(avg, g.reshape(cp, kListSize, 1));
  if (clamped) {
    for (double v : g.value(cp_q_raw).data()) *clamped += v < kMinQueryPropensity ? 1 : 0;
  }
  const Var cp_q = g.clip(cp_q_raw, kMinQueryPropensity, 1.0);
  return g.div(g.slice_cols(cp, 0, 1), cp_q);
}

/// Ranking-side loss: f and h trainable, g detached.
inline Var dualipw_rank_loss(Graph& g, const ParamSet& params, const BatchTensors& bt,
                             const propensity::DmpTable& dmp, const DualIpwHyper& hp,
                             std::size_t* clamped = nullptr) {
  const Var scores = batch_scores(g, params, bt);
  const Var logits = g.detach(g.parameter(params, propensity::kPositionLogits));
  const Tensor pos_w = click_weighted(bt.clicks, position_ratio_row(g.value(logits), hp.w_max));
  const Var qw = query_weight_column(g, params, bt, dmp, hp.tau, clamped);
  const Var weights = g.mul(qw, g.constant(pos_w));
  return weighted_listwise_ce(g, scores, weights, bt.size);
}

/// Position-side loss: only g trainable; f ratios and query weights detached.
inline Var dualipw_prop_loss(Graph& g, const ParamSet& params, const BatchTensors& bt,
                             const propensity::DmpTable& dmp, const DualIpwHyper& hp,
                             std::size_t* clamped = nullptr) {
  const Var scores = g.detach(batch_scores(g, params, bt));
  const Var qw = g.detach(query_weight_column(g, params, bt, dmp, hp.tau, clamped));
  const Tensor rel_w = click_weighted(bt.clicks, relevance_ratio_matrix(g.value(scores), hp.w_max));
  const Var weights = g.mul(qw, g.constant(rel_w));
  const Var logits = g.parameter(params, propensity::kPositionLogits);
  return weighted_listwise_ce(g, g.reshape(logits, 1, kListSize), weights, bt.size);
}

struct StepResult {
  double loss = 0.0;
  ParamSet grads;
  std::size_t clamped = 0;
};

inline ParamSet only_prefixes(const ParamSet& grads, std::initializer_list<const char*> prefixes) {
  ParamSet out;
  for (const auto& [name, t] : grads) {
    for (const char* p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        out.emplace(name, t);
        break;
      }
    }
  }
  return out;
}

inline StepResult dualipw_rank_step(const ParamSet& params, const propensity::DmpTable& dmp,
                                    const BatchTensors& bt, const DualIpwHyper& hp) {
  Graph g;
  StepResult r;
  const Var loss = dualipw_rank_loss(g, params, bt, dmp, hp, &r.clamped);
  r.loss = g.value(loss).item();
  r.grads = g.backward(loss);
  return r;
}

inline StepResult dualipw_prop_step(const ParamSet& params, const propensity::DmpTable& dmp,
                                    const BatchTensors& bt, const DualIpwHyper& hp) {
  Graph g;
  StepResult r;
  const Var loss = dualipw_prop_loss(g, params, bt, dmp, hp, &r.clamped);
  r.loss = g.value(loss).item();
  r.grads = g.backward(loss);
  return r;
}

struct DlaStepResult {
  double loss_f = 0.0;
  double loss_g = 0.0;
  ParamSet grads_f;
  ParamSet grads_g;
};

inline DlaStepResult dla_step(const ParamSet& params, const BatchTensors& bt, double w_max) {
  Graph g;
  const DlaLosses l = dla_losses(g, params, bt, w_max);
  DlaStepResult r;
  r.loss_f = g.value(l.loss_f).item();
  r.loss_g = g.value(l.loss_g).item();
  r.grads_f = only_prefixes(g.backward(l.loss_f), {"f."});
  r.grads_g = only_prefixes(g.backward(l.loss_g), {"g."});
  return r;
}

}  // namespace dualipw::training
