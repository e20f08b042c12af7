#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "dualipw/training/losses.hpp"
#include "dualipw/training/ranking_model.hpp"

namespace dualipw::training {

/// A random batch, D_mp table and parameter set for gradient checks.
struct GradFixture {
  dataset::SessionSet sessions;
  BatchTensors batch;
  propensity::DmpTable dmp;
  ParamSet params;
  DualIpwHyper hyper;
};

inline GradFixture make_grad_fixture(std::uint64_t seed, std::size_t batch_size = 2,
                                     const propensity::QueryModelConfig& qcfg = {}) {
  auto rng = numkit::Rng::stream(seed, "grad-fixture");
  GradFixture fx;
  for (std::size_t b = 0; b < batch_size; ++b) {
    dataset::QuerySession s;
    s.query_id = "g" + std::to_string(b);
    bool any = false;
    for (std::size_t k = 0; k < kListSize; ++k) {
      dataset::Document d;
      d.position = static_cast<int>(k + 1);
      for (double& x : d.features) x = rng.normal();
      d.clicked = rng.bernoulli(0.25);
      any = any || d.clicked;
      s.docs.push_back(d);
    }
    if (!any) s.docs[rng.below(kListSize)].clicked = true;
    fx.sessions.sessions.push_back(std::move(s));
  }
  fx.batch = BatchTensors::from(fx.sessions);
  for (std::size_t i = 0; i < kListSize; ++i) {
    double z = 0.0;
    for (double& v : fx.dmp.rows[i]) z += (v = rng.uniform(0.05, 1.0));
    for (double& v : fx.dmp.rows[i]) v /= z;
    fx.dmp.counts[i] = 1;
  }
  init_ranking_model(fx.params, rng);
  propensity::init_position_model(fx.params);
  for (double& v : fx.params.at(propensity::kPositionLogits).data()) v = rng.normal(0.0, 0.5);
  propensity::init_query_model(fx.params, qcfg, rng);
  fx.hyper.tau = qcfg.tau;
  return fx;
}

struct GradSuiteEntry {
  std::string name;
  numkit::GradCheckResult result;
};

namespace detail {

// Checks `fn` with respect to the parameters under `prefixes` only; the
// rest are held fixed.
inline numkit::GradCheckResult check_subset(const numkit::LossFn& fn, const ParamSet& all,
                                            std::initializer_list<const char*> prefixes) {
  const std::vector<std::string> pre(prefixes.begin(), prefixes.end());
  return numkit::finite_diff_check(fn, all, 1e-5, [&](const std::string& name) {
    for (const auto& p : pre) {
      if (name.rfind(p, 0) == 0) return true;
    }
    return false;
  });
}

}  // namespace detail

/// Finite-difference checks of the three models on their own and of the
/// DLA, DualIPW ranking and DualIPW position losses, on one fixture.
inline std::vector<GradSuiteEntry> gradient_suite(const GradFixture& fx) {
  const BatchTensors& bt = fx.batch;
  auto rng = numkit::Rng::stream(fx.sessions.size(), "grad-probe");
  Tensor probe_rows(numkit::Shape{bt.size * kListSize, 1});
  for (double& v : probe_rows.data()) v = rng.normal();
  Tensor probe_row(numkit::Shape{1, kListSize});
  for (double& v : probe_row.data()) v = rng.normal();

  std::vector<GradSuiteEntry> out;
  auto add = [&](const char* name, const numkit::LossFn& fn,
                 std::initializer_list<const char*> prefixes) {
    out.push_back({name, detail::check_subset(fn, fx.params, prefixes)});
  };

  add("f", [&](Graph& g, const ParamSet& p) {
    const Var s = ranking_scores(g, p, g.input("features", bt.features));
    return g.sum(g.mul(s, g.constant(probe_rows)));
  }, {"f."});
  add("g", [&](Graph& g, const ParamSet& p) {
    const Var l = g.reshape(g.parameter(p, propensity::kPositionLogits), 1, kListSize);
    return g.sum(g.mul(g.log_softmax(l), g.constant(probe_row)));
  }, {"g."});
  add("h", [&](Graph& g, const ParamSet& p) {
    const Var cp = propensity::qcp_forward(g, p, fx.dmp, fx.hyper.tau);
    return g.sum(g.mul(g.log(cp), g.constant(probe_row)));
  }, {"h."});
  add("dla_loss_f", [&](Graph& g, const ParamSet& p) {
    return dla_losses(g, p, bt, fx.hyper.w_max).loss_f;
  }, {"f."});
  add("dla_loss_g", [&](Graph& g, const ParamSet& p) {
    return dla_losses(g, p, bt, fx.hyper.w_max).loss_g;
  }, {"g."});
  add("dualipw_rank", [&](Graph& g, const ParamSet& p) {
    return dualipw_rank_loss(g, p, bt, fx.dmp, fx.hyper);
  }, {"f.", "h."});
  add("dualipw_prop", [&](Graph& g, const ParamSet& p) {
    return dualipw_prop_loss(g, p, bt, fx.dmp, fx.hyper);
  }, {"g."});
  return out;
}

}  // namespace dualipw::training
