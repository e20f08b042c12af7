#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualipw/dataset/batching.hpp"
#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/evalkit/evaluate.hpp"
#include "dualipw/numkit/checkpoint.hpp"
#include "dualipw/numkit/optim.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "dualipw/training/losses.hpp"
#include "dualipw/training/ranking_model.hpp"

namespace dualipw::training {

enum class Method { kNaive, kIpwFixed, kDla, kDualIpw };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::kNaive: return "naive";
    case Method::kIpwFixed: return "ipw_fixed";
    case Method::kDla: return "dla";
    case Method::kDualIpw: return "dualipw";
  }
  return "?";
}

inline bool parse_method(std::string_view s, Method& out) {
  if (s == "naive") out = Method::kNaive;
  else if (s == "ipw_fixed" || s == "ipw") out = Method::kIpwFixed;
  else if (s == "dla") out = Method::kDla;
  else if (s == "dualipw") out = Method::kDualIpw;
  else return false;
  return true;
}

inline const std::string kTauArray = "meta.tau";

struct TrainConfig {
  Method method = Method::kDualIpw;
  double lr = 1e-3;
  double lr_h = 5e-5;  // query model h; 0 means same as lr
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t batch_size = 30;
  std::size_t epochs = 2;
  std::size_t list_size = kListSize;
  double tau = 0.1;
  std::size_t lstm_hidden = 8;
  std::size_t lstm_layers = 1;
  double wmax = 10.0;
  std::uint64_t seed = 1;
  std::size_t val_every = 500;
  bool oracle_mode = false;
  std::size_t surrogate_epochs = 1;
  std::vector<double> ipw_propensity;  // empty: taken from the oracle sidecar

  void validate() const {
    auto bad = [](const std::string& w) { throw std::invalid_argument("invalid train config: " + w); };
    if (!(lr > 0.0)) bad("lr must be > 0");
    if (!(lr_h >= 0.0)) bad("lr_h must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("betas in [0,1)");
    if (!(adam_eps > 0.0)) bad("adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
    if (batch_size == 0) bad("batch_size must be >= 1");
    if (epochs == 0) bad("epochs must be >= 1");
    if (list_size != kListSize) bad("list_size is fixed to 10");
    if (!(tau > 0.0)) bad("tau must be > 0");
    if (lstm_hidden == 0) bad("lstm_hidden must be >= 1");
    if (lstm_layers == 0) bad("lstm_layers must be >= 1");
    if (!(wmax > 0.0)) bad("wmax must be > 0");
    if (val_every == 0) bad("val_every must be >= 1");
    if (!ipw_propensity.empty() && ipw_propensity.size() != kListSize) {
      bad("ipw_propensity needs 10 values");
    }
  }

  numkit::AdamWConfig adamw() const { return {lr, beta1, beta2, adam_eps, weight_decay}; }
  numkit::AdamWConfig adamw_h() const {
    return {lr_h > 0.0 ? lr_h : lr, beta1, beta2, adam_eps, weight_decay};
  }
  propensity::QueryModelConfig query_model() const { return {lstm_hidden, lstm_layers, tau}; }
};

struct CurvePoint {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss_f = 0.0;
  std::optional<double> loss_g;
  std::optional<double> val_ndcg10;
};

struct CheckpointSet {
  numkit::ParamSet best;
  numkit::ParamSet final;
  std::optional<double> best_val;
  std::size_t best_step = 0;
  std::vector<CurvePoint> curve;
  std::vector<double> epoch_loss_f;
  std::vector<double> epoch_loss_g;
  std::optional<propensity::DmpTable> dmp;
  std::size_t clamped_query_propensity = 0;
};

class TrainingAborted : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainData {
  const dataset::SessionSet* sessions = nullptr;
  std::span<const dataset::AnnotatedQuery> validation;
  std::span<const dataset::OracleRecord> oracle;  // index-aligned with sessions
  std::optional<propensity::DmpTable> dmp;        // skips the surrogate stage
};

// [B,10] weight matrix for the sessions of a batch, by session index.
using WeightFn =
    std::function<Tensor(const BatchTensors&, std::span<const std::size_t> session_indices)>;

namespace detail {

inline std::string abort_message(const std::exception& e, std::span<const std::size_t> idx,
                                 const dataset::SessionSet& sessions,
                                 const numkit::ParamSet& params) {
  std::ostringstream os;
  os << "training aborted: " << e.what() << "; last batch:";
  for (std::size_t i : idx) os << ' ' << sessions[i].query_id;
  os << "; parameter norms:";
  for (const auto& [name, t] : params) os << ' ' << name << '=' << numkit::l2_norm(t);
  return os.str();
}

// step(batch tensors, session indices, params) -> (loss_f, loss_g)
using StepFn = std::function<std::pair<double, std::optional<double>>(
    const BatchTensors&, std::span<const std::size_t>, numkit::ParamSet&)>;

inline void run_epochs(const TrainConfig& cfg, const TrainData& data, const std::string& stream,
                       numkit::ParamSet& params, const StepFn& step, CheckpointSet& out,
                       std::size_t epochs, bool validate) {
  const dataset::SessionSet& sessions = *data.sessions;
  dataset::BatchSampler sampler(sessions.size(), cfg.batch_size,
                                numkit::Rng::stream(cfg.seed, stream));
  std::size_t global_step = 0;
  double acc_f = 0.0, acc_g = 0.0;
  std::size_t acc_n = 0;
  bool has_g = false;

  auto checkpoint = [&](std::size_t epoch) {
    CurvePoint pt;
    pt.step = global_step;
    pt.epoch = epoch;
    pt.loss_f = acc_n ? acc_f / static_cast<double>(acc_n) : 0.0;
    if (has_g) pt.loss_g = acc_n ? acc_g / static_cast<double>(acc_n) : 0.0;
    if (validate && !data.validation.empty()) {
      const double v = evalkit::validation_ndcg10(params, data.validation);
      pt.val_ndcg10 = v;
      if (!out.best_val || v > *out.best_val) {
        out.best_val = v;
        out.best_step = global_step;
        out.best = params;
      }
    }
    out.curve.push_back(pt);
    acc_f = acc_g = 0.0;
    acc_n = 0;
  };

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    double ep_f = 0.0, ep_g = 0.0;
    std::size_t ep_n = 0;
    for (const auto& idx : sampler.next_epoch()) {
      std::vector<const dataset::QuerySession*> ptrs;
      for (std::size_t i : idx) ptrs.push_back(&sessions.sessions[i]);
      const BatchTensors bt = BatchTensors::from(ptrs);
      std::pair<double, std::optional<double>> losses;
      try {
        losses = step(bt, idx, params);
        if (!std::isfinite(losses.first) || (losses.second && !std::isfinite(*losses.second))) {
          throw std::runtime_error("non-finite loss");
        }
      } catch (const numkit::GraphError& e) {
        throw TrainingAborted(abort_message(e, idx, sessions, params));
      } catch (const numkit::NonFiniteGradient& e) {
        throw TrainingAborted(abort_message(e, idx, sessions, params));
      } catch (const std::runtime_error& e) {
        throw TrainingAborted(abort_message(e, idx, sessions, params));
      }
      ++global_step;
      acc_f += losses.first;
      ep_f += losses.first;
      if (losses.second) {
        has_g = true;
        acc_g += *losses.second;
        ep_g += *losses.second;
      }
      ++acc_n;
      ++ep_n;
      if (global_step % cfg.val_every == 0) checkpoint(epoch);
    }
    if (acc_n > 0 || out.curve.empty() || out.curve.back().step != global_step) checkpoint(epoch);
    if (validate) {
      out.epoch_loss_f.push_back(ep_n ? ep_f / static_cast<double>(ep_n) : 0.0);
      if (has_g) out.epoch_loss_g.push_back(ep_n ? ep_g / static_cast<double>(ep_n) : 0.0);
    }
  }
}

inline void finish(CheckpointSet& out, const numkit::ParamSet& params) {
  out.final = params;
  if (!out.best_val) out.best = params;
}

}  // namespace detail

/// Trains f alone on a fixed per-session weight matrix (Naive, IPW with a
/// fixed propensity vector, oracle-weighted and full-information runs).
inline CheckpointSet train_fixed_weights(const TrainConfig& cfg, const TrainData& data,
                                         const WeightFn& weights) {
  cfg.validate();
  numkit::ParamSet params;
  auto init = numkit::Rng::stream(cfg.seed, "init-f");
  init_ranking_model(params, init);
  numkit::AdamW opt(cfg.adamw());
  CheckpointSet out;
  detail::StepFn step = [&](const BatchTensors& bt, std::span<const std::size_t> idx,
                            numkit::ParamSet& p) -> std::pair<double, std::optional<double>> {
    const Tensor w = weights(bt, idx);
    Graph g;
    const Var loss = fixed_weight_loss(g, p, bt, w);
    const double v = g.value(loss).item();
    opt.step(p, g.backward(loss));
    return {v, std::nullopt};
  };
  detail::run_epochs(cfg, data, "batch", params, step, out, cfg.epochs, true);
  detail::finish(out, params);
  return out;
}

/// DLA: f on position-ratio-weighted clicks, then g on score-ratio-weighted
/// clicks using the freshly updated f.
inline void dla_update(numkit::ParamSet& params, const BatchTensors& bt, double w_max,
                       numkit::AdamW& opt_f, numkit::AdamW& opt_g, double& loss_f,
                       double& loss_g) {
  {
    Graph g;
    const DlaLosses l = dla_losses(g, params, bt, w_max);
    loss_f = g.value(l.loss_f).item();
    opt_f.step(params, only_prefixes(g.backward(l.loss_f), {"f."}));
  }
  Graph g;
  const DlaLosses l = dla_losses(g, params, bt, w_max);
  loss_g = g.value(l.loss_g).item();
  opt_g.step(params, only_prefixes(g.backward(l.loss_g), {"g."}));
}

inline CheckpointSet train_dla(const TrainConfig& cfg, const TrainData& data,
                               const std::string& prefix = "", std::size_t epochs = 0,
                               bool validate = true) {
  cfg.validate();
  numkit::ParamSet params;
  auto init = numkit::Rng::stream(cfg.seed, prefix + "init-f");
  init_ranking_model(params, init);
  propensity::init_position_model(params);
  numkit::AdamW opt_f(cfg.adamw()), opt_g(cfg.adamw());
  CheckpointSet out;
  detail::StepFn step = [&](const BatchTensors& bt, std::span<const std::size_t>,
                            numkit::ParamSet& p) -> std::pair<double, std::optional<double>> {
    double lf = 0.0, lg = 0.0;
    dla_update(p, bt, cfg.wmax, opt_f, opt_g, lf, lg);
    return {lf, lg};
  };
  detail::run_epochs(cfg, data, prefix + "batch", params, step, out,
                     epochs ? epochs : cfg.epochs, validate);
  detail::finish(out, params);
  return out;
}

/// Surrogate scores for every session by position.
inline std::vector<propensity::Scores> session_scores(const numkit::ParamSet& params,
                                                      const dataset::SessionSet& sessions) {
  std::vector<propensity::Scores> out;
  out.reserve(sessions.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < sessions.size(); start += kChunk) {
    const std::size_t end = std::min(sessions.size(), start + kChunk);
    std::vector<dataset::FeatureVector> rows;
    for (std::size_t n = start; n < end; ++n) {
      for (const auto& d : sessions[n].docs) rows.push_back(d.features);
    }
    const auto s = score_features(params, rows);
    for (std::size_t n = 0; n < end - start; ++n) {
      propensity::Scores sc{};
      for (std::size_t k = 0; k < kListSize; ++k) sc[k] = s[n * kListSize + k];
      out.push_back(sc);
    }
  }
  return out;
}

/// Stage 1 + 2: DLA surrogate for `surrogate_epochs`, then D_mp from its scores.
inline propensity::DmpTable surrogate_dmp(const TrainConfig& cfg, const TrainData& data) {
  const CheckpointSet sur = train_dla(cfg, data, "surrogate-", cfg.surrogate_epochs, false);
  const auto scores = session_scores(sur.final, *data.sessions);
  return propensity::compute_dmp(*data.sessions, scores);
}

/// Stage 3: per batch, f and h step together on the ranking loss, then g
/// steps on the position loss with f and h frozen.
inline CheckpointSet train_dualipw(const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  CheckpointSet out;
  out.dmp = data.dmp ? *data.dmp : surrogate_dmp(cfg, data);
  const propensity::DmpTable& dmp = *out.dmp;

  numkit::ParamSet params;
  auto init_f = numkit::Rng::stream(cfg.seed, "init-f");
  init_ranking_model(params, init_f);
  propensity::init_position_model(params);
  auto init_h = numkit::Rng::stream(cfg.seed, "init-h");
  propensity::init_query_model(params, cfg.query_model(), init_h);

  numkit::AdamW opt_f(cfg.adamw()), opt_g(cfg.adamw()), opt_h(cfg.adamw_h());
  const DualIpwHyper hp{cfg.tau, cfg.wmax};
  detail::StepFn step = [&](const BatchTensors& bt, std::span<const std::size_t>,
                            numkit::ParamSet& p) -> std::pair<double, std::optional<double>> {
    const StepResult rank = dualipw_rank_step(p, dmp, bt, hp);
    opt_f.step(p, only_prefixes(rank.grads, {"f."}));
    opt_h.step(p, only_prefixes(rank.grads, {"h."}));
    const StepResult prop = dualipw_prop_step(p, dmp, bt, hp);
    opt_g.step(p, only_prefixes(prop.grads, {"g."}));
    out.clamped_query_propensity += rank.clamped;
    return {rank.loss, prop.loss};
  };
  detail::run_epochs(cfg, data, "batch", params, step, out, cfg.epochs, true);
  detail::finish(out, params);
  const Tensor tau = Tensor::vector({cfg.tau});
  out.best[kTauArray] = tau;
  out.final[kTauArray] = tau;
  return out;
}

/// Position propensities for ipw_fixed: the config vector, else the oracle
/// sidecar's observation probabilities.
inline std::vector<double> resolve_ipw_propensity(const TrainConfig& cfg, const TrainData& data) {
  if (!cfg.ipw_propensity.empty()) return cfg.ipw_propensity;
  if (data.oracle.empty()) {
    throw std::invalid_argument("ipw_fixed needs ipw_propensity or an oracle sidecar");
  }
  const auto& o = data.oracle.front().observe;
  return {o.begin(), o.end()};
}

inline WeightFn oracle_weight_fn(const TrainData& data) {
  if (data.oracle.size() != data.sessions->size()) {
    throw std::invalid_argument("oracle sidecar is not aligned with the sessions");
  }
  for (std::size_t i = 0; i < data.oracle.size(); ++i) {
    if (data.oracle[i].query_id != (*data.sessions)[i].query_id) {
      throw std::invalid_argument("oracle sidecar row " + std::to_string(i + 1) +
                                  " does not match session " + (*data.sessions)[i].query_id);
    }
  }
  auto oracle = data.oracle;
  return [oracle](const BatchTensors& bt, std::span<const std::size_t> idx) {
    Tensor w(bt.clicks.shape());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& rec = oracle[idx[b]];
      for (std::size_t k = 0; k < kListSize; ++k) {
        if (bt.clicks(b, k) != 0.0) w(b, k) = 1.0 / (rec.observe[k] * rec.p_cq);
      }
    }
    return w;
  };
}

inline CheckpointSet train(const TrainConfig& cfg, const TrainData& data) {
  if (!data.sessions) throw std::invalid_argument("train: no sessions");
  switch (cfg.method) {
    case Method::kNaive:
      return train_fixed_weights(cfg, data, [](const BatchTensors& bt, auto) { return bt.clicks; });
    case Method::kIpwFixed: {
      const auto prop = resolve_ipw_propensity(cfg, data);
      const double w_max = cfg.wmax;
      return train_fixed_weights(cfg, data, [prop, w_max](const BatchTensors& bt, auto) {
        return ipw_fixed_weights(bt, prop, w_max);
      });
    }
    case Method::kDla:
      return train_dla(cfg, data);
    case Method::kDualIpw:
      if (cfg.oracle_mode) return train_fixed_weights(cfg, data, oracle_weight_fn(data));
      return train_dualipw(cfg, data);
  }
  throw std::logic_error("unknown method");
}

/// step,epoch,loss_f,loss_g,val_ndcg10 (empty cells where not applicable)
inline void write_curve_csv(const std::filesystem::path& path, const CheckpointSet& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "step,epoch,loss_f,loss_g,val_ndcg10\n";
  for (const CurvePoint& p : ck.curve) {
    os << p.step << ',' << p.epoch << ',' << dataset::format_double(p.loss_f) << ',';
    if (p.loss_g) os << dataset::format_double(*p.loss_g);
    os << ',';
    if (p.val_ndcg10) os << dataset::format_double(*p.val_ndcg10);
    os << '\n';
  }
}

}  // namespace dualipw::training
