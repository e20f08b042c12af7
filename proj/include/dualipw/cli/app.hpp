#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dualipw/cli/config.hpp"
#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/synthetic.hpp"
#include "dualipw/evalkit/analysis.hpp"
#include "dualipw/evalkit/evaluate.hpp"
#include "dualipw/evalkit/unbiasedness.hpp"
#include "dualipw/numkit/checkpoint.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/training/gradcheck.hpp"
#include "dualipw/training/trainer.hpp"

namespace dualipw::cli {

/// Exit codes.
enum Exit : int {
  kOk = 0,
  kUsage = 1,       // bad subcommand or flag syntax
  kConfig = 2,      // unknown key, malformed config, invalid value
  kMissingFile = 3, // input cannot be opened
  kBadInput = 4,    // input file malformed
  kNumeric = 5,     // training aborted on a non-finite value, or a check failed
};

class CheckFailed : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const char* exit_kind(int code) {
  switch (code) {
    case kUsage: return "usage";
    case kConfig: return "config";
    case kMissingFile: return "missing-file";
    case kBadInput: return "bad-input";
    case kNumeric: return "numeric";
    default: return "internal";
  }
}

// One line: error<TAB>code=N<TAB>kind=K<TAB>message=...
inline void report_error(std::ostream& err, int code, std::string msg) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::replace(msg.begin(), msg.end(), '\t', ' ');
  err << "error\tcode=" << code << "\tkind=" << exit_kind(code) << "\tmessage=" << msg << '\n';
}

namespace fs = std::filesystem;

namespace detail {

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw dataset::IoError("missing file " + p.string());
}

inline std::uint64_t derived_seed(std::uint64_t seed, std::string_view tag) {
  return numkit::Rng::stream(seed, tag).next_u64();
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  for (auto part : dataset::detail::split(list, ',')) {
    out.push_back(cli::detail::to_u64("seeds", cli::detail::trim(part)));
  }
  if (out.empty()) throw ConfigError("empty --seeds list");
  return out;
}

inline std::size_t thread_cap() {
  if (const char* env = std::getenv("DUALIPW_THREADS")) {
    const auto n = cli::detail::to_u64("DUALIPW_THREADS", env);
    if (n == 0) throw ConfigError("DUALIPW_THREADS must be >= 1");
    return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Reads `key = value` pairs of a run's resolved.cfg, if present.
inline std::map<std::string, std::string> run_settings(const fs::path& dir) {
  std::map<std::string, std::string> out;
  const fs::path p = dir / "resolved.cfg";
  if (!fs::is_regular_file(p)) return out;
  for (auto& [k, v] : read_config_file(p)) out[k] = v;
  return out;
}

}  // namespace detail

/// Settings plus the flag overrides collected for one subcommand.
struct Invocation {
  Settings settings;
  std::string config_path;
  std::map<std::string, std::string> flag_values;

  void add_flags(CLI::App* sub, std::initializer_list<Group> groups) {
    sub->add_option("--config", config_path, "flat key = value config file");
    for (const Key& k : registry()) {
      if (std::find(groups.begin(), groups.end(), k.group) == groups.end()) continue;
      sub->add_option("--" + flag_name(k.name), flag_values[k.name], "config key " + k.name);
    }
  }

  void resolve(CLI::App* sub) {
    if (!config_path.empty()) apply_config(settings, read_config_file(config_path));
    for (const Key& k : registry()) {
      const auto it = flag_values.find(k.name);
      if (it == flag_values.end()) continue;
      const CLI::Option* opt = sub->get_option_no_throw("--" + flag_name(k.name));
      if (opt && opt->count() > 0) k.set(settings, it->second);
    }
  }
};

// --- simulate -------------------------------------------------------------

inline void cmd_simulate(const Settings& s, const fs::path& out, std::ostream& log) {
  fs::create_directories(out);
  const dataset::WorldConfig& wc = s.world;
  const auto world = dataset::generate_synthetic_world(wc, s.seed);
  const auto sim = dataset::simulate_clicks(world, wc.bias, s.seed);
  dataset::write_sessions(out / "sessions.tsv", sim.sessions);
  dataset::write_oracle(out / "oracle.tsv", sim.oracle);

  auto held_out = [&](std::size_t n, const char* prefix, const char* tag) {
    dataset::WorldConfig c = wc;
    c.num_queries = n;
    c.id_prefix = wc.id_prefix + prefix;
    return dataset::annotate_world(
        dataset::generate_synthetic_world(c, detail::derived_seed(s.seed, tag)));
  };
  if (s.valid_queries > 0) {
    dataset::write_annotations(out / "valid.tsv", held_out(s.valid_queries, "v", "valid-world"));
  }
  if (s.test_queries > 0) {
    dataset::write_annotations(out / "test.tsv", held_out(s.test_queries, "t", "test-world"));
  }

  std::array<std::size_t, 3> mix{};
  for (const auto& q : sim.sessions.sessions) ++mix[std::min<std::size_t>(q.num_clicks(), 3) - 1];
  std::ofstream os(out / "simulate_summary.csv", std::ios::binary);
  os << "simulated,kept,single_click,two_click,more_clicks\n"
     << sim.simulated << ',' << sim.sessions.size() << ',' << mix[0] << ',' << mix[1] << ','
     << mix[2] << '\n';
  write_resolved(out / "resolved.cfg", s, {Group::kCommon, Group::kWorld});
  log << "simulated " << sim.simulated << " sessions, kept " << sim.sessions.size() << '\n';
}

// --- train ----------------------------------------------------------------

struct TrainInputs {
  dataset::SessionSet sessions;
  std::vector<dataset::AnnotatedQuery> validation;
  std::vector<dataset::OracleRecord> oracle;
  std::optional<propensity::DmpTable> dmp;
  std::vector<std::pair<std::string, std::string>> sources;
};

inline void train_one(const Settings& s, std::uint64_t seed, const TrainInputs& in,
                      const fs::path& out, std::ostream& log, std::mutex& log_mu) {
  fs::create_directories(out);
  training::TrainConfig cfg = s.train;
  cfg.seed = seed;
  training::TrainData data;
  data.sessions = &in.sessions;
  data.validation = in.validation;
  data.oracle = in.oracle;
  data.dmp = in.dmp;
  const training::CheckpointSet ck = training::train(cfg, data);

  numkit::write_checkpoint(out / "best.ckpt", ck.best);
  numkit::write_checkpoint(out / "final.ckpt", ck.final);
  training::write_curve_csv(out / "curve.csv", ck);
  if (ck.dmp) propensity::write_dmp_csv(out / "dmp.csv", *ck.dmp);
  {
    std::ofstream os(out / "train_summary.csv", std::ios::binary);
    os << "best_step,best_val_ndcg10,clamped_query_propensity,dmp_ties\n"
       << ck.best_step << ',' << (ck.best_val ? dataset::format_double(*ck.best_val) : "") << ','
       << ck.clamped_query_propensity << ',' << (ck.dmp ? std::to_string(ck.dmp->ties) : "")
       << '\n';
  }
  Settings snap = s;
  snap.seed = seed;
  snap.train.seed = seed;
  write_resolved(out / "resolved.cfg", snap, {Group::kCommon, Group::kTrain}, in.sources);
  if (ck.clamped_query_propensity > 0) {
    std::lock_guard lock(log_mu);
    log << "warning: query propensity clamped " << ck.clamped_query_propensity << " times\n";
  }
  std::lock_guard lock(log_mu);
  log << "seed " << seed << ": " << training::to_string(cfg.method) << " best step "
      << ck.best_step;
  if (ck.best_val) log << " val ndcg@10 " << dataset::format_double(*ck.best_val);
  log << '\n';
}

inline void cmd_train(const Settings& s, const fs::path& data_dir, fs::path sessions_path,
                      fs::path valid_path, fs::path oracle_path, const fs::path& dmp_path,
                      const std::string& seeds, const fs::path& out, std::ostream& log) {
  if (!data_dir.empty()) {
    if (sessions_path.empty()) sessions_path = data_dir / "sessions.tsv";
    if (valid_path.empty() && fs::exists(data_dir / "valid.tsv")) valid_path = data_dir / "valid.tsv";
    if (oracle_path.empty() && fs::exists(data_dir / "oracle.tsv")) {
      oracle_path = data_dir / "oracle.tsv";
    }
  }
  if (sessions_path.empty()) throw ConfigError("train needs --data or --sessions");
  s.train.validate();

  TrainInputs in;
  detail::require_file(sessions_path);
  dataset::Diagnostics diag;
  const dataset::SessionSet loaded = dataset::load_sessions(sessions_path, diag);
  for (const auto& w : diag.warnings) log << "warning: " << w << '\n';
  const dataset::FilterReport filtered = dataset::filter_sessions(loaded);
  if (filtered.removed_short + filtered.removed_no_click > 0) {
    log << "filtered " << filtered.removed_short << " short and " << filtered.removed_no_click
        << " click-less sessions\n";
  }
  in.sessions = filtered.kept;
  if (in.sessions.size() == 0) throw dataset::ParseError(sessions_path.string(), 0, "no usable sessions");
  in.sources.emplace_back("sessions", sessions_path.string());
  if (!valid_path.empty()) {
    detail::require_file(valid_path);
    in.validation = dataset::load_annotations(valid_path);
    in.sources.emplace_back("validation", valid_path.string());
  }
  if (!oracle_path.empty()) {
    detail::require_file(oracle_path);
    in.oracle = dataset::load_oracle(oracle_path);
    // The sidecar lists every simulated session; keep the rows of kept ones.
    if (in.oracle.size() != in.sessions.size()) {
      std::vector<dataset::OracleRecord> aligned;
      std::size_t j = 0;
      for (const auto& q : in.sessions.sessions) {
        while (j < in.oracle.size() && in.oracle[j].query_id != q.query_id) ++j;
        if (j == in.oracle.size()) {
          throw dataset::ParseError(oracle_path.string(), 0, "no sidecar row for " + q.query_id);
        }
        aligned.push_back(in.oracle[j++]);
      }
      in.oracle = std::move(aligned);
    }
    in.sources.emplace_back("oracle", oracle_path.string());
  }
  if (!dmp_path.empty()) {
    detail::require_file(dmp_path);
    in.dmp = propensity::read_dmp_csv(dmp_path);
    in.sources.emplace_back("dmp", dmp_path.string());
  }

  std::mutex log_mu;
  if (seeds.empty()) {
    train_one(s, s.seed, in, out, log, log_mu);
    return;
  }
  const auto list = detail::parse_seeds(seeds);
  const std::size_t cap = std::min(detail::thread_cap(), list.size());
  std::vector<std::exception_ptr> errors(list.size());
  std::size_t next = 0;
  std::mutex next_mu;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(next_mu);
        if (next == list.size()) return;
        i = next++;
      }
      try {
        train_one(s, list[i], in, out / ("seed_" + std::to_string(list[i])), log, log_mu);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < cap; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- evaluate -------------------------------------------------------------

inline evalkit::MetricReport evaluate_checkpoint(const fs::path& ckpt,
                                                 const std::vector<dataset::AnnotatedQuery>& q) {
  detail::require_file(ckpt);
  const numkit::ParamSet params = numkit::read_checkpoint(ckpt);
  evalkit::MetricReport rep = evalkit::evaluate(params, q);
  const auto run = detail::run_settings(ckpt.parent_path());
  if (auto it = run.find("method"); it != run.end()) rep.method = it->second;
  if (auto it = run.find("seed"); it != run.end()) {
    rep.seed = cli::detail::to_u64("seed", it->second);
  }
  return rep;
}

inline void write_report(const fs::path& out, const evalkit::MetricReport& rep) {
  fs::create_directories(out);
  evalkit::write_metric_csv(out / "metrics.csv", rep);
  evalkit::write_per_query_csv(out / "per_query.csv", rep);
  std::ofstream os(out / "report_meta.csv", std::ios::binary);
  os << "key,value\nmethod," << rep.method << "\nseed," << rep.seed << "\nconfig_hash,"
     << rep.config_hash << "\nall_zero_queries," << rep.all_zero_queries << "\nscore_ties,"
     << rep.score_ties << '\n';
}

inline void cmd_evaluate(const Settings& s, const fs::path& ckpt, const fs::path& run_dir,
                         const std::string& which, const fs::path& annotations, bool aggregate,
                         const fs::path& out, std::ostream& log) {
  if (annotations.empty()) throw ConfigError("evaluate needs --annotations");
  if (which != "best" && which != "final") throw ConfigError("--which must be best or final");
  detail::require_file(annotations);
  const auto queries = dataset::load_annotations(annotations);
  const std::string file = which + ".ckpt";
  std::vector<std::pair<std::string, std::string>> sources = {{"annotations", annotations.string()}};

  if (aggregate) {
    if (run_dir.empty()) throw ConfigError("--aggregate needs --run");
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(run_dir)) {
      if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) {
        dirs.push_back(e.path());
      }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw dataset::IoError("no seed_* directories under " + run_dir.string());
    std::map<std::tuple<std::string, std::size_t, std::string>, std::vector<double>> cells;
    for (const auto& d : dirs) {
      const auto rep = evaluate_checkpoint(d / file, queries);
      write_report(out / d.filename(), rep);
      for (const auto& c : rep.cells) cells[{c.metric, c.k, c.bucket}].push_back(c.mean);
    }
    fs::create_directories(out);
    std::ofstream os(out / "aggregate.csv", std::ios::binary);
    os << "metric,k,bucket,mean,se,n_seeds\n";
    for (const auto& [key, v] : cells) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      const double se = v.size() > 1
                            ? std::sqrt(ss / static_cast<double>(v.size() - 1) /
                                        static_cast<double>(v.size()))
                            : 0.0;
      os << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
         << dataset::format_double(m) << ',' << dataset::format_double(se) << ',' << v.size()
         << '\n';
      if (std::get<0>(key) == "ndcg" && std::get<1>(key) == 10 && std::get<2>(key) == "all") {
        log << "ndcg@10 mean " << dataset::format_double(m) << " se "
            << dataset::format_double(se) << " over " << v.size() << " seeds\n";
      }
    }
    sources.emplace_back("run", run_dir.string());
  } else {
    const fs::path path = !ckpt.empty() ? ckpt : run_dir / file;
    if (path.empty() || (ckpt.empty() && run_dir.empty())) {
      throw ConfigError("evaluate needs --checkpoint or --run");
    }
    const auto rep = evaluate_checkpoint(path, queries);
    write_report(out, rep);
    log << "ndcg@10 " << dataset::format_double(rep.mean("ndcg", 10)) << " err@10 "
        << dataset::format_double(rep.mean("err", 10)) << '\n';
    sources.emplace_back("checkpoint", path.string());
  }
  write_resolved(out / "resolved.cfg", s, {Group::kCommon}, sources);
}

// --- analyze --------------------------------------------------------------

inline void cmd_analyze(const Settings& s, fs::path sessions_path, const fs::path& data_dir,
                        const fs::path& run_dir, fs::path dmp_path, bool export_groups,
                        const fs::path& out, std::ostream& log) {
  if (sessions_path.empty() && !data_dir.empty()) sessions_path = data_dir / "sessions.tsv";
  fs::create_directories(out);
  std::vector<std::pair<std::string, std::string>> sources;
  if (!sessions_path.empty()) {
    detail::require_file(sessions_path);
    const auto sessions = dataset::filter_sessions(dataset::load_sessions(sessions_path)).kept;
    const auto part = evalkit::pilot_partition(sessions);
    evalkit::write_pilot_csv(out / "pilot.csv", part);
    if (export_groups) evalkit::export_pilot_groups(sessions, part, out / "groups");
    log << part.single_click << " of " << part.total << " sessions are single-click\n";
    sources.emplace_back("sessions", sessions_path.string());
  }
  if (dmp_path.empty() && !run_dir.empty() && fs::exists(run_dir / "dmp.csv")) {
    dmp_path = run_dir / "dmp.csv";
  }
  std::optional<propensity::DmpTable> dmp;
  if (!dmp_path.empty()) {
    detail::require_file(dmp_path);
    dmp = propensity::read_dmp_csv(dmp_path);
    evalkit::export_dmp_distributions(*dmp, out / "dmp_distributions.csv");
    sources.emplace_back("dmp", dmp_path.string());
  }
  if (!run_dir.empty()) {
    const fs::path ckpt = run_dir / "final.ckpt";
    detail::require_file(ckpt);
    const auto params = numkit::read_checkpoint(ckpt);
    const auto run = detail::run_settings(run_dir);
    double w_max = s.train.wmax;
    if (auto it = run.find("wmax"); it != run.end()) w_max = cli::detail::to_double("wmax", it->second);
    const bool has_h = params.count("h.ffn.w2") > 0;
    if (params.count(propensity::kPositionLogits) && has_h && dmp) {
      const double tau = params.count(training::kTauArray)
                             ? params.at(training::kTauArray)[0]
                             : s.train.tau;
      evalkit::export_click_weights(params, *dmp, tau, w_max, out / "click_weights.csv");
      evalkit::export_cp_vector(propensity::qcp_forward(params, *dmp, tau), out / "cp.csv");
    } else if (params.count(propensity::kPositionLogits)) {
      // DLA run: the query-level factor is 1 everywhere.
      std::ofstream os(out / "click_weights.csv", std::ios::binary);
      os << "position,dla_weight,query_weight,dualipw_weight\n";
      for (std::size_t k = 1; k <= dataset::kListSize; ++k) {
        const double r = propensity::position_weight_ratio(params.at(propensity::kPositionLogits),
                                                           k, w_max);
        os << k << ',' << numkit::format_double17(r) << ",1," << numkit::format_double17(r)
           << '\n';
      }
    }
    sources.emplace_back("run", run_dir.string());
  }
  if (sources.empty()) throw ConfigError("analyze needs --sessions, --data, --run or --dmp-file");
  write_resolved(out / "resolved.cfg", s, {Group::kCommon, Group::kTrain}, sources);
}

// --- check ----------------------------------------------------------------

inline void cmd_check(const Settings& s, bool grad, bool unbiased, const fs::path& out,
                      std::ostream& log) {
  if (!grad && !unbiased) grad = unbiased = true;
  std::vector<std::string> failures;
  std::ostringstream csv;
  csv << "check,value,threshold,pass\n";
  if (grad) {
    double worst = 0.0;
    std::string where;
    for (std::size_t i = 0; i < s.grad_fixtures; ++i) {
      const auto fx = training::make_grad_fixture(detail::derived_seed(s.seed, "grad") + i);
      for (const auto& e : training::gradient_suite(fx)) {
        if (e.result.max_rel_error >= worst) {
          worst = e.result.max_rel_error;
          where = e.name + ":" + e.result.worst_param;
        }
      }
    }
    const bool pass = worst < 1e-4;
    log << "grad max_rel_error " << numkit::format_double17(worst) << " (" << where << ") "
        << (pass ? "ok" : "FAIL") << '\n';
    csv << "grad_max_rel_error," << numkit::format_double17(worst) << ",1e-4," << pass << '\n';
    if (!pass) failures.push_back("gradient check " + where);
  }
  if (unbiased) {
    dataset::WorldConfig wc = s.world;
    wc.num_queries = s.mc_queries;
    wc.bias.lambda_sat = s.mc_lambda;
    const auto world = dataset::generate_synthetic_world(wc, detail::derived_seed(s.seed, "mc-world"));
    numkit::ParamSet f;
    auto rng = numkit::Rng::stream(s.seed, "mc-ranker");
    training::init_ranking_model(f, rng);
    const auto r = evalkit::unbiasedness_mc(world, wc.bias, f, s.mc_draws,
                                            detail::derived_seed(s.seed, "mc-draws"));
    const bool pass = r.oracle_error() < 0.02;
    log << "unbiasedness oracle_rel_error " << numkit::format_double17(r.oracle_error())
        << " naive_rel_error " << numkit::format_double17(r.naive_error()) << ' '
        << (pass ? "ok" : "FAIL") << '\n';
    csv << "mc_oracle_rel_error," << numkit::format_double17(r.oracle_error()) << ",0.02," << pass
        << "\nmc_naive_rel_error," << numkit::format_double17(r.naive_error()) << ",,\n";
    if (!pass) failures.push_back("unbiasedness check");
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(out / "check.csv", std::ios::binary) << csv.str();
    write_resolved(out / "resolved.cfg", s, {Group::kCommon, Group::kWorld, Group::kCheck});
  }
  if (!failures.empty()) {
    std::string msg = "failed:";
    for (const auto& f : failures) msg += " " + f;
    throw CheckFailed(msg);
  }
}

// --- export ---------------------------------------------------------------

// name[i] = value, or name[r,c] = value for matrices, one scalar per line.
inline void dump_params(std::ostream& os, const numkit::ParamSet& params) {
  for (const auto& [name, t] : params) {
    os << "# " << name << ' ' << numkit::shape_string(t.shape()) << '\n';
    const bool matrix = t.shape().size() == 2;
    for (std::size_t i = 0; i < t.size(); ++i) {
      os << name << '[';
      if (matrix) os << i / t.cols() << ',' << i % t.cols();
      else os << i;
      os << "] = " << numkit::format_double17(t[i]) << '\n';
    }
  }
}

inline void cmd_export(const fs::path& ckpt, const fs::path& out, std::ostream& log) {
  if (ckpt.empty()) throw ConfigError("export needs --checkpoint");
  detail::require_file(ckpt);
  const auto params = numkit::read_checkpoint(ckpt);
  if (out.empty()) {
    dump_params(log, params);
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + out.string() + " for writing");
  dump_params(os, params);
}

// --- entry point ----------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Unbiased learning-to-rank with dual inverse propensity weighting", "dualipw"};
  app.require_subcommand(1);

  Invocation inv;
  std::string out_dir, data_dir, sessions, valid, oracle, dmp_file, seeds, checkpoint, run_dir,
      annotations, which = "best";
  bool aggregate = false, export_groups = false, grad = false, unbiased = false;

  auto* sim = app.add_subcommand("simulate", "synthetic world, clicks, sidecar and annotations");
  inv.add_flags(sim, {Group::kCommon, Group::kWorld});
  sim->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a ranker (writes checkpoints and curve)");
  inv.add_flags(train, {Group::kCommon, Group::kTrain});
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--data", data_dir, "directory written by simulate");
  train->add_option("--sessions", sessions, "session TSV");
  train->add_option("--valid", valid, "validation annotation TSV");
  train->add_option("--oracle", oracle, "oracle sidecar TSV");
  train->add_option("--dmp-file", dmp_file, "precomputed D_mp CSV (skips the surrogate)");
  train->add_option("--seeds", seeds, "comma-separated seeds, one subdirectory each");

  auto* eval = app.add_subcommand("evaluate", "checkpoint + annotations -> metric report");
  inv.add_flags(eval, {Group::kCommon});
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--checkpoint", checkpoint, "checkpoint file");
  eval->add_option("--run", run_dir, "training output directory");
  eval->add_option("--which", which, "best or final (with --run)");
  eval->add_option("--annotations", annotations, "annotation TSV")->required();
  eval->add_flag("--aggregate", aggregate, "evaluate every seed_* run and aggregate");

  auto* analyze = app.add_subcommand("analyze", "pilot partition, D_mp and click-weight exports");
  inv.add_flags(analyze, {Group::kCommon, Group::kTrain});
  analyze->add_option("--out", out_dir, "output directory")->required();
  analyze->add_option("--sessions", sessions, "session TSV");
  analyze->add_option("--data", data_dir, "directory written by simulate");
  analyze->add_option("--run", run_dir, "training output directory");
  analyze->add_option("--dmp-file", dmp_file, "D_mp CSV");
  analyze->add_flag("--export-groups", export_groups, "write one session TSV per group");

  auto* check = app.add_subcommand("check", "finite-difference and unbiasedness checks");
  inv.add_flags(check, {Group::kCommon, Group::kWorld, Group::kCheck});
  check->add_flag("--grad", grad, "gradient suite only");
  check->add_flag("--unbiased", unbiased, "Monte Carlo unbiasedness check only");
  check->add_option("--out", out_dir, "optional output directory");

  auto* exp = app.add_subcommand("export", "checkpoint -> human-readable parameter dump");
  exp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  exp->add_option("--out", out_dir, "output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ExtrasError& e) {
    report_error(err, kConfig, e.what());
    return kConfig;
  } catch (const CLI::ParseError& e) {
    report_error(err, kUsage, e.what());
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    inv.resolve(sub);
    Settings& s = inv.settings;
    if (sub == sim) {
      s.world.validate();
      cmd_simulate(s, out_dir, out);
    } else if (sub == train) {
      cmd_train(s, data_dir, sessions, valid, oracle, dmp_file, seeds, out_dir, out);
    } else if (sub == eval) {
      cmd_evaluate(s, checkpoint, run_dir, which, annotations, aggregate, out_dir, out);
    } else if (sub == analyze) {
      cmd_analyze(s, sessions, data_dir, run_dir, dmp_file, export_groups, out_dir, out);
    } else if (sub == check) {
      cmd_check(s, grad, unbiased, out_dir, out);
    } else if (sub == exp) {
      cmd_export(checkpoint, out_dir, out);
    }
    return kOk;
  } catch (const ConfigError& e) {
    report_error(err, kConfig, e.what());
    return kConfig;
  } catch (const std::invalid_argument& e) {
    report_error(err, kConfig, e.what());
    return kConfig;
  } catch (const dataset::IoError& e) {
    report_error(err, kMissingFile, e.what());
    return kMissingFile;
  } catch (const dataset::ParseError& e) {
    report_error(err, kBadInput, e.what());
    return kBadInput;
  } catch (const numkit::CheckpointError& e) {
    report_error(err, kBadInput, e.what());
    return kBadInput;
  } catch (const training::TrainingAborted& e) {
    report_error(err, kNumeric, e.what());
    return kNumeric;
  } catch (const CheckFailed& e) {
    report_error(err, kNumeric, e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    report_error(err, 70, e.what());
    return 70;
  }
}

}  // namespace dualipw::cli
