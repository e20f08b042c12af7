#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "dualipw/dataset/synthetic.hpp"
#include "dualipw/evalkit/analysis.hpp"
#include "dualipw/evalkit/evaluate.hpp"
#include "dualipw/evalkit/metrics.hpp"
#include "dualipw/evalkit/unbiasedness.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "dualipw/training/ranking_model.hpp"
#include "metric_cases.hpp"
#include "test_util.hpp"

namespace ds = dualipw::dataset;
namespace ev = dualipw::evalkit;
namespace nk = dualipw::numkit;
namespace pr = dualipw::propensity;
namespace tr = dualipw::training;
using ds::kListSize;

namespace {

constexpr double kTight = 1e-12;

using testdata::kCases;
using testdata::kCuts;

std::vector<int> random_grades(nk::Rng& rng, std::size_t n) {
  std::vector<int> g(n);
  for (int& v : g) v = static_cast<int>(rng.below(5));
  return g;
}

ds::AnnotatedQuery annotated(const std::string& id, const std::vector<int>& labels,
                             ds::FrequencyBucket bucket = ds::FrequencyBucket::kUnknown) {
  ds::AnnotatedQuery q;
  q.query_id = id;
  q.bucket = bucket;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ds::AnnotatedDoc d;
    d.doc_id = "d" + std::to_string(i);
    d.features[0] = static_cast<double>(labels[i]);
    d.features[1] = static_cast<double>(i);
    d.label = labels[i];
    q.docs.push_back(d);
  }
  return q;
}

ev::Scorer label_scorer() {
  return [](const ds::AnnotatedQuery& q) {
    std::vector<double> s;
    for (const auto& d : q.docs) s.push_back(d.features[0]);
    return s;
  };
}

ds::QuerySession session_with_clicks(const std::string& id, std::initializer_list<std::size_t> pos) {
  ds::QuerySession s;
  s.query_id = id;
  for (std::size_t k = 1; k <= kListSize; ++k) {
    ds::Document d;
    d.position = static_cast<int>(k);
    d.clicked = std::find(pos.begin(), pos.end(), k) != pos.end();
    s.docs.push_back(d);
  }
  return s;
}

nk::ParamSet random_ranker(std::uint64_t seed) {
  nk::ParamSet f;
  auto rng = nk::Rng::stream(seed, "test-ranker");
  tr::init_ranking_model(f, rng);
  return f;
}

}  // namespace

// --- metrics -------------------------------------------------------------

TEST(Metrics, WorkedExample) {
  const std::vector<int> r = {0, 4};
  EXPECT_NEAR(*ev::ndcg_at_k(r, 10), (15.0 / std::log2(3.0)) / 15.0, kTight);
  EXPECT_NEAR(*ev::ndcg_at_k(r, 10), 0.6309297535714575, kTight);
  EXPECT_NEAR(ev::err_at_k(std::vector<int>{4}, 10), 0.9375, kTight);
  EXPECT_NEAR(ev::err_at_k(std::vector<int>{4, 4}, 10), 0.966796875, kTight);
}

TEST(Metrics, FixedCasesMatchReference) {
  for (const auto& c : kCases) {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto n = ev::ndcg_at_k(c.ranked, kCuts[i]);
      ASSERT_TRUE(n.has_value());
      EXPECT_NEAR(*n, c.ndcg[i], kTight) << "case size " << c.ranked.size() << " k " << kCuts[i];
      EXPECT_NEAR(ev::err_at_k(c.ranked, kCuts[i]), c.err[i], kTight)
          << "case size " << c.ranked.size() << " k " << kCuts[i];
    }
  }
}

TEST(Metrics, AllZeroGradesHaveNoNdcg) {
  const std::vector<int> z(10, 0);
  EXPECT_FALSE(ev::ndcg_at_k(z, 10).has_value());
  EXPECT_EQ(ev::err_at_k(z, 10), 0.0);
}

TEST(Metrics, CutoffBelowOneIsRejected) {
  const std::vector<int> r = {1, 2};
  EXPECT_THROW(ev::ndcg_at_k(r, 0), std::invalid_argument);
  EXPECT_THROW(ev::err_at_k(r, 0), std::invalid_argument);
}

TEST(Metrics, PropertiesOnRandomGradeLists) {
  auto rng = nk::Rng::stream(5, "metric-props");
  for (int trial = 0; trial < 1000; ++trial) {
    auto g = random_grades(rng, 1 + rng.below(15));
    const std::size_t k = 1 + rng.below(12);

    // Ideal order scores 1; the metrics lie in [0,1].
    auto ideal = g;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const auto n = ev::ndcg_at_k(g, k);
    const double e = ev::err_at_k(g, k);
    ASSERT_GE(e, 0.0);
    ASSERT_LE(e, 1.0);
    if (n) {
      ASSERT_GE(*n, 0.0);
      ASSERT_LE(*n, 1.0 + kTight);
      EXPECT_NEAR(*ev::ndcg_at_k(ideal, k), 1.0, kTight);
      EXPECT_LE(e, ev::err_at_k(ideal, k) + kTight);
    }

    // Reordering below the cutoff changes nothing.
    if (g.size() > k + 1) {
      auto tail = g;
      std::reverse(tail.begin() + static_cast<long>(k), tail.end());
      EXPECT_EQ(ev::ndcg_at_k(tail, k), n);
      EXPECT_EQ(ev::err_at_k(tail, k), e);
    }

    // Swapping an out-of-order adjacent pair inside the cutoff never hurts.
    for (std::size_t i = 0; i + 1 < std::min(k, g.size()); ++i) {
      if (g[i] >= g[i + 1]) continue;
      auto better = g;
      std::swap(better[i], better[i + 1]);
      EXPECT_GE(*ev::ndcg_at_k(better, k), *n - kTight);
      EXPECT_GE(ev::err_at_k(better, k), e - kTight);
      break;
    }
  }
}

TEST(Ranking, TiesKeepInputOrderAndAreCounted) {
  const std::vector<double> s = {0.5, 1.0, 0.5, 1.0};
  const auto r = ev::rank_by_scores(s);
  EXPECT_EQ(r.order, (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_EQ(r.ties, 2u);
}

// --- evaluate ------------------------------------------------------------

TEST(Evaluate, OracleScorerIsPerfect) {
  auto rng = nk::Rng::stream(6, "evaluate");
  std::vector<ds::AnnotatedQuery> qs;
  for (int i = 0; i < 50; ++i) {
    auto g = random_grades(rng, 10);
    g[rng.below(10)] = 1 + static_cast<int>(rng.below(4));
    qs.push_back(annotated("q" + std::to_string(i), g));
  }
  const auto rep = ev::evaluate_with(label_scorer(), qs);
  for (std::size_t k : kCuts) EXPECT_NEAR(rep.mean("ndcg", k), 1.0, kTight);
}

TEST(Evaluate, MeansAreMeansOfPerQueryValues) {
  auto rng = nk::Rng::stream(7, "evaluate");
  std::vector<ds::AnnotatedQuery> qs;
  const ds::FrequencyBucket buckets[] = {ds::FrequencyBucket::kHigh, ds::FrequencyBucket::kMid,
                                         ds::FrequencyBucket::kLow};
  for (int i = 0; i < 60; ++i) {
    qs.push_back(annotated("q" + std::to_string(i), random_grades(rng, 10), buckets[i % 3]));
  }
  // Reversed scores give imperfect rankings.
  const ev::Scorer rev = [](const ds::AnnotatedQuery& q) {
    std::vector<double> s;
    for (const auto& d : q.docs) s.push_back(-d.features[0] + 0.01 * d.features[1]);
    return s;
  };
  const auto rep = ev::evaluate_with(rev, qs);
  for (std::size_t ci = 0; ci < 4; ++ci) {
    for (const std::string b : {"all", "high", "mid", "low"}) {
      double sn = 0.0, se = 0.0;
      std::size_t nn = 0, ne = 0;
      for (const auto& m : rep.per_query) {
        if (b != "all" && ds::to_string(m.bucket) != b) continue;
        se += m.err[ci];
        ++ne;
        if (m.ndcg[ci]) {
          sn += *m.ndcg[ci];
          ++nn;
        }
      }
      EXPECT_NEAR(rep.mean("ndcg", kCuts[ci], b), sn / static_cast<double>(nn), kTight);
      EXPECT_NEAR(rep.mean("err", kCuts[ci], b), se / static_cast<double>(ne), kTight);
    }
  }
  EXPECT_THROW(rep.mean("ndcg", 10, "unknown"), std::out_of_range);
}

TEST(Evaluate, CountsAllZeroQueriesAndExcludesThemFromNdcg) {
  std::vector<ds::AnnotatedQuery> qs = {annotated("a", {0, 0, 0}), annotated("b", {0, 2, 1})};
  const auto rep = ev::evaluate_with(label_scorer(), qs);
  EXPECT_EQ(rep.all_zero_queries, 1u);
  EXPECT_NEAR(rep.mean("ndcg", 10), 1.0, kTight);
  EXPECT_NEAR(rep.mean("err", 1), 0.1875 / 2.0, kTight);
}

TEST(Evaluate, InvariantToQueryOrder) {
  auto rng = nk::Rng::stream(8, "evaluate");
  std::vector<ds::AnnotatedQuery> qs;
  for (int i = 0; i < 40; ++i) qs.push_back(annotated("q" + std::to_string(i), random_grades(rng, 10)));
  const auto f = random_ranker(3);
  const auto a = ev::evaluate(f, qs);
  std::reverse(qs.begin(), qs.end());
  const auto b = ev::evaluate(f, qs);
  for (std::size_t k : kCuts) {
    EXPECT_NEAR(a.mean("ndcg", k), b.mean("ndcg", k), kTight);
    EXPECT_NEAR(a.mean("err", k), b.mean("err", k), kTight);
  }
}

TEST(Evaluate, RejectsEmptyInputsAndBadCutoffs) {
  const std::vector<ds::AnnotatedQuery> none;
  EXPECT_THROW(ev::evaluate_with(label_scorer(), none), std::invalid_argument);
  std::vector<ds::AnnotatedQuery> empty_query = {annotated("a", {})};
  EXPECT_THROW(ev::evaluate_with(label_scorer(), empty_query), std::invalid_argument);
  std::vector<ds::AnnotatedQuery> qs = {annotated("a", {1, 0})};
  const std::size_t zero[] = {0};
  EXPECT_THROW(ev::evaluate_with(label_scorer(), qs, zero), std::invalid_argument);
}

TEST(Evaluate, MetricCsvLayout) {
  testutil::TempDir dir;
  std::vector<ds::AnnotatedQuery> qs = {annotated("a", {0, 4})};
  const ev::Scorer flat = [](const ds::AnnotatedQuery& q) {
    return std::vector<double>(q.docs.size(), 0.0);
  };
  const std::size_t k10[] = {10};
  const auto rep = ev::evaluate_with(flat, qs, k10);
  EXPECT_EQ(rep.score_ties, 1u);
  ev::write_metric_csv(dir / "m.csv", rep);
  EXPECT_EQ(testutil::read_file(dir / "m.csv"),
            "metric,k,bucket,mean,n_queries\nndcg,10,all,0.6309297535714575,1\n"
            "ndcg,10,unknown,0.6309297535714575,1\nerr,10,all,0.46875,1\n"
            "err,10,unknown,0.46875,1\n");
}

// --- Monte Carlo unbiasedness ------------------------------------------------

TEST(Unbiasedness, OracleWeightsRecoverFullInformationLoss) {
  ds::WorldConfig wc;
  wc.num_queries = 200;
  wc.bias.lambda_sat = 0.1;
  const auto world = ds::generate_synthetic_world(wc, 81);
  const auto f = random_ranker(82);
  const auto r = ev::unbiasedness_mc(world, wc.bias, f, 10000, 83);
  EXPECT_LT(r.oracle_error(), 0.02);
  EXPECT_GE(r.naive_error(), 5.0 * r.oracle_error());
  EXPECT_EQ(r.error(ev::WeightSource::kOracle), r.oracle_error());
  EXPECT_THROW(r.error(ev::WeightSource::kLearned), std::invalid_argument);
}

TEST(Unbiasedness, ErrorShrinksWithMoreDraws) {
  ds::WorldConfig wc;
  wc.num_queries = 200;
  wc.bias.lambda_sat = 0.1;
  int wins = 0;
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const auto world = ds::generate_synthetic_world(wc, 900 + rep);
    const auto f = random_ranker(950 + rep);
    const double small = ev::unbiasedness_mc_check(world, f, ev::WeightSource::kOracle, 100, rep);
    const double large =
        ev::unbiasedness_mc_check(world, f, ev::WeightSource::kOracle, 10000, rep);
    wins += large < small ? 1 : 0;
  }
  EXPECT_GE(wins, 9);
}

TEST(Unbiasedness, OneDrawIsNeverBetterThanManyOnAverage) {
  ds::WorldConfig wc;
  wc.num_queries = 200;
  wc.bias.lambda_sat = 0.1;
  double one = 0.0, many = 0.0;
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const auto world = ds::generate_synthetic_world(wc, 700 + rep);
    const auto f = random_ranker(750 + rep);
    const double a = ev::unbiasedness_mc_check(world, f, ev::WeightSource::kOracle, 1, rep);
    const double b = ev::unbiasedness_mc_check(world, f, ev::WeightSource::kOracle, 10000, rep);
    EXPECT_LE(b, a) << "repetition " << rep;
    one += a;
    many += b;
  }
  EXPECT_LT(many, one);
}

TEST(Unbiasedness, UniformLearnedWeightsEqualNaive) {
  ds::WorldConfig wc;
  wc.num_queries = 50;
  const auto world = ds::generate_synthetic_world(wc, 84);
  auto p = random_ranker(85);
  pr::init_position_model(p);
  auto rng = nk::Rng::stream(86, "h");
  pr::init_query_model(p, {}, rng);
  for (auto& [name, t] : p) {
    if (name.rfind("h.", 0) == 0) t.fill(0.0);
  }
  ev::LearnedWeights lw;
  lw.params = &p;
  const auto r = ev::unbiasedness_mc(world, wc.bias, p, 200, 87, &lw);
  ASSERT_TRUE(r.learned_estimate);
  EXPECT_NEAR(*r.learned_estimate, r.naive_estimate, 1e-9 * r.naive_estimate);
  EXPECT_THROW(ev::unbiasedness_mc(world, wc.bias, p, 0, 87), std::invalid_argument);
}

// --- analysis exports ------------------------------------------------------

TEST(Pilot, PartitionsSingleClickSessionsByPosition) {
  ds::SessionSet set;
  set.sessions.push_back(session_with_clicks("a", {1}));
  set.sessions.push_back(session_with_clicks("b", {3}));
  set.sessions.push_back(session_with_clicks("c", {1, 2}));
  set.sessions.push_back(session_with_clicks("d", {3}));
  set.sessions.push_back(session_with_clicks("e", {10}));
  const auto p = ev::pilot_partition(set);
  EXPECT_EQ(p.total, 5u);
  EXPECT_EQ(p.single_click, 4u);
  EXPECT_EQ(p.groups[2], (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(p.size(1), 1u);
  EXPECT_EQ(p.size(2), 0u);
  EXPECT_EQ(p.proportion(3), 0.5);
}

TEST(Pilot, PartitionPropertiesOnSimulatedLogs) {
  for (std::uint64_t seed : {90u, 91u, 92u}) {
    ds::WorldConfig wc;
    wc.num_queries = 2000;
    const auto world = ds::generate_synthetic_world(wc, seed);
    const auto sim = ds::simulate_clicks(world, wc.bias, seed + 100);
    const auto p = ev::pilot_partition(sim.sessions);
    std::vector<std::size_t> all;
    double share = 0.0;
    for (std::size_t k = 1; k <= kListSize; ++k) {
      for (std::size_t n : p.groups[k - 1]) {
        ASSERT_EQ(sim.sessions[n].num_clicks(), 1u);
        ASSERT_TRUE(sim.sessions[n].docs[k - 1].clicked);
        all.push_back(n);
      }
      share += p.proportion(k);
    }
    std::size_t singles = 0;
    for (const auto& s : sim.sessions.sessions) singles += s.num_clicks() == 1 ? 1 : 0;
    EXPECT_EQ(all.size(), singles);
    EXPECT_EQ(p.single_click, singles);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(std::adjacent_find(all.begin(), all.end()), all.end());
    EXPECT_NEAR(share, 1.0, kTight);
  }
}

TEST(Pilot, GroupExportWritesOnlyNonemptyGroups) {
  testutil::TempDir dir;
  ds::SessionSet set;
  set.sessions.push_back(session_with_clicks("a", {2}));
  set.sessions.push_back(session_with_clicks("b", {2}));
  set.sessions.push_back(session_with_clicks("c", {7}));
  const auto p = ev::pilot_partition(set);
  const auto written = ev::export_pilot_groups(set, p, dir / "groups");
  ASSERT_EQ(written.size(), 2u);
  EXPECT_EQ(written[0].filename(), "group_2.tsv");
  EXPECT_EQ(ds::load_sessions(written[0]).size(), 2u);
  EXPECT_EQ(ds::load_sessions(written[1]).size(), 1u);
  ev::write_pilot_csv(dir / "pilot.csv", p);
  const auto csv = testutil::read_file(dir / "pilot.csv");
  EXPECT_NE(csv.find("2,2,0.6666666666666666\n"), std::string::npos) << csv;
}

TEST(DmpExport, RoundTripsWithFallbackColumn) {
  testutil::TempDir dir;
  auto t = pr::DmpTable::uniform();
  auto rng = nk::Rng::stream(93, "dmp");
  for (std::size_t i = 0; i < 6; ++i) {
    double z = 0.0;
    for (double& v : t.rows[i]) z += (v = rng.uniform(0.01, 1.0));
    for (double& v : t.rows[i]) v /= z;
    t.counts[i] = 3 + i;
  }
  ev::export_dmp_distributions(t, dir / "d.csv");
  const auto back = ev::read_dmp_distributions(dir / "d.csv");
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.counts, t.counts);
  const auto text = testutil::read_file(dir / "d.csv");
  EXPECT_NE(text.find("\n1,3,0,"), std::string::npos);
  EXPECT_NE(text.find("\n10,0,1,"), std::string::npos);
}

TEST(DmpExport, RejectsMissingSequences) {
  testutil::TempDir dir;
  testutil::write_file(dir / "d.csv",
                       "sequence,count,fallback,p1,p2,p3,p4,p5,p6,p7,p8,p9,p10\n"
                       "1,1,0,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1\n");
  EXPECT_THROW(ev::read_dmp_distributions(dir / "d.csv"), ds::ParseError);
}

TEST(ClickWeights, UniformModelsGiveUnitWeights) {
  nk::ParamSet p;
  pr::init_position_model(p);
  auto rng = nk::Rng::stream(94, "h");
  pr::init_query_model(p, {}, rng);
  for (auto& [name, t] : p) {
    if (name.rfind("h.", 0) == 0) t.fill(0.0);
  }
  for (const auto& r : ev::click_weights(p, pr::DmpTable::uniform(), 0.1, 10.0)) {
    EXPECT_NEAR(r.g_ratio, 1.0, kTight);
    EXPECT_NEAR(r.query_weight, 1.0, kTight);
    EXPECT_NEAR(r.dualipw_weight, 1.0, kTight);
  }
}

TEST(ClickWeights, FirstRowIsThePositionRatioAndAllArePositive) {
  for (std::uint64_t seed = 95; seed < 105; ++seed) {
    nk::ParamSet p;
    pr::init_position_model(p);
    auto rng = nk::Rng::stream(seed, "h");
    pr::init_query_model(p, {}, rng);
    for (double& v : p.at(pr::kPositionLogits).data()) v = rng.normal(0.0, 0.5);
    const auto rows = ev::click_weights(p, pr::DmpTable::uniform(), 0.1, 10.0);
    EXPECT_NEAR(rows[0].query_weight, 1.0, kTight);
    EXPECT_EQ(rows[0].dualipw_weight, rows[0].g_ratio);
    for (const auto& r : rows) {
      EXPECT_TRUE(std::isfinite(r.dualipw_weight));
      EXPECT_GT(r.dualipw_weight, 0.0);
      EXPECT_NEAR(r.g_ratio, pr::position_weight_ratio(p.at(pr::kPositionLogits), r.position, 10.0),
                  kTight);
    }
  }
}
