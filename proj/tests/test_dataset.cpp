#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string>

#include "dualipw/dataset/batching.hpp"
#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/dataset/synthetic.hpp"
#include "test_util.hpp"

namespace ds = dualipw::dataset;
using ds::kListSize;

namespace {

ds::QuerySession make_session(const std::string& id, std::initializer_list<int> clicked,
                              double base = 0.0) {
  ds::QuerySession s;
  s.query_id = id;
  s.bucket = ds::FrequencyBucket::kMid;
  for (std::size_t k = 0; k < kListSize; ++k) {
    ds::Document d;
    d.position = static_cast<int>(k + 1);
    for (std::size_t j = 0; j < ds::kNumFeatures; ++j) {
      d.features[j] = base + 0.1 * static_cast<double>(k) - 0.37 * static_cast<double>(j);
    }
    d.clicked = std::find(clicked.begin(), clicked.end(), static_cast<int>(k + 1)) != clicked.end();
    s.docs.push_back(d);
  }
  return s;
}

std::string feature_field(std::size_t n) {
  std::string s;
  for (std::size_t j = 0; j < n; ++j) s += (j ? " " : "") + std::to_string(0.5 * j);
  return s;
}

ds::WorldConfig small_world(std::size_t n) {
  ds::WorldConfig c;
  c.num_queries = n;
  return c;
}

}  // namespace

TEST(LoadSessions, WriteThenReadRoundTrip) {
  testutil::TempDir dir;
  ds::SessionSet set;
  set.sessions.push_back(make_session("a", {1, 4}, 1.0 / 3.0));
  set.sessions.push_back(make_session("b", {10}, -2e-300));
  ds::write_sessions(dir / "s.tsv", set);
  const auto back = ds::load_sessions(dir / "s.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.sessions, set.sessions);
}

TEST(LoadSessions, EmptyFileWarns) {
  testutil::TempDir dir;
  testutil::write_file(dir / "e.tsv", "");
  ds::Diagnostics diag;
  const auto set = ds::load_sessions(dir / "e.tsv", diag);
  EXPECT_TRUE(set.empty());
  EXPECT_EQ(diag.warnings.size(), 1u);
}

TEST(LoadSessions, ThirteenFeaturesNamesLine) {
  testutil::TempDir dir;
  testutil::write_file(dir / "bad.tsv", "q\t1\t0\t" + feature_field(14) + "\thigh\n" +
                                            "q\t2\t1\t" + feature_field(13) + "\thigh\n");
  try {
    ds::load_sessions(dir / "bad.tsv");
    FAIL() << "expected ParseError";
  } catch (const ds::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadSessions, ContractErrors) {
  testutil::TempDir dir;
  const std::string f = feature_field(14);
  for (const std::string& line : std::vector<std::string>{"q\t11\t0\t" + f + "\thigh\n", "q\t1\t2\t" + f + "\thigh\n",
                                  "q\t1\t0\t" + f + "\tsometimes\n", "q\t1\t0\t" + f + "\n",
                                  std::string("q\t1\t0\t1 2 x 4 5 6 7 8 9 10 11 12 13 14\tlow\n")}) {
    testutil::write_file(dir / "bad.tsv", line);
    EXPECT_THROW(ds::load_sessions(dir / "bad.tsv"), ds::ParseError) << line;
  }
  testutil::write_file(dir / "order.tsv", "q\t2\t0\t" + f + "\tlow\nq\t1\t0\t" + f + "\tlow\n");
  EXPECT_THROW(ds::load_sessions(dir / "order.tsv"), ds::ParseError);
  EXPECT_THROW(ds::load_sessions(dir / "missing.tsv"), ds::IoError);
}

TEST(FilterSessions, RemovesClicklessAndShort) {
  ds::SessionSet set;
  set.sessions.push_back(make_session("none", {}));
  set.sessions.push_back(make_session("third", {3}));
  auto short_session = make_session("short", {1});
  short_session.docs.pop_back();
  set.sessions.push_back(short_session);
  const auto r = ds::filter_sessions(set);
  ASSERT_EQ(r.kept.size(), 1u);
  EXPECT_EQ(r.kept[0].query_id, "third");
  EXPECT_EQ(r.removed_no_click, 1u);
  EXPECT_EQ(r.removed_short, 1u);
}

TEST(FilterSessions, AllClickedIsIdentity) {
  ds::SessionSet set;
  for (int i = 0; i < 5; ++i) set.sessions.push_back(make_session("q" + std::to_string(i), {i + 1}));
  EXPECT_EQ(ds::filter_sessions(set).kept.sessions, set.sessions);
}

// Pure selection: survivors appear unchanged and in input order.
TEST(FilterSessions, PropertySurvivorsUnchanged) {
  auto rng = dualipw::numkit::Rng::stream(8, "filter-prop");
  for (int trial = 0; trial < 100; ++trial) {
    ds::SessionSet set;
    const std::size_t n = rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = make_session("q" + std::to_string(i), {}, rng.normal());
      for (auto& d : s.docs) d.clicked = rng.bernoulli(0.08);
      if (rng.bernoulli(0.1)) s.docs.resize(rng.below(kListSize));
      set.sessions.push_back(s);
    }
    const auto r = ds::filter_sessions(set);
    EXPECT_EQ(r.kept.size() + r.removed_short + r.removed_no_click, n);
    std::size_t j = 0;
    for (const auto& s : set.sessions) {
      if (j < r.kept.size() && r.kept[j].query_id == s.query_id) {
        EXPECT_EQ(r.kept[j], s);
        EXPECT_GE(s.num_clicks(), 1u);
        ++j;
      }
    }
    EXPECT_EQ(j, r.kept.size());
  }
}

TEST(Annotations, GradesAndDefaults) {
  testutil::TempDir dir;
  const std::string f = feature_field(14);
  testutil::write_file(dir / "a.tsv", "q1\td1\t0\t" + f + "\thigh\nq1\td2\t4\t" + f +
                                          "\thigh\nq2\td1\t2\t" + f + "\n");
  const auto qs = ds::load_annotations(dir / "a.tsv");
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].docs[0].label, 0);
  EXPECT_EQ(qs[0].docs[1].label, 4);
  EXPECT_EQ(qs[0].bucket, ds::FrequencyBucket::kHigh);
  EXPECT_EQ(qs[1].bucket, ds::FrequencyBucket::kUnknown);
}

TEST(Annotations, ContractErrors) {
  testutil::TempDir dir;
  const std::string f = feature_field(14);
  testutil::write_file(dir / "dup.tsv", "q\td\t1\t" + f + "\nq\td\t2\t" + f + "\n");
  EXPECT_THROW(ds::load_annotations(dir / "dup.tsv"), ds::ParseError);
  testutil::write_file(dir / "label.tsv", "q\td\t5\t" + f + "\n");
  EXPECT_THROW(ds::load_annotations(dir / "label.tsv"), ds::ParseError);
}

TEST(Oracle, SidecarRoundTripIsLossless) {
  testutil::TempDir dir;
  const auto world = ds::generate_synthetic_world(small_world(50), 3);
  const auto sim = ds::simulate_clicks(world, world.config.bias, 4);
  ds::write_oracle(dir / "o.tsv", sim.oracle);
  EXPECT_EQ(ds::load_oracle(dir / "o.tsv"), sim.oracle);
}

TEST(Synthetic, SameConfigAndSeedSameWorld) {
  const auto a = ds::generate_synthetic_world(small_world(100), 9);
  const auto b = ds::generate_synthetic_world(small_world(100), 9);
  ASSERT_EQ(a.queries.size(), b.queries.size());
  for (std::size_t q = 0; q < a.queries.size(); ++q) {
    EXPECT_EQ(a.queries[q].features, b.queries[q].features);
    EXPECT_EQ(a.queries[q].relevance, b.queries[q].relevance);
    EXPECT_EQ(a.queries[q].click_propensity, b.queries[q].click_propensity);
  }
  const auto c = ds::generate_synthetic_world(small_world(100), 10);
  EXPECT_NE(a.queries[0].relevance, c.queries[0].relevance);
}

TEST(Synthetic, InvalidConfigRejected) {
  auto c = small_world(10);
  c.logging_strength = 1.5;
  EXPECT_THROW(ds::generate_synthetic_world(c, 1), std::invalid_argument);
  c = small_world(0);
  EXPECT_THROW(ds::generate_synthetic_world(c, 1), std::invalid_argument);
  c = small_world(10);
  c.bias.eta = -1.0;
  EXPECT_THROW(ds::generate_synthetic_world(c, 1), std::invalid_argument);
}

TEST(Synthetic, OracleInvariants) {
  const auto world = ds::generate_synthetic_world(small_world(500), 2);
  for (std::size_t k = 1; k < kListSize; ++k) {
    EXPECT_LE(world.position_bias[k], world.position_bias[k - 1]);
  }
  std::set<std::string> ids;
  for (const auto& q : world.queries) {
    EXPECT_TRUE(ids.insert(q.query_id).second);
    EXPECT_GE(q.click_propensity, 0.0);
    EXPECT_LE(q.click_propensity, 1.0);
    for (double r : q.relevance) {
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(Synthetic, BucketsFollowPopularityRank) {
  const auto world = ds::generate_synthetic_world(small_world(1000), 5);
  std::array<std::size_t, 3> n{};
  for (const auto& q : world.queries) ++n[static_cast<std::size_t>(q.bucket)];
  EXPECT_EQ(n[0], 100u);
  EXPECT_EQ(n[1], 300u);
  EXPECT_EQ(n[2], 600u);
}

// Position of the most relevant document under a random logging policy:
// chi-square against uniform, 9 degrees of freedom, p > 0.01.
TEST(Synthetic, ZeroLoggingStrengthIsUniformPermutation) {
  auto c = small_world(10000);
  c.logging_strength = 0.0;
  const auto world = ds::generate_synthetic_world(c, 12);
  std::array<double, kListSize> counts{};
  for (const auto& q : world.queries) {
    const auto it = std::max_element(q.relevance.begin(), q.relevance.end());
    counts[static_cast<std::size_t>(it - q.relevance.begin())] += 1.0;
  }
  double chi2 = 0.0;
  for (double o : counts) chi2 += (o - 1000.0) * (o - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 21.665994333461924);
}

TEST(Synthetic, FullStrengthNoNoiseSortsByRelevance) {
  auto c = small_world(300);
  c.logging_strength = 1.0;
  c.logging_noise = 0.0;
  const auto world = ds::generate_synthetic_world(c, 6);
  for (const auto& q : world.queries) {
    EXPECT_TRUE(std::is_sorted(q.relevance.rbegin(), q.relevance.rend()));
  }
}

TEST(Simulate, ZeroQueryPropensityLeavesNothing) {
  auto c = small_world(500);
  c.bias.lambda_sat = 0.0;
  const auto world = ds::generate_synthetic_world(c, 1);
  const auto sim = ds::simulate_clicks(world, c.bias, 2);
  EXPECT_EQ(sim.sessions.size(), 0u);
  EXPECT_EQ(sim.removed_no_click, 500u);
}

TEST(Simulate, DegenerateUpperBoundClicksEverything) {
  auto c = small_world(200);
  c.relevance_mean = 1000.0;
  c.query_spread = 0.0;
  c.doc_spread = 0.0;
  c.bias.eta = 0.0;
  c.bias.lambda_sat = 1000.0;
  const auto world = ds::generate_synthetic_world(c, 1);
  const auto sim = ds::simulate_clicks(world, c.bias, 2);
  ASSERT_EQ(sim.sessions.size(), 200u);
  for (const auto& s : sim.sessions.sessions) EXPECT_EQ(s.num_clicks(), kListSize);
}

TEST(Simulate, SidecarIndexAligned) {
  const auto world = ds::generate_synthetic_world(small_world(2000), 7);
  const auto sim = ds::simulate_clicks(world, world.config.bias, 8);
  ASSERT_EQ(sim.sessions.size(), sim.oracle.size());
  EXPECT_EQ(sim.sessions.provenance.kind, ds::Provenance::Kind::kSimulated);
  for (std::size_t n = 0; n < sim.sessions.size(); ++n) {
    EXPECT_EQ(sim.sessions[n].query_id, sim.oracle[n].query_id);
    EXPECT_TRUE(sim.oracle[n].cq_draw);
  }
}

TEST(Simulate, Deterministic) {
  const auto world = ds::generate_synthetic_world(small_world(500), 7);
  const auto a = ds::simulate_clicks(world, world.config.bias, 8);
  const auto b = ds::simulate_clicks(world, world.config.bias, 8);
  EXPECT_EQ(a.sessions.sessions, b.sessions.sessions);
  EXPECT_EQ(a.oracle, b.oracle);
}

// Per-position CTR over 10^5 simulated sessions against the oracle
// expectation, the per-query mean of p(o_k) p(r_k) p(c_q). Relevance and
// c_q are correlated, so the mean of the product is the exact target. The
// tolerance is four binomial standard errors.
TEST(Simulate, PositionCtrMatchesOracleExpectation) {
  const auto world = ds::generate_synthetic_world(small_world(100000), 21);
  const auto sim = ds::simulate_clicks(world, world.config.bias, 22);
  std::array<double, kListSize> clicks{}, expected{};
  for (const auto& s : sim.sessions.sessions) {
    for (std::size_t k = 0; k < kListSize; ++k) clicks[k] += s.docs[k].clicked ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(world.queries.size());
  for (const auto& q : world.queries) {
    for (std::size_t k = 0; k < kListSize; ++k) {
      expected[k] += world.position_bias[k] * q.relevance[k] * q.click_propensity / n;
    }
  }
  for (std::size_t k = 0; k < kListSize; ++k) {
    const double se = std::sqrt(expected[k] * (1.0 - expected[k]) / n);
    EXPECT_NEAR(clicks[k] / n, expected[k], 4.0 * se) << "position " << k + 1;
  }
}

// Given c_q = 1 the model is a plain position-based model: the CTR ratio of
// positions i and j approaches (j/i)^eta times the mean-relevance ratio.
TEST(Simulate, ConditionedOnQueryClickIsPositionBased) {
  auto c = small_world(100000);
  c.bias.lambda_sat = 1000.0;  // c_q = 1 almost surely
  const auto world = ds::generate_synthetic_world(c, 31);
  const auto sim = ds::simulate_clicks(world, c.bias, 32);
  std::array<double, kListSize> clicks{}, rel{};
  for (const auto& s : sim.sessions.sessions) {
    for (std::size_t k = 0; k < kListSize; ++k) clicks[k] += s.docs[k].clicked ? 1.0 : 0.0;
  }
  for (const auto& q : world.queries) {
    for (std::size_t k = 0; k < kListSize; ++k) rel[k] += q.relevance[k];
  }
  for (std::size_t i : {0u, 1u, 2u}) {
    for (std::size_t j : {4u, 9u}) {
      const double want = static_cast<double>(j + 1) / static_cast<double>(i + 1) * rel[i] / rel[j];
      EXPECT_NEAR(clicks[i] / clicks[j] / want, 1.0, 0.05) << i + 1 << " vs " << j + 1;
    }
  }
}

TEST(Annotate, EqualWidthGrades) {
  EXPECT_EQ(ds::relevance_grade(0.0), 0);
  EXPECT_EQ(ds::relevance_grade(0.19999), 0);
  EXPECT_EQ(ds::relevance_grade(0.2), 1);
  EXPECT_EQ(ds::relevance_grade(0.65), 3);
  EXPECT_EQ(ds::relevance_grade(0.8), 4);
  EXPECT_EQ(ds::relevance_grade(1.0), 4);
}

TEST(BatchIter, SizesThirtyThirtyFive) {
  ds::SessionSet set;
  for (int i = 0; i < 65; ++i) set.sessions.push_back(make_session(std::to_string(i), {1}));
  const auto batches = ds::batch_iter(set, 30, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 30u);
  EXPECT_EQ(batches[1].size(), 30u);
  EXPECT_EQ(batches[2].size(), 5u);
}

TEST(BatchIter, SameSeedSameComposition) {
  ds::SessionSet set;
  for (int i = 0; i < 65; ++i) set.sessions.push_back(make_session(std::to_string(i), {1}));
  EXPECT_EQ(ds::batch_iter(set, 30, 4), ds::batch_iter(set, 30, 4));
  EXPECT_NE(ds::batch_iter(set, 30, 4), ds::batch_iter(set, 30, 5));
}

TEST(BatchIter, PropertyPartitionOfInput) {
  auto rng = dualipw::numkit::Rng::stream(2, "batch-prop");
  for (int trial = 0; trial < 50; ++trial) {
    ds::SessionSet set;
    const std::size_t n = rng.below(100);
    for (std::size_t i = 0; i < n; ++i) set.sessions.push_back(make_session(std::to_string(i), {1}));
    const std::size_t bs = 1 + rng.below(40);
    std::multiset<const ds::QuerySession*> seen;
    for (const auto& b : ds::batch_iter(set, bs, rng.next_u64())) {
      EXPECT_GE(b.size(), 1u);
      EXPECT_LE(b.size(), bs);
      seen.insert(b.begin(), b.end());
    }
    ASSERT_EQ(seen.size(), n);
    for (const auto& s : set.sessions) EXPECT_EQ(seen.count(&s), 1u);
  }
  EXPECT_THROW(ds::batch_iter(ds::SessionSet{}, 0, 1), std::invalid_argument);
}
