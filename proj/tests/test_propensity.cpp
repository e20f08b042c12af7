#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dualipw/numkit/autodiff.hpp"
#include "dualipw/numkit/rng.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"
#include "test_util.hpp"

namespace ds = dualipw::dataset;
namespace nk = dualipw::numkit;
namespace pr = dualipw::propensity;
using pr::ClickSequence;
using pr::DmpTable;
using pr::kListSize;
using pr::Row;
using pr::Scores;

namespace {

ds::QuerySession session_with_clicks(std::initializer_list<std::size_t> positions) {
  ds::QuerySession s;
  s.query_id = "q";
  for (std::size_t k = 1; k <= kListSize; ++k) {
    ds::Document d;
    d.position = static_cast<int>(k);
    d.clicked = std::find(positions.begin(), positions.end(), k) != positions.end();
    s.docs.push_back(d);
  }
  return s;
}

Scores peak_at(std::size_t position) {
  Scores s{};
  s.fill(0.0);
  s[position - 1] = 1.0;
  return s;
}

ClickSequence from_mask(unsigned mask) {
  ds::ClickBits bits{};
  for (std::size_t k = 0; k < kListSize; ++k) bits[k] = (mask >> k) & 1u;
  return ClickSequence(bits);
}

DmpTable random_dmp(nk::Rng& rng) {
  DmpTable t;
  for (std::size_t i = 0; i < kListSize; ++i) {
    double z = 0.0;
    for (double& v : t.rows[i]) z += (v = rng.uniform(0.01, 1.0));
    for (double& v : t.rows[i]) v /= z;
    t.counts[i] = 1;
  }
  return t;
}

nk::ParamSet random_h(nk::Rng& rng, std::size_t hidden = 8, std::size_t layers = 1) {
  nk::ParamSet p;
  pr::init_query_model(p, pr::QueryModelConfig{hidden, layers, 0.1}, rng);
  return p;
}

}  // namespace

TEST(ComputeDmp, AllArgmaxAtFirstPosition) {
  ds::SessionSet set;
  std::vector<Scores> scores;
  for (int n = 0; n < 4; ++n) {
    set.sessions.push_back(session_with_clicks({1}));
    scores.push_back(peak_at(1));
  }
  const auto t = pr::compute_dmp(set, scores);
  EXPECT_EQ(t.rows[0][0], 1.0);
  for (std::size_t j = 1; j < kListSize; ++j) EXPECT_EQ(t.rows[0][j], 0.0);
  EXPECT_EQ(t.counts[0], 4u);
}

TEST(ComputeDmp, TwoSessionsSplitEvenly) {
  ds::SessionSet set;
  set.sessions.push_back(session_with_clicks({2}));
  set.sessions.push_back(session_with_clicks({2}));
  const std::vector<Scores> scores{peak_at(1), peak_at(3)};
  const auto t = pr::compute_dmp(set, scores);
  const Row want{0.5, 0, 0.5, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(t.rows[1], want);
}

TEST(ComputeDmp, EmptyRowFallsBackToUniform) {
  ds::SessionSet set;
  set.sessions.push_back(session_with_clicks({2}));
  const auto t = pr::compute_dmp(set, std::vector<Scores>{peak_at(4)});
  EXPECT_TRUE(t.fallback(6));
  for (double v : t.rows[6]) EXPECT_EQ(v, 0.1);
  EXPECT_FALSE(t.fallback(1));
}

TEST(ComputeDmp, MultiClickSessionsIgnoredAndTiesCounted) {
  ds::SessionSet set;
  set.sessions.push_back(session_with_clicks({1, 2}));
  set.sessions.push_back(session_with_clicks({5}));
  Scores flat{};
  flat.fill(0.25);
  const auto t = pr::compute_dmp(set, std::vector<Scores>{peak_at(9), flat});
  EXPECT_EQ(t.counts[0] + t.counts[1], 0u);
  EXPECT_EQ(t.ties, 1u);
  EXPECT_EQ(t.rows[4][0], 1.0);  // ties go to the lowest position
}

TEST(ComputeDmp, PropertyRowsAreDistributionsAndOrderInvariant) {
  auto rng = nk::Rng::stream(1, "dmp-prop");
  for (int trial = 0; trial < 100; ++trial) {
    ds::SessionSet set;
    std::vector<Scores> scores;
    const std::size_t n = rng.below(60);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = session_with_clicks({});
      const std::size_t clicks = 1 + rng.below(2);
      for (std::size_t c = 0; c < clicks; ++c) s.docs[rng.below(kListSize)].clicked = true;
      set.sessions.push_back(s);
      Scores sc{};
      for (double& v : sc) v = static_cast<double>(rng.below(4));  // frequent ties
      scores.push_back(sc);
    }
    const auto t = pr::compute_dmp(set, scores);
    for (std::size_t i = 0; i < kListSize; ++i) {
      double sum = 0.0;
      for (double v : t.rows[i]) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    ds::SessionSet shuffled;
    std::vector<Scores> shuffled_scores;
    for (std::size_t i : perm) {
      shuffled.sessions.push_back(set.sessions[i]);
      shuffled_scores.push_back(scores[i]);
    }
    const auto u = pr::compute_dmp(shuffled, shuffled_scores);
    EXPECT_EQ(t.rows, u.rows);
    EXPECT_EQ(t.counts, u.counts);
    EXPECT_EQ(t.ties, u.ties);
  }
}

TEST(DmpCsv, RoundTrip) {
  testutil::TempDir dir;
  auto rng = nk::Rng(3);
  auto t = random_dmp(rng);
  t.counts[4] = 0;
  pr::write_dmp_csv(dir / "dmp.csv", t);
  const auto back = pr::read_dmp_csv(dir / "dmp.csv");
  EXPECT_EQ(back.rows, t.rows);
  EXPECT_EQ(back.counts, t.counts);
  testutil::write_file(dir / "short.csv", "sequence,count\n1,2,0.5\n");
  EXPECT_THROW(pr::read_dmp_csv(dir / "short.csv"), ds::ParseError);
}

TEST(Smoothing, NearZeroTemperatureIsHard) {
  const Row s = pr::smooth_click_sequence(ClickSequence::single(1), 1e-6);
  EXPECT_NEAR(s[0], 1.0, 1e-9);
  for (std::size_t k = 1; k < kListSize; ++k) EXPECT_NEAR(s[k], 0.0, 1e-9);
}

TEST(Smoothing, UnitTemperature) {
  const Row s = pr::smooth_click_sequence(ClickSequence::single(1), 1.0);
  EXPECT_NEAR(s[0], 0.23196931668407395, 1e-15);
  for (std::size_t k = 1; k < kListSize; ++k) EXPECT_NEAR(s[k], 0.08533674259065846, 1e-15);
}

TEST(Smoothing, HugeTemperatureIsUniform) {
  for (double v : pr::smooth_click_sequence(ClickSequence::single(4), 1e6)) {
    EXPECT_NEAR(v, 0.1, 1e-4);
  }
  EXPECT_THROW(pr::smooth_click_sequence(ClickSequence::single(4), 0.0), std::invalid_argument);
}

TEST(LogRatio, EqualDistributionsGiveZeros) {
  const Row cs = pr::smooth_click_sequence(ClickSequence::single(2), 0.5);
  for (double v : pr::log_ratio_features(cs, cs)) EXPECT_EQ(v, 0.0);
}

TEST(LogRatio, HardSequenceAgainstHalfHalf) {
  const Row hard{1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  const Row dmp{0.5, 0.5, 0, 0, 0, 0, 0, 0, 0, 0};
  const Row t = pr::log_ratio_features(hard, dmp);
  EXPECT_NEAR(t[0], 0.6931471805599453, 1e-15);
  for (std::size_t k = 1; k < kListSize; ++k) EXPECT_EQ(t[k], 0.0);
}

TEST(LogRatio, FloorKeepsZeroDmpFinite) {
  const Row cs = pr::smooth_click_sequence(ClickSequence::single(3), 0.1);
  Row dmp{};
  dmp[0] = 1.0;
  for (double v : pr::log_ratio_features(cs, dmp)) EXPECT_TRUE(std::isfinite(v));
}

TEST(LogRatio, PropertySumIsKlDivergence) {
  auto rng = nk::Rng::stream(2, "kl-prop");
  for (int trial = 0; trial < 200; ++trial) {
    Row p{}, q{};
    double zp = 0.0, zq = 0.0;
    for (std::size_t k = 0; k < kListSize; ++k) {
      zp += (p[k] = rng.uniform(0.001, 1.0));
      zq += (q[k] = rng.uniform(0.001, 1.0));
    }
    double kl = 0.0;
    for (std::size_t k = 0; k < kListSize; ++k) {
      p[k] /= zp;
      q[k] /= zq;
    }
    for (std::size_t k = 0; k < kListSize; ++k) kl += p[k] * std::log(p[k] / q[k]);
    const Row t = pr::log_ratio_features(p, q);
    EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), kl, 1e-12);
  }
}

TEST(Qcp, ProbabilityVector) {
  auto rng = nk::Rng(5);
  const auto cp = pr::qcp_forward(random_h(rng), random_dmp(rng), 0.1);
  double s = 0.0;
  for (double v : cp) {
    EXPECT_GT(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Qcp, ZeroParametersGiveUniform) {
  auto rng = nk::Rng(6);
  auto p = random_h(rng);
  for (auto& [name, t] : p) t.fill(0.0);
  for (double v : pr::qcp_forward(p, random_dmp(rng), 0.1)) EXPECT_NEAR(v, 0.1, 1e-15);
}

// Equal outputs for two sequences need equal t-sequences, not equal D_mp
// rows. Row j is built so that t(cs^j) reproduces t(cs^i) exactly in value.
TEST(Qcp, EqualOutputsRequireEqualFeatureSequences) {
  const double tau = 1.0;
  const std::size_t i = 2, j = 6;  // 0-based rows
  auto rng = nk::Rng(7);
  const auto params = random_h(rng);

  DmpTable same = DmpTable::uniform();
  const auto cp_same_rows = pr::qcp_forward(params, same, tau);
  EXPECT_GT(std::abs(cp_same_rows[i] - cp_same_rows[j]), 1e-9);

  DmpTable built = random_dmp(rng);
  const Row si = pr::smooth_click_sequence(ClickSequence::single(i + 1), tau);
  const Row ti = pr::log_ratio_features(si, built.rows[i]);
  const double hi = si[i], lo = si[j];
  Row rj = built.rows[i];
  rj[i] = lo * std::exp(-ti[i] / lo);
  rj[j] = hi * std::exp(-ti[j] / hi);
  built.rows[j] = rj;
  const Row tj = pr::log_ratio_features(pr::smooth_click_sequence(ClickSequence::single(j + 1), tau), rj);
  for (std::size_t k = 0; k < kListSize; ++k) ASSERT_NEAR(ti[k], tj[k], 1e-14);
  const auto cp = pr::qcp_forward(params, built, tau);
  EXPECT_NEAR(cp[i], cp[j], 1e-12);
}

TEST(Qcp, PropertyCalibrationSumsToOne) {
  auto rng = nk::Rng::stream(8, "calibration-prop");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t hidden = std::array<std::size_t, 3>{4, 8, 16}[rng.below(3)];
    auto params = random_h(rng, hidden, 1 + rng.below(2));
    for (auto& [name, t] : params) {
      for (double& v : t.data()) v *= rng.uniform(0.5, 20.0);
    }
    const double tau = rng.uniform(0.01, 5.0);
    const auto cp = pr::qcp_forward(params, random_dmp(rng), tau);
    EXPECT_NEAR(std::accumulate(cp.begin(), cp.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Qcp, GradientMatchesFiniteDifferences) {
  auto rng = nk::Rng::stream(9, "qcp-grad");
  for (std::size_t hidden : {4u, 8u, 16u}) {
    for (std::size_t layers : {1u, 2u}) {
      const auto params = random_h(rng, hidden, layers);
      const auto dmp = random_dmp(rng);
      nk::Tensor probe(nk::Shape{1, kListSize});
      for (double& v : probe.data()) v = rng.normal();
      const auto res = nk::finite_diff_check(
          [&](nk::Graph& g, const nk::ParamSet& p) {
            return g.sum(g.mul(g.log(pr::qcp_forward(g, p, dmp, 0.1)), g.constant(probe)));
          },
          params);
      EXPECT_LT(res.max_rel_error, 1e-4) << hidden << "x" << layers << " " << res.worst_param;
    }
  }
}

TEST(QueryPropensity, Examples) {
  Row cp{0.2, 0.05, 0.3, 0.1, 0.05, 0.05, 0.05, 0.1, 0.05, 0.05};
  EXPECT_EQ(pr::query_propensity(ClickSequence::single(3), cp), cp[2]);
  EXPECT_NEAR(pr::query_propensity(from_mask(0b1001), cp), 0.15, 1e-15);
  EXPECT_NEAR(pr::query_propensity(from_mask(0x3FF), cp), 0.1, 1e-15);
  EXPECT_THROW(pr::query_propensity(from_mask(0), cp), std::invalid_argument);
}

// Every nonzero sequence against a brute-force average over its set bits,
// through both the scalar path and the batched averaging matrix.
TEST(QueryPropensity, AllSequencesMatchBruteForceMean) {
  auto rng = nk::Rng(10);
  Row cp{};
  double z = 0.0;
  for (double& v : cp) z += (v = rng.uniform(0.01, 1.0));
  for (double& v : cp) v /= z;
  std::vector<ClickSequence> seqs;
  for (unsigned mask = 1; mask < 1024; ++mask) seqs.push_back(from_mask(mask));
  const nk::Tensor avg = pr::click_averaging_matrix(seqs);
  for (unsigned mask = 1; mask < 1024; ++mask) {
    double total = 0.0;
    int bits = 0;
    for (std::size_t k = 0; k < kListSize; ++k) {
      if (mask & (1u << k)) {
        total += cp[k];
        ++bits;
      }
    }
    const double oracle = total / bits;
    EXPECT_EQ(pr::query_propensity(seqs[mask - 1], cp), oracle) << mask;
    double batched = 0.0;
    for (std::size_t k = 0; k < kListSize; ++k) batched += avg(mask - 1, k) * cp[k];
    EXPECT_NEAR(batched, oracle, 1e-15) << mask;
    const auto [lo, hi] = std::minmax_element(cp.begin(), cp.end());
    EXPECT_GE(oracle, *lo);
    EXPECT_LE(oracle, *hi);
  }
}

TEST(QueryPropensity, PropertyWithinClickedRange) {
  auto rng = nk::Rng::stream(11, "eq7-prop");
  for (int trial = 0; trial < 1000; ++trial) {
    Row cp{};
    for (double& v : cp) v = rng.uniform(0.0, 1.0);
    const auto cs = from_mask(1 + static_cast<unsigned>(rng.below(1023)));
    double lo = 1.0, hi = 0.0;
    for (std::size_t p : cs.clicked_positions()) {
      lo = std::min(lo, cp[p - 1]);
      hi = std::max(hi, cp[p - 1]);
    }
    const double v = pr::query_propensity(cs, cp);
    EXPECT_GE(v, lo);
    EXPECT_LE(v, hi);
  }
}

TEST(PositionWeight, Examples) {
  nk::Tensor logits(nk::Shape{kListSize});
  for (std::size_t k = 1; k <= kListSize; ++k) EXPECT_EQ(pr::position_weight_ratio(logits, k, 10.0), 1.0);
  logits[0] = 1.0;
  EXPECT_NEAR(pr::position_weight_ratio(logits, 5, 10.0), 2.718281828459045, 1e-15);
  logits[0] = 10.0;
  EXPECT_EQ(pr::position_weight_ratio(logits, 5, 10.0), 10.0);
  EXPECT_THROW(pr::position_weight_ratio(logits, 11, 10.0), std::out_of_range);
}
