#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/rng.hpp"

namespace dualipw::dataset {

/// Click-bias parameters of the simulator:
///   p(o_k = 1)  = (1/k)^eta
///   p(c_q = 1)  = 1 - exp(-lambda_sat * sum_d p(r_d = 1))
struct BiasConfig {
  double eta = 1.0;
  double lambda_sat = 0.35;
};

/// Relevance of document d in query q is p(r_d) = sigmoid(z_d) with
/// z_d = mu_q + doc_spread * N(0,1) and mu_q = relevance_mean +
/// query_spread * N(0,1). Each document also carries a nuisance factor
/// u_d ~ N(0,1) that does not affect relevance. Feature j is
/// loading_j * z_d + nuisance_loading_j * u_d + feature_noise * N(0,1); the
/// loadings are fixed by `feature_seed` so that worlds drawn with different
/// seeds share one feature/relevance relation. The logging policy sorts by
/// z_d + logging_noise * (sqrt(a) u_d + sqrt(1-a) N(0,1)) with
/// a = logging_nuisance, so its errors are partly visible in the features.
struct WorldConfig {
  std::size_t num_queries = 1000;
  std::size_t docs_per_query = kListSize;
  double relevance_mean = -2.5;
  double query_spread = 1.0;
  double doc_spread = 1.5;
  double feature_noise = 3.0;
  double logging_strength = 0.8;  // P(logged order sorts by noisy relevance)
  double logging_noise = 2.0;     // sd of noise on z for that sort
  double logging_nuisance = 1.0;  // share of that noise variance carried by u
  double zipf_exponent = 1.0;
  std::uint64_t feature_seed = 20240601;
  std::string id_prefix = "q";
  BiasConfig bias;

  void validate() const {
    auto bad = [](const std::string& what) {
      throw std::invalid_argument("invalid world config: " + what);
    };
    if (num_queries == 0) bad("num_queries must be >= 1");
    if (docs_per_query != kListSize) bad("docs_per_query must be 10");
    if (!(logging_strength >= 0.0 && logging_strength <= 1.0)) {
      bad("logging_strength must be in [0,1]");
    }
    if (!(query_spread >= 0.0) || !(doc_spread >= 0.0)) bad("spreads must be >= 0");
    if (!(feature_noise >= 0.0) || !(logging_noise >= 0.0)) bad("noise must be >= 0");
    if (!(logging_nuisance >= 0.0 && logging_nuisance <= 1.0)) {
      bad("logging_nuisance must be in [0,1]");
    }
    if (!std::isfinite(relevance_mean)) bad("relevance_mean must be finite");
    if (!(zipf_exponent >= 0.0)) bad("zipf_exponent must be >= 0");
    if (!(bias.eta >= 0.0) || !(bias.lambda_sat >= 0.0)) bad("eta, lambda_sat must be >= 0");
  }
};

struct SyntheticQuery {
  std::string query_id;
  std::array<FeatureVector, kListSize> features{};  // logged order
  std::array<double, kListSize> relevance{};        // p(r=1), logged order
  double sampling_weight = 0.0;
  FrequencyBucket bucket = FrequencyBucket::kUnknown;
  double click_propensity = 0.0;  // oracle p(c_q=1) under config.bias
};

struct SyntheticWorld {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::array<double, kListSize> position_bias{};  // oracle p(o_k=1) under config.bias
  std::vector<SyntheticQuery> queries;
};

inline std::array<double, kListSize> position_bias(const BiasConfig& bias) {
  std::array<double, kListSize> p{};
  for (std::size_t k = 0; k < kListSize; ++k) {
    p[k] = std::pow(1.0 / static_cast<double>(k + 1), bias.eta);
  }
  return p;
}

inline double query_click_propensity(const BiasConfig& bias,
                                     const std::array<double, kListSize>& relevance) {
  double total = 0.0;
  for (double r : relevance) total += r;
  return -std::expm1(-bias.lambda_sat * total);
}

struct FeatureLoadings {
  std::array<double, kNumFeatures> relevance{};
  std::array<double, kNumFeatures> nuisance{};
};

inline FeatureLoadings feature_loadings(std::uint64_t feature_seed) {
  auto rng = numkit::Rng::stream(feature_seed, "feature-loadings");
  FeatureLoadings w;
  for (double& v : w.relevance) v = rng.uniform(0.2, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  for (double& v : w.nuisance) v = rng.uniform(0.2, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  return w;
}

inline std::uint64_t config_hash(const WorldConfig& c) {
  std::uint64_t h = numkit::hash_tag(c.id_prefix);
  auto mix = [&h](double v) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof v);
    std::uint64_t s = h ^ bits;
    h = numkit::splitmix64(s);
  };
  for (double v : {static_cast<double>(c.num_queries), c.relevance_mean, c.query_spread,
                   c.doc_spread, c.feature_noise, c.logging_strength, c.logging_noise, c.logging_nuisance,
                   c.zipf_exponent, static_cast<double>(c.feature_seed), c.bias.eta,
                   c.bias.lambda_sat}) {
    mix(v);
  }
  return h;
}

inline std::string query_name(const std::string& prefix, std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return prefix + digits;
}

/// Deterministic in (config, seed). Each query draws from its own
/// sub-stream, so the result does not depend on generation order.
inline SyntheticWorld generate_synthetic_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  SyntheticWorld world;
  world.config = config;
  world.seed = seed;
  world.position_bias = position_bias(config.bias);
  const auto loadings = feature_loadings(config.feature_seed);
  const std::size_t n = config.num_queries;
  world.queries.resize(n);

  for (std::size_t q = 0; q < n; ++q) {
    auto rng = numkit::Rng::stream(seed, "world", q);
    SyntheticQuery& sq = world.queries[q];
    sq.query_id = query_name(config.id_prefix, q);
    const double mu = config.relevance_mean + config.query_spread * rng.normal();
    std::array<double, kListSize> z{}, u{};
    for (double& v : z) v = mu + config.doc_spread * rng.normal();
    for (double& v : u) v = rng.normal();

    std::array<std::size_t, kListSize> order{};
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (rng.uniform() < config.logging_strength) {
      std::array<double, kListSize> key{};
      for (std::size_t d = 0; d < kListSize; ++d) {
        const double a = config.logging_nuisance;
        key[d] = z[d] + config.logging_noise * (std::sqrt(a) * u[d] + std::sqrt(1.0 - a) * rng.normal());
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
    } else {
      rng.shuffle(std::span<std::size_t>(order));
    }
    for (std::size_t k = 0; k < kListSize; ++k) {
      const double zd = z[order[k]];
      const double ud = u[order[k]];
      sq.relevance[k] = 1.0 / (1.0 + std::exp(-zd));
      for (std::size_t j = 0; j < kNumFeatures; ++j) {
        sq.features[k][j] = loadings.relevance[j] * zd + loadings.nuisance[j] * ud +
                            config.feature_noise * rng.normal();
      }
    }
    sq.click_propensity = query_click_propensity(config.bias, sq.relevance);
  }

  // Zipf sampling weights over a random popularity ranking; buckets by rank.
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  auto zipf_rng = numkit::Rng::stream(seed, "zipf");
  zipf_rng.shuffle(std::span<std::size_t>(rank));
  for (std::size_t q = 0; q < n; ++q) {
    const double r = static_cast<double>(rank[q] + 1);
    world.queries[q].sampling_weight = std::pow(r, -config.zipf_exponent);
    const double frac = static_cast<double>(rank[q]) / static_cast<double>(n);
    world.queries[q].bucket = frac < 0.1   ? FrequencyBucket::kHigh
                              : frac < 0.4 ? FrequencyBucket::kMid
                                           : FrequencyBucket::kLow;
  }
  return world;
}

struct SimulationResult {
  SessionSet sessions;               // after filter_sessions
  std::vector<OracleRecord> oracle;  // index-aligned with sessions
  std::size_t simulated = 0;         // sessions before filtering
  std::size_t removed_no_click = 0;
};

/// One session per query, clicks drawn under the dual click hypothesis:
/// c_q ~ Bernoulli(p(c_q)); if c_q = 1, c_k ~ Bernoulli(p(o_k) p(r_k)).
inline SimulationResult simulate_clicks(const SyntheticWorld& world, const BiasConfig& bias,
                                        std::uint64_t seed) {
  const auto observe = position_bias(bias);
  SessionSet raw;
  raw.provenance.kind = Provenance::Kind::kSimulated;
  raw.provenance.seed = seed;
  WorldConfig hashed = world.config;
  hashed.bias = bias;
  raw.provenance.config_hash = config_hash(hashed);
  std::vector<OracleRecord> records;
  raw.sessions.reserve(world.queries.size());
  records.reserve(world.queries.size());

  for (std::size_t q = 0; q < world.queries.size(); ++q) {
    const SyntheticQuery& sq = world.queries[q];
    auto rng = numkit::Rng::stream(seed, "clicks", q);
    OracleRecord rec;
    rec.query_id = sq.query_id;
    rec.p_cq = query_click_propensity(bias, sq.relevance);
    rec.cq_draw = rng.bernoulli(rec.p_cq);
    rec.observe = observe;
    rec.relevance = sq.relevance;

    QuerySession s;
    s.query_id = sq.query_id;
    s.bucket = sq.bucket;
    s.docs.resize(kListSize);
    for (std::size_t k = 0; k < kListSize; ++k) {
      Document& d = s.docs[k];
      d.features = sq.features[k];
      d.position = static_cast<int>(k + 1);
      // Always consume the draw so streams line up regardless of c_q.
      const bool hit = rng.bernoulli(observe[k] * sq.relevance[k]);
      d.clicked = rec.cq_draw && hit;
    }
    raw.sessions.push_back(std::move(s));
    records.push_back(std::move(rec));
  }

  SimulationResult result;
  result.simulated = raw.sessions.size();
  FilterReport filtered = filter_sessions(raw);
  result.removed_no_click = filtered.removed_no_click;
  result.sessions = std::move(filtered.kept);
  std::size_t j = 0;
  for (const QuerySession& s : result.sessions.sessions) {
    while (records[j].query_id != s.query_id) ++j;
    result.oracle.push_back(records[j]);
  }
  return result;
}

inline int relevance_grade(double p) {
  return std::clamp(static_cast<int>(std::floor(p * 5.0)), 0, 4);
}

/// Human-annotation stand-in: grades are p(r) cut into five equal bins.
inline std::vector<AnnotatedQuery> annotate_world(const SyntheticWorld& world) {
  std::vector<AnnotatedQuery> out;
  out.reserve(world.queries.size());
  for (const SyntheticQuery& sq : world.queries) {
    AnnotatedQuery aq;
    aq.query_id = sq.query_id;
    aq.bucket = sq.bucket;
    for (std::size_t k = 0; k < kListSize; ++k) {
      aq.docs.push_back(
          AnnotatedDoc{"d" + std::to_string(k), sq.features[k], relevance_grade(sq.relevance[k])});
    }
    out.push_back(std::move(aq));
  }
  return out;
}

}  // namespace dualipw::dataset
