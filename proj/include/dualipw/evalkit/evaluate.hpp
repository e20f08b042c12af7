#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/evalkit/metrics.hpp"
#include "dualipw/numkit/tensor.hpp"
#include "dualipw/training/ranking_model.hpp"

namespace dualipw::evalkit {

using dataset::AnnotatedQuery;
using dataset::FrequencyBucket;

inline const std::vector<std::size_t> kDefaultCutoffs = {1, 3, 5, 10};

struct QueryMetrics {
  std::string query_id;
  FrequencyBucket bucket = FrequencyBucket::kUnknown;
  std::vector<std::optional<double>> ndcg;  // per cutoff; empty if all labels are 0
  std::vector<double> err;
};

struct MetricCell {
  std::string metric;  // "ndcg" | "err"
  std::size_t k = 0;
  std::string bucket;  // "all" | bucket name
  double mean = 0.0;
  std::size_t n_queries = 0;
};

struct MetricReport {
  std::vector<std::size_t> cutoffs;
  std::vector<QueryMetrics> per_query;
  std::vector<MetricCell> cells;
  std::size_t all_zero_queries = 0;
  std::size_t score_ties = 0;
  std::uint64_t seed = 0;
  std::string method;
  std::uint64_t config_hash = 0;

  double mean(const std::string& metric, std::size_t k, const std::string& bucket = "all") const {
    for (const MetricCell& c : cells) {
      if (c.metric == metric && c.k == k && c.bucket == bucket) return c.mean;
    }
    throw std::out_of_range("no metric " + metric + "@" + std::to_string(k) + " for " + bucket);
  }
};

using Scorer = std::function<std::vector<double>(const AnnotatedQuery&)>;

/// Scores, ranks and aggregates. Means are summed in input (query) order.
inline MetricReport evaluate_with(const Scorer& scorer, std::span<const AnnotatedQuery> queries,
                                  std::span<const std::size_t> cutoffs = kDefaultCutoffs) {
  if (queries.empty()) throw std::invalid_argument("evaluate: empty annotated set");
  MetricReport rep;
  rep.cutoffs.assign(cutoffs.begin(), cutoffs.end());
  for (const AnnotatedQuery& q : queries) {
    if (q.docs.empty()) throw std::invalid_argument("query " + q.query_id + " has no candidates");
    const std::vector<double> scores = scorer(q);
    std::vector<int> labels;
    for (const auto& d : q.docs) labels.push_back(d.label);
    const auto ranked = ranked_labels(scores, labels, &rep.score_ties);
    QueryMetrics m{q.query_id, q.bucket, {}, {}};
    for (std::size_t k : cutoffs) {
      m.ndcg.push_back(ndcg_at_k(ranked, k));
      m.err.push_back(err_at_k(ranked, k));
    }
    if (!m.ndcg.empty() && !m.ndcg.front()) ++rep.all_zero_queries;
    rep.per_query.push_back(std::move(m));
  }

  const std::vector<std::string> buckets = {"all", "high", "mid", "low", "unknown"};
  for (const char* metric : {"ndcg", "err"}) {
    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      for (const std::string& b : buckets) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const QueryMetrics& m : rep.per_query) {
          if (b != "all" && dataset::to_string(m.bucket) != b) continue;
          if (std::string(metric) == "ndcg") {
            if (!m.ndcg[ci]) continue;
            sum += *m.ndcg[ci];
          } else {
            sum += m.err[ci];
          }
          ++n;
        }
        if (n == 0 && b != "all") continue;
        rep.cells.push_back({metric, cutoffs[ci], b, n ? sum / static_cast<double>(n) : 0.0, n});
      }
    }
  }
  return rep;
}

inline MetricReport evaluate(const numkit::ParamSet& ranking_params,
                             std::span<const AnnotatedQuery> queries,
                             std::span<const std::size_t> cutoffs = kDefaultCutoffs) {
  auto scorer = [&](const AnnotatedQuery& q) {
    std::vector<dataset::FeatureVector> rows;
    for (const auto& d : q.docs) rows.push_back(d.features);
    return training::score_features(ranking_params, rows);
  };
  return evaluate_with(scorer, queries, cutoffs);
}

// Mean nDCG@10 over queries with a non-zero label; used for model selection.
inline double validation_ndcg10(const numkit::ParamSet& ranking_params,
                                std::span<const AnnotatedQuery> queries) {
  const std::size_t k10[] = {10};
  return evaluate(ranking_params, queries, k10).mean("ndcg", 10);
}

/// metric,k,bucket,mean,n_queries
inline void write_metric_csv(const std::filesystem::path& path, const MetricReport& rep) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "metric,k,bucket,mean,n_queries\n";
  for (const MetricCell& c : rep.cells) {
    os << c.metric << ',' << c.k << ',' << c.bucket << ',' << dataset::format_double(c.mean)
       << ',' << c.n_queries << '\n';
  }
}

/// query_id,bucket,metric,k,value (nDCG rows omitted for all-zero queries)
inline void write_per_query_csv(const std::filesystem::path& path, const MetricReport& rep) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "query_id,bucket,metric,k,value\n";
  for (const QueryMetrics& m : rep.per_query) {
    for (std::size_t ci = 0; ci < rep.cutoffs.size(); ++ci) {
      if (m.ndcg[ci]) {
        os << m.query_id << ',' << dataset::to_string(m.bucket) << ",ndcg," << rep.cutoffs[ci]
           << ',' << dataset::format_double(*m.ndcg[ci]) << '\n';
      }
      os << m.query_id << ',' << dataset::to_string(m.bucket) << ",err," << rep.cutoffs[ci] << ','
         << dataset::format_double(m.err[ci]) << '\n';
    }
  }
}

}  // namespace dualipw::evalkit
