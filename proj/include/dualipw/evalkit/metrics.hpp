#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace dualipw::evalkit {

inline constexpr int kMaxGrade = 4;

inline double gain(int grade) { return std::ldexp(1.0, grade) - 1.0; }

inline double dcg_at_k(std::span<const int> ranked, std::size_t k) {
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r) {
    dcg += gain(ranked[r]) / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg;
}

/// nDCG@k with gain 2^g - 1 and 1/log2(rank + 1) discount; the ideal DCG
/// is taken over every candidate in `ranked`. Empty when all grades are 0.
inline std::optional<double> ndcg_at_k(std::span<const int> ranked, std::size_t k) {
  if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
  std::vector<int> ideal(ranked.begin(), ranked.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg <= 0.0) return std::nullopt;
  return dcg_at_k(ranked, k) / idcg;
}

/// ERR@k with R = (2^g - 1) / 2^4.
inline double err_at_k(std::span<const int> ranked, std::size_t k) {
  if (k < 1) throw std::invalid_argument("err_at_k: k must be >= 1");
  double err = 0.0;
  double not_stopped = 1.0;
  const double denom = std::ldexp(1.0, kMaxGrade);
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double rel = gain(ranked[r]) / denom;
    err += not_stopped * rel / static_cast<double>(r + 1);
    not_stopped *= 1.0 - rel;
  }
  return err;
}

struct Ranking {
  std::vector<std::size_t> order;  // candidate indices, best first
  std::size_t ties = 0;            // adjacent equal-score pairs
};

// Scores descending; equal scores keep input order.
inline Ranking rank_by_scores(std::span<const double> scores) {
  Ranking r;
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 1; i < r.order.size(); ++i) {
    if (scores[r.order[i]] == scores[r.order[i - 1]]) ++r.ties;
  }
  return r;
}

inline std::vector<int> ranked_labels(std::span<const double> scores, std::span<const int> labels,
                                      std::size_t* ties = nullptr) {
  const Ranking r = rank_by_scores(scores);
  if (ties) *ties += r.ties;
  std::vector<int> out;
  out.reserve(labels.size());
  for (std::size_t i : r.order) out.push_back(labels[i]);
  return out;
}

}  // namespace dualipw::evalkit
