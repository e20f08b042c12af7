#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dualipw::dataset {

inline constexpr std::size_t kListSize = 10;
inline constexpr std::size_t kNumFeatures = 14;

using FeatureVector = std::array<double, kNumFeatures>;
using ClickBits = std::array<std::uint8_t, kListSize>;

enum class FrequencyBucket { kHigh, kMid, kLow, kUnknown };

inline std::string_view to_string(FrequencyBucket b) {
  switch (b) {
    case FrequencyBucket::kHigh: return "high";
    case FrequencyBucket::kMid: return "mid";
    case FrequencyBucket::kLow: return "low";
    case FrequencyBucket::kUnknown: return "unknown";
  }
  return "unknown";
}

inline bool parse_bucket(std::string_view s, FrequencyBucket& out) {
  if (s == "high") out = FrequencyBucket::kHigh;
  else if (s == "mid") out = FrequencyBucket::kMid;
  else if (s == "low") out = FrequencyBucket::kLow;
  else if (s == "unknown") out = FrequencyBucket::kUnknown;
  else return false;
  return true;
}

struct Document {
  FeatureVector features{};
  int position = 0;  // 1-based
  bool clicked = false;

  friend bool operator==(const Document&, const Document&) = default;
};

/// One logged query: documents in display order with their clicks.
struct QuerySession {
  std::string query_id;
  std::vector<Document> docs;
  FrequencyBucket bucket = FrequencyBucket::kUnknown;

  // Click bit per position 1..10; positions without a document are 0.
  ClickBits clicks() const {
    ClickBits bits{};
    for (const Document& d : docs) {
      if (d.position >= 1 && d.position <= static_cast<int>(kListSize) && d.clicked) {
        bits[d.position - 1] = 1;
      }
    }
    return bits;
  }

  std::size_t num_clicks() const {
    std::size_t n = 0;
    for (const Document& d : docs) n += d.clicked ? 1 : 0;
    return n;
  }

  friend bool operator==(const QuerySession&, const QuerySession&) = default;
};

struct Provenance {
  enum class Kind { kLoaded, kSimulated };
  Kind kind = Kind::kLoaded;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string source;
};

struct SessionSet {
  std::vector<QuerySession> sessions;
  Provenance provenance;

  std::size_t size() const { return sessions.size(); }
  bool empty() const { return sessions.empty(); }
  const QuerySession& operator[](std::size_t i) const { return sessions[i]; }
};

struct AnnotatedDoc {
  std::string doc_id;
  FeatureVector features{};
  int label = 0;  // 0..4
};

struct AnnotatedQuery {
  std::string query_id;
  std::vector<AnnotatedDoc> docs;
  FrequencyBucket bucket = FrequencyBucket::kUnknown;
};

/// Ground truth retained next to each simulated session.
struct OracleRecord {
  std::string query_id;
  double p_cq = 0.0;
  bool cq_draw = false;
  std::array<double, kListSize> observe{};    // p(o_k = 1)
  std::array<double, kListSize> relevance{};  // p(r_d = 1), by position

  friend bool operator==(const OracleRecord&, const OracleRecord&) = default;
};

struct FilterReport {
  SessionSet kept;
  std::size_t removed_short = 0;     // fewer than 10 results
  std::size_t removed_no_click = 0;  // no click in the top 10
};

/// Keeps sessions with exactly positions 1..10 and at least one click.
inline FilterReport filter_sessions(const SessionSet& in) {
  FilterReport report;
  report.kept.provenance = in.provenance;
  for (const QuerySession& s : in.sessions) {
    bool full = s.docs.size() == kListSize;
    for (std::size_t i = 0; full && i < kListSize; ++i) {
      full = s.docs[i].position == static_cast<int>(i + 1);
    }
    if (!full) {
      ++report.removed_short;
    } else if (s.num_clicks() == 0) {
      ++report.removed_no_click;
    } else {
      report.kept.sessions.push_back(s);
    }
  }
  return report;
}

}  // namespace dualipw::dataset
