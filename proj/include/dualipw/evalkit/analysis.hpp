#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"
#include "dualipw/numkit/checkpoint.hpp"
#include "dualipw/numkit/tensor.hpp"
#include "dualipw/propensity/dmp.hpp"
#include "dualipw/propensity/position_model.hpp"
#include "dualipw/propensity/query_model.hpp"

namespace dualipw::evalkit {

using dataset::kListSize;

/// Single-click sessions grouped by the position of their click.
struct PilotPartition {
  std::array<std::vector<std::size_t>, kListSize> groups;  // session indices
  std::size_t single_click = 0;
  std::size_t total = 0;

  std::size_t size(std::size_t position) const { return groups[position - 1].size(); }
  double proportion(std::size_t position) const {
    return single_click ? static_cast<double>(size(position)) / static_cast<double>(single_click)
                        : 0.0;
  }
};

inline PilotPartition pilot_partition(const dataset::SessionSet& sessions) {
  PilotPartition p;
  p.total = sessions.size();
  for (std::size_t n = 0; n < sessions.size(); ++n) {
    const std::size_t pos = propensity::ClickSequence(sessions[n].clicks()).single_position();
    if (pos == 0) continue;
    p.groups[pos - 1].push_back(n);
    ++p.single_click;
  }
  return p;
}

/// position,count,proportion
inline void write_pilot_csv(const std::filesystem::path& path, const PilotPartition& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "position,count,proportion\n";
  for (std::size_t k = 1; k <= kListSize; ++k) {
    os << k << ',' << p.size(k) << ',' << dataset::format_double(p.proportion(k)) << '\n';
  }
}

/// One session TSV per nonempty group: <dir>/group_<k>.tsv.
inline std::vector<std::filesystem::path> export_pilot_groups(const dataset::SessionSet& sessions,
                                                              const PilotPartition& p,
                                                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 1; k <= kListSize; ++k) {
    if (p.groups[k - 1].empty()) continue;
    dataset::SessionSet group;
    group.provenance = sessions.provenance;
    for (std::size_t n : p.groups[k - 1]) group.sessions.push_back(sessions[n]);
    const auto path = dir / ("group_" + std::to_string(k) + ".tsv");
    dataset::write_sessions(path, group);
    written.push_back(path);
  }
  return written;
}

// sequence,count,fallback,p1..p10 in sequence order.
inline void export_dmp_distributions(const propensity::DmpTable& dmp,
                                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "sequence,count,fallback";
  for (std::size_t j = 1; j <= kListSize; ++j) os << ",p" << j;
  os << '\n';
  for (std::size_t i = 0; i < kListSize; ++i) {
    os << i + 1 << ',' << dmp.counts[i] << ',' << (dmp.fallback(i) ? 1 : 0);
    for (double v : dmp.rows[i]) os << ',' << numkit::format_double17(v);
    os << '\n';
  }
}

inline propensity::DmpTable read_dmp_distributions(const std::filesystem::path& path) {
  dataset::detail::LineReader r(path);
  std::string line;
  if (!r.next(line)) r.fail("empty distribution file");
  propensity::DmpTable t;
  std::array<bool, kListSize> seen{};
  while (r.next(line)) {
    const auto cols = dataset::detail::split(line, ',');
    if (cols.size() != 3 + kListSize) r.fail("expected 13 columns");
    int seq = 0, count = 0;
    if (!dataset::detail::parse_int(cols[0], seq) || seq < 1 || seq > 10) {
      r.fail("sequence outside 1..10");
    }
    if (!dataset::detail::parse_int(cols[1], count) || count < 0) r.fail("bad count");
    t.counts[seq - 1] = static_cast<std::size_t>(count);
    for (std::size_t j = 0; j < kListSize; ++j) {
      if (!dataset::detail::parse_double(cols[3 + j], t.rows[seq - 1][j])) {
        r.fail("non-numeric probability");
      }
    }
    seen[seq - 1] = true;
  }
  for (bool s : seen) {
    if (!s) r.fail("distribution file must contain all 10 sequences");
  }
  return t;
}

struct ClickWeightRow {
  std::size_t position = 0;
  double g_ratio = 0.0;
  double query_weight = 0.0;  // cp_{cs^1} / cp_{cs^k}
  double dualipw_weight = 0.0;
};

inline std::array<ClickWeightRow, kListSize> click_weights(const numkit::ParamSet& params,
                                                           const propensity::DmpTable& dmp,
                                                           double tau, double w_max) {
  const auto& logits = params.at(propensity::kPositionLogits);
  const auto cp = propensity::qcp_forward(params, dmp, tau);
  std::array<ClickWeightRow, kListSize> out{};
  for (std::size_t k = 1; k <= kListSize; ++k) {
    ClickWeightRow& row = out[k - 1];
    row.position = k;
    row.g_ratio = propensity::position_weight_ratio(logits, k, w_max);
    row.query_weight = cp[0] / cp[k - 1];
    row.dualipw_weight = row.query_weight * row.g_ratio;
  }
  return out;
}

/// position,dla_weight,query_weight,dualipw_weight
inline void export_click_weights(const numkit::ParamSet& params, const propensity::DmpTable& dmp,
                                 double tau, double w_max, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "position,dla_weight,query_weight,dualipw_weight\n";
  for (const ClickWeightRow& r : click_weights(params, dmp, tau, w_max)) {
    os << r.position << ',' << numkit::format_double17(r.g_ratio) << ','
       << numkit::format_double17(r.query_weight) << ','
       << numkit::format_double17(r.dualipw_weight) << '\n';
  }
}

/// i,cp_i
inline void export_cp_vector(const propensity::Row& cp, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "i,cp\n";
  for (std::size_t i = 0; i < kListSize; ++i) {
    os << i + 1 << ',' << numkit::format_double17(cp[i]) << '\n';
  }
}

}  // namespace dualipw::evalkit
