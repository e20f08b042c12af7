#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/session.hpp"

namespace dualipw::propensity {

using dataset::kListSize;
using Row = std::array<double, kListSize>;
using Scores = std::array<double, kListSize>;

/// Binary click vector over the ten positions.
class ClickSequence {
 public:
  ClickSequence() = default;
  explicit ClickSequence(const dataset::ClickBits& bits) : bits_(bits) {}

  // cs^i: a single click at 1-based position i.
  static ClickSequence single(std::size_t position) {
    if (position < 1 || position > kListSize) {
      throw std::out_of_range("click position outside 1..10");
    }
    dataset::ClickBits bits{};
    bits[position - 1] = 1;
    return ClickSequence(bits);
  }

  const dataset::ClickBits& bits() const { return bits_; }
  bool clicked(std::size_t position) const { return bits_[position - 1] != 0; }

  std::vector<std::size_t> clicked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < kListSize; ++k) {
      if (bits_[k]) out.push_back(k + 1);
    }
    return out;
  }

  std::size_t count() const { return clicked_positions().size(); }

  // 1-based position when exactly one click, else 0.
  std::size_t single_position() const {
    const auto pos = clicked_positions();
    return pos.size() == 1 ? pos[0] : 0;
  }

 private:
  dataset::ClickBits bits_{};
};

/// Distribution of the maximal-score position for each single-click
/// sequence. Row i (0-based here, cs^{i+1}) is a probability vector over
/// positions. Rows with no contributing session hold the uniform vector.
struct DmpTable {
  std::array<Row, kListSize> rows{};
  std::array<std::size_t, kListSize> counts{};
  std::size_t ties = 0;  // sessions whose argmax was not unique

  bool fallback(std::size_t row) const { return counts[row] == 0; }

  static DmpTable uniform() {
    DmpTable t;
    for (Row& r : t.rows) r.fill(1.0 / static_cast<double>(kListSize));
    return t;
  }
};

// Lowest position wins ties.
inline std::size_t argmax_position(const Scores& s, bool* tied = nullptr) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < kListSize; ++j) {
    if (s[j] > s[best]) best = j;
  }
  if (tied) {
    *tied = false;
    for (std::size_t j = 0; j < kListSize; ++j) {
      if (j != best && s[j] == s[best]) *tied = true;
    }
  }
  return best;
}

/// `scores[n]` are surrogate relevance scores for session n by position.
/// Only single-click sessions contribute.
inline DmpTable compute_dmp(const dataset::SessionSet& sessions, std::span<const Scores> scores) {
  if (scores.size() != sessions.size()) {
    throw std::invalid_argument("compute_dmp: one score vector per session required");
  }
  DmpTable table;
  std::array<std::array<std::size_t, kListSize>, kListSize> hits{};
  for (std::size_t n = 0; n < sessions.size(); ++n) {
    const ClickSequence cs(sessions[n].clicks());
    const std::size_t pos = cs.single_position();
    if (pos == 0) continue;
    bool tied = false;
    const std::size_t j = argmax_position(scores[n], &tied);
    ++hits[pos - 1][j];
    ++table.counts[pos - 1];
    if (tied) ++table.ties;
  }
  for (std::size_t i = 0; i < kListSize; ++i) {
    if (table.counts[i] == 0) {
      table.rows[i].fill(1.0 / static_cast<double>(kListSize));
      continue;
    }
    const double total = static_cast<double>(table.counts[i]);
    for (std::size_t j = 0; j < kListSize; ++j) {
      table.rows[i][j] = static_cast<double>(hits[i][j]) / total;
    }
  }
  return table;
}

// CSV: sequence,count,p1..p10 (sequence is 1-based).
inline void write_dmp_csv(const std::filesystem::path& path, const DmpTable& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  os << "sequence,count";
  for (std::size_t j = 1; j <= kListSize; ++j) os << ",p" << j;
  os << '\n';
  for (std::size_t i = 0; i < kListSize; ++i) {
    os << i + 1 << ',' << t.counts[i];
    for (double v : t.rows[i]) os << ',' << dataset::format_double(v);
    os << '\n';
  }
}

inline DmpTable read_dmp_csv(const std::filesystem::path& path) {
  dataset::detail::LineReader r(path);
  std::string line;
  if (!r.next(line)) r.fail("empty D_mp file");
  DmpTable t;
  std::array<bool, kListSize> seen{};
  while (r.next(line)) {
    const auto cols = dataset::detail::split(line, ',');
    if (cols.size() != 2 + kListSize) r.fail("expected 12 columns");
    int seq = 0;
    if (!dataset::detail::parse_int(cols[0], seq) || seq < 1 || seq > 10) {
      r.fail("sequence outside 1..10");
    }
    double count = 0;
    if (!dataset::detail::parse_double(cols[1], count) || count < 0) r.fail("bad count");
    t.counts[seq - 1] = static_cast<std::size_t>(count);
    for (std::size_t j = 0; j < kListSize; ++j) {
      if (!dataset::detail::parse_double(cols[2 + j], t.rows[seq - 1][j])) {
        r.fail("non-numeric probability");
      }
    }
    seen[seq - 1] = true;
  }
  for (bool s : seen) {
    if (!s) r.fail("D_mp file must contain all 10 sequences");
  }
  return t;
}

}  // namespace dualipw::propensity
