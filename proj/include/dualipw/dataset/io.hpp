#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualipw/dataset/session.hpp"

namespace dualipw::dataset {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Diagnostics {
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos
                                                                 : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline bool parse_int(std::string_view s, int& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

struct LineReader {
  std::ifstream in;
  std::string file;
  std::size_t lineno = 0;

  explicit LineReader(const std::filesystem::path& path)
      : in(path, std::ios::binary), file(path.string()) {
    if (!in) throw IoError("cannot open " + file);
  }

  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(file, lineno, what); }
};

template <std::size_t N>
std::array<double, N> parse_vector(const LineReader& r, std::string_view field,
                                   const char* what) {
  const auto parts = split_ws(field);
  if (parts.size() != N) {
    r.fail(std::string("expected ") + std::to_string(N) + " " + what + ", got " +
           std::to_string(parts.size()));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!parse_double(parts[i], out[i])) {
      r.fail(std::string("non-numeric ") + what + " '" + std::string(parts[i]) + "'");
    }
    if (!std::isfinite(out[i])) r.fail(std::string("non-finite ") + what);
  }
  return out;
}

}  // namespace detail

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string join_doubles(std::span<const double> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ' ';
    s += format_double(values[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Session TSV: query_id \t position \t click \t f1..f14 \t bucket

inline SessionSet load_sessions(const std::filesystem::path& path, Diagnostics& diag) {
  detail::LineReader r(path);
  SessionSet set;
  set.provenance.kind = Provenance::Kind::kLoaded;
  set.provenance.source = path.string();
  std::string line;
  while (r.next(line)) {
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 5) {
      r.fail("expected 5 tab-separated columns, got " + std::to_string(cols.size()));
    }
    Document doc;
    if (!detail::parse_int(cols[1], doc.position) || doc.position < 1 ||
        doc.position > static_cast<int>(kListSize)) {
      r.fail("position '" + std::string(cols[1]) + "' outside 1..10");
    }
    if (cols[2] != "0" && cols[2] != "1") r.fail("click must be 0 or 1");
    doc.clicked = cols[2] == "1";
    doc.features = detail::parse_vector<kNumFeatures>(r, cols[3], "features");
    FrequencyBucket bucket;
    if (!parse_bucket(cols[4], bucket)) r.fail("unknown bucket '" + std::string(cols[4]) + "'");

    const bool continues = !set.sessions.empty() &&
                           set.sessions.back().query_id == cols[0] &&
                           set.sessions.back().docs.back().position < doc.position;
    if (!set.sessions.empty() && set.sessions.back().query_id == cols[0] && !continues) {
      r.fail("positions not ascending within session " + std::string(cols[0]));
    }
    if (!continues) {
      QuerySession s;
      s.query_id = std::string(cols[0]);
      s.bucket = bucket;
      set.sessions.push_back(std::move(s));
    }
    set.sessions.back().docs.push_back(doc);
  }
  if (set.sessions.empty()) diag.warnings.push_back(r.file + ": no sessions");
  return set;
}

inline SessionSet load_sessions(const std::filesystem::path& path) {
  Diagnostics diag;
  SessionSet s = load_sessions(path, diag);
  for (const auto& w : diag.warnings) std::clog << "warning: " << w << '\n';
  return s;
}

inline void write_sessions(std::ostream& os, const SessionSet& set) {
  for (const QuerySession& s : set.sessions) {
    for (const Document& d : s.docs) {
      os << s.query_id << '\t' << d.position << '\t' << (d.clicked ? 1 : 0) << '\t'
         << join_doubles(d.features) << '\t' << to_string(s.bucket) << '\n';
    }
  }
}

inline void write_sessions(const std::filesystem::path& path, const SessionSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_sessions(os, set);
}

// ---------------------------------------------------------------------------
// Annotation TSV: query_id \t doc_id \t label \t f1..f14 [\t bucket]

inline std::vector<AnnotatedQuery> load_annotations(const std::filesystem::path& path) {
  detail::LineReader r(path);
  std::vector<AnnotatedQuery> queries;
  std::map<std::string, std::size_t, std::less<>> index;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  while (r.next(line)) {
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 4 && cols.size() != 5) {
      r.fail("expected 4 or 5 tab-separated columns, got " + std::to_string(cols.size()));
    }
    AnnotatedDoc doc;
    doc.doc_id = std::string(cols[1]);
    if (!detail::parse_int(cols[2], doc.label) || doc.label < 0 || doc.label > 4) {
      r.fail("label '" + std::string(cols[2]) + "' outside 0..4");
    }
    doc.features = detail::parse_vector<kNumFeatures>(r, cols[3], "features");
    FrequencyBucket bucket = FrequencyBucket::kUnknown;
    if (cols.size() == 5 && !parse_bucket(cols[4], bucket)) {
      r.fail("unknown bucket '" + std::string(cols[4]) + "'");
    }
    const std::string qid(cols[0]);
    if (!seen.emplace(qid, doc.doc_id).second) {
      r.fail("duplicate row for query " + qid + " doc " + doc.doc_id);
    }
    auto it = index.find(qid);
    if (it == index.end()) {
      it = index.emplace(qid, queries.size()).first;
      queries.push_back(AnnotatedQuery{qid, {}, bucket});
    }
    queries[it->second].docs.push_back(std::move(doc));
  }
  return queries;
}

inline void write_annotations(const std::filesystem::path& path,
                              std::span<const AnnotatedQuery> queries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const AnnotatedQuery& q : queries) {
    for (const AnnotatedDoc& d : q.docs) {
      os << q.query_id << '\t' << d.doc_id << '\t' << d.label << '\t'
         << join_doubles(d.features) << '\t' << to_string(q.bucket) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Oracle sidecar: query_id \t p_cq \t cq_draw \t o1..o10 \t r1..r10

inline std::vector<OracleRecord> load_oracle(const std::filesystem::path& path) {
  detail::LineReader r(path);
  std::vector<OracleRecord> out;
  std::string line;
  while (r.next(line)) {
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 5) r.fail("expected 5 tab-separated columns");
    OracleRecord rec;
    rec.query_id = std::string(cols[0]);
    if (!detail::parse_double(cols[1], rec.p_cq)) r.fail("non-numeric p_cq");
    if (cols[2] != "0" && cols[2] != "1") r.fail("cq_draw must be 0 or 1");
    rec.cq_draw = cols[2] == "1";
    rec.observe = detail::parse_vector<kListSize>(r, cols[3], "observation propensities");
    rec.relevance = detail::parse_vector<kListSize>(r, cols[4], "relevance probabilities");
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_oracle(const std::filesystem::path& path,
                         std::span<const OracleRecord> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const OracleRecord& rec : records) {
    os << rec.query_id << '\t' << format_double(rec.p_cq) << '\t' << (rec.cq_draw ? 1 : 0)
       << '\t' << join_doubles(rec.observe) << '\t' << join_doubles(rec.relevance) << '\n';
  }
}

}  // namespace dualipw::dataset
