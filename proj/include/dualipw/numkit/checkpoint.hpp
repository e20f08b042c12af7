#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dualipw/numkit/tensor.hpp"

namespace dualipw::numkit {

inline constexpr const char* kCheckpointHeader = "dualipw-ckpt v1";

class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// %.17g: enough digits for an exact f64 round trip.
inline std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// `name<TAB>d1,d2<TAB>v1 v2 ...`, one line per array, after the header.
inline void write_checkpoint(std::ostream& os, const ParamSet& params) {
  os << kCheckpointHeader << '\n';
  for (const auto& [name, t] : params) {
    os << name << '\t';
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
      if (i) os << ',';
      os << t.shape()[i];
    }
    os << '\t';
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) os << ' ';
      os << format_double17(t[i]);
    }
    os << '\n';
  }
}

inline void write_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
}

inline ParamSet read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader) {
    throw CheckpointError("missing checkpoint header '" + std::string(kCheckpointHeader) + "'");
  }
  ParamSet params;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw CheckpointError("line " + std::to_string(lineno) + ": expected 3 fields");
    }
    const std::string name = line.substr(0, t1);
    Shape shape;
    std::stringstream dims(line.substr(t1 + 1, t2 - t1 - 1));
    for (std::string d; std::getline(dims, d, ',');) shape.push_back(std::stoul(d));
    std::vector<double> values;
    const char* p = line.c_str() + t2 + 1;
    while (*p) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw CheckpointError("line " + std::to_string(lineno) + ": bad number");
      }
      values.push_back(v);
      p = end;
      while (*p == ' ') ++p;
    }
    if (values.size() != shape_size(shape)) {
      throw CheckpointError("line " + std::to_string(lineno) + ": " + name +
                            " has " + std::to_string(values.size()) +
                            " values for shape " + shape_string(shape));
    }
    if (!params.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw CheckpointError("duplicate array " + name);
    }
  }
  return params;
}

inline ParamSet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace dualipw::numkit
