#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualipw/dataset/io.hpp"
#include "dualipw/dataset/synthetic.hpp"
#include "dualipw/training/trainer.hpp"

namespace dualipw::cli {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Group { kCommon, kWorld, kTrain, kCheck };

/// Every setting a subcommand can take, from defaults, a config file or
/// flags (in that order of precedence, last wins).
struct Settings {
  std::uint64_t seed = 1;
  dataset::WorldConfig world;
  std::size_t valid_queries = 500;
  std::size_t test_queries = 1000;
  training::TrainConfig train;
  std::size_t grad_fixtures = 20;
  std::size_t mc_queries = 200;
  std::size_t mc_draws = 10000;
  double mc_lambda = 0.1;
};

struct Key {
  std::string name;
  Group group;
  std::function<std::string(const Settings&)> get;
  std::function<void(Settings&, std::string_view)> set;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void bad_value(std::string_view key, std::string_view v) {
  throw ConfigError("invalid value for key '" + std::string(key) + "': '" + std::string(v) + "'");
}

inline double to_double(std::string_view key, std::string_view v) {
  double d = 0;
  if (!dataset::detail::parse_double(v, d) || !std::isfinite(d)) bad_value(key, v);
  return d;
}

inline std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t n = 0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, n);
  if (ec != std::errc() || ptr != end) bad_value(key, v);
  return n;
}

inline bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

template <class T>
Key num(std::string name, Group g, T Settings::*outer) {
  return {name, g,
          [outer](const Settings& s) {
            if constexpr (std::is_floating_point_v<T>) return dataset::format_double(s.*outer);
            else return std::to_string(s.*outer);
          },
          [outer, name](Settings& s, std::string_view v) {
            if constexpr (std::is_floating_point_v<T>) s.*outer = to_double(name, v);
            else s.*outer = static_cast<T>(to_u64(name, v));
          }};
}

template <class Sub, class T>
Key nested(std::string name, Group g, Sub Settings::*outer, T Sub::*inner) {
  return {name, g,
          [outer, inner](const Settings& s) {
            if constexpr (std::is_same_v<T, bool>) return std::string((s.*outer).*inner ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return dataset::format_double((s.*outer).*inner);
            else if constexpr (std::is_same_v<T, std::string>) return (s.*outer).*inner;
            else return std::to_string((s.*outer).*inner);
          },
          [outer, inner, name](Settings& s, std::string_view v) {
            if constexpr (std::is_same_v<T, bool>) (s.*outer).*inner = to_bool(name, v);
            else if constexpr (std::is_floating_point_v<T>) (s.*outer).*inner = to_double(name, v);
            else if constexpr (std::is_same_v<T, std::string>) {
              if (v.empty()) bad_value(name, v);
              (s.*outer).*inner = std::string(v);
            } else (s.*outer).*inner = static_cast<T>(to_u64(name, v));
          }};
}

}  // namespace detail

inline const std::vector<Key>& registry() {
  using detail::nested;
  using detail::num;
  using S = Settings;
  using W = dataset::WorldConfig;
  using T = training::TrainConfig;
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back(num("seed", Group::kCommon, &S::seed));

    k.push_back(nested("queries", Group::kWorld, &S::world, &W::num_queries));
    k.push_back(num("valid_queries", Group::kWorld, &S::valid_queries));
    k.push_back(num("test_queries", Group::kWorld, &S::test_queries));
    k.push_back(nested("relevance_mean", Group::kWorld, &S::world, &W::relevance_mean));
    k.push_back(nested("query_spread", Group::kWorld, &S::world, &W::query_spread));
    k.push_back(nested("doc_spread", Group::kWorld, &S::world, &W::doc_spread));
    k.push_back(nested("feature_noise", Group::kWorld, &S::world, &W::feature_noise));
    k.push_back(nested("logging_strength", Group::kWorld, &S::world, &W::logging_strength));
    k.push_back(nested("logging_noise", Group::kWorld, &S::world, &W::logging_noise));
    k.push_back(nested("logging_nuisance", Group::kWorld, &S::world, &W::logging_nuisance));
    k.push_back(nested("zipf_exponent", Group::kWorld, &S::world, &W::zipf_exponent));
    k.push_back(nested("feature_seed", Group::kWorld, &S::world, &W::feature_seed));
    k.push_back(nested("id_prefix", Group::kWorld, &S::world, &W::id_prefix));
    k.push_back({"eta", Group::kWorld,
                 [](const S& s) { return dataset::format_double(s.world.bias.eta); },
                 [](S& s, std::string_view v) { s.world.bias.eta = detail::to_double("eta", v); }});
    k.push_back({"lambda_sat", Group::kWorld,
                 [](const S& s) { return dataset::format_double(s.world.bias.lambda_sat); },
                 [](S& s, std::string_view v) {
                   s.world.bias.lambda_sat = detail::to_double("lambda_sat", v);
                 }});

    k.push_back({"method", Group::kTrain,
                 [](const S& s) { return std::string(training::to_string(s.train.method)); },
                 [](S& s, std::string_view v) {
                   if (!training::parse_method(v, s.train.method)) detail::bad_value("method", v);
                 }});
    k.push_back(nested("lr", Group::kTrain, &S::train, &T::lr));
    k.push_back(nested("lr_h", Group::kTrain, &S::train, &T::lr_h));
    k.push_back(nested("beta1", Group::kTrain, &S::train, &T::beta1));
    k.push_back(nested("beta2", Group::kTrain, &S::train, &T::beta2));
    k.push_back(nested("adam_eps", Group::kTrain, &S::train, &T::adam_eps));
    k.push_back(nested("weight_decay", Group::kTrain, &S::train, &T::weight_decay));
    k.push_back(nested("batch_size", Group::kTrain, &S::train, &T::batch_size));
    k.push_back(nested("epochs", Group::kTrain, &S::train, &T::epochs));
    k.push_back(nested("list_size", Group::kTrain, &S::train, &T::list_size));
    k.push_back(nested("tau", Group::kTrain, &S::train, &T::tau));
    k.push_back(nested("lstm_hidden", Group::kTrain, &S::train, &T::lstm_hidden));
    k.push_back(nested("lstm_layers", Group::kTrain, &S::train, &T::lstm_layers));
    k.push_back(nested("wmax", Group::kTrain, &S::train, &T::wmax));
    k.push_back(nested("val_every", Group::kTrain, &S::train, &T::val_every));
    k.push_back(nested("oracle_mode", Group::kTrain, &S::train, &T::oracle_mode));
    k.push_back(nested("surrogate_epochs", Group::kTrain, &S::train, &T::surrogate_epochs));
    k.push_back({"ipw_propensity", Group::kTrain,
                 [](const S& s) {
                   std::string out;
                   for (std::size_t i = 0; i < s.train.ipw_propensity.size(); ++i) {
                     if (i) out += ',';
                     out += dataset::format_double(s.train.ipw_propensity[i]);
                   }
                   return out;
                 },
                 [](S& s, std::string_view v) {
                   s.train.ipw_propensity.clear();
                   if (v.empty()) return;
                   for (auto part : dataset::detail::split(v, ',')) {
                     s.train.ipw_propensity.push_back(
                         detail::to_double("ipw_propensity", detail::trim(part)));
                   }
                 }});

    k.push_back(num("grad_fixtures", Group::kCheck, &S::grad_fixtures));
    k.push_back(num("mc_queries", Group::kCheck, &S::mc_queries));
    k.push_back(num("mc_draws", Group::kCheck, &S::mc_draws));
    k.push_back(num("mc_lambda", Group::kCheck, &S::mc_lambda));
    return k;
  }();
  return keys;
}

inline const Key* find_key(std::string_view name) {
  for (const Key& k : registry()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline std::string flag_name(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

inline void set_key(Settings& s, std::string_view name, std::string_view value) {
  const Key* k = find_key(name);
  if (!k) throw ConfigError("unknown config key '" + std::string(name) + "'");
  k->set(s, value);
}

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config(std::istream& in,
                                                                     const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), detail::trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw dataset::IoError("cannot open " + path.string());
  return parse_config(in, path.string());
}

inline void apply_config(Settings& s, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) set_key(s, k, v);
}

inline void write_resolved(const std::filesystem::path& path, const Settings& s,
                           std::initializer_list<Group> groups,
                           const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dataset::IoError("cannot open " + path.string() + " for writing");
  for (const Key& k : registry()) {
    if (std::find(groups.begin(), groups.end(), k.group) == groups.end()) continue;
    os << k.name << " = " << k.get(s) << '\n';
  }
  for (const auto& [k, v] : extra) os << "# " << k << " = " << v << '\n';
}

}  // namespace dualipw::cli
