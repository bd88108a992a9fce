#pragma once

// JSON config ingestion and CSV/JSON emission.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmmf/distributions.hpp"
#include "dmmf/equilibrium.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/mechanism.hpp"
#include "dmmf/strategies.hpp"

namespace dmmf {

using Json = nlohmann::json;

/// Shortest representation that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("not a number: '" + s + "'");
  }
  return x;
}

namespace cfg {

inline const Json& require(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ConfigError(path + "." + key + ": required field missing");
  }
  return obj.at(key);
}

inline double number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

inline double number_or(const Json& obj, const std::string& key, double fallback,
                        const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return number(obj.at(key), path + "." + key);
}

inline std::int64_t integer_or(const Json& obj, const std::string& key, std::int64_t fallback,
                               const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  throw ConfigError(path + "." + key + ": expected an integer");
}

inline std::string string_or(const Json& obj, const std::string& key, const std::string& fallback,
                             const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return obj.at(key).get<std::string>();
}

inline bool bool_or(const Json& obj, const std::string& key, bool fallback, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  if (!obj.at(key).is_boolean()) throw ConfigError(path + "." + key + ": expected a boolean");
  return obj.at(key).get<bool>();
}

/// A share or probability given as a number or as an "a/b" string.
inline Fraction fraction(const Json& v, const std::string& path) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) throw ConfigError("");
      const auto num = std::stoll(s.substr(0, slash));
      const auto den = std::stoll(s.substr(slash + 1));
      if (num <= 0 || den <= 0) throw ConfigError("");
      return {num, den};
    } catch (const std::exception&) {
      throw ConfigError(path + ": expected a positive fraction 'a/b', got '" + s + "'");
    }
  }
  const double x = number(v, path);
  if (auto f = as_fraction(x)) return *f;
  throw ConfigError(path + ": not representable as a small-denominator fraction");
}

}  // namespace cfg

/// {"kind":"uniform01"} | {"kind":"finite","support":[[v,p],...]} |
/// {"kind":"two_point","q":..,"eps":..}
inline ValueDistribution parse_distribution(const Json& j, const std::string& path = "distribution") {
  const auto kind = cfg::string_or(j, "kind", "", path);
  if (kind == "uniform01") return ValueDistribution::uniform01();
  if (kind == "two_point") {
    return ValueDistribution::two_point(cfg::number(cfg::require(j, "q", path), path + ".q"),
                                        cfg::number(cfg::require(j, "eps", path), path + ".eps"));
  }
  if (kind == "finite") {
    const auto& support = cfg::require(j, "support", path);
    if (!support.is_array()) throw ConfigError(path + ".support: expected an array");
    std::vector<Atom> atoms;
    for (std::size_t k = 0; k < support.size(); ++k) {
      const auto p = path + ".support[" + std::to_string(k) + "]";
      const auto& pair = support[k];
      if (!pair.is_array() || pair.size() != 2) throw ConfigError(p + ": expected [value, prob]");
      atoms.push_back({cfg::number(pair[0], p + "[0]"), cfg::number(pair[1], p + "[1]")});
    }
    try {
      return ValueDistribution::finite(std::move(atoms));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  throw ConfigError(path + ".kind: expected 'uniform01', 'finite' or 'two_point'");
}

inline Json distribution_to_json(const ValueDistribution& d) {
  if (d.is_uniform()) return Json{{"kind", "uniform01"}};
  Json support = Json::array();
  for (const auto& a : d.support()) support.push_back({a.value, a.probability});
  return Json{{"kind", "finite"}, {"support", support}};
}

inline WrmSchedule parse_schedule(const Json& j, const std::string& path) {
  const auto name = cfg::string_or(j, "schedule", "linear", path);
  if (name == "paper") return WrmSchedule::paper(cfg::number_or(j, "epsilon", 0.1, path));
  if (name == "linear") {
    return WrmSchedule::linear(cfg::number_or(j, "eta0", 1.0, path),
                               cfg::number_or(j, "eta_min", 0.05, path),
                               cfg::number_or(j, "t0", 10000.0, path));
  }
  throw ConfigError(path + ".schedule: expected 'paper' or 'linear'");
}

inline GenericPolicy parse_policy_table(const Json& j, const std::string& path) {
  const auto& table = cfg::require(j, "table", path);
  if (!table.is_array()) throw ConfigError(path + ".table: expected an array");
  std::vector<GenericPolicy::Entry> entries;
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto p = path + ".table[" + std::to_string(k) + "]";
    if (!table[k].is_array() || table[k].size() != 2) throw ConfigError(p + ": expected [value, prob]");
    entries.push_back({cfg::number(table[k][0], p + "[0]"), cfg::number(table[k][1], p + "[1]")});
  }
  try {
    return GenericPolicy(std::move(entries));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Strategy specs:
///   {"kind":"static","p":0.25}
///   {"kind":"wrm","schedule":"paper","epsilon":0.1}
///   {"kind":"wrm","schedule":"linear","eta0":1.0,"eta_min":0.05,"t0":10000}
///   {"kind":"generic","table":[[value,prob],...], "thresholdize": false}
/// WRM takes "p_star" if given, else p* of `dist` for n agents.
inline std::unique_ptr<Strategy> parse_strategy(const Json& j, std::size_t n,
                                                const ValueDistribution& dist,
                                                const std::string& path = "strategy") {
  const auto kind = cfg::string_or(j, "kind", "", path);
  try {
    if (kind == "static") {
      return std::make_unique<StaticThreshold>(cfg::number(cfg::require(j, "p", path), path + ".p"));
    }
    if (kind == "wrm") {
      WrmParams params;
      params.n = static_cast<int>(n);
      params.schedule = parse_schedule(j, path);
      if (j.contains("p_star")) {
        params.p_star = cfg::number(j.at("p_star"), path + ".p_star");
      } else {
        params.p_star = symmetric_optimum(dist, static_cast<int>(n)).argmax;
      }
      return std::make_unique<WinRateMatching>(params);
    }
    if (kind == "generic") {
      auto policy = parse_policy_table(j, path);
      if (cfg::bool_or(j, "thresholdize", false, path)) {
        return std::make_unique<StaticThreshold>(thresholdize(policy, dist));
      }
      return std::make_unique<GenericStrategy>(std::move(policy));
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw ConfigError(path + ": " + msg);
  } catch (const DomainError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  throw ConfigError(path + ".kind: expected 'static', 'wrm' or 'generic'");
}

// ---------------------------------------------------------------------------
// Trajectory CSV: one row per (recorded round, agent).

inline constexpr const char* kTrajectoryHeader = "t,agent,W,U,requested,won";

struct TrajectoryRow {
  std::int64_t t = 0;
  std::size_t agent = 0;
  std::int64_t wins = 0;
  double utility = 0.0;
  bool requested = false;
  bool won = false;

  friend bool operator==(const TrajectoryRow&, const TrajectoryRow&) = default;
};

inline std::vector<TrajectoryRow> trajectory_rows(const Trajectory& traj) {
  std::vector<TrajectoryRow> rows;
  for (const auto& s : traj.snapshots) {
    for (std::size_t i = 0; i < traj.n(); ++i) {
      rows.push_back({s.t, i, s.wins[i], s.utilities[i], static_cast<bool>(s.requested[i]),
                      s.winner && *s.winner == i});
    }
  }
  return rows;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << kTrajectoryHeader << '\n';
  for (const auto& r : trajectory_rows(traj)) {
    os << r.t << ',' << r.agent << ',' << r.wins << ',' << format_double(r.utility) << ','
       << (r.requested ? 1 : 0) << ',' << (r.won ? 1 : 0) << '\n';
  }
}

inline std::vector<TrajectoryRow> read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kTrajectoryHeader) {
    throw ConfigError("trajectory CSV: unexpected header '" + line + "'");
  }
  std::vector<TrajectoryRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw ConfigError("trajectory CSV line " + std::to_string(lineno) + ": expected 6 columns");
    }
    try {
      TrajectoryRow r;
      r.t = std::stoll(cells[0]);
      r.agent = static_cast<std::size_t>(std::stoull(cells[1]));
      r.wins = std::stoll(cells[2]);
      r.utility = parse_double(cells[3]);
      r.requested = cells[4] == "1";
      r.won = cells[5] == "1";
      rows.push_back(r);
    } catch (const std::exception&) {
      throw ConfigError("trajectory CSV line " + std::to_string(lineno) + ": malformed");
    }
  }
  return rows;
}

/// {final_wins, final_utils, K, seed}
inline Json trajectory_summary(const Trajectory& traj) {
  const auto& last = traj.last();
  return Json{{"final_wins", last.wins},
              {"final_utils", last.utilities},
              {"K", last.total_wins},
              {"seed", traj.seed}};
}

}  // namespace dmmf
