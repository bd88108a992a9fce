#pragma once

// Experiment orchestration: config ingestion, replicated runs and the
// verification experiments. Every experiment returns its summary JSON and the
// files it wants written; nothing here touches the filesystem except
// write_result().

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmmf/analysis.hpp"
#include "dmmf/distributions.hpp"
#include "dmmf/equilibrium.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/io.hpp"
#include "dmmf/mechanism.hpp"
#include "dmmf/rng.hpp"
#include "dmmf/stats.hpp"
#include "dmmf/strategies.hpp"

namespace dmmf {

/// Thread count: DMMF_THREADS if set, else `requested`, at least 1.
inline unsigned resolve_threads(unsigned requested) {
  if (const char* env = std::getenv("DMMF_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1U, requested);
}

struct ExperimentConfig {
  std::string experiment;
  MechanismConfig mechanism;
  std::vector<ValueDistribution> dists;
  std::vector<Json> strategy_specs;
  std::int64_t horizon = 1000;
  std::size_t replications = 1;
  std::uint64_t seed = 0;
  RecordingSpec recording;
  unsigned threads = 1;
  Json doc;

  std::size_t n() const { return mechanism.n(); }

  std::uint64_t replication_seed(std::size_t rep) const {
    return StreamLayout::replication_seed(seed, rep);
  }

  std::vector<std::unique_ptr<Strategy>> build_strategies() const {
    std::vector<std::unique_ptr<Strategy>> out;
    for (std::size_t i = 0; i < n(); ++i) {
      out.push_back(parse_strategy(strategy_specs[i], n(), dists[i],
                                   "agents[" + std::to_string(i) + "].strategy"));
    }
    return out;
  }

  /// Static request probabilities, if every agent plays a static threshold.
  std::optional<std::vector<double>> static_probs() const {
    std::vector<double> out;
    for (const auto& s : build_strategies()) {
      const auto* st = dynamic_cast<const StaticThreshold*>(s.get());
      if (st == nullptr) return std::nullopt;
      out.push_back(st->p());
    }
    return out;
  }

  /// Parses the shared layout:
  ///   n, fair_shares, distribution, strategy, agents[{distribution, strategy}],
  ///   horizon, replications, seed, threads, recording{mode, ratio}.
  static ExperimentConfig from_json(const Json& doc) {
    if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
    ExperimentConfig c;
    c.doc = doc;
    c.experiment = cfg::string_or(doc, "experiment", "", "config");

    std::size_t n = 0;
    if (doc.contains("n")) {
      const auto v = cfg::integer_or(doc, "n", 0, "config");
      if (v < 1) throw ConfigError("config.n: must be >= 1");
      n = static_cast<std::size_t>(v);
    }
    if (doc.contains("agents")) {
      if (!doc.at("agents").is_array()) throw ConfigError("config.agents: expected an array");
      const std::size_t m = doc.at("agents").size();
      if (n != 0 && m != n) throw ConfigError("config.agents: length differs from n");
      n = m;
    }
    if (doc.contains("fair_shares")) {
      if (!doc.at("fair_shares").is_array()) throw ConfigError("config.fair_shares: expected an array");
      const std::size_t m = doc.at("fair_shares").size();
      if (n != 0 && m != n) throw ConfigError("config.fair_shares: length differs from n");
      n = m;
    }
    if (n == 0) throw ConfigError("config.n: agent count missing");

    if (doc.contains("fair_shares")) {
      const auto& fs = doc.at("fair_shares");
      bool rational = true;
      std::vector<Fraction> fracs;
      std::vector<double> shares;
      for (std::size_t i = 0; i < n; ++i) {
        const auto path = "config.fair_shares[" + std::to_string(i) + "]";
        if (fs[i].is_string()) {
          fracs.push_back(cfg::fraction(fs[i], path));
          shares.push_back(static_cast<double>(fracs.back().num) /
                           static_cast<double>(fracs.back().den));
        } else {
          shares.push_back(cfg::number(fs[i], path));
          if (auto f = as_fraction(shares.back())) {
            fracs.push_back(*f);
          } else {
            rational = false;
          }
        }
      }
      try {
        c.mechanism = rational ? MechanismConfig::from_fractions(fracs)
                               : MechanismConfig::from_shares(shares);
      } catch (const SizeError&) {
        c.mechanism = MechanismConfig::from_shares(shares);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("config.fair_shares: ") + e.what());
      }
    } else {
      c.mechanism = MechanismConfig::equal_shares(n);
    }

    const Json default_dist = doc.value("distribution", Json{{"kind", "uniform01"}});
    const Json default_strategy = doc.value("strategy", Json());
    for (std::size_t i = 0; i < n; ++i) {
      const auto path = "config.agents[" + std::to_string(i) + "]";
      const Json agent =
          doc.contains("agents") ? doc.at("agents")[i] : Json::object();
      if (!agent.is_object()) throw ConfigError(path + ": expected an object");
      c.dists.push_back(agent.contains("distribution")
                            ? parse_distribution(agent.at("distribution"), path + ".distribution")
                            : parse_distribution(default_dist, "config.distribution"));
      Json spec = agent.contains("strategy") ? agent.at("strategy") : default_strategy;
      if (spec.is_null()) spec = Json{{"kind", "static"}, {"p", 1.0 / static_cast<double>(n)}};
      c.strategy_specs.push_back(spec);
    }

    c.horizon = cfg::integer_or(doc, "horizon", 1000, "config");
    if (c.horizon < 1) throw ConfigError("config.horizon: must be >= 1");
    const auto reps = cfg::integer_or(doc, "replications", 1, "config");
    if (reps < 1) throw ConfigError("config.replications: must be >= 1");
    c.replications = static_cast<std::size_t>(reps);
    const auto seed = cfg::integer_or(doc, "seed", 0, "config");
    c.seed = static_cast<std::uint64_t>(seed);
    const auto threads = cfg::integer_or(doc, "threads", 1, "config");
    c.threads = static_cast<unsigned>(std::max<std::int64_t>(1, threads));

    if (doc.contains("recording")) {
      const auto& r = doc.at("recording");
      const auto mode = cfg::string_or(r, "mode", "checkpoints", "config.recording");
      const double ratio = cfg::number_or(r, "ratio", 1.1, "config.recording");
      if (!(ratio > 1.0)) throw ConfigError("config.recording.ratio: must exceed 1");
      if (mode == "checkpoints") {
        c.recording = RecordingSpec::checkpoints(ratio);
      } else if (mode == "full") {
        c.recording = RecordingSpec::full();
      } else if (mode == "final") {
        c.recording = RecordingSpec::final_only();
      } else {
        throw ConfigError("config.recording.mode: expected 'checkpoints', 'full' or 'final'");
      }
    }
    // Validate strategy specs eagerly so errors surface before any run.
    (void)c.build_strategies();
    return c;
  }
};

struct ExperimentResult {
  Json summary;
  bool passed = true;
  std::map<std::string, std::string> files;
};

// ---------------------------------------------------------------------------
// Shared helpers

/// Random profile: n agents, random or equal shares, p_i uniform on (0, 1).
inline ThresholdProfile<double> random_profile(Rng& rng, std::size_t n, bool equal_shares) {
  ThresholdProfile<double> prof;
  if (equal_shares) {
    prof.fair_shares.assign(n, 1.0 / static_cast<double>(n));
  } else {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      prof.fair_shares.push_back(0.1 + rng.uniform());
      total += prof.fair_shares.back();
    }
    for (auto& a : prof.fair_shares) a /= total;
  }
  for (std::size_t i = 0; i < n; ++i) prof.request_probs.push_back(rng.uniform_open());
  return prof;
}

inline std::vector<std::unique_ptr<Strategy>> static_strategies(std::span<const double> probs) {
  std::vector<std::unique_ptr<Strategy>> out;
  for (double p : probs) out.push_back(std::make_unique<StaticThreshold>(p));
  return out;
}

/// Fixed point of p = (1 - eta) [1 - (1 - p)^((n-1)/n) (1 - dev)^(1/n)] + eta p*.
inline double deviation_fixed_point(int n, double deviator_p, double eta, double p_star) {
  auto h = [&](double p) {
    const double rhs =
        (1.0 - eta) * (1.0 - std::pow(1.0 - p, static_cast<double>(n - 1) / n) *
                                 std::pow(1.0 - deviator_p, 1.0 / n)) +
        eta * p_star;
    return p - rhs;
  };
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (h(mid) <= 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Win-Rate Matching convergence

struct WrmConvergenceSpec {
  std::size_t n = 5;
  ValueDistribution dist = ValueDistribution::uniform01();
  WrmSchedule schedule = WrmSchedule::linear();
  std::int64_t horizon = 100000;
  std::size_t replications = 20;
  std::uint64_t seed = 0;
  std::optional<double> p_star;
  std::optional<double> deviator_p;  // agent 0 plays this static threshold
  double tolerance = 0.05;
  double required_fraction = 0.9;
  double grid_ratio = 1.1;
  unsigned threads = 1;
};

struct WrmConvergenceReport {
  double p_star = 0.0;
  double target = 0.0;
  std::size_t observed_agent = 0;
  std::vector<std::int64_t> times;
  std::vector<std::vector<double>> m_series;  // [rep][time]
  std::vector<double> final_m;
  double mean_field_final = 0.0;  // deterministic recursion with expected requests
  double fraction_within = 0.0;
  bool passed = false;
};

/// Expected limit of M[t]: p* with no deviator; with one, p-hat under the
/// vanishing schedule and the frozen-floor fixed point under the linear one.
inline double wrm_convergence_target(const WrmConvergenceSpec& spec, double p_star) {
  if (!spec.deviator_p) return p_star;
  if (spec.schedule.kind == WrmSchedule::Kind::Paper) return *spec.deviator_p;
  return deviation_fixed_point(static_cast<int>(spec.n), *spec.deviator_p, spec.schedule.eta_min,
                               p_star);
}

/// M[horizon] of the deterministic recursion that replaces each round's win
/// indicator by its expectation 1 - prod(1 - M). Symmetric followers, optional
/// static deviator.
inline double wrm_mean_field(std::size_t n, const WrmSchedule& schedule, double p_star,
                             std::optional<double> deviator_p, std::int64_t horizon) {
  const WrmParams params{p_star, schedule, static_cast<int>(n)};
  const std::size_t followers = deviator_p ? n - 1 : n;
  double expected_wins = 0.0;
  double m = p_star;
  for (std::int64_t t = 1; t <= horizon; ++t) {
    m = t == 1 ? p_star : wrm_from_rate(params, t, expected_wins / static_cast<double>(t - 1));
    double miss = std::pow(1.0 - m, static_cast<double>(followers));
    if (deviator_p) miss *= 1.0 - *deviator_p;
    expected_wins += 1.0 - miss;
  }
  return m;
}

inline WrmConvergenceReport wrm_convergence_experiment(const WrmConvergenceSpec& spec) {
  if (spec.n < 1) throw ConfigError("wrm-converge: n must be >= 1");
  if (spec.deviator_p && spec.n < 2) throw ConfigError("wrm-converge: a deviator needs n >= 2");
  WrmConvergenceReport rep;
  rep.p_star = spec.p_star.value_or(symmetric_optimum(spec.dist, static_cast<int>(spec.n)).argmax);
  rep.target = wrm_convergence_target(spec, rep.p_star);
  rep.observed_agent = spec.deviator_p ? 1 : 0;

  const auto config = MechanismConfig::equal_shares(spec.n);
  const std::vector<ValueDistribution> dists(spec.n, spec.dist);
  WrmParams params{rep.p_star, spec.schedule, static_cast<int>(spec.n)};
  std::vector<std::unique_ptr<Strategy>> strategies;
  for (std::size_t i = 0; i < spec.n; ++i) {
    if (i == 0 && spec.deviator_p) {
      strategies.push_back(std::make_unique<StaticThreshold>(*spec.deviator_p));
    } else {
      strategies.push_back(std::make_unique<WinRateMatching>(params));
    }
  }

  rep.m_series.resize(spec.replications);
  rep.final_m.resize(spec.replications);
  std::vector<std::vector<std::int64_t>> times(spec.replications);
  parallel_for(spec.replications, spec.threads, [&](std::size_t r) {
    const auto traj = run(config, dists, strategies, spec.horizon,
                          StreamLayout::replication_seed(spec.seed, r),
                          RecordingSpec::checkpoints(spec.grid_ratio));
    for (const auto& s : traj.snapshots) {
      times[r].push_back(s.t);
      rep.m_series[r].push_back(s.request_probabilities[rep.observed_agent]);
    }
    rep.final_m[r] = traj.last().request_probabilities[rep.observed_agent];
  });
  rep.times = times.front();
  rep.mean_field_final = wrm_mean_field(spec.n, spec.schedule, rep.p_star, spec.deviator_p, spec.horizon);
  std::size_t within = 0;
  for (double m : rep.final_m) {
    if (std::abs(m - rep.target) <= spec.tolerance) ++within;
  }
  rep.fraction_within = static_cast<double>(within) / static_cast<double>(spec.replications);
  rep.passed = rep.fraction_within >= spec.required_fraction;
  return rep;
}

// ---------------------------------------------------------------------------
// Deviation against Win-Rate Matching followers

struct DeviationSpec {
  std::size_t n = 5;
  ValueDistribution dist = ValueDistribution::uniform01();
  Json follower = Json{{"kind", "wrm"}, {"schedule", "linear"}};
  Json deviator = Json{{"kind", "static"}, {"p", 0.5}};
  std::size_t deviator_index = 0;
  std::int64_t horizon = 100000;
  std::size_t replications = 20;
  std::uint64_t seed = 0;
  double grid_ratio = 1.1;
  unsigned threads = 1;
};

/// Normalized utility is U_i[t] / (t * ideal utility). The baseline is the
/// same agent in an all-follower run on the same seeds.
struct DeviationReport {
  double ideal = 0.0;
  double predicted_baseline = 0.0;  // U(p*) / ideal
  std::vector<std::int64_t> times;
  std::vector<std::vector<double>> baseline;  // [rep][time]
  std::vector<std::vector<double>> deviator;  // [rep][time]
  std::vector<double> baseline_final;
  std::vector<double> deviator_final;
  Summary baseline_summary;
  Summary deviator_summary;
  Summary difference;  // baseline - deviator, paired
  bool penalty_significant = false;
};

inline DeviationReport deviation_experiment(const DeviationSpec& spec) {
  if (spec.n < 2) throw ConfigError("deviation: n must be >= 2");
  if (spec.deviator_index >= spec.n) throw ConfigError("deviation: deviator index out of range");
  const auto config = MechanismConfig::equal_shares(spec.n);
  const std::vector<ValueDistribution> dists(spec.n, spec.dist);
  std::vector<std::unique_ptr<Strategy>> baseline_strats;
  std::vector<std::unique_ptr<Strategy>> deviation_strats;
  for (std::size_t i = 0; i < spec.n; ++i) {
    baseline_strats.push_back(parse_strategy(spec.follower, spec.n, spec.dist, "follower"));
    deviation_strats.push_back(i == spec.deviator_index
                                   ? parse_strategy(spec.deviator, spec.n, spec.dist, "deviator")
                                   : parse_strategy(spec.follower, spec.n, spec.dist, "follower"));
  }

  DeviationReport rep;
  rep.ideal = ideal_utility(spec.dist, 1.0 / static_cast<double>(spec.n));
  const auto opt = symmetric_optimum(spec.dist, static_cast<int>(spec.n));
  rep.predicted_baseline = opt.value / rep.ideal;

  const std::size_t R = spec.replications;
  rep.baseline.resize(R);
  rep.deviator.resize(R);
  rep.baseline_final.resize(R);
  rep.deviator_final.resize(R);
  std::vector<std::int64_t> times;
  parallel_for(R, spec.threads, [&](std::size_t r) {
    const auto seed = StreamLayout::replication_seed(spec.seed, r);
    const auto rec = RecordingSpec::checkpoints(spec.grid_ratio);
    const auto base = run(config, dists, baseline_strats, spec.horizon, seed, rec);
    const auto dev = run(config, dists, deviation_strats, spec.horizon, seed, rec);
    const std::size_t i = spec.deviator_index;
    for (std::size_t k = 0; k < base.snapshots.size(); ++k) {
      const double scale = static_cast<double>(base.snapshots[k].t) * rep.ideal;
      rep.baseline[r].push_back(base.snapshots[k].utilities[i] / scale);
      rep.deviator[r].push_back(dev.snapshots[k].utilities[i] / scale);
    }
    rep.baseline_final[r] = rep.baseline[r].back();
    rep.deviator_final[r] = rep.deviator[r].back();
    if (r == 0) {
      for (const auto& s : base.snapshots) times.push_back(s.t);
    }
  });
  rep.times = std::move(times);
  rep.baseline_summary = summarize(rep.baseline_final);
  rep.deviator_summary = summarize(rep.deviator_final);
  rep.difference = paired_difference(rep.baseline_final, rep.deviator_final);
  rep.penalty_significant = rep.difference.lower() > 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Utility guarantees under all-WRM play

struct UtilityBoundSpec {
  std::size_t n = 2;
  ValueDistribution dist = ValueDistribution::two_point(0.25, 1.0 / 9.0);
  Json follower = Json{{"kind", "wrm"}, {"schedule", "linear"}};
  std::int64_t horizon = 1000000;
  std::size_t replications = 1;
  std::uint64_t seed = 0;
  double slack = 0.02;
  bool monte_carlo = true;
  unsigned threads = 1;
};

struct UtilityBoundReport {
  double p_star = 0.0;
  double optimum_utility = 0.0;   // U(p*, ..., p*)
  double ideal = 0.0;
  double share_utility = 0.0;     // (1 - (1 - 1/n)^n) V(1/n) / n
  double log_rate_utility = 0.0;  // U(log n / n, ...), uniform only
  bool general_bound = false;     // U(p*) >= share_utility >= (1 - 1/e) ideal
  std::optional<bool> uniform_bound;  // U(p*) >= U(log n / n)
  std::vector<double> ratios;     // per replication and agent: U_i[T] / (T ideal)
  double min_ratio = 0.0;
  bool monte_carlo_pass = true;
  bool passed = false;
};

inline UtilityBoundReport utility_bound_check(const UtilityBoundSpec& spec) {
  if (spec.n < 1) throw ConfigError("utility-bound: n must be >= 1");
  const int n = static_cast<int>(spec.n);
  const double nd = static_cast<double>(spec.n);
  UtilityBoundReport rep;
  const auto opt = symmetric_optimum(spec.dist, n);
  rep.p_star = opt.argmax;
  rep.optimum_utility = opt.value;
  rep.ideal = ideal_utility(spec.dist, 1.0 / nd);

  // Symmetric profiles form a single group; past the subset cap use the
  // one-group formula directly.
  const auto game = ThresholdGame::symmetric(spec.n, spec.dist);
  auto symmetric_payoff = [&](double p) {
    if (spec.n > kDefaultSubsetCap) return symmetric_utility(spec.dist, n, p);
    const std::vector<double> probs(spec.n, p);
    return game.payoff(0, probs);
  };
  const double at_optimum = symmetric_payoff(rep.p_star);
  rep.share_utility = symmetric_payoff(1.0 / nd);
  const double floor_value = (1.0 - 1.0 / std::exp(1.0)) * rep.ideal;
  rep.general_bound = at_optimum >= rep.share_utility && rep.share_utility >= floor_value;
  if (spec.dist.is_uniform()) {
    const double p_log = std::log(nd) / nd;
    rep.log_rate_utility = p_log > 0.0 ? symmetric_payoff(p_log) : 0.0;
    rep.uniform_bound = at_optimum >= rep.log_rate_utility;
  }

  if (spec.monte_carlo) {
    const auto config = MechanismConfig::equal_shares(spec.n);
    const std::vector<ValueDistribution> dists(spec.n, spec.dist);
    std::vector<std::unique_ptr<Strategy>> strats;
    for (std::size_t i = 0; i < spec.n; ++i) {
      strats.push_back(parse_strategy(spec.follower, spec.n, spec.dist, "follower"));
    }
    std::vector<std::vector<double>> per_rep(spec.replications);
    parallel_for(spec.replications, spec.threads, [&](std::size_t r) {
      const auto traj = run(config, dists, strats, spec.horizon,
                            StreamLayout::replication_seed(spec.seed, r),
                            RecordingSpec::final_only());
      for (double u : traj.last().utilities) {
        per_rep[r].push_back(u / (static_cast<double>(spec.horizon) * rep.ideal));
      }
    });
    for (const auto& v : per_rep) rep.ratios.insert(rep.ratios.end(), v.begin(), v.end());
    rep.min_ratio = *std::min_element(rep.ratios.begin(), rep.ratios.end());
    rep.monte_carlo_pass = rep.min_ratio >= (1.0 - 1.0 / std::exp(1.0)) - spec.slack;
  }
  rep.passed = rep.general_bound && rep.uniform_bound.value_or(true) && rep.monte_carlo_pass;
  return rep;
}

// ---------------------------------------------------------------------------
// Threshold dominance of value-dependent policies

struct DominanceSpec {
  MechanismConfig mechanism = MechanismConfig::equal_shares(2);
  std::vector<ValueDistribution> dists;
  std::vector<Json> strategies;  // entry `agent` must be a generic policy
  std::size_t agent = 0;
  std::int64_t horizon = 100000;
  std::size_t replications = 50;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct DominanceReport {
  double request_probability = 0.0;
  std::vector<double> original;       // per replication U_agent[T] / T
  std::vector<double> thresholdized;  // same seeds
  Summary difference;                 // thresholdized - original
  bool violation = false;             // one-sided 95% test rejects dominance
};

inline DominanceReport dominance_experiment(const DominanceSpec& spec) {
  const std::size_t n = spec.mechanism.n();
  if (spec.dists.size() != n || spec.strategies.size() != n || spec.agent >= n) {
    throw ConfigError("dominance: need one distribution and strategy per agent");
  }
  const auto& spec_json = spec.strategies[spec.agent];
  if (cfg::string_or(spec_json, "kind", "", "dominance") != "generic") {
    throw ConfigError("dominance: the tested agent must use a generic policy");
  }
  const auto policy = parse_policy_table(spec_json, "dominance.policy");
  std::vector<std::unique_ptr<Strategy>> original;
  std::vector<std::unique_ptr<Strategy>> replaced;
  for (std::size_t i = 0; i < n; ++i) {
    const auto path = "agents[" + std::to_string(i) + "].strategy";
    original.push_back(parse_strategy(spec.strategies[i], n, spec.dists[i], path));
    if (i == spec.agent) {
      replaced.push_back(std::make_unique<StaticThreshold>(thresholdize(policy, spec.dists[i])));
    } else {
      replaced.push_back(parse_strategy(spec.strategies[i], n, spec.dists[i], path));
    }
  }
  DominanceReport rep;
  rep.request_probability = policy.overall_probability(spec.dists[spec.agent]);
  rep.original.resize(spec.replications);
  rep.thresholdized.resize(spec.replications);
  const double T = static_cast<double>(spec.horizon);
  parallel_for(spec.replications, spec.threads, [&](std::size_t r) {
    const auto seed = StreamLayout::replication_seed(spec.seed, r);
    const auto a = run(spec.mechanism, spec.dists, original, spec.horizon, seed,
                       RecordingSpec::final_only());
    const auto b = run(spec.mechanism, spec.dists, replaced, spec.horizon, seed,
                       RecordingSpec::final_only());
    rep.original[r] = a.last().utilities[spec.agent] / T;
    rep.thresholdized[r] = b.last().utilities[spec.agent] / T;
  });
  rep.difference = paired_difference(rep.thresholdized, rep.original);
  rep.violation = rep.difference.upper(kZ95OneSided) < 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Predicted slopes against simulation on random profiles

struct PartitionVerifySpec {
  std::size_t profiles = 200;
  std::size_t max_n = 6;
  std::int64_t horizon = 1000000;
  std::size_t seeds_per_profile = 1;
  std::uint64_t seed = 0;
  bool equal_shares = false;
  double envelope_constant = 5.0;  // tolerance = c sqrt(T log T) / T
  double required_fraction = 0.95;
  unsigned threads = 1;
};

struct PartitionVerifyRow {
  std::size_t profile = 0;
  std::size_t n = 0;
  std::size_t agent = 0;
  std::size_t seed_index = 0;
  double share = 0.0;
  double p = 0.0;
  double predicted = 0.0;
  double observed = 0.0;
  bool ok = false;
};

struct PartitionVerifyReport {
  double tolerance = 0.0;
  std::vector<PartitionVerifyRow> rows;
  double fraction_ok = 0.0;
  bool passed = false;
};

inline PartitionVerifyReport verify_partition_experiment(const PartitionVerifySpec& spec) {
  if (spec.max_n < 1) throw ConfigError("verify-partition: max_n must be >= 1");
  PartitionVerifyReport rep;
  const double T = static_cast<double>(spec.horizon);
  rep.tolerance = spec.envelope_constant * std::sqrt(T * std::log(T)) / T;

  Rng gen(derive_seed(spec.seed, 0xabcdef));
  std::vector<ThresholdProfile<double>> profiles;
  for (std::size_t k = 0; k < spec.profiles; ++k) {
    const std::size_t n = 1 + static_cast<std::size_t>(gen.next_u64() % spec.max_n);
    profiles.push_back(random_profile(gen, n, spec.equal_shares));
  }
  const std::size_t jobs = spec.profiles * spec.seeds_per_profile;
  std::vector<std::vector<PartitionVerifyRow>> out(jobs);
  parallel_for(jobs, spec.threads, [&](std::size_t job) {
    const std::size_t k = job / spec.seeds_per_profile;
    const std::size_t s = job % spec.seeds_per_profile;
    const auto& prof = profiles[k];
    const auto slopes = predicted_win_slopes(prof);
    const auto config = MechanismConfig::from_shares(prof.fair_shares);
    const std::vector<ValueDistribution> dists(prof.n(), ValueDistribution::uniform01());
    const auto strats = static_strategies(prof.request_probs);
    const auto traj = run(config, dists, strats, spec.horizon,
                          derive_seed(spec.seed, 1000003ULL * k + s), RecordingSpec::final_only());
    for (std::size_t i = 0; i < prof.n(); ++i) {
      PartitionVerifyRow row;
      row.profile = k;
      row.n = prof.n();
      row.agent = i;
      row.seed_index = s;
      row.share = prof.fair_shares[i];
      row.p = prof.request_probs[i];
      row.predicted = slopes[i];
      row.observed = static_cast<double>(traj.last().wins[i]) / T;
      row.ok = std::abs(row.observed - row.predicted) <= rep.tolerance;
      out[job].push_back(row);
    }
  });
  std::size_t ok = 0;
  for (auto& v : out) {
    for (auto& row : v) {
      ok += row.ok ? 1 : 0;
      rep.rows.push_back(row);
    }
  }
  rep.fraction_ok = rep.rows.empty() ? 1.0
                                     : static_cast<double>(ok) / static_cast<double>(rep.rows.size());
  rep.passed = rep.fraction_ok >= spec.required_fraction;
  return rep;
}

// ---------------------------------------------------------------------------
// Config-driven entry points

namespace detail {

inline Json partition_json(const SplittingPartition& part) {
  return Json{{"groups", part.groups}, {"group_rates", part.group_rates}, {"slopes", part.slopes}};
}

inline std::string collapse_csv(const CollapseDiagnostic& d) {
  std::ostringstream os;
  os << "t,gap_within_max,gap_cross_min";
  const std::size_t n = d.normalized.empty() ? 0 : d.normalized.front().size();
  for (std::size_t i = 0; i < n; ++i) os << ",X_" << i;
  os << '\n';
  for (std::size_t k = 0; k < d.times.size(); ++k) {
    os << d.times[k] << ',' << format_double(d.gap_within_max[k]) << ','
       << format_double(d.gap_cross_min[k]);
    for (double x : d.normalized[k]) os << ',' << format_double(x);
    os << '\n';
  }
  return os.str();
}

inline ThresholdProfile<double> profile_of(const ExperimentConfig& c) {
  const auto probs = c.static_probs();
  if (!probs) throw ConfigError("config.agents: every strategy must be static for this experiment");
  return {c.mechanism.fair_shares(), *probs};
}

inline std::string series_csv(const std::string& header, const std::vector<std::int64_t>& times,
                              const std::vector<std::vector<double>>& series) {
  std::ostringstream os;
  os << header << '\n';
  for (std::size_t r = 0; r < series.size(); ++r) {
    for (std::size_t k = 0; k < series[r].size() && k < times.size(); ++k) {
      os << times[k] << ',' << r << ',' << format_double(series[r][k]) << '\n';
    }
  }
  return os.str();
}

inline Json summary_json(const Summary& s) {
  return Json{{"count", s.count},
              {"mean", s.mean},
              {"stddev", s.stddev},
              {"std_error", s.std_error},
              {"ci95", {s.lower(), s.upper()}}};
}

}  // namespace detail

inline ExperimentResult simulate_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const auto checks = c.doc.value("checks", Json::object());
  const double tol = cfg::number_or(checks, "slope_tolerance", 0.01, "config.checks");
  std::optional<std::vector<double>> expected;
  if (checks.contains("expected_slopes")) {
    expected = checks.at("expected_slopes").get<std::vector<double>>();
  } else if (auto probs = c.static_probs()) {
    expected = predicted_win_slopes(ThresholdProfile<double>{c.mechanism.fair_shares(), *probs});
  }

  const auto strategies = c.build_strategies();
  std::vector<Trajectory> trajs(c.replications);
  parallel_for(c.replications, c.threads, [&](std::size_t r) {
    trajs[r] = run(c.mechanism, c.dists, strategies, c.horizon, c.replication_seed(r), c.recording);
  });

  Json reps = Json::array();
  double worst = 0.0;
  for (std::size_t r = 0; r < c.replications; ++r) {
    std::ostringstream csv;
    write_trajectory_csv(csv, trajs[r]);
    res.files["trajectory_" + std::to_string(r) + ".csv"] = csv.str();
    Json s = trajectory_summary(trajs[r]);
    if (expected) {
      for (std::size_t i = 0; i < c.n(); ++i) {
        const double rate = static_cast<double>(trajs[r].last().wins[i]) / static_cast<double>(c.horizon);
        worst = std::max(worst, std::abs(rate - (*expected)[i]));
      }
    }
    reps.push_back(s);
  }
  res.summary = Json{{"experiment", "simulate"},
                     {"seed", c.seed},
                     {"horizon", c.horizon},
                     {"replications", reps}};
  if (expected) {
    res.passed = worst <= tol;
    res.summary["checks"] = Json{{"expected_slopes", *expected},
                                 {"max_slope_error", worst},
                                 {"slope_tolerance", tol},
                                 {"passed", res.passed}};
  }
  return res;
}

inline ExperimentResult analyze_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const auto profile = detail::profile_of(c);
  const auto part = splitting_partition(profile);
  const auto utils = predicted_utility(profile, c.dists);
  std::vector<double> ideals;
  for (std::size_t i = 0; i < c.n(); ++i) {
    ideals.push_back(ideal_utility(c.dists[i], c.mechanism.fair_shares()[i]));
  }
  std::vector<std::size_t> everyone(c.n());
  for (std::size_t i = 0; i < c.n(); ++i) everyone[i] = i;
  res.summary = Json{{"experiment", "analyze"},
                     {"partition", detail::partition_json(part)},
                     {"predicted_utilities", utils},
                     {"ideal_utilities", ideals},
                     {"stable", is_stable<double>(everyone, profile)},
                     {"strictly_stable", is_stable<double>(everyone, profile, true)}};
  if (c.doc.contains("horizon")) {
    const auto strategies = c.build_strategies();
    const auto traj = run(c.mechanism, c.dists, strategies, c.horizon, c.replication_seed(0),
                          RecordingSpec::checkpoints(c.recording.ratio));
    const auto diag = collapse_diagnostic(traj, part);
    res.files["diagnostics.csv"] = detail::collapse_csv(diag);
    const std::int64_t burn = std::max<std::int64_t>(100, c.horizon / 100);
    res.summary["diagnostics"] =
        Json{{"seed", traj.seed},
             {"fitted_within_constant", diag.fitted_within_constant(burn)},
             {"last_cross_group_inversion", last_cross_group_inversion(diag)},
             {"final_gap_cross_min", diag.gap_cross_min.back()},
             {"final_gap_within_max", diag.gap_within_max.back()}};
  }
  return res;
}

inline ExperimentResult pstar_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const double resolution = cfg::number_or(c.doc, "resolution", kDefaultResolution, "config");
  const auto opt = symmetric_optimum(c.dists.front(), static_cast<int>(c.n()), resolution);
  res.summary = Json{{"experiment", "pstar"}, {"p_star", opt.argmax}, {"value", opt.value},
                     {"n", c.n()}, {"resolution", resolution}};
  return res;
}

inline ExperimentResult best_response_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const ThresholdGame game{c.mechanism.fair_shares(), c.dists};
  const auto responder = static_cast<std::size_t>(cfg::integer_or(c.doc, "responder", 0, "config"));
  if (responder >= c.n()) throw ConfigError("config.responder: out of range");
  std::vector<double> probs;
  if (c.doc.contains("profile")) {
    probs = c.doc.at("profile").get<std::vector<double>>();
    if (probs.size() != c.n()) throw ConfigError("config.profile: length differs from n");
  } else {
    probs = detail::profile_of(c).request_probs;
  }
  const double resolution = cfg::number_or(c.doc, "resolution", kDefaultResolution, "config");
  const auto br = best_response(game, responder, probs, resolution);
  res.summary = Json{{"experiment", "best-response"},
                     {"responder", br.responder},
                     {"argmax", br.argmax},
                     {"payoff", br.payoff},
                     {"incumbent", br.incumbent},
                     {"incumbent_payoff", br.incumbent_payoff},
                     {"improvement", br.improvement},
                     {"resolution", br.resolution}};
  if (br.runner_up) {
    res.summary["runner_up"] = Json{{"argmax", br.runner_up->argmax}, {"payoff", br.runner_up->value}};
  }
  return res;
}

inline ExperimentResult ne_scan_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const ThresholdGame game{c.mechanism.fair_shares(), c.dists};
  const double resolution = cfg::number_or(c.doc, "resolution", kDefaultResolution, "config");
  double lo = 0.0;
  double hi = 1.0;
  if (c.doc.contains("range")) {
    const auto r = c.doc.at("range").get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("config.range: expected [lo, hi]");
    lo = r[0];
    hi = r[1];
  }
  std::optional<double> eps;
  if (c.doc.contains("epsilon")) eps = cfg::number(c.doc.at("epsilon"), "config.epsilon");
  const auto scan = pure_ne_scan(game, resolution, eps, lo, hi);
  res.summary = Json{{"experiment", "ne-scan"},
                     {"certificate_gap", scan.certificate_gap},
                     {"certificate_profile", scan.certificate_profile},
                     {"resolution", scan.resolution},
                     {"epsilon", scan.epsilon},
                     {"range", {scan.lo, scan.hi}},
                     {"profiles_scanned", scan.profiles_scanned},
                     {"eps_equilibria", scan.eps_equilibria}};
  const auto checks = c.doc.value("checks", Json::object());
  if (cfg::bool_or(checks, "expect_no_equilibrium", false, "config.checks")) {
    res.passed = scan.eps_equilibria.empty() && scan.certificate_gap > 0.0;
    res.summary["passed"] = res.passed;
  }
  return res;
}

inline Json follower_spec(const ExperimentConfig& c) {
  return c.doc.value("follower", Json{{"kind", "wrm"}, {"schedule", "linear"}});
}

inline ExperimentResult deviation_run_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  DeviationSpec spec;
  spec.n = c.n();
  spec.dist = c.dists.front();
  spec.follower = follower_spec(c);
  spec.deviator = c.doc.value("deviator", spec.deviator);
  spec.deviator_index = static_cast<std::size_t>(cfg::integer_or(c.doc, "deviator_index", 0, "config"));
  spec.horizon = c.horizon;
  spec.replications = c.replications;
  spec.seed = c.seed;
  spec.grid_ratio = c.recording.ratio;
  spec.threads = c.threads;
  const auto rep = deviation_experiment(spec);

  std::ostringstream csv;
  csv << "t,rep,baseline,deviator\n";
  for (std::size_t r = 0; r < rep.baseline.size(); ++r) {
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
      csv << rep.times[k] << ',' << r << ',' << format_double(rep.baseline[r][k]) << ','
          << format_double(rep.deviator[r][k]) << '\n';
    }
  }
  res.files["deviation_curves.csv"] = csv.str();
  res.summary = Json{{"experiment", "deviation"},
                     {"seed", c.seed},
                     {"ideal_utility", rep.ideal},
                     {"predicted_baseline", rep.predicted_baseline},
                     {"baseline", detail::summary_json(rep.baseline_summary)},
                     {"deviator", detail::summary_json(rep.deviator_summary)},
                     {"difference", detail::summary_json(rep.difference)},
                     {"penalty_significant", rep.penalty_significant}};
  const auto checks = c.doc.value("checks", Json::object());
  if (cfg::bool_or(checks, "expect_penalty", false, "config.checks")) {
    res.passed = rep.penalty_significant;
    res.summary["passed"] = res.passed;
  }
  return res;
}

inline ExperimentResult wrm_converge_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  WrmConvergenceSpec spec;
  spec.n = c.n();
  spec.dist = c.dists.front();
  const auto follower = follower_spec(c);
  spec.schedule = parse_schedule(follower, "config.follower");
  if (follower.contains("p_star")) spec.p_star = cfg::number(follower.at("p_star"), "config.follower.p_star");
  if (c.doc.contains("deviator_p")) spec.deviator_p = cfg::number(c.doc.at("deviator_p"), "config.deviator_p");
  spec.horizon = c.horizon;
  spec.replications = c.replications;
  spec.seed = c.seed;
  spec.tolerance = cfg::number_or(c.doc, "tolerance", 0.05, "config");
  spec.required_fraction = cfg::number_or(c.doc, "required_fraction", 0.9, "config");
  spec.grid_ratio = c.recording.ratio;
  spec.threads = c.threads;
  const auto rep = wrm_convergence_experiment(spec);

  std::ostringstream csv;
  csv << "t,rep,M,abs_error\n";
  for (std::size_t r = 0; r < rep.m_series.size(); ++r) {
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
      csv << rep.times[k] << ',' << r << ',' << format_double(rep.m_series[r][k]) << ','
          << format_double(std::abs(rep.m_series[r][k] - rep.target)) << '\n';
    }
  }
  res.files["wrm_series.csv"] = csv.str();
  res.passed = rep.passed;
  res.summary = Json{{"experiment", "wrm-converge"},
                     {"seed", c.seed},
                     {"p_star", rep.p_star},
                     {"target", rep.target},
                     {"final_M", rep.final_m},
                     {"mean_field_final", rep.mean_field_final},
                     {"fraction_within", rep.fraction_within},
                     {"tolerance", spec.tolerance},
                     {"required_fraction", spec.required_fraction},
                     {"passed", rep.passed}};
  return res;
}

inline ExperimentResult verify_experiment(const ExperimentConfig& c) {
  ExperimentResult res;
  const std::string kind = c.experiment.empty() ? "verify-partition" : c.experiment;
  if (kind == "verify-partition" || kind == "verify") {
    PartitionVerifySpec spec;
    spec.profiles = static_cast<std::size_t>(cfg::integer_or(c.doc, "profiles", 200, "config"));
    spec.max_n = static_cast<std::size_t>(cfg::integer_or(c.doc, "max_n", 6, "config"));
    spec.horizon = c.horizon;
    spec.seeds_per_profile = c.replications;
    spec.seed = c.seed;
    spec.equal_shares = cfg::bool_or(c.doc, "equal_shares", false, "config");
    spec.envelope_constant = cfg::number_or(c.doc, "envelope_constant", 5.0, "config");
    spec.required_fraction = cfg::number_or(c.doc, "required_fraction", 0.95, "config");
    spec.threads = c.threads;
    const auto rep = verify_partition_experiment(spec);
    std::ostringstream csv;
    csv << "profile,n,agent,seed_index,share,p,predicted,observed,ok\n";
    for (const auto& r : rep.rows) {
      csv << r.profile << ',' << r.n << ',' << r.agent << ',' << r.seed_index << ','
          << format_double(r.share) << ',' << format_double(r.p) << ','
          << format_double(r.predicted) << ',' << format_double(r.observed) << ','
          << (r.ok ? 1 : 0) << '\n';
    }
    res.files["partition_check.csv"] = csv.str();
    res.passed = rep.passed;
    res.summary = Json{{"experiment", "verify-partition"},
                       {"seed", c.seed},
                       {"tolerance", rep.tolerance},
                       {"fraction_ok", rep.fraction_ok},
                       {"required_fraction", spec.required_fraction},
                       {"passed", rep.passed}};
    return res;
  }
  if (kind == "dominance") {
    DominanceSpec spec;
    spec.mechanism = c.mechanism;
    spec.dists = c.dists;
    spec.strategies = c.strategy_specs;
    spec.agent = static_cast<std::size_t>(cfg::integer_or(c.doc, "agent", 0, "config"));
    spec.horizon = c.horizon;
    spec.replications = c.replications;
    spec.seed = c.seed;
    spec.threads = c.threads;
    const auto rep = dominance_experiment(spec);
    res.passed = !rep.violation;
    res.summary = Json{{"experiment", "dominance"},
                       {"seed", c.seed},
                       {"request_probability", rep.request_probability},
                       {"original", rep.original},
                       {"thresholdized", rep.thresholdized},
                       {"difference", detail::summary_json(rep.difference)},
                       {"violation", rep.violation},
                       {"passed", res.passed}};
    return res;
  }
  if (kind == "utility-bound") {
    UtilityBoundSpec spec;
    spec.n = c.n();
    spec.dist = c.dists.front();
    spec.follower = follower_spec(c);
    spec.horizon = c.horizon;
    spec.replications = c.replications;
    spec.seed = c.seed;
    spec.slack = cfg::number_or(c.doc, "slack", 0.02, "config");
    spec.monte_carlo = cfg::bool_or(c.doc, "monte_carlo", true, "config");
    spec.threads = c.threads;
    const auto rep = utility_bound_check(spec);
    res.passed = rep.passed;
    res.summary = Json{{"experiment", "utility-bound"},
                       {"seed", c.seed},
                       {"p_star", rep.p_star},
                       {"optimum_utility", rep.optimum_utility},
                       {"ideal_utility", rep.ideal},
                       {"share_utility", rep.share_utility},
                       {"general_bound", rep.general_bound},
                       {"ratios", rep.ratios},
                       {"min_ratio", rep.min_ratio},
                       {"passed", rep.passed}};
    if (rep.uniform_bound) {
      res.summary["uniform_bound"] = *rep.uniform_bound;
      res.summary["log_rate_utility"] = rep.log_rate_utility;
    }
    return res;
  }
  throw ConfigError("config.experiment: unknown verification '" + kind +
                    "' (expected verify-partition, dominance or utility-bound)");
}

/// Runs the experiment named by `command` (a CLI subcommand).
inline ExperimentResult run_experiment(const std::string& command, const ExperimentConfig& c) {
  if (command == "simulate") return simulate_experiment(c);
  if (command == "analyze") return analyze_experiment(c);
  if (command == "pstar") return pstar_experiment(c);
  if (command == "best-response") return best_response_experiment(c);
  if (command == "ne-scan") return ne_scan_experiment(c);
  if (command == "deviation") return deviation_run_experiment(c);
  if (command == "wrm-converge") return wrm_converge_experiment(c);
  if (command == "verify") return verify_experiment(c);
  throw ConfigError("unknown command '" + command + "'");
}

/// Writes every file plus summary.json into `dir`.
inline void write_result(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : res.files) {
    std::ofstream os(dir / name, std::ios::binary);
    os << content;
    if (!os) throw std::runtime_error("failed to write " + (dir / name).string());
  }
  Json summary = res.summary;
  summary["all_checks_passed"] = res.passed;
  std::ofstream os(dir / "summary.json", std::ios::binary);
  os << summary.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed to write " + (dir / "summary.json").string());
}

}  // namespace dmmf
