#pragma once

// Long-run predictions for static threshold profiles: the subgroup stability
// predicate, the splitting partition and the win-rate / utility predictors
// built on it, plus empirical collapse diagnostics for recorded runs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dmmf/distributions.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/mechanism.hpp"

namespace dmmf {

using Rational = boost::multiprecision::cpp_rational;

/// Comparison policy per scalar type: doubles compare with a relative
/// tolerance, rationals compare exactly.
template <class Scalar>
struct ScalarOps {
  static constexpr double kRelTol = 1e-12;
  static bool ge(const Scalar& a, const Scalar& b) {
    return a >= b - kRelTol * std::max({Scalar(1), abs_of(a), abs_of(b)});
  }
  static bool gt(const Scalar& a, const Scalar& b) {
    return a > b + kRelTol * std::max({Scalar(1), abs_of(a), abs_of(b)});
  }
  static Scalar abs_of(const Scalar& a) { return a < 0 ? Scalar(-a) : a; }
  static double to_double(const Scalar& a) { return static_cast<double>(a); }
};

template <>
struct ScalarOps<Rational> {
  static bool ge(const Rational& a, const Rational& b) { return a >= b; }
  static bool gt(const Rational& a, const Rational& b) { return a > b; }
  static double to_double(const Rational& a) { return static_cast<double>(a); }
};

inline constexpr std::size_t kDefaultSubsetCap = 20;

/// Fair shares and static request probabilities of every agent.
template <class Scalar = double>
struct ThresholdProfile {
  std::vector<Scalar> fair_shares;
  std::vector<Scalar> request_probs;

  std::size_t n() const noexcept { return fair_shares.size(); }

  void validate() const {
    if (fair_shares.size() != request_probs.size() || fair_shares.empty()) {
      throw ConfigError("profile needs equal-length, nonempty shares and probabilities");
    }
    Scalar sum = 0;
    for (const auto& a : fair_shares) {
      if (!(a > 0)) throw ConfigError("profile fair shares must be positive");
      sum += a;
    }
    if (!ScalarOps<Scalar>::ge(sum, Scalar(1)) || !ScalarOps<Scalar>::ge(Scalar(1), sum)) {
      throw ConfigError("profile fair shares must sum to 1");
    }
    for (const auto& p : request_probs) {
      if (!(p >= 0 && p <= 1)) throw ConfigError("profile request probabilities must lie in [0, 1]");
    }
  }

  static ThresholdProfile symmetric(std::size_t n, const Scalar& p) {
    return {std::vector<Scalar>(n, Scalar(1) / Scalar(static_cast<long long>(n))),
            std::vector<Scalar>(n, p)};
  }
};

using AgentSet = std::vector<std::size_t>;

namespace detail {

// Group quantities for every subset of `members`, indexed by bitmask over
// positions in `members`: probability nobody requests, total share and the
// normalized group rate (1 - prod(1 - p)) / sum(alpha).
template <class Scalar>
struct SubsetTable {
  std::vector<std::size_t> members;
  std::vector<Scalar> miss;
  std::vector<Scalar> share;
  std::vector<Scalar> rate;

  SubsetTable(const ThresholdProfile<Scalar>& profile, AgentSet agents, std::size_t cap) {
    members = std::move(agents);
    if (members.size() > cap) {
      throw SizeError("subset enumeration over " + std::to_string(members.size()) +
                      " agents exceeds the cap of " + std::to_string(cap) +
                      "; raise the cap explicitly to proceed");
    }
    if (members.size() > 30) throw SizeError("subset enumeration supports at most 30 agents");
    const std::size_t m = members.size();
    const std::size_t count = std::size_t{1} << m;
    miss.assign(count, Scalar(1));
    share.assign(count, Scalar(0));
    rate.assign(count, Scalar(0));
    for (std::size_t mask = 1; mask < count; ++mask) {
      const auto low = static_cast<std::size_t>(std::countr_zero(mask));
      const std::size_t rest = mask & (mask - 1);
      const std::size_t agent = members[low];
      miss[mask] = miss[rest] * (Scalar(1) - profile.request_probs[agent]);
      share[mask] = share[rest] + profile.fair_shares[agent];
      rate[mask] = (Scalar(1) - miss[mask]) / share[mask];
    }
  }

  std::size_t full() const { return (std::size_t{1} << members.size()) - 1; }

  AgentSet agents_of(std::size_t mask) const {
    AgentSet out;
    for (std::size_t b = 0; b < members.size(); ++b) {
      if (mask >> b & 1U) out.push_back(members[b]);
    }
    return out;
  }

  // min over nonempty submasks R of mask (R == mask included) of rate[R].
  std::vector<Scalar> min_submask_rate() const {
    std::vector<Scalar> best(rate);
    const std::size_t m = members.size();
    for (std::size_t b = 0; b < m; ++b) {
      for (std::size_t mask = 1; mask <= full(); ++mask) {
        if ((mask >> b & 1U) && (mask ^ (std::size_t{1} << b)) != 0) {
          const auto& other = best[mask ^ (std::size_t{1} << b)];
          if (other < best[mask]) best[mask] = other;
        }
      }
    }
    return best;
  }
};

inline AgentSet canonical_set(std::span<const std::size_t> agents, std::size_t n) {
  AgentSet s(agents.begin(), agents.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  if (s.empty()) throw ConfigError("agent set must be nonempty");
  if (s.back() >= n) throw ConfigError("agent index out of range");
  return s;
}

}  // namespace detail

/// Subgroup stability: every nonempty R within S has group rate at least the
/// rate of S. The strict variant requires strict inequality for proper R.
template <class Scalar>
bool is_stable(std::span<const std::size_t> agents, const ThresholdProfile<Scalar>& profile,
               bool strict = false, std::size_t cap = kDefaultSubsetCap) {
  profile.validate();
  detail::SubsetTable<Scalar> table(profile, detail::canonical_set(agents, profile.n()), cap);
  const std::size_t full = table.full();
  const Scalar& target = table.rate[full];
  for (std::size_t r = 1; r < full; ++r) {
    const bool ok = strict ? ScalarOps<Scalar>::gt(table.rate[r], target)
                           : ScalarOps<Scalar>::ge(table.rate[r], target);
    if (!ok) return false;
  }
  return true;
}

template <class Scalar>
bool is_stable(std::initializer_list<std::size_t> agents, const ThresholdProfile<Scalar>& profile,
               bool strict = false, std::size_t cap = kDefaultSubsetCap) {
  const AgentSet s(agents);
  return is_stable<Scalar>(std::span<const std::size_t>(s), profile, strict, cap);
}

/// Ordered groups C_1, ..., C_m. Earlier groups hold priority over later ones
/// in the long run, so their normalized win rates are strictly smaller.
struct SplittingPartition {
  std::vector<AgentSet> groups;
  std::vector<double> group_rates;  // slope_i / alpha_i, shared within a group
  std::vector<double> slopes;       // per agent: lim W_i[t] / t

  std::size_t group_of(std::size_t agent) const {
    for (std::size_t u = 0; u < groups.size(); ++u) {
      if (std::find(groups[u].begin(), groups[u].end(), agent) != groups[u].end()) return u;
    }
    throw InvariantError("agent missing from partition");
  }
};

template <class Scalar>
std::string describe_profile(const ThresholdProfile<Scalar>& profile) {
  std::ostringstream os;
  os.precision(17);
  os << "alpha=[";
  for (std::size_t i = 0; i < profile.n(); ++i) {
    os << (i ? "," : "") << ScalarOps<Scalar>::to_double(profile.fair_shares[i]);
  }
  os << "] p=[";
  for (std::size_t i = 0; i < profile.n(); ++i) {
    os << (i ? "," : "") << ScalarOps<Scalar>::to_double(profile.request_probs[i]);
  }
  os << "]";
  return os.str();
}

/// Unique splitting partition. Repeatedly take the remaining agent with the
/// smallest p_i / alpha_i (lowest index on ties), split off the maximal stable
/// subset of the remaining agents containing it, and verify that this subset
/// contains every other stable subset containing that agent.
template <class Scalar>
SplittingPartition splitting_partition(const ThresholdProfile<Scalar>& profile,
                                       std::size_t cap = kDefaultSubsetCap) {
  profile.validate();
  const std::size_t n = profile.n();
  if (n > cap) {
    throw SizeError("splitting partition over " + std::to_string(n) +
                    " agents exceeds the cap of " + std::to_string(cap) +
                    "; raise the cap explicitly to proceed");
  }

  SplittingPartition out;
  out.slopes.assign(n, 0.0);
  AgentSet remaining(n);
  for (std::size_t i = 0; i < n; ++i) remaining[i] = i;
  Scalar none_before = 1;  // probability no agent of an earlier group requests

  while (!remaining.empty()) {
    detail::SubsetTable<Scalar> table(profile, remaining, cap);
    const auto min_rate = table.min_submask_rate();

    std::size_t pivot_pos = 0;
    for (std::size_t b = 1; b < remaining.size(); ++b) {
      const std::size_t i = remaining[b];
      const std::size_t j = remaining[pivot_pos];
      if (profile.request_probs[i] * profile.fair_shares[j] <
          profile.request_probs[j] * profile.fair_shares[i]) {
        pivot_pos = b;
      }
    }
    const std::size_t pivot_bit = std::size_t{1} << pivot_pos;

    std::optional<std::size_t> best;
    std::vector<std::size_t> stable_sets;
    for (std::size_t mask = 1; mask <= table.full(); ++mask) {
      if (!(mask & pivot_bit)) continue;
      if (!ScalarOps<Scalar>::ge(min_rate[mask], table.rate[mask])) continue;
      stable_sets.push_back(mask);
      if (!best || std::popcount(mask) > std::popcount(*best)) best = mask;
    }
    if (!best) throw InvariantError("no stable set contains the pivot agent");
    for (std::size_t mask : stable_sets) {
      if ((mask & *best) != mask) {
        throw InvariantError("maximal stable set is not unique for profile " +
                             describe_profile(profile));
      }
    }

    const AgentSet group = table.agents_of(*best);
    const Scalar hit = Scalar(1) - table.miss[*best];
    const Scalar group_share = table.share[*best];
    for (std::size_t i : group) {
      out.slopes[i] =
          ScalarOps<Scalar>::to_double(profile.fair_shares[i] / group_share * hit * none_before);
    }
    out.group_rates.push_back(ScalarOps<Scalar>::to_double(hit * none_before / group_share));
    out.groups.push_back(group);
    none_before *= table.miss[*best];

    AgentSet rest;
    for (std::size_t i : remaining) {
      if (std::find(group.begin(), group.end(), i) == group.end()) rest.push_back(i);
    }
    remaining = std::move(rest);
  }
  return out;
}

/// Long-run win rates lim W_i[t] / t.
template <class Scalar>
std::vector<double> predicted_win_slopes(const ThresholdProfile<Scalar>& profile,
                                         std::size_t cap = kDefaultSubsetCap) {
  return splitting_partition(profile, cap).slopes;
}

/// Long-run per-round utilities: slope_i * V_i(p_i), and 0 for p_i = 0.
inline std::vector<double> predicted_utility(const ThresholdProfile<double>& profile,
                                             std::span<const ValueDistribution> dists,
                                             std::size_t cap = kDefaultSubsetCap) {
  if (dists.size() != profile.n()) throw ConfigError("predicted_utility: one distribution per agent");
  const auto slopes = predicted_win_slopes(profile, cap);
  std::vector<double> out(profile.n(), 0.0);
  for (std::size_t i = 0; i < profile.n(); ++i) {
    const double p = profile.request_probs[i];
    if (p > 0.0) out[i] = slopes[i] * dists[i].conditional_mean(p);
  }
  return out;
}

/// alpha * V(alpha): utility from winning exactly a fair-share fraction of
/// rounds at one's top values.
inline double ideal_utility(const ValueDistribution& dist, double share) {
  if (!(share > 0.0 && share <= 1.0)) throw DomainError("ideal_utility: share must lie in (0, 1]");
  return share * dist.conditional_mean(share);
}

/// argmax over nonempty U within S of
///   (1 - prod_{U}(1 - p)) / sum_{U} alpha * prod_{S \ U}(1 - p),
/// lowest mask on ties. Its maximizer is always stable, which makes it an
/// independent cross-check for the stability predicate.
template <class Scalar>
AgentSet max_rate_subset(std::span<const std::size_t> agents, const ThresholdProfile<Scalar>& profile,
                         std::size_t cap = kDefaultSubsetCap) {
  profile.validate();
  detail::SubsetTable<Scalar> table(profile, detail::canonical_set(agents, profile.n()), cap);
  std::size_t best = 1;
  Scalar best_value = -1;
  for (std::size_t u = 1; u <= table.full(); ++u) {
    const Scalar value = table.rate[u] * table.miss[table.full() ^ u];
    if (value > best_value) {
      best_value = value;
      best = u;
    }
  }
  return table.agents_of(best);
}

/// Disjoint (R, U) with
///   (1 - prod_U(1-p)) / alpha(U) < prod_{k not in R}(1-p) (1 - prod_R(1-p)) / alpha(R),
/// i.e. R out-wins U in normalized terms even with the lowest priority.
struct InstabilityWitness {
  AgentSet high;   // R
  AgentSet low;    // U
  double margin;   // right-hand side minus left-hand side
};

/// Witness with the largest margin, if any. Enumerates 3^n assignments.
inline std::optional<InstabilityWitness> find_instability_witness(
    const ThresholdProfile<double>& profile, std::size_t cap = 12) {
  profile.validate();
  const std::size_t n = profile.n();
  if (n > cap) throw SizeError("witness search exceeds the cap of " + std::to_string(cap));
  AgentSet all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  detail::SubsetTable<double> table(profile, all, cap);
  const std::size_t full = table.full();
  std::optional<InstabilityWitness> best;
  for (std::size_t r = 1; r <= full; ++r) {
    const std::size_t others = full ^ r;
    const double rhs = table.miss[others] * table.rate[r];
    for (std::size_t u = others; u != 0; u = (u - 1) & others) {
      const double margin = rhs - table.rate[u];
      if (margin > 0.0 && (!best || margin > best->margin)) {
        best = InstabilityWitness{table.agents_of(r), table.agents_of(u), margin};
      }
    }
  }
  return best;
}

/// Per-checkpoint collapse statistics of a recorded run against a partition.
struct CollapseDiagnostic {
  std::vector<std::int64_t> times;
  std::vector<double> gap_global;      // max_{i,j} |W_i/alpha_i - W_j/alpha_j|
  std::vector<double> gap_within_max;  // same, maximized over pairs in one group
  std::vector<double> gap_cross_min;   // min over groups u < v of min_{C_v} - max_{C_u}
  std::vector<std::vector<double>> normalized;  // X_i[t] = W_i/alpha_i - K[t]
  std::size_t group_count = 1;

  /// Largest gap_within / envelope(t) over checkpoints with t >= from.
  double fitted_within_constant(std::int64_t from, bool strict_envelope = true) const {
    double c = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (times[k] < from) continue;
      const double env = collapse_envelope(times[k], strict_envelope);
      if (env > 0.0) c = std::max(c, gap_within_max[k] / env);
    }
    return c;
  }

  bool within_bounded(double constant, std::int64_t from, bool strict_envelope = true) const {
    return fitted_within_constant(from, strict_envelope) <= constant;
  }

  /// True if at the last checkpoint the cross-group gap is at least c * t.
  bool cross_linear(double constant) const {
    if (times.empty()) return true;
    return gap_cross_min.back() >= constant * static_cast<double>(times.back());
  }

  /// sqrt(t log t) for strictly stable groups, t^0.75 otherwise.
  static double collapse_envelope(std::int64_t t, bool strict_envelope) {
    const double td = static_cast<double>(t);
    if (strict_envelope) return td > 1.0 ? std::sqrt(td * std::log(td)) : 0.0;
    return std::pow(td, 0.75);
  }
};

inline CollapseDiagnostic collapse_diagnostic(const Trajectory& trajectory,
                                              const SplittingPartition& partition) {
  const std::size_t n = trajectory.n();
  CollapseDiagnostic d;
  d.group_count = partition.groups.size();
  for (const auto& snap : trajectory.snapshots) {
    std::vector<double> ratio(n);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      ratio[i] = static_cast<double>(snap.wins[i]) / trajectory.fair_shares[i];
      x[i] = ratio[i] - static_cast<double>(snap.total_wins);
    }
    double global = 0.0;
    if (n > 0) {
      const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
      global = *hi - *lo;
    }
    double within = 0.0;
    std::vector<double> gmin, gmax;
    for (const auto& g : partition.groups) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i : g) {
        lo = std::min(lo, ratio[i]);
        hi = std::max(hi, ratio[i]);
      }
      within = std::max(within, hi - lo);
      gmin.push_back(lo);
      gmax.push_back(hi);
    }
    double cross = std::numeric_limits<double>::infinity();
    for (std::size_t u = 0; u < partition.groups.size(); ++u) {
      for (std::size_t v = u + 1; v < partition.groups.size(); ++v) {
        cross = std::min(cross, gmin[v] - gmax[u]);
      }
    }
    if (partition.groups.size() < 2) cross = 0.0;
    d.times.push_back(snap.t);
    d.gap_global.push_back(global);
    d.gap_within_max.push_back(within);
    d.gap_cross_min.push_back(cross);
    d.normalized.push_back(std::move(x));
  }
  return d;
}

/// Last recorded round at which some agent of a later group had a normalized
/// win count at or below that of an agent of an earlier group; 0 if never.
inline std::int64_t last_cross_group_inversion(const CollapseDiagnostic& diag) {
  std::int64_t last = 0;
  if (diag.group_count < 2) return last;
  for (std::size_t k = 0; k < diag.times.size(); ++k) {
    if (diag.gap_cross_min[k] <= 0.0) {
      last = diag.times[k];
    }
  }
  return last;
}

}  // namespace dmmf
