#pragma once

// The dynamic max-min fair allocation engine: each round the item goes to the
// requester with the fewest wins relative to its fair share.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmmf/distributions.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/rng.hpp"
#include "dmmf/strategies.hpp"

namespace dmmf {

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;
};

/// Best rational approximation of x with denominator <= max_den, if it
/// reproduces x to within a few ulps.
inline std::optional<Fraction> as_fraction(double x, std::int64_t max_den = 1'000'000) {
  if (!(x > 0.0) || !std::isfinite(x)) return std::nullopt;
  std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double rem = x;
  for (int iter = 0; iter < 64; ++iter) {
    const double a_d = std::floor(rem);
    if (a_d > 1e12) break;
    const auto a = static_cast<std::int64_t>(a_d);
    const std::int64_t h2 = a * h1 + h0;
    const std::int64_t k2 = a * k1 + k0;
    if (k2 > max_den) break;
    h0 = h1;
    h1 = h2;
    k0 = k1;
    k1 = k2;
    const double approx = static_cast<double>(h1) / static_cast<double>(k1);
    if (std::abs(approx - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x) {
      return Fraction{h1, k1};
    }
    const double frac = rem - a_d;
    if (frac <= 0.0) break;
    rem = 1.0 / frac;
  }
  return std::nullopt;
}

/// Agent count and fair shares. When every share is a small-denominator
/// rational, shares are also held as integer weights over a common
/// denominator and priorities are compared exactly.
class MechanismConfig {
 public:
  MechanismConfig() = default;

  static MechanismConfig equal_shares(std::size_t n) {
    if (n == 0) throw ConfigError("mechanism needs at least one agent");
    std::vector<Fraction> shares(n, Fraction{1, static_cast<std::int64_t>(n)});
    return from_fractions(shares);
  }

  static MechanismConfig from_shares(std::vector<double> shares) {
    std::vector<Fraction> fracs;
    for (double a : shares) {
      auto f = as_fraction(a);
      if (!f) break;
      fracs.push_back(*f);
    }
    if (fracs.size() == shares.size() && !shares.empty()) {
      try {
        return from_fractions(fracs);
      } catch (const SizeError&) {
        // Common denominator too large; fall through to float comparisons.
      }
    }
    MechanismConfig c;
    c.shares_ = std::move(shares);
    c.validate();
    return c;
  }

  static MechanismConfig from_fractions(std::span<const Fraction> shares) {
    MechanismConfig c;
    std::int64_t lcm = 1;
    for (const auto& f : shares) {
      if (f.num <= 0 || f.den <= 0) throw ConfigError("fair shares must be positive");
      lcm = std::lcm(lcm, f.den);
      if (lcm > (std::int64_t{1} << 40)) throw SizeError("fair-share denominators too large");
    }
    std::vector<std::int64_t> weights;
    std::int64_t total = 0;
    for (const auto& f : shares) {
      weights.push_back(f.num * (lcm / f.den));
      total += weights.back();
      c.shares_.push_back(static_cast<double>(f.num) / static_cast<double>(f.den));
    }
    if (total != lcm) {
      throw ConfigError("fair shares sum to " + std::to_string(total) + "/" +
                        std::to_string(lcm) + ", expected 1");
    }
    c.weights_ = std::move(weights);
    c.validate();
    return c;
  }

  std::size_t n() const noexcept { return shares_.size(); }
  const std::vector<double>& fair_shares() const noexcept { return shares_; }
  bool exact() const noexcept { return weights_.has_value(); }
  const std::optional<std::vector<std::int64_t>>& integer_weights() const noexcept {
    return weights_;
  }

  /// W_i / alpha_i < W_j / alpha_j.
  bool normalized_less(std::size_t i, std::int64_t wins_i, std::size_t j,
                       std::int64_t wins_j) const {
    if (weights_) {
      const auto& w = *weights_;
      return static_cast<__int128>(wins_i) * w[j] < static_cast<__int128>(wins_j) * w[i];
    }
    return static_cast<double>(wins_i) / shares_[i] < static_cast<double>(wins_j) / shares_[j];
  }

 private:
  void validate() const {
    if (shares_.empty()) throw ConfigError("mechanism needs at least one agent");
    double sum = 0.0;
    for (double a : shares_) {
      if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("fair shares must be positive");
      sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw ConfigError("fair shares sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  std::vector<double> shares_;
  std::optional<std::vector<std::int64_t>> weights_;
};

struct MechanismState {
  std::int64_t t = 0;
  std::vector<std::int64_t> wins;
  std::int64_t total_wins = 0;

  static MechanismState initial(std::size_t n) { return {0, std::vector<std::int64_t>(n, 0), 0}; }
};

struct RoundRecord {
  std::int64_t t = 0;
  std::vector<bool> requests;
  std::optional<std::size_t> winner;
  std::vector<double> values;
};

/// Winner of one round: the requester minimizing W_i / alpha_i, lowest index
/// on ties; none if nobody requested.
inline std::optional<std::size_t> select_winner(const MechanismConfig& config,
                                                std::span<const std::int64_t> wins,
                                                const std::vector<bool>& requests) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!requests[i]) continue;
    if (!best || config.normalized_less(i, wins[i], *best, wins[*best])) best = i;
  }
  return best;
}

inline std::pair<MechanismState, std::optional<std::size_t>> step(
    const MechanismState& state, const MechanismConfig& config, const std::vector<bool>& requests) {
  if (requests.size() != config.n() || state.wins.size() != config.n()) {
    throw ConfigError("step: expected " + std::to_string(config.n()) + " requests, got " +
                      std::to_string(requests.size()));
  }
  MechanismState next = state;
  const auto winner = select_winner(config, state.wins, requests);
  if (winner) {
    ++next.wins[*winner];
    ++next.total_wins;
  }
  ++next.t;
  return {std::move(next), winner};
}

/// What to keep from a run. `Checkpoints` keeps the rounds of the geometric
/// grid ceil(ratio^k) plus the last round; `Full` keeps every round including
/// realized values; `Final` keeps only the last round.
struct RecordingSpec {
  enum class Mode { Final, Checkpoints, Full };
  Mode mode = Mode::Checkpoints;
  double ratio = 1.1;

  static RecordingSpec final_only() { return {Mode::Final, 1.1}; }
  static RecordingSpec checkpoints(double ratio = 1.1) { return {Mode::Checkpoints, ratio}; }
  static RecordingSpec full() { return {Mode::Full, 1.1}; }
};

/// Distinct rounds ceil(ratio^k) for k = 0, 1, ... up to and including horizon.
inline std::vector<std::int64_t> geometric_grid(std::int64_t horizon, double ratio = 1.1) {
  if (!(ratio > 1.0)) throw ConfigError("geometric grid ratio must exceed 1");
  std::vector<std::int64_t> grid;
  double x = 1.0;
  while (true) {
    const auto t = static_cast<std::int64_t>(std::ceil(x - 1e-9));
    if (t > horizon) break;
    if (grid.empty() || grid.back() != t) grid.push_back(t);
    x *= ratio;
  }
  if (grid.empty() || grid.back() != horizon) grid.push_back(horizon);
  return grid;
}

/// State after round t together with that round's requests.
struct Snapshot {
  std::int64_t t = 0;
  std::int64_t total_wins = 0;
  std::vector<std::int64_t> wins;
  std::vector<double> utilities;
  std::vector<bool> requested;
  std::optional<std::size_t> winner;
  std::vector<double> request_probabilities;
  std::vector<double> values;  // Full mode only
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::int64_t horizon = 0;
  std::vector<double> fair_shares;
  std::vector<Snapshot> snapshots;

  std::size_t n() const noexcept { return fair_shares.size(); }
  const Snapshot& last() const { return snapshots.back(); }
};

/// Runs the mechanism for `horizon` rounds. Each agent draws its value from its
/// own stream and randomizes from another; the layout does not depend on
/// `recording`, so recording never changes outcomes.
inline Trajectory run(const MechanismConfig& config, std::span<const ValueDistribution> dists,
                      std::span<const Strategy* const> strategies, std::int64_t horizon,
                      std::uint64_t seed, const RecordingSpec& recording = {}) {
  const std::size_t n = config.n();
  if (dists.size() != n || strategies.size() != n) {
    throw ConfigError("run: need one distribution and one strategy per agent");
  }
  if (horizon < 1) throw ConfigError("run: horizon must be >= 1");
  for (const auto* s : strategies) {
    if (s == nullptr) throw ConfigError("run: null strategy");
  }

  std::vector<Rng> value_rng;
  std::vector<Rng> strategy_rng;
  for (std::size_t i = 0; i < n; ++i) {
    value_rng.push_back(StreamLayout::value_stream(seed, i));
    strategy_rng.push_back(StreamLayout::strategy_stream(seed, i));
  }

  Trajectory traj;
  traj.seed = seed;
  traj.horizon = horizon;
  traj.fair_shares = config.fair_shares();

  std::vector<std::int64_t> grid;
  if (recording.mode == RecordingSpec::Mode::Checkpoints) {
    grid = geometric_grid(horizon, recording.ratio);
  }
  std::size_t next_grid = 0;

  MechanismState state = MechanismState::initial(n);
  std::vector<double> utilities(n, 0.0);
  std::vector<double> values(n, 0.0);
  std::vector<bool> requests(n, false);

  for (std::int64_t t = 1; t <= horizon; ++t) {
    const PublicView view{t, state.total_wins};
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = dists[i].sample(value_rng[i]);
      requests[i] = strategies[i]->decide(values[i], view, dists[i], strategy_rng[i]);
    }
    const auto winner = select_winner(config, state.wins, requests);
    if (winner) {
      ++state.wins[*winner];
      ++state.total_wins;
      utilities[*winner] += values[*winner];
    }
    state.t = t;

    bool keep = false;
    switch (recording.mode) {
      case RecordingSpec::Mode::Full:
        keep = true;
        break;
      case RecordingSpec::Mode::Final:
        keep = t == horizon;
        break;
      case RecordingSpec::Mode::Checkpoints:
        keep = next_grid < grid.size() && grid[next_grid] == t;
        if (keep) ++next_grid;
        break;
    }
    if (keep) {
      Snapshot snap;
      snap.t = t;
      snap.total_wins = state.total_wins;
      snap.wins = state.wins;
      snap.utilities = utilities;
      snap.requested = requests;
      snap.winner = winner;
      snap.request_probabilities.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        snap.request_probabilities[i] = strategies[i]->request_probability(view, dists[i]);
      }
      if (recording.mode == RecordingSpec::Mode::Full) snap.values = values;
      traj.snapshots.push_back(std::move(snap));
    }
  }
  return traj;
}

/// Convenience overload for owned strategies.
inline Trajectory run(const MechanismConfig& config, std::span<const ValueDistribution> dists,
                      const std::vector<std::unique_ptr<Strategy>>& strategies,
                      std::int64_t horizon, std::uint64_t seed,
                      const RecordingSpec& recording = {}) {
  std::vector<const Strategy*> ptrs;
  for (const auto& s : strategies) ptrs.push_back(s.get());
  return run(config, dists, std::span<const Strategy* const>(ptrs), horizon, seed, recording);
}

}  // namespace dmmf
