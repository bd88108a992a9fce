#pragma once

// Solvers for the one-shot game whose actions are static request
// probabilities and whose payoffs are the predicted long-run utilities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dmmf/analysis.hpp"
#include "dmmf/distributions.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/strategies.hpp"

namespace dmmf {

inline constexpr double kDefaultResolution = 1e-3;
inline constexpr double kDefaultRefineTolerance = 1e-7;

struct Maximum {
  double argmax = 0.0;
  double value = 0.0;
};

namespace detail {

inline std::size_t grid_steps(double lo, double hi, double resolution) {
  if (!(resolution > 0.0)) throw ConfigError("grid resolution must be positive");
  if (!(hi >= lo)) throw ConfigError("grid range is empty");
  const double steps = std::round((hi - lo) / resolution);
  if (steps > 1e8) throw SizeError("grid too fine");
  return std::max<std::size_t>(1, static_cast<std::size_t>(steps));
}

inline double grid_point(double lo, double hi, std::size_t k, std::size_t steps) {
  if (k == steps) return hi;
  return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps);
}

// Golden-section search for a maximum of f on [a, b].
inline Maximum golden_section_max(const std::function<double(double)>& f, double a, double b,
                                  double tol) {
  constexpr double kInvPhi = 0.6180339887498948482;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  return {x, f(x)};
}

// Grid scan over [lo, hi] followed by golden-section refinement on the
// bracket around the best grid point. Ties resolve to the smallest argument.
struct ScanResult {
  Maximum best;
  std::size_t best_index = 0;
  std::vector<double> grid_values;
  std::size_t steps = 0;
};

inline ScanResult scan_and_refine(const std::function<double(double)>& f, double lo, double hi,
                                  double resolution, double refine_tol) {
  ScanResult out;
  out.steps = grid_steps(lo, hi, resolution);
  out.grid_values.resize(out.steps + 1);
  for (std::size_t k = 0; k <= out.steps; ++k) {
    out.grid_values[k] = f(grid_point(lo, hi, k, out.steps));
    if (k == 0 || out.grid_values[k] > out.grid_values[out.best_index]) out.best_index = k;
  }
  out.best = {grid_point(lo, hi, out.best_index, out.steps), out.grid_values[out.best_index]};
  if (refine_tol > 0.0 && hi > lo) {
    const double a = grid_point(lo, hi, out.best_index == 0 ? 0 : out.best_index - 1, out.steps);
    const double b =
        grid_point(lo, hi, std::min(out.best_index + 1, out.steps), out.steps);
    const auto refined = golden_section_max(f, a, b, refine_tol);
    if (refined.value > out.best.value) out.best = refined;
  }
  return out;
}

}  // namespace detail

/// Symmetric-profile per-agent utility V(p) (1 - (1 - p)^n) / n.
inline double symmetric_utility(const ValueDistribution& dist, int n, double p) {
  if (p <= 0.0) return 0.0;
  return dist.conditional_mean(p) * phi(p, n) / static_cast<double>(n);
}

/// p* = argmax_p V(p) (1 - (1 - p)^n) / n, smallest maximizer on ties.
inline Maximum symmetric_optimum(const ValueDistribution& dist, int n,
                                 double resolution = kDefaultResolution,
                                 double refine_tol = kDefaultRefineTolerance) {
  if (n < 1) throw ConfigError("symmetric_optimum: n must be >= 1");
  auto f = [&](double p) { return symmetric_utility(dist, n, p); };
  return detail::scan_and_refine(f, 0.0, 1.0, resolution, refine_tol).best;
}

/// Agents' fair shares and value laws; payoffs are predicted utilities.
struct ThresholdGame {
  std::vector<double> fair_shares;
  std::vector<ValueDistribution> dists;

  static ThresholdGame symmetric(std::size_t n, const ValueDistribution& dist) {
    return {std::vector<double>(n, 1.0 / static_cast<double>(n)),
            std::vector<ValueDistribution>(n, dist)};
  }

  std::size_t n() const noexcept { return fair_shares.size(); }

  std::vector<double> payoffs(std::span<const double> probs) const {
    ThresholdProfile<double> profile{fair_shares, std::vector<double>(probs.begin(), probs.end())};
    return predicted_utility(profile, dists);
  }

  double payoff(std::size_t agent, std::span<const double> probs) const {
    return payoffs(probs)[agent];
  }
};

struct BestResponseResult {
  std::size_t responder = 0;
  double argmax = 0.0;
  double payoff = 0.0;
  double incumbent = 0.0;
  double incumbent_payoff = 0.0;
  double improvement = 0.0;
  double resolution = 0.0;
  /// Best grid point that is a local maximum outside the winning bracket.
  std::optional<Maximum> runner_up;
};

/// Grid argmax of the responder's payoff over its own coordinate on [lo, hi],
/// with golden-section refinement. `probs[responder]` is the incumbent action.
inline BestResponseResult best_response(const ThresholdGame& game, std::size_t responder,
                                        std::span<const double> probs,
                                        double resolution = kDefaultResolution,
                                        double lo = 0.0, double hi = 1.0,
                                        double refine_tol = kDefaultRefineTolerance) {
  if (probs.size() != game.n() || responder >= game.n()) {
    throw ConfigError("best_response: profile/responder does not match the game");
  }
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("best_response: probabilities must lie in [0, 1]");
  }
  std::vector<double> work(probs.begin(), probs.end());
  auto f = [&](double x) {
    work[responder] = x;
    return game.payoff(responder, work);
  };
  const auto scan = detail::scan_and_refine(f, lo, hi, resolution, refine_tol);

  BestResponseResult out;
  out.responder = responder;
  out.argmax = scan.best.argmax;
  out.payoff = scan.best.value;
  out.incumbent = probs[responder];
  out.incumbent_payoff = f(probs[responder]);
  out.improvement = out.payoff - out.incumbent_payoff;
  out.resolution = resolution;

  const auto& g = scan.grid_values;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (k + 1 >= scan.best_index && k <= scan.best_index + 1) continue;
    const bool left_ok = k == 0 || g[k] >= g[k - 1];
    const bool right_ok = k + 1 == g.size() || g[k] >= g[k + 1];
    if (left_ok && right_ok && (!out.runner_up || g[k] > out.runner_up->value)) {
      out.runner_up = Maximum{detail::grid_point(lo, hi, k, scan.steps), g[k]};
    }
  }
  return out;
}

struct NeScanResult {
  double certificate_gap = 0.0;  // min over profiles of max unilateral improvement
  std::vector<double> certificate_profile;
  double resolution = 0.0;
  double epsilon = 0.0;
  double lo = 0.0;
  double hi = 1.0;
  std::size_t profiles_scanned = 0;
  std::vector<std::vector<double>> eps_equilibria;
};

inline constexpr std::size_t kMaxScanPlayers = 3;
inline constexpr std::size_t kMaxScanProfiles = 20'000'000;

/// Scans the grid [lo, hi]^n. For every profile, each player's improvement is
/// its best grid payoff against the others minus its current payoff.
/// Profiles whose largest improvement is at most epsilon are reported; with no
/// epsilon given, half the certificate gap is used.
inline NeScanResult pure_ne_scan(const ThresholdGame& game, double resolution = kDefaultResolution,
                                 std::optional<double> epsilon = std::nullopt, double lo = 0.0,
                                 double hi = 1.0) {
  const std::size_t n = game.n();
  if (n == 0 || n > kMaxScanPlayers) {
    throw SizeError("pure_ne_scan supports 1 to " + std::to_string(kMaxScanPlayers) + " players");
  }
  if (!(lo >= 0.0 && hi <= 1.0)) throw ConfigError("pure_ne_scan: range must lie in [0, 1]");
  const std::size_t steps = detail::grid_steps(lo, hi, resolution);
  const std::size_t side = steps + 1;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) {
    total *= side;
    if (total > kMaxScanProfiles) {
      throw SizeError("pure_ne_scan grid has more than " + std::to_string(kMaxScanProfiles) +
                      " profiles; coarsen the resolution");
    }
  }
  std::vector<double> points(side);
  for (std::size_t k = 0; k < side; ++k) points[k] = detail::grid_point(lo, hi, k, steps);

  std::vector<std::size_t> stride(n, 1);
  for (std::size_t i = 1; i < n; ++i) stride[i] = stride[i - 1] * side;
  auto digit = [&](std::size_t idx, std::size_t i) { return idx / stride[i] % side; };

  std::vector<std::vector<double>> pay(n, std::vector<double>(total));
  std::vector<double> probs(n);
  for (std::size_t idx = 0; idx < total; ++idx) {
    for (std::size_t i = 0; i < n; ++i) probs[i] = points[digit(idx, i)];
    const auto u = game.payoffs(probs);
    for (std::size_t i = 0; i < n; ++i) pay[i][idx] = u[i];
  }

  // best[i][idx with digit i zeroed] = max over own action.
  std::vector<std::vector<double>> best(n, std::vector<double>(total, -1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t idx = 0; idx < total; ++idx) {
      const std::size_t key = idx - digit(idx, i) * stride[i];
      best[i][key] = std::max(best[i][key], pay[i][idx]);
    }
  }

  std::vector<double> worst_gain(total, 0.0);
  NeScanResult out;
  out.resolution = resolution;
  out.lo = lo;
  out.hi = hi;
  out.profiles_scanned = total;
  out.certificate_gap = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    double gain = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t key = idx - digit(idx, i) * stride[i];
      gain = std::max(gain, best[i][key] - pay[i][idx]);
    }
    worst_gain[idx] = gain;
    if (gain < out.certificate_gap) {
      out.certificate_gap = gain;
      arg = idx;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.certificate_profile.push_back(points[digit(arg, i)]);
  out.epsilon = epsilon.value_or(out.certificate_gap / 2.0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    if (worst_gain[idx] <= out.epsilon) {
      std::vector<double> prof(n);
      for (std::size_t i = 0; i < n; ++i) prof[i] = points[digit(idx, i)];
      out.eps_equilibria.push_back(std::move(prof));
    }
  }
  return out;
}

/// Two agents with equal shares, both on the two-point law (mass q at 1, the
/// rest at eps). Closed-form utilities on the stable region within [q, 1]^2;
/// elsewhere the general predictor is used.
inline bool two_point_closed_form_applies(double p1, double p2, double q) {
  const double lo = std::min(p1, p2);
  const double hi = std::max(p1, p2);
  return lo >= q && hi <= 1.0 && hi * (1.0 - lo) <= lo * (1.0 + 1e-12);
}

inline std::pair<double, double> two_point_utility(double p1, double p2, double q, double eps) {
  if (two_point_closed_form_applies(p1, p2, q)) {
    const double shared = (1.0 - (1.0 - p1) * (1.0 - p2)) / 2.0;
    return {shared * (q + eps * (p1 - q)) / p1, shared * (q + eps * (p2 - q)) / p2};
  }
  const auto game = ThresholdGame::symmetric(2, ValueDistribution::two_point(q, eps));
  const double probs[2] = {p1, p2};
  const auto u = game.payoffs(probs);
  return {u[0], u[1]};
}

/// dU_1/dp_1 on the stable region of the two-point game.
inline double two_point_du1_dp1(double p1, double p2, double q, double eps) {
  return eps * (1.0 - p2) / 2.0 - q * (1.0 - eps) * p2 / (2.0 * p1 * p1);
}

}  // namespace dmmf
