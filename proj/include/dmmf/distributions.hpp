#pragma once

// Per-round value laws, the quantile request rule and conditional means.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dmmf/errors.hpp"
#include "dmmf/rng.hpp"

namespace dmmf {

struct Atom {
  double value = 0.0;
  double probability = 0.0;
};

/// Threshold form of a request probability: request when the value exceeds
/// `threshold`; at exactly `threshold` request with `atom_request_probability`.
struct RequestRule {
  double threshold = 1.0;
  double atom_request_probability = 0.0;
};

/// A value distribution on [0, 1]: either Uniform(0, 1) or finitely supported.
///
/// Finite supports are canonicalized on construction: duplicate values are
/// merged, zero-mass atoms dropped and atoms sorted by value. Tail masses and
/// tail first moments are accumulated in exact rational arithmetic over the
/// given (binary) probabilities, so conditional means stay accurate for tiny
/// atom values.
class ValueDistribution {
 public:
  enum class Kind { Uniform01, FiniteSupport };

  static ValueDistribution uniform01() { return ValueDistribution(); }

  static ValueDistribution finite(std::vector<Atom> atoms) {
    ValueDistribution d;
    d.kind_ = Kind::FiniteSupport;
    d.set_support(std::move(atoms));
    return d;
  }

  /// Mass q at value 1 and mass 1 - q at value eps.
  static ValueDistribution two_point(double q, double eps) {
    return finite({{eps, 1.0 - q}, {1.0, q}});
  }

  Kind kind() const noexcept { return kind_; }
  bool is_uniform() const noexcept { return kind_ == Kind::Uniform01; }
  const std::vector<Atom>& support() const noexcept { return atoms_; }

  double mean() const {
    if (is_uniform()) return 0.5;
    return static_cast<double>(tail_moment_[0]);
  }

  /// P(V > x).
  double survival(double x) const {
    if (is_uniform()) return std::clamp(1.0 - x, 0.0, 1.0);
    auto it = std::upper_bound(atoms_.begin(), atoms_.end(), x,
                               [](double v, const Atom& a) { return v < a.value; });
    return static_cast<double>(tail_mass_[static_cast<std::size_t>(it - atoms_.begin())]);
  }

  /// The top-p quantile rule: lambda(p) = sup{l : P(V > l) >= p} plus the
  /// randomization at the threshold atom that makes P(request) exactly p.
  RequestRule quantile_threshold(double p) const {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("quantile_threshold: p must lie in [0, 1], got " + std::to_string(p));
    }
    if (is_uniform()) return {1.0 - p, 0.0};
    if (p == 0.0) return {1.0, 0.0};
    const std::size_t k = last_tail_at_least(p);
    const long double above = tail_mass_[k + 1];
    const long double atom = tail_mass_[k] - tail_mass_[k + 1];
    const double a = static_cast<double>((static_cast<long double>(p) - above) / atom);
    return {atoms_[k].value, std::clamp(a, 0.0, 1.0)};
  }

  /// Probability that `rule` requests.
  double request_probability(const RequestRule& rule) const {
    if (is_uniform()) return std::clamp(1.0 - rule.threshold, 0.0, 1.0);
    auto it = std::lower_bound(atoms_.begin(), atoms_.end(), rule.threshold,
                               [](const Atom& a, double v) { return a.value < v; });
    const auto idx = static_cast<std::size_t>(it - atoms_.begin());
    if (it != atoms_.end() && it->value == rule.threshold) {
      return static_cast<double>(tail_mass_[idx + 1] +
                                 rule.atom_request_probability *
                                     (tail_mass_[idx] - tail_mass_[idx + 1]));
    }
    return static_cast<double>(tail_mass_[idx]);
  }

  /// Mean value conditioned on requesting under the top-p quantile rule.
  double conditional_mean(double p) const {
    if (!(p > 0.0 && p <= 1.0)) {
      throw DomainError("conditional_mean: p must lie in (0, 1], got " + std::to_string(p));
    }
    if (is_uniform()) return 1.0 - p / 2.0;
    const std::size_t k = last_tail_at_least(p);
    const long double lp = p;
    const long double partial = lp - tail_mass_[k + 1];
    return static_cast<double>((tail_moment_[k + 1] + atoms_[k].value * partial) / lp);
  }

  double sample(Rng& rng) const {
    if (is_uniform()) return rng.uniform_open();
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min(static_cast<std::size_t>(it - cdf_.begin()), atoms_.size() - 1);
    return atoms_[idx].value;
  }

  /// Same law with every value multiplied by `c` in (0, 1].
  ValueDistribution scaled(double c) const {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("scaled: factor must lie in (0, 1]");
    if (is_uniform()) throw DomainError("scaled: only finite supports can be rescaled");
    std::vector<Atom> atoms = atoms_;
    for (auto& a : atoms) a.value *= c;
    return finite(std::move(atoms));
  }

  friend bool operator==(const ValueDistribution& a, const ValueDistribution& b) {
    if (a.kind_ != b.kind_ || a.atoms_.size() != b.atoms_.size()) return false;
    for (std::size_t i = 0; i < a.atoms_.size(); ++i) {
      if (a.atoms_[i].value != b.atoms_[i].value ||
          a.atoms_[i].probability != b.atoms_[i].probability) {
        return false;
      }
    }
    return true;
  }

 private:
  ValueDistribution() = default;

  // Largest k with tail_mass_[k] >= p. Requires p > 0, so k < atoms_.size().
  std::size_t last_tail_at_least(double p) const {
    const long double lp = p;
    std::size_t lo = 0;
    std::size_t hi = atoms_.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (tail_mass_[mid] >= lp) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    return lo;
  }

  void set_support(std::vector<Atom> atoms) {
    using boost::multiprecision::cpp_rational;
    if (atoms.empty()) throw ConfigError("finite distribution needs at least one atom");
    for (const auto& a : atoms) {
      if (!(a.value >= 0.0 && a.value <= 1.0)) {
        throw ConfigError("distribution value outside [0, 1]: " + std::to_string(a.value));
      }
      if (!(a.probability >= 0.0) || !std::isfinite(a.probability)) {
        throw ConfigError("distribution probability must be nonnegative");
      }
    }
    std::sort(atoms.begin(), atoms.end(),
              [](const Atom& x, const Atom& y) { return x.value < y.value; });

    std::vector<std::pair<double, cpp_rational>> merged;
    for (const auto& a : atoms) {
      if (!merged.empty() && merged.back().first == a.value) {
        merged.back().second += cpp_rational(a.probability);
      } else {
        merged.emplace_back(a.value, cpp_rational(a.probability));
      }
    }
    cpp_rational total = 0;
    for (const auto& m : merged) total += m.second;
    if (abs(total - 1) > cpp_rational(1e-12)) {
      throw ConfigError("distribution probabilities sum to " +
                        std::to_string(static_cast<double>(total)) + ", expected 1");
    }
    std::erase_if(merged, [](const auto& m) { return m.second == 0; });

    // Mass is renormalized exactly so the tails end at 0 and start at 1.
    const std::size_t m = merged.size();
    atoms_.clear();
    tail_mass_.assign(m + 1, 0.0L);
    tail_moment_.assign(m + 1, 0.0L);
    cdf_.assign(m, 0.0);
    cpp_rational mass_acc = 0;
    cpp_rational moment_acc = 0;
    for (std::size_t i = m; i-- > 0;) {
      const cpp_rational prob = merged[i].second / total;
      mass_acc += prob;
      moment_acc += prob * cpp_rational(merged[i].first);
      tail_mass_[i] = static_cast<long double>(mass_acc);
      tail_moment_[i] = static_cast<long double>(moment_acc);
    }
    cpp_rational below = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const cpp_rational prob = merged[i].second / total;
      atoms_.push_back({merged[i].first, static_cast<double>(prob)});
      below += prob;
      cdf_[i] = static_cast<double>(below);
    }
    cdf_.back() = 1.0;
  }

  Kind kind_ = Kind::Uniform01;
  std::vector<Atom> atoms_;
  std::vector<long double> tail_mass_;    // P(V >= atoms_[k].value); back() == 0
  std::vector<long double> tail_moment_;  // E[V; V >= atoms_[k].value]
  std::vector<double> cdf_;               // P(V <= atoms_[k].value)
};

inline RequestRule quantile_threshold(const ValueDistribution& dist, double p) {
  return dist.quantile_threshold(p);
}

inline double conditional_mean(const ValueDistribution& dist, double p) {
  return dist.conditional_mean(p);
}

inline double sample_value(const ValueDistribution& dist, Rng& rng) { return dist.sample(rng); }

/// True iff value > threshold, or value == threshold and the atom coin lands.
/// The coin is only drawn for values exactly at the threshold.
inline bool request_decision(const RequestRule& rule, double value, Rng& rng) {
  if (value > rule.threshold) return true;
  if (value < rule.threshold) return false;
  return rng.bernoulli(rule.atom_request_probability);
}

}  // namespace dmmf
