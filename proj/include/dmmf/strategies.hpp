#pragma once

// Request policies: static thresholds, Win-Rate Matching, value-dependent
// policies and the reduction of the latter to a threshold strategy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dmmf/distributions.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/rng.hpp"

namespace dmmf {

/// Probability that at least one of n independent p-requesters requests.
inline double phi(double p, int n) {
  if (n < 1) throw DomainError("phi: n must be >= 1");
  return 1.0 - std::pow(1.0 - p, n);
}

inline double phi_inv(double x, int n) {
  if (n < 1) throw DomainError("phi_inv: n must be >= 1");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return 1.0 - std::pow(1.0 - x, 1.0 / n);
}

/// What a strategy may observe before round `round` (1-based): the number of
/// earlier rounds in which the item was allocated, K[round - 1].
struct PublicView {
  std::int64_t round = 1;
  std::int64_t allocated_before = 0;
};

class Strategy {
 public:
  virtual ~Strategy() = default;

  /// Overall probability of requesting this round.
  virtual double request_probability(const PublicView& view,
                                     const ValueDistribution& dist) const = 0;

  /// Request decision given the realized value. Threshold strategies request
  /// on the top request_probability() quantile of `dist`.
  virtual bool decide(double value, const PublicView& view, const ValueDistribution& dist,
                      Rng& rng) const {
    return request_decision(dist.quantile_threshold(request_probability(view, dist)), value, rng);
  }

  virtual std::string name() const = 0;
  virtual std::unique_ptr<Strategy> clone() const = 0;
};

class StaticThreshold final : public Strategy {
 public:
  explicit StaticThreshold(double p) : p_(p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("static threshold p must lie in [0, 1]");
  }

  double p() const noexcept { return p_; }

  double request_probability(const PublicView&, const ValueDistribution&) const override {
    return p_;
  }

  std::string name() const override { return "static"; }
  std::unique_ptr<Strategy> clone() const override {
    return std::make_unique<StaticThreshold>(*this);
  }

 private:
  double p_;
};

/// Drift rate eta(t) and gap zeta(t) of Win-Rate Matching.
///
/// `Paper`:  eta(t) = 1 / log(t)^(1/2 - epsilon), zeta(t) = 1 - t^(-1/4).
/// `Linear`: zeta(t) = 1, eta falls linearly from eta0 at t = 1 to eta_min at
///           t = 1 + t0 and stays there.
/// Both are clamped to [0, 1].
struct WrmSchedule {
  enum class Kind { Paper, Linear };

  Kind kind = Kind::Linear;
  double epsilon = 0.1;
  double eta0 = 1.0;
  double eta_min = 0.05;
  double t0 = 10000.0;

  static WrmSchedule paper(double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 0.25)) {
      throw ConfigError("paper schedule needs epsilon in (0, 1/4)");
    }
    WrmSchedule s;
    s.kind = Kind::Paper;
    s.epsilon = epsilon;
    return s;
  }

  static WrmSchedule linear(double eta0 = 1.0, double eta_min = 0.05, double t0 = 10000.0) {
    if (!(eta0 >= 0.0 && eta0 <= 1.0 && eta_min >= 0.0 && eta_min <= 1.0)) {
      throw ConfigError("linear schedule needs eta0, eta_min in [0, 1]");
    }
    if (!(t0 > 0.0)) throw ConfigError("linear schedule needs t0 > 0");
    WrmSchedule s;
    s.kind = Kind::Linear;
    s.eta0 = eta0;
    s.eta_min = eta_min;
    s.t0 = t0;
    return s;
  }

  double eta(std::int64_t t) const {
    const double td = static_cast<double>(t);
    double value = 1.0;
    if (kind == Kind::Paper) {
      const double lg = std::log(td);
      value = lg <= 1.0 ? 1.0 : 1.0 / std::pow(lg, 0.5 - epsilon);
    } else {
      const double frac = (td - 1.0) / t0;
      value = frac >= 1.0 ? eta_min : eta0 + (eta_min - eta0) * frac;
    }
    return std::clamp(value, 0.0, 1.0);
  }

  double zeta(std::int64_t t) const {
    if (kind == Kind::Linear) return 1.0;
    return std::clamp(1.0 - std::pow(static_cast<double>(t), -0.25), 0.0, 1.0);
  }
};

struct WrmParams {
  double p_star = 0.0;
  WrmSchedule schedule;
  int n = 1;
};

/// Upper clamp applied to the argument of phi_inv.
inline constexpr double kWrmArgumentCap = 1.0 - 1e-12;

inline double wrm_from_rate(const WrmParams& params, std::int64_t t, double rate);

/// M[t] = (1 - eta(t)) phi_inv(zeta(t) K[t-1] / (t-1)) + eta(t) p*, with M[1] = p*.
inline double wrm_request_probability(const WrmParams& params, std::int64_t t,
                                      std::int64_t allocated_before) {
  if (t < 1) throw StateError("wrm_request_probability: round must be >= 1");
  if (allocated_before < 0 || allocated_before > t - 1) {
    throw StateError("wrm_request_probability: K[t-1] = " + std::to_string(allocated_before) +
                     " is outside [0, t-1] for t = " + std::to_string(t));
  }
  if (t == 1) return std::clamp(params.p_star, 0.0, 1.0);
  return wrm_from_rate(params, t, static_cast<double>(allocated_before) / static_cast<double>(t - 1));
}

/// Same map with the empirical rate K[t-1] / (t-1) given directly (t >= 2).
inline double wrm_from_rate(const WrmParams& params, std::int64_t t, double rate) {
  const double eta = params.schedule.eta(t);
  const double arg = std::clamp(params.schedule.zeta(t) * rate, 0.0, kWrmArgumentCap);
  const double m = (1.0 - eta) * phi_inv(arg, params.n) + eta * params.p_star;
  return std::clamp(m, 0.0, 1.0);
}

class WinRateMatching final : public Strategy {
 public:
  explicit WinRateMatching(WrmParams params) : params_(std::move(params)) {
    if (params_.n < 1) throw ConfigError("Win-Rate Matching needs n >= 1");
    if (!(params_.p_star >= 0.0 && params_.p_star <= 1.0)) {
      throw ConfigError("Win-Rate Matching needs p* in [0, 1]");
    }
  }

  const WrmParams& params() const noexcept { return params_; }

  double request_probability(const PublicView& view, const ValueDistribution&) const override {
    return wrm_request_probability(params_, view.round, view.allocated_before);
  }

  std::string name() const override { return "wrm"; }
  std::unique_ptr<Strategy> clone() const override {
    return std::make_unique<WinRateMatching>(*this);
  }

 private:
  WrmParams params_;
};

/// A value-dependent request policy, piecewise constant in the value:
/// entry (v_k, q_k) applies on [v_k, v_{k+1}). Values below the first
/// breakpoint never request.
class GenericPolicy {
 public:
  struct Entry {
    double value = 0.0;
    double probability = 0.0;
  };

  explicit GenericPolicy(std::vector<Entry> table) : table_(std::move(table)) {
    if (table_.empty()) throw ConfigError("generic policy table is empty");
    std::sort(table_.begin(), table_.end(),
              [](const Entry& a, const Entry& b) { return a.value < b.value; });
    for (std::size_t k = 0; k < table_.size(); ++k) {
      const auto& e = table_[k];
      if (!(e.probability >= 0.0 && e.probability <= 1.0)) {
        throw ConfigError("generic policy probabilities must lie in [0, 1]");
      }
      if (!(e.value >= 0.0 && e.value <= 1.0)) {
        throw ConfigError("generic policy breakpoints must lie in [0, 1]");
      }
      if (k > 0 && table_[k - 1].value == e.value) {
        throw ConfigError("generic policy has duplicate breakpoint");
      }
    }
  }

  const std::vector<Entry>& table() const noexcept { return table_; }

  double at(double value) const {
    auto it = std::upper_bound(table_.begin(), table_.end(), value,
                               [](double v, const Entry& e) { return v < e.value; });
    if (it == table_.begin()) return 0.0;
    return std::prev(it)->probability;
  }

  bool covers(const ValueDistribution& dist) const {
    const double lowest = dist.is_uniform() ? 0.0 : dist.support().front().value;
    return table_.front().value <= lowest;
  }

  /// Integral of the policy against `dist`.
  double overall_probability(const ValueDistribution& dist) const {
    if (!dist.is_uniform()) {
      long double total = 0.0L;
      for (const auto& a : dist.support()) {
        total += static_cast<long double>(a.probability) * at(a.value);
      }
      return static_cast<double>(total);
    }
    long double total = 0.0L;
    for (std::size_t k = 0; k < table_.size(); ++k) {
      const double lo = table_[k].value;
      const double hi = k + 1 < table_.size() ? table_[k + 1].value : 1.0;
      total += static_cast<long double>(table_[k].probability) * (hi - lo);
    }
    return static_cast<double>(total);
  }

  /// E[V * policy(V)].
  double requested_value_mass(const ValueDistribution& dist) const {
    long double total = 0.0L;
    if (!dist.is_uniform()) {
      for (const auto& a : dist.support()) {
        total += static_cast<long double>(a.probability) * a.value * at(a.value);
      }
    } else {
      for (std::size_t k = 0; k < table_.size(); ++k) {
        const double lo = table_[k].value;
        const double hi = k + 1 < table_.size() ? table_[k + 1].value : 1.0;
        total += static_cast<long double>(table_[k].probability) * (hi * hi - lo * lo) / 2.0L;
      }
    }
    return static_cast<double>(total);
  }

 private:
  std::vector<Entry> table_;
};

class GenericStrategy final : public Strategy {
 public:
  explicit GenericStrategy(GenericPolicy policy) : policy_(std::move(policy)) {}

  const GenericPolicy& policy() const noexcept { return policy_; }

  double request_probability(const PublicView&, const ValueDistribution& dist) const override {
    return policy_.overall_probability(dist);
  }

  bool decide(double value, const PublicView&, const ValueDistribution&,
              Rng& rng) const override {
    return rng.bernoulli(policy_.at(value));
  }

  std::string name() const override { return "generic"; }
  std::unique_ptr<Strategy> clone() const override {
    return std::make_unique<GenericStrategy>(*this);
  }

 private:
  GenericPolicy policy_;
};

/// Threshold strategy with the same per-round request probability as `policy`.
inline StaticThreshold thresholdize(const GenericPolicy& policy, const ValueDistribution& dist) {
  if (!policy.covers(dist)) {
    throw DomainError("thresholdize: policy table does not cover the distribution's support");
  }
  return StaticThreshold(std::clamp(policy.overall_probability(dist), 0.0, 1.0));
}

}  // namespace dmmf
