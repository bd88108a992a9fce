#pragma once

#include <cstdint>
#include <random>

namespace dmmf {

/// SplitMix64 finalizer. Used only to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream `stream` under master seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Random stream. Doubles are produced from the top 53 bits of the engine
/// output, so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform() < p;
  }

 private:
  std::mt19937_64 engine_;
};

/// Stream layout of a single run: per-agent value streams and per-agent
/// strategy streams, both derived from one master seed.
struct StreamLayout {
  static Rng value_stream(std::uint64_t seed, std::size_t agent) {
    return Rng(derive_seed(seed, 2 * static_cast<std::uint64_t>(agent)));
  }
  static Rng strategy_stream(std::uint64_t seed, std::size_t agent) {
    return Rng(derive_seed(seed, 2 * static_cast<std::uint64_t>(agent) + 1));
  }
  /// Seed of replication `rep` of an experiment with base seed `base`.
  static std::uint64_t replication_seed(std::uint64_t base, std::size_t rep) {
    return derive_seed(base ^ 0x5bd1e995ULL, 0x1000000ULL + rep);
  }
};

}  // namespace dmmf
