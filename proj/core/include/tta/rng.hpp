#pragma once

#include <cstdint>
#include <random>

namespace tta {

/// Explicit, seeded random stream. Every stochastic operation takes one of
/// these by reference; there is no global generator.
///
/// Distributions are constructed per draw so the engine state is the only
/// state, which keeps `digest()` a complete fingerprint of the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

  /// FNV-1a hash of the serialized engine state.
  std::uint64_t digest() const;

  /// Child seed for stream `index` of a master seed (splitmix64 mixing).
  static std::uint64_t derive(std::uint64_t master, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace tta
