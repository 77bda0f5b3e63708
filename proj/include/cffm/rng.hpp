#pragma once

#include <cstdint>
#include <random>

namespace cffm {

/// Deterministic generator: std::mt19937_64 for raw bits (its output
/// sequence is fixed by the C++ standard), with hand-written transforms for
/// uniform and normal draws so that results do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (the second variate is cached).
  double normal();

  /// Normal(0, sigma) resampled until it lies within two sigma.
  double truncated_normal(double sigma);

  /// Derives an independent stream, e.g. one per parameter.
  Rng fork(std::uint64_t salt);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cffm
