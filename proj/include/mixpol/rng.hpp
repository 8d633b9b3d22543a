#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace mixpol {

/// Seeded random source. Wraps a 64-bit Mersenne Twister; independent
/// consumers (environment, policy, estimator, initializer) should each take
/// their own substream so that changing one does not perturb another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Deterministically derives a child generator keyed by `name`.
  Rng substream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }

  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Uniform on (lo, hi). Requires lo < hi.
  double uniform(double lo, double hi);
  double standard_normal();
  /// Gumbel(0, 1) via -log(-log(u)).
  double gumbel();
  /// Standard Cauchy via tan(pi (u - 1/2)).
  double standard_cauchy();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Draws an index with the given (normalized) probabilities.
  std::size_t categorical(std::span<const double> probs);

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer, used to derive substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace mixpol
