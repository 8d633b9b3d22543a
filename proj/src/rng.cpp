#include "mixpol/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mixpol {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

Rng Rng::substream(std::string_view name) const {
  return Rng(mix_seed(seed_ ^ fnv1a(name)));
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(mix_seed(mix_seed(seed_) + index));
}

double Rng::uniform() {
  // 53 random bits, shifted by half an ulp so neither 0 nor 1 is produced.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("Rng::uniform: requires lo < hi");
  return lo + (hi - lo) * uniform();
}

double Rng::standard_normal() { return normal_(engine_); }

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

double Rng::standard_cauchy() {
  return std::tan(std::numbers::pi * (uniform() - 0.5));
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::size_t Rng::categorical(std::span<const double> probs) {
  double u = uniform();
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    if (u < probs[k]) return k;
    u -= probs[k];
  }
  return probs.size() - 1;
}

}  // namespace mixpol
