#pragma once

// Total probability mass of a one-dimensional mixture head, by adaptive
// Gauss-Kronrod quadrature over the pre-squash variable.

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mixpol/policies.hpp"

namespace support {

using mixpol::BaseKind;
using mixpol::MixtureHead;

inline double integrate(const std::function<double(double)>& f, double a, double b) {
  using Q = boost::math::quadrature::gauss_kronrod<double, 61>;
  return Q::integrate(f, a, b, 15, 1e-12);
}

// Total mass of the head's density over its support.
inline double total_mass(const MixtureHead& h) {
  // Density of the pre-squash variable; for squashed heads the integral over
  // a in (-1,1) equals this integral over u after a = tanh(u).
  auto density_u = [&](double u) {
    double lp = mixpol::log_prob_presquash(h, std::span<const double>(&u, 1));
    if (h.squashed) lp += mixpol::log_tanh_jacobian(u);
    return std::exp(lp);
  };
  std::vector<double> cuts;
  if (h.base == BaseKind::gaussian && !h.squashed) {
    for (std::size_t k = 0; k < h.components; ++k) {
      cuts.push_back(h.mean(k, 0) - 12 * h.std_dev(k, 0));
      cuts.push_back(h.mean(k, 0));
      cuts.push_back(h.mean(k, 0) + 12 * h.std_dev(k, 0));
    }
  } else {
    for (std::size_t k = 0; k < h.components; ++k) cuts.push_back(h.mean(k, 0));
  }
  std::sort(cuts.begin(), cuts.end());
  double mass = 0.0;
  const bool bounded = h.base == BaseKind::gaussian && !h.squashed;
  if (!bounded) mass += integrate(density_u, -std::numeric_limits<double>::infinity(), cuts.front());
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) mass += integrate(density_u, cuts[i], cuts[i + 1]);
  if (!bounded) mass += integrate(density_u, cuts.back(), std::numeric_limits<double>::infinity());
  return mass;
}

}  // namespace support
