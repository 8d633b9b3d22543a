#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mixpol {

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam(std::size_t size, double lr);

/// One bias-corrected Adam descent step on `params`. Throws NonFiniteError
/// (leaving params untouched) if any gradient entry is NaN or infinite.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grad);

}  // namespace mixpol
