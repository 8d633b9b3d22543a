#include "mixpol/adam.hpp"

#include <cmath>
#include <string>

#include "mixpol/errors.hpp"

namespace mixpol {

AdamState make_adam(std::size_t size, double lr) {
  AdamState s;
  s.first_moment.assign(size, 0.0);
  s.second_moment.assign(size, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grad) {
  if (params.size() != grad.size() || state.first_moment.size() != grad.size() ||
      state.second_moment.size() != grad.size())
    throw DimensionError("adam_step: parameter, gradient and moment lengths differ");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NonFiniteError("adam_step: non-finite gradient at index " +
                           std::to_string(i));

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grad[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grad[i] * grad[i];
    params[i] -= state.lr * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

}  // namespace mixpol
