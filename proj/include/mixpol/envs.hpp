#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mixpol/rng.hpp"

namespace mixpol {

enum class EnvKind {
  multimodal_bandit,
  bimodal_bandit,
  pendulum_shaped,
  pendulum,
  acrobot_shaped,
  acrobot,
  mountaincar_shaped,
  mountaincar,
};

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);
bool is_bandit(EnvKind kind);

struct GaussianKernel {
  double mean;
  double std_dev;
};

/// Reward r(x) = sum_j N(x; mean_j, std_j^2) / normalizer on the kernel
/// domain. Policies act in [-1, 1]; a bandit action a is evaluated at
/// x = action_scale * a.
struct BanditSpec {
  std::vector<GaussianKernel> kernels;
  double normalizer = 1.0;
  double action_scale = 3.0;
  double domain_lo = -3.0;
  double domain_hi = 3.0;

  double reward_at(double x) const;
  double reward_gradient_at(double x) const;
  double reward_for_action(double a) const { return reward_at(action_scale * a); }

  /// Maximum of r over a uniform grid on [domain_lo, domain_hi].
  double grid_max(std::size_t points = 5000) const;
  double grid_argmax(std::size_t points = 5000) const;

  void validate() const;
};

/// 30 kernels with means ~ U[-3, 3] and stds ~ U[0.1, 1], normalizer 30.
BanditSpec make_multimodal_bandit(std::uint64_t seed);

/// Kernels (-1, 0.5) and (1, 0.5), scaled so that the grid maximum of the
/// reward equals one.
BanditSpec make_bimodal_bandit();

struct EnvState {
  std::vector<double> observation;
  std::size_t step_index = 0;
  bool done = false;
};

struct StepResult {
  std::vector<double> next_observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

inline constexpr double kGamma = 0.99;

/// Reward of the Pendulum variants at the pre-step state.
double pendulum_reward(bool shaped, double angle, double angular_velocity, double torque);
/// -cos(theta1) - cos(theta1 + theta2) - 1.
double acrobot_shaped_reward(double theta1, double theta2);
/// x - 0.6.
double mountaincar_shaped_reward(double position);

/// Angle wrapped into (-pi, pi].
double wrap_angle(double x);

/// One environment instance. Bandits are single-step episodes with a
/// constant observation.
class Environment {
 public:
  explicit Environment(EnvKind kind, std::uint64_t bandit_seed = 0);

  EnvKind kind() const { return kind_; }
  std::size_t observation_dim() const;
  std::size_t action_dim() const { return 1; }
  std::size_t cutoff() const;
  const BanditSpec* bandit() const { return bandit_ ? &*bandit_ : nullptr; }

  const EnvState& reset(Rng& rng);
  /// Actions are clipped to [-1, 1]. Stepping a finished episode throws.
  StepResult step(std::span<const double> action);

  const EnvState& state() const { return state_; }
  /// Physical state: (angle, angular velocity) for Pendulum, (theta1,
  /// theta2, dtheta1, dtheta2) for Acrobot, (position, velocity) for
  /// MountainCar, empty for bandits.
  std::span<const double> physical_state() const { return physics_; }
  void set_physical_state(std::span<const double> s);

 private:
  std::vector<double> observe() const;
  double step_pendulum(double a);
  double step_acrobot(double a, bool& terminated);
  double step_mountaincar(double a, bool& terminated);

  EnvKind kind_;
  std::optional<BanditSpec> bandit_;
  std::vector<double> physics_;
  EnvState state_;
};

struct EpisodeSummary {
  double total_reward = 0.0;
  std::size_t steps = 0;
  bool terminated = false;
};

/// Push in the direction of the current velocity (right when at rest).
double mountaincar_bang_bang(std::span<const double> observation);

/// One episode of the bang-bang controller on a MountainCar variant.
EpisodeSummary run_bang_bang_episode(Environment& env, Rng& rng);

}  // namespace mixpol
