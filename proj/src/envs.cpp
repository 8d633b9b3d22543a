#include "mixpol/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "mixpol/errors.hpp"

namespace mixpol {

namespace {

constexpr double kPi = std::numbers::pi;

double gaussian_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * kPi));
}

// Pendulum-v1
constexpr double kPendulumGravity = 10.0;
constexpr double kPendulumMass = 1.0;
constexpr double kPendulumLength = 1.0;
constexpr double kPendulumDt = 0.05;
constexpr double kPendulumMaxSpeed = 8.0;
constexpr double kPendulumMaxTorque = 2.0;

// Acrobot-v1, book dynamics
constexpr double kLinkLength1 = 1.0;
constexpr double kLinkMass1 = 1.0;
constexpr double kLinkMass2 = 1.0;
constexpr double kLinkCom1 = 0.5;
constexpr double kLinkCom2 = 0.5;
constexpr double kLinkMoi = 1.0;
constexpr double kAcrobotDt = 0.2;
constexpr double kAcrobotGravity = 9.8;
constexpr double kMaxVel1 = 4.0 * kPi;
constexpr double kMaxVel2 = 9.0 * kPi;

// MountainCarContinuous-v0
constexpr double kCarMinPosition = -1.2;
constexpr double kCarMaxPosition = 0.6;
constexpr double kCarMaxSpeed = 0.07;
constexpr double kCarGoalPosition = 0.45;
constexpr double kCarPower = 0.0015;

using AcrobotState = std::array<double, 4>;

AcrobotState acrobot_derivative(const AcrobotState& s, double torque) {
  const double m1 = kLinkMass1, m2 = kLinkMass2, l1 = kLinkLength1;
  const double lc1 = kLinkCom1, lc2 = kLinkCom2, i1 = kLinkMoi, i2 = kLinkMoi;
  const double g = kAcrobotGravity;
  const double theta1 = s[0], theta2 = s[1], dtheta1 = s[2], dtheta2 = s[3];
  const double d1 = m1 * lc1 * lc1 +
                    m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
  const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
  const double phi2 = m2 * lc2 * g * std::cos(theta1 + theta2 - kPi / 2);
  const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                      2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                      (m1 * lc1 + m2 * l1) * g * std::cos(theta1 - kPi / 2) + phi2;
  const double ddtheta2 =
      (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
      (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
  const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
  return {dtheta1, dtheta2, ddtheta1, ddtheta2};
}

AcrobotState rk4_step(const AcrobotState& s, double torque, double dt) {
  auto axpy = [](const AcrobotState& x, double h, const AcrobotState& k) {
    AcrobotState out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = x[i] + h * k[i];
    return out;
  };
  const AcrobotState k1 = acrobot_derivative(s, torque);
  const AcrobotState k2 = acrobot_derivative(axpy(s, dt / 2, k1), torque);
  const AcrobotState k3 = acrobot_derivative(axpy(s, dt / 2, k2), torque);
  const AcrobotState k4 = acrobot_derivative(axpy(s, dt, k3), torque);
  AcrobotState out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = s[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return out;
}

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::multimodal_bandit: return "multimodal-bandit";
    case EnvKind::bimodal_bandit: return "bimodal-bandit";
    case EnvKind::pendulum_shaped: return "pendulum-shaped";
    case EnvKind::pendulum: return "pendulum";
    case EnvKind::acrobot_shaped: return "acrobot-shaped";
    case EnvKind::acrobot: return "acrobot";
    case EnvKind::mountaincar_shaped: return "mountaincar-shaped";
    case EnvKind::mountaincar: return "mountaincar";
  }
  return "?";
}

EnvKind parse_env_kind(std::string_view name) {
  for (EnvKind k : {EnvKind::multimodal_bandit, EnvKind::bimodal_bandit,
                    EnvKind::pendulum_shaped, EnvKind::pendulum, EnvKind::acrobot_shaped,
                    EnvKind::acrobot, EnvKind::mountaincar_shaped, EnvKind::mountaincar}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

bool is_bandit(EnvKind kind) {
  return kind == EnvKind::multimodal_bandit || kind == EnvKind::bimodal_bandit;
}

double BanditSpec::reward_at(double x) const {
  double r = 0.0;
  for (const auto& k : kernels) r += gaussian_pdf(x, k.mean, k.std_dev);
  return r / normalizer;
}

double BanditSpec::reward_gradient_at(double x) const {
  double g = 0.0;
  for (const auto& k : kernels)
    g += -(x - k.mean) / (k.std_dev * k.std_dev) * gaussian_pdf(x, k.mean, k.std_dev);
  return g / normalizer;
}

double BanditSpec::grid_argmax(std::size_t points) const {
  if (points < 2) throw DomainError("grid needs at least two points");
  double best_x = domain_lo, best = reward_at(domain_lo);
  for (std::size_t i = 1; i < points; ++i) {
    const double x = domain_lo + (domain_hi - domain_lo) * static_cast<double>(i) /
                                     static_cast<double>(points - 1);
    const double r = reward_at(x);
    if (r > best) {
      best = r;
      best_x = x;
    }
  }
  return best_x;
}

double BanditSpec::grid_max(std::size_t points) const {
  return reward_at(grid_argmax(points));
}

void BanditSpec::validate() const {
  if (kernels.empty()) throw ConfigError("bandit needs at least one kernel");
  for (const auto& k : kernels)
    if (!(k.std_dev > 0.0)) throw DomainError("bandit kernel std must be > 0");
  if (!(normalizer > 0.0)) throw DomainError("bandit normalizer must be > 0");
  if (!(domain_lo < domain_hi)) throw DomainError("bandit domain must be non-empty");
}

BanditSpec make_multimodal_bandit(std::uint64_t seed) {
  Rng rng = Rng(seed).substream("multimodal-bandit");
  BanditSpec b;
  b.kernels.reserve(30);
  for (int j = 0; j < 30; ++j) {
    const double mean = rng.uniform(-3.0, 3.0);
    const double sd = rng.uniform(0.1, 1.0);
    b.kernels.push_back({mean, sd});
  }
  b.normalizer = 30.0;
  return b;
}

BanditSpec make_bimodal_bandit() {
  BanditSpec b;
  b.kernels = {{-1.0, 0.5}, {1.0, 0.5}};
  b.normalizer = 1.0;
  b.normalizer = b.grid_max();
  return b;
}

double wrap_angle(double x) {
  double y = std::remainder(x, 2.0 * kPi);  // in [-pi, pi]
  if (y <= -kPi) y += 2.0 * kPi;
  return y;
}

double pendulum_reward(bool shaped, double angle, double angular_velocity, double torque) {
  const double th = wrap_angle(angle);
  if (!shaped) return std::abs(th) < 0.25 ? 1.0 : 0.0;
  return -(th * th + 0.1 * angular_velocity * angular_velocity + 0.001 * torque * torque);
}

double acrobot_shaped_reward(double theta1, double theta2) {
  return -std::cos(theta1) - std::cos(theta2 + theta1) - 1.0;
}

double mountaincar_shaped_reward(double position) { return position - 0.6; }

Environment::Environment(EnvKind kind, std::uint64_t bandit_seed) : kind_(kind) {
  if (kind == EnvKind::multimodal_bandit) bandit_ = make_multimodal_bandit(bandit_seed);
  if (kind == EnvKind::bimodal_bandit) bandit_ = make_bimodal_bandit();
  state_.done = true;
}

std::size_t Environment::observation_dim() const {
  switch (kind_) {
    case EnvKind::multimodal_bandit:
    case EnvKind::bimodal_bandit: return 1;
    case EnvKind::pendulum_shaped:
    case EnvKind::pendulum: return 3;
    case EnvKind::acrobot_shaped:
    case EnvKind::acrobot: return 6;
    case EnvKind::mountaincar_shaped:
    case EnvKind::mountaincar: return 2;
  }
  return 0;
}

std::size_t Environment::cutoff() const {
  switch (kind_) {
    case EnvKind::multimodal_bandit:
    case EnvKind::bimodal_bandit: return 1;
    case EnvKind::pendulum_shaped:
    case EnvKind::pendulum: return 200;
    default: return 1000;
  }
}

std::vector<double> Environment::observe() const {
  const auto& s = physics_;
  switch (kind_) {
    case EnvKind::multimodal_bandit:
    case EnvKind::bimodal_bandit: return {1.0};
    case EnvKind::pendulum_shaped:
    case EnvKind::pendulum: return {std::cos(s[0]), std::sin(s[0]), s[1]};
    case EnvKind::acrobot_shaped:
    case EnvKind::acrobot:
      return {std::cos(s[0]), std::sin(s[0]), std::cos(s[1]), std::sin(s[1]), s[2], s[3]};
    case EnvKind::mountaincar_shaped:
    case EnvKind::mountaincar: return {s[0], s[1]};
  }
  return {};
}

void Environment::set_physical_state(std::span<const double> s) {
  physics_.assign(s.begin(), s.end());
  state_.observation = observe();
  state_.done = false;
}

const EnvState& Environment::reset(Rng& rng) {
  switch (kind_) {
    case EnvKind::multimodal_bandit:
    case EnvKind::bimodal_bandit: physics_.clear(); break;
    case EnvKind::pendulum_shaped:
    case EnvKind::pendulum:
      physics_ = {rng.uniform(-kPi, kPi), rng.uniform(-1.0, 1.0)};
      break;
    case EnvKind::acrobot_shaped:
    case EnvKind::acrobot:
      physics_.resize(4);
      for (double& v : physics_) v = rng.uniform(-0.1, 0.1);
      break;
    case EnvKind::mountaincar_shaped:
    case EnvKind::mountaincar: physics_ = {rng.uniform(-0.6, -0.4), 0.0}; break;
  }
  state_.observation = observe();
  state_.step_index = 0;
  state_.done = false;
  return state_;
}

double Environment::step_pendulum(double a) {
  const double torque = std::clamp(kPendulumMaxTorque * a, -kPendulumMaxTorque, kPendulumMaxTorque);
  const double th = physics_[0], thdot = physics_[1];
  const double reward = pendulum_reward(kind_ == EnvKind::pendulum_shaped, th, thdot, torque);
  const double g = kPendulumGravity, m = kPendulumMass, l = kPendulumLength;
  double newthdot = thdot + (3.0 * g / (2.0 * l) * std::sin(th) + 3.0 / (m * l * l) * torque) *
                                kPendulumDt;
  newthdot = std::clamp(newthdot, -kPendulumMaxSpeed, kPendulumMaxSpeed);
  physics_[0] = wrap_angle(th + newthdot * kPendulumDt);
  physics_[1] = newthdot;
  return reward;
}

double Environment::step_acrobot(double a, bool& terminated) {
  AcrobotState s{physics_[0], physics_[1], physics_[2], physics_[3]};
  s = rk4_step(s, a, kAcrobotDt);
  s[0] = wrap_angle(s[0]);
  s[1] = wrap_angle(s[1]);
  s[2] = std::clamp(s[2], -kMaxVel1, kMaxVel1);
  s[3] = std::clamp(s[3], -kMaxVel2, kMaxVel2);
  physics_.assign(s.begin(), s.end());
  if (kind_ == EnvKind::acrobot_shaped) {
    terminated = false;
    return acrobot_shaped_reward(s[0], s[1]);
  }
  terminated = -std::cos(s[0]) - std::cos(s[1] + s[0]) > 1.0;
  return terminated ? 0.0 : -1.0;
}

double Environment::step_mountaincar(double a, bool& terminated) {
  double position = physics_[0], velocity = physics_[1];
  velocity += a * kCarPower - 0.0025 * std::cos(3.0 * position);
  velocity = std::clamp(velocity, -kCarMaxSpeed, kCarMaxSpeed);
  position += velocity;
  position = std::clamp(position, kCarMinPosition, kCarMaxPosition);
  if (position == kCarMinPosition && velocity < 0.0) velocity = 0.0;
  physics_ = {position, velocity};
  terminated = position >= kCarGoalPosition && velocity >= 0.0;
  if (kind_ == EnvKind::mountaincar_shaped) return mountaincar_shaped_reward(position);
  return terminated ? 1.0 : 0.0;
}

StepResult Environment::step(std::span<const double> action) {
  if (state_.done) throw Error("step called on a finished episode; call reset first");
  if (action.size() != action_dim()) throw DimensionError("action has wrong dimension");
  if (!std::isfinite(action[0])) throw NonFiniteError("action is not finite");
  const double a = std::clamp(action[0], -1.0, 1.0);

  StepResult r;
  switch (kind_) {
    case EnvKind::multimodal_bandit:
    case EnvKind::bimodal_bandit:
      r.reward = bandit_->reward_for_action(a);
      r.terminated = true;
      break;
    case EnvKind::pendulum_shaped:
    case EnvKind::pendulum: r.reward = step_pendulum(a); break;
    case EnvKind::acrobot_shaped:
    case EnvKind::acrobot: r.reward = step_acrobot(a, r.terminated); break;
    case EnvKind::mountaincar_shaped:
    case EnvKind::mountaincar: r.reward = step_mountaincar(a, r.terminated); break;
  }
  ++state_.step_index;
  r.truncated = !r.terminated && state_.step_index >= cutoff();
  state_.observation = observe();
  state_.done = r.terminated || r.truncated;
  r.next_observation = state_.observation;
  return r;
}

double mountaincar_bang_bang(std::span<const double> observation) {
  if (observation.size() != 2) throw DimensionError("MountainCar observation must have size 2");
  return observation[1] < 0.0 ? -1.0 : 1.0;
}

EpisodeSummary run_bang_bang_episode(Environment& env, Rng& rng) {
  if (env.kind() != EnvKind::mountaincar && env.kind() != EnvKind::mountaincar_shaped)
    throw ConfigError("the bang-bang controller only drives MountainCar");
  EpisodeSummary out;
  const EnvState* s = &env.reset(rng);
  while (!s->done) {
    const double a = mountaincar_bang_bang(s->observation);
    const StepResult r = env.step(std::span<const double>(&a, 1));
    out.total_reward += r.reward;
    out.terminated = r.terminated;
    ++out.steps;
    s = &env.state();
  }
  return out;
}

}  // namespace mixpol
