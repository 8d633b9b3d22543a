#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "mixpol/envs.hpp"
#include "mixpol/errors.hpp"

using namespace mixpol;

namespace {

constexpr double kPi = std::numbers::pi;

double normal_density(double x, double mean, double sd) {
  return std::exp(-(x - mean) * (x - mean) / (2 * sd * sd)) / (sd * std::sqrt(2 * kPi));
}

double step_once(Environment& env, double a) {
  return env.step(std::span<const double>(&a, 1)).reward;
}

// Total mechanical energy of the two-link arm, written from the link
// geometry rather than the equations of motion.
double acrobot_energy(std::span<const double> s) {
  const double m1 = 1, m2 = 1, l1 = 1, lc1 = 0.5, lc2 = 0.5, inertia = 1, g = 9.8;
  const double t1 = s[0], t2 = s[1], w1 = s[2], w2 = s[3];
  const double d11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(t2)) +
                     2 * inertia;
  const double d12 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(t2)) + inertia;
  const double d22 = m2 * lc2 * lc2 + inertia;
  const double kinetic = 0.5 * d11 * w1 * w1 + d12 * w1 * w2 + 0.5 * d22 * w2 * w2;
  const double height1 = -lc1 * std::cos(t1);
  const double height2 = -l1 * std::cos(t1) - lc2 * std::cos(t1 + t2);
  return kinetic + g * (m1 * height1 + m2 * height2);
}

}  // namespace

TEST_CASE("multimodal bandit: determinism, hand-summed reward and grid maximum") {
  const BanditSpec a = make_multimodal_bandit(7);
  const BanditSpec b = make_multimodal_bandit(7);
  const BanditSpec c = make_multimodal_bandit(8);
  REQUIRE(a.kernels.size() == 30);
  CHECK(a.normalizer == 30.0);
  bool differs = false;
  for (std::size_t j = 0; j < 30; ++j) {
    CHECK(a.kernels[j].mean == b.kernels[j].mean);
    CHECK(a.kernels[j].std_dev == b.kernels[j].std_dev);
    CHECK(a.kernels[j].mean >= -3.0);
    CHECK(a.kernels[j].mean <= 3.0);
    CHECK(a.kernels[j].std_dev >= 0.1);
    CHECK(a.kernels[j].std_dev <= 1.0);
    differs = differs || a.kernels[j].mean != c.kernels[j].mean;
  }
  CHECK(differs);

  for (double x : {-2.5, -0.3, 0.0, 1.7}) {
    double sum = 0.0;
    for (const auto& k : a.kernels) sum += normal_density(x, k.mean, k.std_dev);
    CHECK(a.reward_at(x) == doctest::Approx(sum / 30.0).epsilon(1e-13));
  }
  CHECK(a.reward_for_action(0.5) == doctest::Approx(a.reward_at(1.5)).epsilon(1e-15));

  const double r_max = a.grid_max();
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) CHECK(a.reward_for_action(rng.uniform(-1, 1)) <= r_max + 1e-9);
}

TEST_CASE("multimodal bandit: reward gradient matches central differences") {
  const BanditSpec b = make_multimodal_bandit(11);
  for (double x : {-2.0, -0.7, 0.4, 2.2}) {
    const double h = 1e-5;
    const double fd = (b.reward_at(x + h) - b.reward_at(x - h)) / (2 * h);
    CHECK(b.reward_gradient_at(x) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("bimodal bandit: symmetric, peak-normalized, modes near +-1") {
  const BanditSpec b = make_bimodal_bandit();
  REQUIRE(b.kernels.size() == 2);
  CHECK(b.reward_at(-1.0) == doctest::Approx(b.reward_at(1.0)).epsilon(1e-15));

  double raw_peak = 0.0;
  for (int i = 0; i <= 200000; ++i) {
    const double x = -3.0 + 6.0 * i / 200000.0;
    raw_peak = std::max(raw_peak, normal_density(x, -1, 0.5) + normal_density(x, 1, 0.5));
  }
  const double raw_zero = normal_density(0, -1, 0.5) + normal_density(0, 1, 0.5);
  CHECK(b.reward_at(0.0) == doctest::Approx(raw_zero / raw_peak).epsilon(1e-6));
  CHECK(b.grid_max() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(std::abs(b.grid_argmax()) - 1.0) < 0.01);
  for (int i = 0; i <= 1000; ++i) CHECK(b.reward_at(-3.0 + 6.0 * i / 1000.0) <= 1.0 + 1e-9);
}

TEST_CASE("reward variants at reference states") {
  CHECK(pendulum_reward(false, 0.1, 0.0, 0.0) == 1.0);
  CHECK(pendulum_reward(false, 0.3, 0.0, 0.0) == 0.0);
  CHECK(pendulum_reward(false, -0.1 + 2 * kPi, 0.0, 0.0) == 1.0);
  CHECK(pendulum_reward(true, 0.0, 0.0, 0.0) == 0.0);
  CHECK(pendulum_reward(true, 1.0, 2.0, 1.0) == doctest::Approx(-(1.0 + 0.4 + 0.001)));
  CHECK(acrobot_shaped_reward(0.0, 0.0) == -3.0);
  CHECK(acrobot_shaped_reward(kPi, 0.0) == doctest::Approx(1.0));
  CHECK(mountaincar_shaped_reward(-0.5) == doctest::Approx(-1.1));
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(wrap_angle(-7.0) == doctest::Approx(-7.0 + 2 * kPi));
}

TEST_CASE("Pendulum: one step matches hand-written dynamics") {
  Environment env(EnvKind::pendulum_shaped);
  const std::vector<double> s0{0.5, -0.3};
  env.set_physical_state(s0);
  const double reward = step_once(env, 0.4);
  const double torque = 0.8;
  const double thdot = -0.3 + (15.0 * std::sin(0.5) + 3.0 * torque) * 0.05;
  const double th = 0.5 + thdot * 0.05;
  CHECK(reward == doctest::Approx(-(0.25 + 0.1 * 0.09 + 0.001 * 0.64)));
  CHECK(env.physical_state()[0] == doctest::Approx(th).epsilon(1e-14));
  CHECK(env.physical_state()[1] == doctest::Approx(thdot).epsilon(1e-14));
  CHECK(env.state().observation[0] == doctest::Approx(std::cos(th)));
  CHECK(env.state().observation[1] == doctest::Approx(std::sin(th)));
}

TEST_CASE("MountainCar: one step matches hand-written dynamics and the goal terminates") {
  Environment env(EnvKind::mountaincar);
  env.set_physical_state(std::vector<double>{-0.5, 0.01});
  const double r = step_once(env, 1.0);
  const double v = 0.01 + 0.0015 - 0.0025 * std::cos(-1.5);
  CHECK(r == 0.0);
  CHECK(env.physical_state()[1] == doctest::Approx(v).epsilon(1e-14));
  CHECK(env.physical_state()[0] == doctest::Approx(-0.5 + v).epsilon(1e-14));

  env.set_physical_state(std::vector<double>{0.44, 0.02});
  const StepResult goal = env.step(std::vector<double>{1.0});
  CHECK(goal.terminated);
  CHECK_FALSE(goal.truncated);
  CHECK(goal.reward == 1.0);
  CHECK(env.state().done);

  Environment shaped(EnvKind::mountaincar_shaped);
  shaped.set_physical_state(std::vector<double>{0.44, 0.02});
  const StepResult shaped_goal = shaped.step(std::vector<double>{1.0});
  CHECK(shaped_goal.terminated);
  CHECK(shaped_goal.reward == doctest::Approx(shaped.physical_state()[0] - 0.6));

  env.set_physical_state(std::vector<double>{-1.19, -0.07});
  step_once(env, -1.0);
  CHECK(env.physical_state()[0] == -1.2);
  CHECK(env.physical_state()[1] == 0.0);
}

TEST_CASE("Acrobot: rest is an equilibrium and unforced motion conserves energy") {
  Environment env(EnvKind::acrobot_shaped);
  env.set_physical_state(std::vector<double>{0, 0, 0, 0});
  CHECK(step_once(env, 0.0) == -3.0);
  for (double x : env.physical_state()) CHECK(std::abs(x) < 1e-15);

  const std::vector<double> s0{0.3, -0.2, 0.0, 0.0};
  env.set_physical_state(s0);
  const double e0 = acrobot_energy(s0);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    step_once(env, 0.0);
    worst = std::max(worst, std::abs(acrobot_energy(env.physical_state()) - e0));
  }
  CHECK(worst < 1e-2 * std::abs(e0));
}

TEST_CASE("Acrobot: unshaped pays -1 until the tip clears the goal height") {
  Environment env(EnvKind::acrobot);
  env.set_physical_state(std::vector<double>{0, 0, 0, 0});
  const StepResult hanging = env.step(std::vector<double>{0.0});
  CHECK(hanging.reward == -1.0);
  CHECK_FALSE(hanging.terminated);

  env.set_physical_state(std::vector<double>{kPi, 0, 0, 0});
  const StepResult up = env.step(std::vector<double>{0.0});
  CHECK(up.terminated);
  CHECK(up.reward == 0.0);

  Environment shaped(EnvKind::acrobot_shaped);
  shaped.set_physical_state(std::vector<double>{kPi, 0, 0, 0});
  const StepResult shaped_up = shaped.step(std::vector<double>{0.0});
  CHECK_FALSE(shaped_up.terminated);
  CHECK(shaped_up.reward > 0.9);
}

TEST_CASE("classic control: random actions keep observations finite and bounded") {
  for (EnvKind kind : {EnvKind::pendulum_shaped, EnvKind::pendulum, EnvKind::acrobot_shaped,
                       EnvKind::acrobot, EnvKind::mountaincar_shaped, EnvKind::mountaincar}) {
    CAPTURE(to_string(kind));
    Environment env(kind);
    Rng rng(static_cast<std::uint64_t>(kind) + 100);
    env.reset(rng);
    const bool car = kind == EnvKind::mountaincar || kind == EnvKind::mountaincar_shaped;
    const bool pendulum = kind == EnvKind::pendulum || kind == EnvKind::pendulum_shaped;
    const std::size_t trig_entries = car ? 0 : (pendulum ? 2 : 4);
    bool ok = true;
    for (int t = 0; t < 100000; ++t) {
      if (env.state().done) env.reset(rng);
      const StepResult r = env.step(std::vector<double>{rng.uniform(-1.5, 1.5)});
      ok = ok && std::isfinite(r.reward);
      for (double x : r.next_observation) ok = ok && std::isfinite(x);
      const auto& o = r.next_observation;
      switch (kind) {
        case EnvKind::pendulum_shaped:
        case EnvKind::pendulum: ok = ok && std::abs(o[2]) <= 8.0; break;
        case EnvKind::acrobot_shaped:
        case EnvKind::acrobot:
          ok = ok && std::abs(o[4]) <= 4 * kPi && std::abs(o[5]) <= 9 * kPi;
          break;
        default: ok = ok && o[0] >= -1.2 && o[0] <= 0.6 && std::abs(o[1]) <= 0.07; break;
      }
      for (std::size_t i = 0; i < trig_entries; ++i) ok = ok && std::abs(o[i]) <= 1.0;
    }
    CHECK(ok);
  }
}

TEST_CASE("episode accounting: cutoff truncation, bandit termination, done-state errors") {
  Rng rng(5);
  Environment pendulum(EnvKind::pendulum);
  CHECK_THROWS_AS(pendulum.step(std::vector<double>{0.0}), Error);
  pendulum.reset(rng);
  std::size_t steps = 0;
  StepResult last;
  do {
    last = pendulum.step(std::vector<double>{0.0});
    ++steps;
    if (steps < 200) {
      CHECK_FALSE(last.truncated);
    }
  } while (!last.terminated && !last.truncated);
  CHECK(steps == 200);
  CHECK(last.truncated);
  CHECK_FALSE(last.terminated);
  CHECK(pendulum.state().step_index == 200);
  CHECK_THROWS_AS(pendulum.step(std::vector<double>{0.0}), Error);

  Environment bandit(EnvKind::bimodal_bandit);
  bandit.reset(rng);
  CHECK(bandit.state().observation == std::vector<double>{1.0});
  const StepResult r = bandit.step(std::vector<double>{1.0 / 3.0});
  CHECK(r.terminated);
  CHECK_FALSE(r.truncated);
  CHECK(r.reward == doctest::Approx(1.0).epsilon(1e-6));

  Environment car(EnvKind::mountaincar);
  car.reset(rng);
  CHECK_THROWS_AS(car.step(std::vector<double>{0.0, 0.0}), DimensionError);
  CHECK_THROWS_AS(car.step(std::vector<double>{std::nan("")}), NonFiniteError);
  CHECK_THROWS_AS(parse_env_kind("cartpole"), ConfigError);
  CHECK(parse_env_kind("acrobot-shaped") == EnvKind::acrobot_shaped);
}

TEST_CASE("MountainCar: the bang-bang witness reaches the goal within the cutoff") {
  Rng rng(9);
  Environment env(EnvKind::mountaincar);
  for (int episode = 0; episode < 50; ++episode) {
    const EpisodeSummary s = run_bang_bang_episode(env, rng);
    CHECK(s.terminated);
    CHECK(s.steps < 1000);
    CHECK(s.total_reward == 1.0);
  }
}
