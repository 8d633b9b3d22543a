#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mixpol/adam.hpp"
#include "mixpol/envs.hpp"
#include "mixpol/errors.hpp"
#include "mixpol/estimators.hpp"
#include "mixpol/mlp.hpp"
#include "mixpol/policies.hpp"
#include "mixpol/rng.hpp"

namespace mixpol {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminated = false;
};

/// Column-major mini-batch: one transition per column.
struct Batch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd terminated;  // 1 for terminal transitions, else 0

  std::size_t size() const { return static_cast<std::size_t>(rewards.size()); }
};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim);

  /// Overwrites the oldest slot once full. Rejects non-finite or
  /// mis-sized transitions.
  void add(const Transition& t);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  Transition at(std::size_t slot) const;

  std::vector<std::size_t> sample_slots(std::size_t n, Rng& rng) const;
  Batch gather(std::span<const std::size_t> slots) const;
  Batch sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  std::vector<double> states_, actions_, rewards_, next_states_, terminated_;
};

enum class EntropyMode { fixed, automatic };

struct SacConfig {
  PolicyKind policy = PolicyKind::sgm;
  EstimatorKind estimator = EstimatorKind::mrp;
  std::size_t components = 5;
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  double critic_lr = 1e-3;
  /// Actor step size as a multiple of the critic step size.
  double lr_ratio = 1.0;
  EntropyMode entropy_mode = EntropyMode::fixed;
  /// Fixed entropy scale, or the initial value under automatic tuning.
  double alpha = 0.1;
  /// Automatic tuning targets an entropy of -coef * action_dim.
  double target_entropy_coef = 1.0;
  std::size_t batch_size = 32;
  double smoothing = 0.01;
  std::size_t buffer_capacity = 100000;
  std::size_t initial_uniform_steps = 1000;
  double discount = kGamma;
  std::uint64_t seed = 0;
  std::size_t total_steps = 100000;
  /// Replace the learned critic with the analytic bandit reward.
  bool true_critic = false;
  bool use_baseline = true;
  std::size_t baseline_samples = 30;
  double temperature = 1.0;

  double actor_lr() const { return lr_ratio * critic_lr; }
  EstimatorOptions estimator_options() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Hidden 16, buffer 5000, batch 32, analytic critic, no uniform warmup.
SacConfig bandit_defaults();
/// Hidden 64, buffer 100000, batch 32, smoothing 0.01, fixed entropy scale.
SacConfig classic_control_defaults();

struct TunedHyperparameters {
  double critic_lr;
  double lr_ratio;
  double alpha;
};

/// Best classic-control settings per (environment, policy, estimator);
/// empty when the combination was not tuned.
std::optional<TunedHyperparameters> tuned_hyperparameters(EnvKind env, PolicyKind policy,
                                                          EstimatorKind estimator);

struct CriticLosses {
  double first = 0.0;
  double second = 0.0;
};

struct ActorGradient {
  std::vector<double> params;  // d(-mean surrogate)/d(actor params)
  double mean_surrogate = 0.0;
};

/// target <- (1 - rho) target + rho live, for rho in [0, 1].
void soft_update(ParameterVector& target, const ParameterVector& live, double rho);

class SacAgent {
 public:
  /// `true_critic` replaces the learned critic pair when non-null; it is
  /// treated as state-independent.
  SacAgent(const SacConfig& config, std::size_t state_dim, std::size_t action_dim,
           std::shared_ptr<const Critic> true_critic = nullptr);

  const SacConfig& config() const { return config_; }
  const HeadLayout& layout() const { return layout_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  double alpha() const;
  void set_alpha(double alpha);
  double target_entropy() const;

  MixtureHead policy_head(std::span<const double> state) const;
  /// Uniform in [-1, 1]^d before the warmup ends, a policy sample after.
  std::vector<double> act(std::span<const double> state, Rng& rng, std::size_t step_index) const;

  /// Critic value min(Q1, Q2) at one (state, action); the true critic when set.
  double q_value(std::span<const double> state, std::span<const double> action);
  double q_value(int which, std::span<const double> state, std::span<const double> action);

  Eigen::VectorXd critic_target(const Batch& batch, Rng& rng);
  CriticLosses critic_losses(const Batch& batch, const Eigen::VectorXd& targets);
  CriticLosses update_critics(const Batch& batch, Rng& rng);

  ActorGradient actor_gradient(const Batch& batch, Rng& rng);
  /// Same estimate with caller-supplied noise, one draw per column.
  ActorGradient actor_gradient(const Batch& batch, std::span<const NoiseDraw> noise);
  /// Gradient under a different estimator at the current parameters. Used by
  /// the variance diagnostics; the agent's own configuration is untouched.
  ActorGradient actor_gradient(const Batch& batch, const EstimatorOptions& options, Rng& rng);
  ActorGradient actor_gradient(const Batch& batch, const EstimatorOptions& options,
                               std::span<const NoiseDraw> noise);
  double update_actor(const Batch& batch, Rng& rng);

  /// Gradient of the entropy-scale loss with respect to log(alpha).
  double entropy_scale_gradient(const Batch& batch, Rng& rng);
  /// No-op under a fixed entropy scale. Returns the new alpha.
  double update_entropy_scale(const Batch& batch, Rng& rng);

  void soft_update_targets();

  ParameterVector& actor_params() { return actor_; }
  ParameterVector& critic_params(int which) { return which == 0 ? critic1_ : critic2_; }
  ParameterVector& target_params(int which) { return which == 0 ? target1_ : target2_; }
  const MlpSpec& actor_spec() const { return actor_spec_; }
  const MlpSpec& critic_spec() const { return critic_spec_; }
  bool uses_true_critic() const { return static_cast<bool>(true_critic_); }
  bool all_finite() const;

 private:
  std::vector<CriticAnswer> answer(const Eigen::MatrixXd& states,
                                   std::span<const std::size_t> state_of_query,
                                   std::span<const CriticQuery> queries);
  Eigen::MatrixXd critic_inputs(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
  std::vector<MixtureHead> heads_for(const Eigen::MatrixXd& head_outputs) const;

  SacConfig config_;
  std::size_t state_dim_;
  std::size_t action_dim_;
  HeadLayout layout_;
  MlpSpec actor_spec_;
  MlpSpec critic_spec_;
  ParameterVector actor_, critic1_, critic2_, target1_, target2_;
  AdamState actor_opt_, critic1_opt_, critic2_opt_, log_alpha_opt_;
  double log_alpha_;
  std::shared_ptr<const Critic> true_critic_;
  MlpBatch actor_batch_, critic1_batch_, critic2_batch_, scratch_batch_;
};

struct EpisodeRow {
  std::uint64_t seed = 0;
  std::size_t step = 0;  // environment steps taken when the episode ended
  std::size_t episode = 0;
  double episode_return = 0.0;
  std::size_t length = 0;
  double alpha = 0.0;
  double weighting_entropy = 0.0;
  double component_separation = 0.0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::size_t total_steps = 0;
  std::vector<EpisodeRow> episodes;
};

/// Raised when parameters or losses become non-finite; carries the episodes
/// completed so far.
class TrainingAborted : public NonFiniteError {
 public:
  TrainingAborted(const std::string& what, std::size_t step, RunRecord partial)
      : NonFiniteError(what), step_(step), partial_(std::move(partial)) {}
  std::size_t step() const { return step_; }
  const RunRecord& partial() const { return partial_; }

 private:
  std::size_t step_;
  RunRecord partial_;
};

/// Critic that evaluates a bandit's reward at the stretched action.
std::shared_ptr<const Critic> bandit_critic(const BanditSpec& bandit);

/// Called before each update with the agent and the mini-batch it is about
/// to use. Observers must not change the agent.
using UpdateObserver = std::function<void(std::size_t step, SacAgent& agent, const Batch& batch)>;

/// Act / store / update for config.total_steps environment steps. One
/// critic, actor and entropy-scale update per step after the warmup.
RunRecord train_loop(const SacConfig& config, Environment& env,
                     const std::function<void(const EpisodeRow&)>& on_episode = {},
                     const UpdateObserver& before_update = {});

}  // namespace mixpol
