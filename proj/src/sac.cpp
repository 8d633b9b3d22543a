#include "mixpol/sac.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mixpol {

namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs)
    if (!std::isfinite(x)) throw NonFiniteError(std::string(what) + " is not finite");
}

MlpSpec network_spec(std::size_t in, std::size_t out, const SacConfig& c) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden_dims.assign(c.hidden_layers, c.hidden_width);
  s.output_dim = out;
  s.activation = Activation::relu;
  s.validate();
  return s;
}

ParameterVector initialized(const MlpSpec& spec, Rng& rng) {
  ParameterVector p = make_mlp_parameters(spec);
  initialize_mlp(spec, p, rng);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t state_dim, std::size_t action_dim)
    : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be >= 1");
  states_.resize(capacity * state_dim);
  next_states_.resize(capacity * state_dim);
  actions_.resize(capacity * action_dim);
  rewards_.resize(capacity);
  terminated_.resize(capacity);
}

void ReplayBuffer::add(const Transition& t) {
  if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_)
    throw DimensionError("transition state has the wrong dimension");
  if (t.action.size() != action_dim_)
    throw DimensionError("transition action has the wrong dimension");
  require_finite(t.state, "transition state");
  require_finite(t.next_state, "transition next state");
  require_finite(t.action, "transition action");
  if (!std::isfinite(t.reward)) throw NonFiniteError("transition reward is not finite");

  std::copy(t.state.begin(), t.state.end(), states_.begin() + next_ * state_dim_);
  std::copy(t.next_state.begin(), t.next_state.end(), next_states_.begin() + next_ * state_dim_);
  std::copy(t.action.begin(), t.action.end(), actions_.begin() + next_ * action_dim_);
  rewards_[next_] = t.reward;
  terminated_[next_] = t.terminated ? 1.0 : 0.0;
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Transition ReplayBuffer::at(std::size_t slot) const {
  if (slot >= size_) throw DimensionError("replay slot out of range");
  Transition t;
  t.state.assign(states_.begin() + slot * state_dim_, states_.begin() + (slot + 1) * state_dim_);
  t.next_state.assign(next_states_.begin() + slot * state_dim_,
                      next_states_.begin() + (slot + 1) * state_dim_);
  t.action.assign(actions_.begin() + slot * action_dim_,
                  actions_.begin() + (slot + 1) * action_dim_);
  t.reward = rewards_[slot];
  t.terminated = terminated_[slot] != 0.0;
  return t;
}

std::vector<std::size_t> ReplayBuffer::sample_slots(std::size_t n, Rng& rng) const {
  if (size_ == 0) throw Error("cannot sample from an empty replay buffer");
  std::vector<std::size_t> slots(n);
  for (auto& s : slots) s = rng.index(size_);
  return slots;
}

Batch ReplayBuffer::gather(std::span<const std::size_t> slots) const {
  const auto n = static_cast<Eigen::Index>(slots.size());
  const auto sd = static_cast<Eigen::Index>(state_dim_);
  const auto ad = static_cast<Eigen::Index>(action_dim_);
  Batch b;
  b.states.resize(sd, n);
  b.next_states.resize(sd, n);
  b.actions.resize(ad, n);
  b.rewards.resize(n);
  b.terminated.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t s = slots[static_cast<std::size_t>(j)];
    if (s >= size_) throw DimensionError("replay slot out of range");
    b.states.col(j) = Eigen::Map<const Eigen::VectorXd>(&states_[s * state_dim_], sd);
    b.next_states.col(j) = Eigen::Map<const Eigen::VectorXd>(&next_states_[s * state_dim_], sd);
    b.actions.col(j) = Eigen::Map<const Eigen::VectorXd>(&actions_[s * action_dim_], ad);
    b.rewards(j) = rewards_[s];
    b.terminated(j) = terminated_[s];
  }
  return b;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  const std::vector<std::size_t> slots = sample_slots(n, rng);
  return gather(slots);
}

// ---------------------------------------------------------------------------
// Configuration

EstimatorOptions SacConfig::estimator_options() const {
  EstimatorOptions o;
  o.kind = estimator;
  o.use_baseline = use_baseline;
  o.baseline_samples = baseline_samples;
  o.temperature = temperature;
  return o;
}

void SacConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (components < 1) fail("components", "must be >= 1");
  if (hidden_width < 1) fail("hidden_width", "must be >= 1");
  if (!(critic_lr > 0.0) || !std::isfinite(critic_lr)) fail("critic_lr", "must be > 0");
  if (!(lr_ratio > 0.0) || !std::isfinite(lr_ratio)) fail("lr_ratio", "must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha", "must be >= 0");
  if (entropy_mode == EntropyMode::automatic && !(alpha > 0.0))
    fail("alpha", "must be > 0 under automatic tuning");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(smoothing > 0.0 && smoothing < 1.0)) fail("smoothing", "must lie in (0, 1)");
  if (buffer_capacity < 1) fail("buffer_capacity", "must be >= 1");
  if (!(discount >= 0.0 && discount <= 1.0)) fail("discount", "must lie in [0, 1]");
  if (baseline_samples < 1) fail("baseline_samples", "must be >= 1");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
}

SacConfig bandit_defaults() {
  SacConfig c;
  c.hidden_width = 16;
  c.buffer_capacity = 5000;
  c.batch_size = 32;
  c.true_critic = true;
  c.initial_uniform_steps = 0;
  c.total_steps = 2000;
  c.critic_lr = 1e-2;
  c.lr_ratio = 1.0;
  c.alpha = 1e-2;
  return c;
}

SacConfig classic_control_defaults() {
  SacConfig c;
  c.hidden_width = 64;
  c.buffer_capacity = 100000;
  c.batch_size = 32;
  c.smoothing = 0.01;
  c.initial_uniform_steps = 1000;
  c.total_steps = 100000;
  return c;
}

std::optional<TunedHyperparameters> tuned_hyperparameters(EnvKind env, PolicyKind policy,
                                                          EstimatorKind estimator) {
  struct Row {
    EnvKind env;
    PolicyKind policy;
    EstimatorKind estimator;
    TunedHyperparameters h;
  };
  using E = EnvKind;
  using P = PolicyKind;
  using K = EstimatorKind;
  static const Row rows[] = {
      {E::pendulum_shaped, P::sg, K::rp, {1e-2, 1e-1, 1e-1}},
      {E::pendulum_shaped, P::usgm, K::rp, {1e-2, 1e-1, 1e-1}},
      {E::pendulum_shaped, P::sgm, K::half_rp, {1e-2, 1e-1, 1e-1}},
      {E::pendulum_shaped, P::sgm, K::mrp, {1e-2, 1e-1, 1e-2}},
      {E::pendulum_shaped, P::sgm, K::gumbel_rp, {1e-2, 1e-1, 1e-1}},
      {E::acrobot_shaped, P::sg, K::rp, {1e-2, 1e-2, 1e-2}},
      {E::acrobot_shaped, P::usgm, K::rp, {1e-2, 1e-1, 1e-3}},
      {E::acrobot_shaped, P::sgm, K::half_rp, {1e-2, 1e-1, 1e-2}},
      {E::acrobot_shaped, P::sgm, K::mrp, {1e-2, 1e-1, 1e-2}},
      {E::acrobot_shaped, P::sgm, K::gumbel_rp, {1e-2, 1e-1, 1e-2}},
      {E::mountaincar_shaped, P::sg, K::rp, {1e-3, 1.0, 1e-1}},
      {E::mountaincar_shaped, P::usgm, K::rp, {1e-2, 1e-1, 1e-1}},
      {E::mountaincar_shaped, P::sgm, K::half_rp, {1e-2, 1e-1, 1e-1}},
      {E::mountaincar_shaped, P::sgm, K::mrp, {1e-3, 1.0, 1e-1}},
      {E::mountaincar_shaped, P::sgm, K::gumbel_rp, {1e-3, 1.0, 1e-1}},
      {E::pendulum, P::sg, K::rp, {1e-3, 1.0, 1e-2}},
      {E::pendulum, P::usgm, K::rp, {1e-3, 1.0, 1e-2}},
      {E::pendulum, P::sgm, K::half_rp, {1e-3, 1.0, 1e-2}},
      {E::pendulum, P::sgm, K::mrp, {1e-3, 1.0, 1e-3}},
      {E::pendulum, P::sgm, K::gumbel_rp, {1e-3, 1.0, 1e-2}},
      {E::acrobot, P::sg, K::rp, {1e-3, 1e-2, 1e-3}},
      {E::acrobot, P::usgm, K::rp, {1e-3, 1.0, 1e-3}},
      {E::acrobot, P::sgm, K::half_rp, {1e-3, 1.0, 1e-3}},
      {E::acrobot, P::sgm, K::mrp, {1e-3, 1.0, 1e-2}},
      {E::acrobot, P::sgm, K::gumbel_rp, {1e-3, 1e-1, 1e-3}},
      {E::mountaincar, P::sg, K::rp, {1e-4, 10.0, 1e-2}},
      {E::mountaincar, P::usgm, K::rp, {1e-4, 10.0, 1e-3}},
      {E::mountaincar, P::sgm, K::half_rp, {1e-3, 1.0, 1e-2}},
      {E::mountaincar, P::sgm, K::mrp, {1e-4, 10.0, 1e-2}},
      {E::mountaincar, P::sgm, K::gumbel_rp, {1e-4, 10.0, 1e-2}},
  };
  for (const Row& r : rows)
    if (r.env == env && r.policy == policy && r.estimator == estimator) return r.h;
  return std::nullopt;
}

void soft_update(ParameterVector& target, const ParameterVector& live, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("smoothing factor must lie in [0, 1]");
  if (target.size() != live.size()) throw DimensionError("soft_update: size mismatch");
  auto& t = target.values();
  const auto& l = live.values();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - rho) * t[i] + rho * l[i];
}

// ---------------------------------------------------------------------------
// Agent

SacAgent::SacAgent(const SacConfig& config, std::size_t state_dim, std::size_t action_dim,
                    std::shared_ptr<const Critic> true_critic)
    : config_(config),
      state_dim_(state_dim),
      action_dim_(action_dim),
      layout_(layout_for(config.policy, config.components, action_dim)),
      actor_spec_(network_spec(state_dim, layout_.size(), config)),
      critic_spec_(network_spec(state_dim + action_dim, 1, config)),
      log_alpha_(0.0),
      true_critic_(std::move(true_critic)),
      actor_batch_(actor_spec_),
      critic1_batch_(critic_spec_),
      critic2_batch_(critic_spec_),
      scratch_batch_(critic_spec_) {
  config_.validate();
  if (config_.true_critic && !true_critic_)
    throw ConfigError("config field 'true_critic': no analytic critic is available");
  Rng init = Rng(config_.seed).substream("init");
  Rng actor_rng = init.substream("actor");
  Rng critic_rng = init.substream("critic");
  actor_ = initialized(actor_spec_, actor_rng);
  critic1_ = initialized(critic_spec_, critic_rng);
  critic2_ = initialized(critic_spec_, critic_rng);
  target1_ = critic1_;
  target2_ = critic2_;
  actor_opt_ = make_adam(actor_.size(), config_.actor_lr());
  critic1_opt_ = make_adam(critic1_.size(), config_.critic_lr);
  critic2_opt_ = make_adam(critic2_.size(), config_.critic_lr);
  log_alpha_opt_ = make_adam(1, config_.actor_lr());
  set_alpha(config_.alpha);
}

double SacAgent::alpha() const {
  return config_.entropy_mode == EntropyMode::fixed ? config_.alpha : std::exp(log_alpha_);
}

void SacAgent::set_alpha(double alpha) {
  if (!(alpha >= 0.0)) throw DomainError("entropy scale must be >= 0");
  config_.alpha = alpha;
  log_alpha_ = alpha > 0.0 ? std::log(alpha) : 0.0;
}

double SacAgent::target_entropy() const {
  return -config_.target_entropy_coef * static_cast<double>(action_dim_);
}

bool SacAgent::all_finite() const {
  return actor_.all_finite() && critic1_.all_finite() && critic2_.all_finite() &&
         target1_.all_finite() && target2_.all_finite() && std::isfinite(log_alpha_);
}

MixtureHead SacAgent::policy_head(std::span<const double> state) const {
  if (state.size() != state_dim_) throw DimensionError("state has the wrong dimension");
  const std::vector<double> out = mlp_forward(actor_spec_, actor_, state);
  return make_head(layout_, out);
}

std::vector<double> SacAgent::act(std::span<const double> state, Rng& rng,
                                  std::size_t step_index) const {
  if (step_index < config_.initial_uniform_steps) {
    std::vector<double> a(action_dim_);
    for (double& x : a) x = rng.uniform(-1.0, 1.0);
    return a;
  }
  return sample(policy_head(state), rng).action;
}

std::vector<MixtureHead> SacAgent::heads_for(const Eigen::MatrixXd& head_outputs) const {
  std::vector<MixtureHead> heads;
  heads.reserve(static_cast<std::size_t>(head_outputs.cols()));
  for (Eigen::Index j = 0; j < head_outputs.cols(); ++j)
    heads.push_back(make_head(layout_, std::span<const double>(head_outputs.col(j).data(),
                                                               layout_.size())));
  return heads;
}

Eigen::MatrixXd SacAgent::critic_inputs(const Eigen::MatrixXd& states,
                                        const Eigen::MatrixXd& actions) const {
  Eigen::MatrixXd x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

double SacAgent::q_value(int which, std::span<const double> state,
                         std::span<const double> action) {
  if (true_critic_) return true_critic_->value(action);
  Eigen::MatrixXd x(state_dim_ + action_dim_, 1);
  for (std::size_t i = 0; i < state_dim_; ++i) x(static_cast<Eigen::Index>(i), 0) = state[i];
  for (std::size_t i = 0; i < action_dim_; ++i)
    x(static_cast<Eigen::Index>(state_dim_ + i), 0) = action[i];
  return scratch_batch_.forward(which == 0 ? critic1_ : critic2_, x)(0, 0);
}

double SacAgent::q_value(std::span<const double> state, std::span<const double> action) {
  if (true_critic_) return true_critic_->value(action);
  return std::min(q_value(0, state, action), q_value(1, state, action));
}

std::vector<CriticAnswer> SacAgent::answer(const Eigen::MatrixXd& states,
                                           std::span<const std::size_t> state_of_query,
                                           std::span<const CriticQuery> queries) {
  std::vector<CriticAnswer> out(queries.size());
  if (true_critic_) {
    for (std::size_t j = 0; j < queries.size(); ++j) {
      if (queries[j].with_grad) {
        out[j].grad.assign(action_dim_, 0.0);
        out[j].value = true_critic_->value_and_grad(queries[j].action, out[j].grad);
      } else {
        out[j].value = true_critic_->value(queries[j].action);
      }
    }
    return out;
  }

  const auto n = static_cast<Eigen::Index>(queries.size());
  const auto sd = static_cast<Eigen::Index>(state_dim_);
  Eigen::MatrixXd x(sd + static_cast<Eigen::Index>(action_dim_), n);
  bool any_grad = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& q = queries[static_cast<std::size_t>(j)];
    x.col(j).head(sd) = states.col(static_cast<Eigen::Index>(state_of_query[j]));
    for (std::size_t i = 0; i < action_dim_; ++i) x(sd + static_cast<Eigen::Index>(i), j) = q.action[i];
    any_grad = any_grad || q.with_grad;
  }
  const Eigen::MatrixXd q1 = critic1_batch_.forward(critic1_, x);
  const Eigen::MatrixXd q2 = critic2_batch_.forward(critic2_, x);
  Eigen::MatrixXd pick1 = Eigen::MatrixXd::Zero(1, n);
  Eigen::MatrixXd pick2 = Eigen::MatrixXd::Zero(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const bool first = q1(0, j) <= q2(0, j);
    out[static_cast<std::size_t>(j)].value = first ? q1(0, j) : q2(0, j);
    if (queries[static_cast<std::size_t>(j)].with_grad) (first ? pick1 : pick2)(0, j) = 1.0;
  }
  if (!any_grad) return out;
  const Eigen::MatrixXd dx = critic1_batch_.backward(critic1_, pick1, {}) +
                             critic2_batch_.backward(critic2_, pick2, {});
  for (Eigen::Index j = 0; j < n; ++j) {
    auto& a = out[static_cast<std::size_t>(j)];
    if (!queries[static_cast<std::size_t>(j)].with_grad) continue;
    a.grad.resize(action_dim_);
    for (std::size_t i = 0; i < action_dim_; ++i) a.grad[i] = dx(sd + static_cast<Eigen::Index>(i), j);
  }
  return out;
}

Eigen::VectorXd SacAgent::critic_target(const Batch& batch, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw Error("critic_target: empty batch");
  const std::vector<MixtureHead> heads = heads_for(actor_batch_.forward(actor_, batch.next_states));
  Eigen::MatrixXd next_actions(static_cast<Eigen::Index>(action_dim_), n);
  Eigen::VectorXd log_probs(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const ActionSample s = sample(heads[static_cast<std::size_t>(j)], rng);
    for (std::size_t i = 0; i < action_dim_; ++i)
      next_actions(static_cast<Eigen::Index>(i), j) = s.action[i];
    log_probs(j) = s.log_prob;
  }
  const Eigen::MatrixXd x = critic_inputs(batch.next_states, next_actions);
  const Eigen::RowVectorXd t1 = scratch_batch_.forward(target1_, x);
  const Eigen::RowVectorXd t2 = scratch_batch_.forward(target2_, x);
  const double a = alpha();
  Eigen::VectorXd y(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double soft_value = std::min(t1(j), t2(j)) - a * log_probs(j);
    y(j) = batch.rewards(j) + config_.discount * (1.0 - batch.terminated(j)) * soft_value;
  }
  return y;
}

CriticLosses SacAgent::critic_losses(const Batch& batch, const Eigen::VectorXd& targets) {
  const Eigen::MatrixXd x = critic_inputs(batch.states, batch.actions);
  const double n = static_cast<double>(batch.size());
  CriticLosses l;
  l.first = (scratch_batch_.forward(critic1_, x).row(0).transpose() - targets).squaredNorm() / n;
  l.second = (scratch_batch_.forward(critic2_, x).row(0).transpose() - targets).squaredNorm() / n;
  return l;
}

CriticLosses SacAgent::update_critics(const Batch& batch, Rng& rng) {
  if (true_critic_) return {};
  const Eigen::VectorXd y = critic_target(batch, rng);
  const Eigen::MatrixXd x = critic_inputs(batch.states, batch.actions);
  const double n = static_cast<double>(batch.size());
  CriticLosses losses;
  auto step = [&](ParameterVector& params, AdamState& opt, MlpBatch& net, double& loss) {
    const Eigen::RowVectorXd residual = net.forward(params, x).row(0) - y.transpose();
    loss = residual.squaredNorm() / n;
    if (!std::isfinite(loss)) throw NonFiniteError("critic loss is not finite");
    std::vector<double> grad(params.size(), 0.0);
    net.backward(params, (2.0 / n) * residual, grad);
    adam_step(opt, params.values(), grad);
  };
  step(critic1_, critic1_opt_, critic1_batch_, losses.first);
  step(critic2_, critic2_opt_, critic2_batch_, losses.second);
  return losses;
}

ActorGradient SacAgent::actor_gradient(const Batch& batch, std::span<const NoiseDraw> noise) {
  return actor_gradient(batch, config_.estimator_options(), noise);
}

ActorGradient SacAgent::actor_gradient(const Batch& batch, const EstimatorOptions& options,
                                       std::span<const NoiseDraw> noise) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error("actor_gradient: empty batch");
  if (noise.size() != n) throw DimensionError("actor_gradient: one noise draw per state required");
  options.validate();
  const Eigen::MatrixXd outputs = actor_batch_.forward(actor_, batch.states);
  const std::vector<MixtureHead> heads = heads_for(outputs);

  std::vector<CriticQuery> queries;
  std::vector<std::size_t> owner;
  std::vector<std::size_t> first_query(n + 1, 0);
  for (std::size_t b = 0; b < n; ++b) {
    first_query[b] = queries.size();
    for (auto& q : plan_queries(heads[b], options, noise[b])) {
      queries.push_back(std::move(q));
      owner.push_back(b);
    }
  }
  first_query[n] = queries.size();
  const std::vector<CriticAnswer> answers = answer(batch.states, owner, queries);

  const double a = alpha();
  const std::size_t p = layout_.size();
  Eigen::MatrixXd grad_out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
  ActorGradient g;
  Tape tape;
  std::vector<Var> leaves;
  for (std::size_t b = 0; b < n; ++b) {
    tape.clear();
    leaves.clear();
    for (std::size_t i = 0; i < p; ++i)
      leaves.push_back(tape.leaf(outputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b))));
    const HeadExpr expr = head_expr(tape, layout_, leaves);
    const std::span<const CriticAnswer> mine(answers.data() + first_query[b],
                                             first_query[b + 1] - first_query[b]);
    const Var s = build_surrogate(expr, options, noise[b], mine, a);
    const std::vector<double> d = tape.gradient(s, leaves);
    for (std::size_t i = 0; i < p; ++i)
      grad_out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) =
          -d[i] / static_cast<double>(n);
    g.mean_surrogate += s.value() / static_cast<double>(n);
  }
  g.params.assign(actor_.size(), 0.0);
  actor_batch_.backward(actor_, grad_out, g.params);
  return g;
}

ActorGradient SacAgent::actor_gradient(const Batch& batch, Rng& rng) {
  return actor_gradient(batch, config_.estimator_options(), rng);
}

ActorGradient SacAgent::actor_gradient(const Batch& batch, const EstimatorOptions& options,
                                       Rng& rng) {
  const std::vector<MixtureHead> heads = heads_for(actor_batch_.forward(actor_, batch.states));
  std::vector<NoiseDraw> noise;
  noise.reserve(heads.size());
  for (const auto& h : heads) noise.push_back(draw_noise(h, options, rng));
  return actor_gradient(batch, options, noise);
}

double SacAgent::update_actor(const Batch& batch, Rng& rng) {
  const ActorGradient g = actor_gradient(batch, rng);
  adam_step(actor_opt_, actor_.values(), g.params);
  return g.mean_surrogate;
}

double SacAgent::entropy_scale_gradient(const Batch& batch, Rng& rng) {
  const std::vector<MixtureHead> heads = heads_for(actor_batch_.forward(actor_, batch.states));
  double mean = 0.0;
  for (const auto& h : heads) mean += sample(h, rng).log_prob + target_entropy();
  mean /= static_cast<double>(heads.size());
  return -std::exp(log_alpha_) * mean;
}

double SacAgent::update_entropy_scale(const Batch& batch, Rng& rng) {
  if (config_.entropy_mode == EntropyMode::fixed) return alpha();
  const double g = entropy_scale_gradient(batch, rng);
  adam_step(log_alpha_opt_, std::span<double>(&log_alpha_, 1), std::span<const double>(&g, 1));
  return alpha();
}

void SacAgent::soft_update_targets() {
  soft_update(target1_, critic1_, config_.smoothing);
  soft_update(target2_, critic2_, config_.smoothing);
}

// ---------------------------------------------------------------------------
// Training loop

std::shared_ptr<const Critic> bandit_critic(const BanditSpec& bandit) {
  bandit.validate();
  return std::make_shared<FunctionCritic>(
      [bandit](std::span<const double> a) { return bandit.reward_for_action(a[0]); },
      [bandit](std::span<const double> a, std::span<double> grad) {
        const double x = bandit.action_scale * a[0];
        grad[0] = bandit.action_scale * bandit.reward_gradient_at(x);
        return bandit.reward_at(x);
      });
}

RunRecord train_loop(const SacConfig& config, Environment& env,
                     const std::function<void(const EpisodeRow&)>& on_episode,
                     const UpdateObserver& before_update) {
  config.validate();
  std::shared_ptr<const Critic> critic;
  if (config.true_critic) {
    if (env.bandit() == nullptr)
      throw ConfigError("config field 'true_critic': only bandits have an analytic critic");
    critic = bandit_critic(*env.bandit());
  }
  const Rng root(config.seed);
  Rng env_rng = root.substream("env");
  Rng act_rng = root.substream("act");
  Rng update_rng = root.substream("update");

  SacAgent agent(config, env.observation_dim(), env.action_dim(), critic);
  ReplayBuffer buffer(config.buffer_capacity, env.observation_dim(), env.action_dim());

  RunRecord record;
  record.seed = config.seed;
  record.total_steps = config.total_steps;
  if (config.total_steps == 0) return record;

  env.reset(env_rng);
  EpisodeRow row;
  row.seed = config.seed;
  double entropy_sum = 0.0, separation_sum = 0.0;

  for (std::size_t step = 0; step < config.total_steps; ++step) {
    try {
      const std::vector<double> state = env.state().observation;
      const MixtureHead head = agent.policy_head(state);
      entropy_sum += weighting_entropy(head);
      separation_sum += component_separation(head);
      std::vector<double> action = step < config.initial_uniform_steps
                                       ? agent.act(state, act_rng, step)
                                       : sample(head, act_rng).action;
      for (double& a : action) a = std::clamp(a, -1.0, 1.0);
      const StepResult r = env.step(action);
      buffer.add({state, action, r.reward, r.next_observation, r.terminated});
      row.episode_return += r.reward;
      ++row.length;

      if (step >= config.initial_uniform_steps) {
        const Batch batch = buffer.sample(config.batch_size, update_rng);
        if (before_update) before_update(step, agent, batch);
        agent.update_critics(batch, update_rng);
        agent.update_actor(batch, update_rng);
        agent.update_entropy_scale(batch, update_rng);
        if (!agent.uses_true_critic()) agent.soft_update_targets();
        if (!agent.all_finite()) throw NonFiniteError("parameters became non-finite");
      }

      if (r.terminated || r.truncated) {
        row.step = step + 1;
        row.alpha = agent.alpha();
        row.weighting_entropy = entropy_sum / static_cast<double>(row.length);
        row.component_separation = separation_sum / static_cast<double>(row.length);
        record.episodes.push_back(row);
        if (on_episode) on_episode(row);
        row = EpisodeRow{};
        row.seed = config.seed;
        row.episode = record.episodes.size();
        entropy_sum = separation_sum = 0.0;
        env.reset(env_rng);
      }
    } catch (const NonFiniteError& e) {
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what(),
                            step, record);
    }
  }
  return record;
}

}  // namespace mixpol
