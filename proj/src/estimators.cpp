#include "mixpol/estimators.hpp"

#include <cmath>
#include <string>

#include "mixpol/errors.hpp"

namespace mixpol {

namespace {

bool uses_baseline(const EstimatorOptions& o, const MixtureHead& head) {
  if (!o.use_baseline) return false;
  if (o.kind == EstimatorKind::lr) return true;
  return o.kind == EstimatorKind::half_rp && head.components > 1;
}

void check_finite(const CriticAnswer& a) {
  if (!std::isfinite(a.value)) throw NonFiniteError("critic returned a non-finite value");
  for (double g : a.grad)
    if (!std::isfinite(g)) throw NonFiniteError("critic returned a non-finite gradient");
}

Var critic_node(std::span<const Var> action, const CriticAnswer& answer) {
  if (answer.grad.size() != action.size())
    throw DimensionError("critic gradient does not match the action dimension");
  return action.front().tape->external(answer.value, action, answer.grad);
}

std::vector<Var> constants(Tape& tape, std::span<const double> xs) {
  std::vector<Var> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(tape.constant(x));
  return out;
}

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::lr: return "LR";
    case EstimatorKind::rp: return "RP";
    case EstimatorKind::half_rp: return "HalfRP";
    case EstimatorKind::mrp: return "MRP";
    case EstimatorKind::gumbel_rp: return "GumbelRP";
  }
  return "?";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  for (EstimatorKind k : {EstimatorKind::lr, EstimatorKind::rp, EstimatorKind::half_rp,
                          EstimatorKind::mrp, EstimatorKind::gumbel_rp}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown estimator '" + std::string(name) +
                    "' (expected LR, RP, HalfRP, MRP or GumbelRP)");
}

void EstimatorOptions::validate() const {
  if (baseline_samples < 1) throw ConfigError("baseline_samples must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

double Critic::value_and_grad(std::span<const double>, std::span<double>) const {
  throw Error("critic is not differentiable in the action");
}

FunctionCritic::FunctionCritic(ValueFn value_fn, GradFn grad_fn)
    : value_fn_(std::move(value_fn)), grad_fn_(std::move(grad_fn)) {}

double FunctionCritic::value(std::span<const double> action) const {
  return value_fn_(action);
}

double FunctionCritic::value_and_grad(std::span<const double> action,
                                      std::span<double> grad) const {
  if (!grad_fn_) return Critic::value_and_grad(action, grad);
  return grad_fn_(action, grad);
}

NoiseDraw draw_noise(const MixtureHead& head, const EstimatorOptions& options,
                     Rng& rng) {
  NoiseDraw d;
  const std::vector<double> weights = softmax_weights(head.weight_logits);
  const bool sample_component = options.kind == EstimatorKind::lr ||
                                options.kind == EstimatorKind::rp ||
                                options.kind == EstimatorKind::half_rp;
  if (sample_component && head.components > 1) d.component = rng.categorical(weights);
  d.noise = draw_base_noise(head.base, head.action_dim, rng);
  if (options.kind == EstimatorKind::gumbel_rp) {
    d.gumbel_noise.resize(head.components);
    for (double& x : d.gumbel_noise) x = rng.gumbel();
  }
  if (uses_baseline(options, head)) {
    d.baseline_actions.reserve(options.baseline_samples);
    for (std::size_t j = 0; j < options.baseline_samples; ++j)
      d.baseline_actions.push_back(sample(head, rng).action);
  }
  return d;
}

std::vector<CriticQuery> plan_queries(const MixtureHead& head,
                                      const EstimatorOptions& options,
                                      const NoiseDraw& noise) {
  std::vector<CriticQuery> q;
  switch (options.kind) {
    case EstimatorKind::lr:
      q.push_back({squash(head, component_presquash(head, noise.component, noise.noise)), false});
      break;
    case EstimatorKind::rp:
    case EstimatorKind::half_rp:
      q.push_back({squash(head, component_presquash(head, noise.component, noise.noise)), true});
      break;
    case EstimatorKind::mrp:
      for (std::size_t k = 0; k < head.components; ++k)
        q.push_back({squash(head, component_presquash(head, k, noise.noise)), true});
      break;
    case EstimatorKind::gumbel_rp: {
      const GumbelOneHot g = gumbel_st_from_noise(head.weight_logits, noise.gumbel_noise,
                                                  options.temperature);
      q.push_back({squash(head, component_presquash(head, g.selected(), noise.noise)), true});
      break;
    }
  }
  for (const auto& a : noise.baseline_actions) q.push_back({a, false});
  return q;
}

std::vector<CriticAnswer> answer_queries(const Critic& critic,
                                         std::span<const CriticQuery> queries) {
  std::vector<CriticAnswer> out(queries.size());
  for (std::size_t j = 0; j < queries.size(); ++j) {
    const auto& a = queries[j].action;
    if (queries[j].with_grad) {
      out[j].grad.assign(a.size(), 0.0);
      out[j].value = critic.value_and_grad(a, out[j].grad);
    } else {
      out[j].value = critic.value(a);
    }
  }
  return out;
}

Var build_surrogate(const HeadExpr& head, const EstimatorOptions& options,
                    const NoiseDraw& noise, std::span<const CriticAnswer> answers,
                    double entropy_scale) {
  if (entropy_scale < 0.0) throw DomainError("entropy scale must be >= 0");
  const std::size_t n = head.layout.components;
  const std::size_t primary = options.kind == EstimatorKind::mrp ? n : 1;
  if (answers.size() != primary + noise.baseline_actions.size())
    throw DimensionError("critic answers do not match the planned queries");
  for (const auto& a : answers) check_finite(a);

  Tape& tape = *head.means.front().tape;
  double baseline = 0.0;
  if (!noise.baseline_actions.empty()) {
    for (std::size_t j = primary; j < answers.size(); ++j) baseline += answers[j].value;
    baseline /= static_cast<double>(noise.baseline_actions.size());
  }
  const double alpha = entropy_scale;

  switch (options.kind) {
    case EstimatorKind::lr: {
      const MixtureHead values = head_values(head);
      const std::vector<double> u =
          component_presquash(values, noise.component, noise.noise);
      const Var log_density = log_prob_presquash_expr(head, constants(tape, u));
      const double weight = answers[0].value - alpha * log_density.value() - baseline;
      return log_density * weight;
    }
    case EstimatorKind::rp:
    case EstimatorKind::half_rp: {
      const std::vector<Var> u = component_presquash_expr(head, noise.component, noise.noise);
      const std::vector<Var> action = squash_expr(head, u);
      const Var q = critic_node(action, answers[0]);
      const Var log_density = log_prob_presquash_expr(head, u);
      Var objective = q - alpha * log_density;
      if (options.kind == EstimatorKind::half_rp && head.layout.learned_weights) {
        const double weight = answers[0].value - alpha * log_density.value() - baseline;
        objective = objective + head.log_weights[noise.component] * weight;
      }
      return objective;
    }
    case EstimatorKind::mrp: {
      std::vector<Var> terms(n);
      for (std::size_t k = 0; k < n; ++k) {
        const std::vector<Var> u = component_presquash_expr(head, k, noise.noise);
        const std::vector<Var> action = squash_expr(head, u);
        const Var q = critic_node(action, answers[k]);
        terms[k] = head.weights[k] * (q - alpha * log_prob_presquash_expr(head, u));
      }
      return n == 1 ? terms[0] : sum(terms);
    }
    case EstimatorKind::gumbel_rp: {
      const GumbelAction g = mixture_action_gumbel(head, noise.gumbel_noise, noise.noise,
                                                   options.temperature);
      const Var q = critic_node(g.action, answers[0]);
      return q - alpha * log_prob_presquash_expr(head, g.pre_squash);
    }
  }
  throw Error("unreachable estimator kind");
}

void ActorGradContext::validate() const {
  if (critic == nullptr) throw Error("ActorGradContext: critic is not set");
  if (entropy_scale < 0.0) throw DomainError("entropy scale must be >= 0");
  if (head_params.size() != layout.size())
    throw DimensionError("ActorGradContext: head parameters do not match the layout");
}

GradientEstimate estimate_gradient(const ActorGradContext& ctx,
                                   const EstimatorOptions& options,
                                   const NoiseDraw& noise) {
  ctx.validate();
  options.validate();
  const MixtureHead head = make_head(ctx.layout, ctx.head_params);
  const std::vector<CriticQuery> queries = plan_queries(head, options, noise);
  const std::vector<CriticAnswer> answers = answer_queries(*ctx.critic, queries);

  Tape tape;
  std::vector<Var> params;
  params.reserve(ctx.head_params.size());
  for (double p : ctx.head_params) params.push_back(tape.leaf(p));
  const HeadExpr expr = head_expr(tape, ctx.layout, params);
  const Var out = build_surrogate(expr, options, noise, answers, ctx.entropy_scale);
  GradientEstimate g;
  g.values = tape.gradient(out, params);
  g.surrogate = out.value();
  return g;
}

GradientEstimate estimate_gradient(const ActorGradContext& ctx,
                                   const EstimatorOptions& options, Rng& rng) {
  ctx.validate();
  options.validate();
  const MixtureHead head = make_head(ctx.layout, ctx.head_params);
  return estimate_gradient(ctx, options, draw_noise(head, options, rng));
}

GradientEstimate lr_gradient(const ActorGradContext& ctx, Rng& rng, bool use_baseline,
                             std::size_t baseline_samples) {
  return estimate_gradient(
      ctx, {EstimatorKind::lr, use_baseline, baseline_samples, 1.0}, rng);
}

GradientEstimate rp_gradient(const ActorGradContext& ctx, Rng& rng) {
  return estimate_gradient(ctx, {EstimatorKind::rp, false, 30, 1.0}, rng);
}

GradientEstimate halfrp_gradient(const ActorGradContext& ctx, Rng& rng,
                                 bool use_baseline, std::size_t baseline_samples) {
  return estimate_gradient(
      ctx, {EstimatorKind::half_rp, use_baseline, baseline_samples, 1.0}, rng);
}

GradientEstimate mrp_gradient(const ActorGradContext& ctx, Rng& rng) {
  return estimate_gradient(ctx, {EstimatorKind::mrp, false, 30, 1.0}, rng);
}

GradientEstimate gumbelrp_gradient(const ActorGradContext& ctx, Rng& rng,
                                   double temperature) {
  return estimate_gradient(ctx, {EstimatorKind::gumbel_rp, false, 30, temperature},
                           rng);
}

}  // namespace mixpol
