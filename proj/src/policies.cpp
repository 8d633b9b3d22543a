#include "mixpol/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mixpol/errors.hpp"

namespace mixpol {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2
const double kLogPi = std::log(std::numbers::pi);

double clamp_log_std(double s) { return std::clamp(s, kLogStdMin, kLogStdMax); }

}  // namespace

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::sg: return "SG";
    case PolicyKind::sgm: return "SGM";
    case PolicyKind::usgm: return "USGM";
    case PolicyKind::g: return "G";
    case PolicyKind::gm: return "GM";
    case PolicyKind::cauchy: return "Cauchy";
    case PolicyKind::cm: return "CM";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
  for (PolicyKind k : {PolicyKind::sg, PolicyKind::sgm, PolicyKind::usgm,
                       PolicyKind::g, PolicyKind::gm, PolicyKind::cauchy,
                       PolicyKind::cm}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown policy kind '" + std::string(name) +
                    "' (expected SG, SGM, USGM, G, GM, Cauchy or CM)");
}

HeadLayout layout_for(PolicyKind kind, std::size_t components,
                      std::size_t action_dim) {
  if (action_dim == 0) throw DimensionError("action_dim must be >= 1");
  HeadLayout l;
  l.action_dim = action_dim;
  const bool mixture =
      kind == PolicyKind::sgm || kind == PolicyKind::usgm ||
      kind == PolicyKind::gm || kind == PolicyKind::cm;
  if (mixture && components == 0)
    throw DimensionError("mixture policies need at least one component");
  l.components = mixture ? components : 1;
  l.base = (kind == PolicyKind::cauchy || kind == PolicyKind::cm)
               ? BaseKind::cauchy
               : BaseKind::gaussian;
  l.squashed = !(kind == PolicyKind::g || kind == PolicyKind::gm);
  l.learned_weights = mixture && kind != PolicyKind::usgm && l.components > 1;
  return l;
}

double MixtureHead::std_dev(std::size_t k, std::size_t i) const {
  return std::exp(log_std(k, i));
}

void MixtureHead::validate() const {
  if (components == 0) throw DimensionError("MixtureHead: N must be >= 1");
  if (action_dim == 0) throw DimensionError("MixtureHead: d must be >= 1");
  if (means.size() != components * action_dim)
    throw DimensionError("MixtureHead: 'means' must have N*d entries");
  if (log_stds.size() != components * action_dim)
    throw DimensionError("MixtureHead: 'log_stds' must have N*d entries");
  if (weight_logits.size() != components)
    throw DimensionError("MixtureHead: 'weight_logits' must have N entries");
  for (double v : means)
    if (!std::isfinite(v)) throw NonFiniteError("MixtureHead: non-finite mean");
  for (double v : log_stds)
    if (!std::isfinite(v)) throw NonFiniteError("MixtureHead: non-finite log-std");
  for (double v : weight_logits)
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NonFiniteError("MixtureHead: invalid weight logit");
}

MixtureHead make_head(const HeadLayout& layout, std::span<const double> params) {
  if (params.size() != layout.size())
    throw DimensionError("head parameters have length " +
                         std::to_string(params.size()) + ", layout expects " +
                         std::to_string(layout.size()));
  MixtureHead h;
  h.components = layout.components;
  h.action_dim = layout.action_dim;
  h.base = layout.base;
  h.squashed = layout.squashed;
  const std::size_t n = layout.components, d = layout.action_dim;
  h.means.resize(n * d);
  h.log_stds.resize(n * d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      h.means[k * d + i] = params[layout.mean_index(k, i)];
      const double s = params[layout.scale_index(k, i)];
      if (layout.param == HeadParam::network) {
        h.log_stds[k * d + i] = clamp_log_std(s);
      } else {
        if (!(s > 0.0)) throw DomainError("direct head: std must be positive");
        h.log_stds[k * d + i] = std::log(s);
      }
    }
  }
  h.weight_logits.assign(n, 0.0);
  if (layout.learned_weights) {
    for (std::size_t k = 0; k < n; ++k) {
      const double w = params[layout.weight_index(k)];
      if (layout.param == HeadParam::network) {
        h.weight_logits[k] = w;
      } else {
        if (w < 0.0) throw DomainError("direct head: weights must be >= 0");
        h.weight_logits[k] = std::log(w);
      }
    }
  }
  return h;
}

std::size_t GumbelOneHot::selected() const {
  return static_cast<std::size_t>(
      std::max_element(hard.begin(), hard.end()) - hard.begin());
}

std::vector<double> softmax_weights(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

double log_tanh_jacobian(double u) {
  // 1 - tanh(u)^2 = 4 e^{-2u} / (1 + e^{-2u})^2
  const double x = -2.0 * u;
  const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - softplus);
}

double base_log_density(BaseKind base, double u, double mean, double log_std) {
  const double sigma = std::exp(log_std);
  const double z = (u - mean) / sigma;
  if (base == BaseKind::gaussian) return -0.5 * z * z - log_std - kHalfLog2Pi;
  return -kLogPi - log_std - std::log1p(z * z);
}

double log_prob_presquash(const MixtureHead& head, std::span<const double> u) {
  const std::size_t n = head.components, d = head.action_dim;
  if (u.size() != d) throw DimensionError("log_prob: action has wrong length");
  const std::vector<double> logw = log_softmax(head.weight_logits);
  std::vector<double> terms(n);
  for (std::size_t k = 0; k < n; ++k) {
    double t = logw[k];
    for (std::size_t i = 0; i < d; ++i)
      t += base_log_density(head.base, u[i], head.mean(k, i), head.log_std(k, i));
    terms[k] = t;
  }
  double lp = log_sum_exp(terms);
  if (head.squashed)
    for (std::size_t i = 0; i < d; ++i) lp -= log_tanh_jacobian(u[i]);
  return lp;
}

double log_prob(const MixtureHead& head, std::span<const double> action) {
  if (!head.squashed) return log_prob_presquash(head, action);
  std::vector<double> u(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    if (!(std::abs(action[i]) < 1.0))
      throw DomainError("log_prob: squashed action component outside (-1, 1)");
    u[i] = std::atanh(std::clamp(action[i], -kAtanhClip, kAtanhClip));
  }
  return log_prob_presquash(head, u);
}

std::vector<double> component_presquash(const MixtureHead& head, std::size_t k,
                                        std::span<const double> noise) {
  if (noise.size() != head.action_dim)
    throw DimensionError("noise has wrong length");
  std::vector<double> u(head.action_dim);
  for (std::size_t i = 0; i < u.size(); ++i)
    u[i] = head.mean(k, i) + head.std_dev(k, i) * noise[i];
  return u;
}

std::vector<double> squash(const MixtureHead& head, std::span<const double> u) {
  std::vector<double> a(u.begin(), u.end());
  if (head.squashed)
    for (double& v : a) v = std::tanh(v);
  return a;
}

std::vector<double> draw_base_noise(BaseKind base, std::size_t d, Rng& rng) {
  std::vector<double> eps(d);
  for (double& e : eps)
    e = base == BaseKind::gaussian ? rng.standard_normal() : rng.standard_cauchy();
  return eps;
}

ActionSample sample_with(const MixtureHead& head, std::size_t component,
                         std::span<const double> noise) {
  if (component >= head.components)
    throw DimensionError("component index out of range");
  ActionSample s;
  s.component = component;
  s.noise.assign(noise.begin(), noise.end());
  s.pre_squash = component_presquash(head, component, noise);
  s.action = squash(head, s.pre_squash);
  s.log_prob = log_prob_presquash(head, s.pre_squash);
  return s;
}

ActionSample sample(const MixtureHead& head, Rng& rng) {
  const std::size_t k =
      head.components == 1 ? 0 : rng.categorical(softmax_weights(head.weight_logits));
  const std::vector<double> eps = draw_base_noise(head.base, head.action_dim, rng);
  return sample_with(head, k, eps);
}

EntropyValue gaussian_entropy(double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_entropy: sigma must be > 0");
  return {0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma) + 0.5, 1.0 / sigma};
}

GumbelOneHot gumbel_st_from_noise(std::span<const double> logits,
                                  std::span<const double> gumbel_noise,
                                  double temperature) {
  if (!(temperature > 0.0)) throw DomainError("Gumbel temperature must be > 0");
  if (gumbel_noise.size() != logits.size())
    throw DimensionError("Gumbel noise must match the number of logits");
  const std::size_t n = logits.size();
  const std::vector<double> logw = log_softmax(logits);
  std::vector<double> scores(n), scaled(n);
  std::size_t best = 0;
  for (std::size_t k = 0; k < n; ++k) {
    scores[k] = logw[k] + gumbel_noise[k];
    scaled[k] = scores[k] / temperature;
    if (scores[k] > scores[best]) best = k;  // strict: lowest index wins ties
  }
  GumbelOneHot g;
  g.temperature = temperature;
  g.gumbel_noise.assign(gumbel_noise.begin(), gumbel_noise.end());
  g.soft = softmax_weights(scaled);
  g.hard.assign(n, 0.0);
  g.hard[best] = 1.0;
  return g;
}

GumbelOneHot gumbel_st_onehot(std::span<const double> logits, double temperature,
                              Rng& rng) {
  std::vector<double> xi(logits.size());
  for (double& x : xi) x = rng.gumbel();
  return gumbel_st_from_noise(logits, xi, temperature);
}

double weighting_entropy(const MixtureHead& head) {
  double h = 0.0;
  const std::vector<double> logw = log_softmax(head.weight_logits);
  for (double lw : logw)
    if (std::isfinite(lw)) h -= std::exp(lw) * lw;
  return std::max(h, 0.0);
}

double component_separation(const MixtureHead& head) {
  const std::size_t n = head.components, d = head.action_dim;
  if (n < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        double ma = head.mean(a, i), mb = head.mean(b, i);
        if (head.squashed) {
          ma = std::tanh(ma);
          mb = std::tanh(mb);
        }
        sq += (ma - mb) * (ma - mb);
      }
      total += std::sqrt(sq);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

HeadExpr head_expr(Tape& tape, const HeadLayout& layout, std::span<const Var> params) {
  if (params.size() != layout.size())
    throw DimensionError("head parameters have length " +
                         std::to_string(params.size()) + ", layout expects " +
                         std::to_string(layout.size()));
  HeadExpr h;
  h.layout = layout;
  const std::size_t n = layout.components, d = layout.action_dim;
  h.means.reserve(n * d);
  h.stds.reserve(n * d);
  h.log_stds.reserve(n * d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d; ++i) {
      h.means.push_back(params[layout.mean_index(k, i)]);
      const Var s = params[layout.scale_index(k, i)];
      if (layout.param == HeadParam::network) {
        const Var ls = tape.max(tape.min(s, tape.constant(kLogStdMax)),
                                tape.constant(kLogStdMin));
        h.log_stds.push_back(ls);
        h.stds.push_back(tape.exp(ls));
      } else {
        if (!(s.value() > 0.0)) throw DomainError("direct head: std must be positive");
        h.stds.push_back(s);
        h.log_stds.push_back(tape.log(s));
      }
    }
  }
  if (!layout.learned_weights) {
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
      h.weights.push_back(tape.constant(w));
      h.log_weights.push_back(tape.constant(std::log(w)));
    }
  } else if (layout.param == HeadParam::network) {
    std::vector<Var> logits(params.begin() + static_cast<std::ptrdiff_t>(layout.weight_offset()),
                            params.begin() + static_cast<std::ptrdiff_t>(layout.size()));
    const Var lse = tape.logsumexp(logits);
    for (std::size_t k = 0; k < n; ++k) {
      h.log_weights.push_back(logits[k] - lse);
      h.weights.push_back(tape.exp(h.log_weights.back()));
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      const Var w = params[layout.weight_index(k)];
      if (w.value() < 0.0) throw DomainError("direct head: weights must be >= 0");
      h.weights.push_back(w);
      h.log_weights.push_back(tape.log(w));
    }
  }
  return h;
}

MixtureHead head_values(const HeadExpr& expr) {
  MixtureHead h;
  h.components = expr.layout.components;
  h.action_dim = expr.layout.action_dim;
  h.base = expr.layout.base;
  h.squashed = expr.layout.squashed;
  for (Var v : expr.means) h.means.push_back(v.value());
  for (Var v : expr.log_stds) h.log_stds.push_back(v.value());
  for (Var v : expr.log_weights) h.weight_logits.push_back(v.value());
  return h;
}

std::vector<Var> component_presquash_expr(const HeadExpr& head, std::size_t k,
                                          std::span<const double> noise) {
  const std::size_t d = head.layout.action_dim;
  if (noise.size() != d) throw DimensionError("noise has wrong length");
  std::vector<Var> u(d);
  for (std::size_t i = 0; i < d; ++i) u[i] = head.mean(k, i) + head.std_dev(k, i) * noise[i];
  return u;
}

std::vector<Var> squash_expr(const HeadExpr& head, std::span<const Var> u) {
  std::vector<Var> a(u.begin(), u.end());
  if (head.layout.squashed)
    for (Var& v : a) v = tanh(v);
  return a;
}

Var log_prob_presquash_expr(const HeadExpr& head, std::span<const Var> u) {
  const std::size_t n = head.layout.components, d = head.layout.action_dim;
  if (u.size() != d) throw DimensionError("log_prob: action has wrong length");
  std::vector<Var> terms(n);
  std::vector<Var> parts(d + 1);
  for (std::size_t k = 0; k < n; ++k) {
    parts[0] = head.log_weights[k];
    for (std::size_t i = 0; i < d; ++i) {
      const Var z = (u[i] - head.mean(k, i)) / head.std_dev(k, i);
      if (head.layout.base == BaseKind::gaussian)
        parts[i + 1] = -0.5 * square(z) - head.log_std(k, i) - kHalfLog2Pi;
      else
        parts[i + 1] = -kLogPi - head.log_std(k, i) - log(1.0 + square(z));
    }
    terms[k] = sum(parts);
  }
  Var lp = n == 1 ? terms[0] : logsumexp(terms);
  if (head.layout.squashed) {
    for (std::size_t i = 0; i < d; ++i)
      lp = lp - 2.0 * (std::numbers::ln2 - u[i] - softplus(-2.0 * u[i]));
  }
  return lp;
}

Var log_prob_expr(const HeadExpr& head, std::span<const Var> action) {
  if (!head.layout.squashed) return log_prob_presquash_expr(head, action);
  std::vector<Var> u(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) u[i] = atanh(action[i]);
  return log_prob_presquash_expr(head, u);
}

GumbelAction mixture_action_gumbel(const HeadExpr& head,
                                       std::span<const double> gumbel_noise,
                                       std::span<const double> noise,
                                       double temperature) {
  const std::size_t n = head.layout.components, d = head.layout.action_dim;
  if (!(temperature > 0.0)) throw DomainError("Gumbel temperature must be > 0");
  if (gumbel_noise.size() != n)
    throw DimensionError("Gumbel noise must have one entry per component");
  Tape& tape = *head.means.front().tape;

  std::vector<double> logw(n);
  for (std::size_t k = 0; k < n; ++k) logw[k] = head.log_weights[k].value();
  const GumbelOneHot onehot = gumbel_st_from_noise(logw, gumbel_noise, temperature);

  std::vector<Var> scaled(n);
  for (std::size_t k = 0; k < n; ++k)
    scaled[k] = (head.log_weights[k] + gumbel_noise[k]) / temperature;
  const Var lse = tape.logsumexp(scaled);

  std::vector<std::vector<Var>> presquash(n), actions(n);
  for (std::size_t k = 0; k < n; ++k) {
    presquash[k] = component_presquash_expr(head, k, noise);
    actions[k] = squash_expr(head, presquash[k]);
  }

  std::vector<Var> action(d);
  for (std::size_t k = 0; k < n; ++k) {
    const Var soft = exp(scaled[k] - lse);
    const Var z = tape.straight_through(onehot.hard[k], soft);
    for (std::size_t i = 0; i < d; ++i) {
      if (k == 0) action[i] = z * actions[k][i];
      else action[i] = action[i] + z * actions[k][i];
    }
  }
  if (!head.layout.squashed) return {action, action};

  const std::size_t selected = onehot.selected();
  std::vector<Var> u(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double at = presquash[selected][i].value();
    const double c = std::cosh(std::min(std::abs(at), 300.0));
    const double du_da = c * c;
    u[i] = tape.external(at, std::span<const Var>(&action[i], 1),
                         std::span<const double>(&du_da, 1));
  }
  return {action, u};
}

}  // namespace mixpol
