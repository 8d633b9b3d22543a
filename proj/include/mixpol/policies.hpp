#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixpol/rng.hpp"
#include "mixpol/tape.hpp"

namespace mixpol {

enum class BaseKind { gaussian, cauchy };

/// Policy families: squashed Gaussian (SG), its mixture (SGM), the mixture
/// with uniform fixed weights (USGM), unsquashed Gaussian (G) and mixture
/// (GM), squashed Cauchy and the squashed Cauchy mixture (CM).
enum class PolicyKind { sg, sgm, usgm, g, gm, cauchy, cm };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view name);

/// How the flat head parameters map to the mixture.
///
/// `network`: per component [means (d), log-stds (d)], then N weight logits
/// when weights are learned. Log-stds are clamped to [-20, 2].
/// `direct`: per component [means (d), stds (d)], then N free weights used
/// as-is (no softmax). This is the parameterization the variance identities
/// are stated in.
enum class HeadParam { network, direct };

struct HeadLayout {
  std::size_t components = 1;
  std::size_t action_dim = 1;
  BaseKind base = BaseKind::gaussian;
  bool squashed = true;
  bool learned_weights = false;
  HeadParam param = HeadParam::network;

  std::size_t component_size() const { return 2 * action_dim; }
  std::size_t weight_offset() const { return components * component_size(); }
  std::size_t size() const {
    return weight_offset() + (learned_weights ? components : 0);
  }
  std::size_t mean_index(std::size_t k, std::size_t i) const {
    return k * component_size() + i;
  }
  std::size_t scale_index(std::size_t k, std::size_t i) const {
    return k * component_size() + action_dim + i;
  }
  std::size_t weight_index(std::size_t k) const { return weight_offset() + k; }
};

/// Layout used by the actor network for a policy family. Single-component
/// families ignore `components`.
HeadLayout layout_for(PolicyKind kind, std::size_t components,
                      std::size_t action_dim);

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kAtanhClip = 1.0 - 1e-6;

/// Mixture parameters at one state. Row k of `means`/`log_stds` holds
/// component k (row-major, N x d).
struct MixtureHead {
  std::size_t components = 1;
  std::size_t action_dim = 1;
  std::vector<double> means;
  std::vector<double> log_stds;
  std::vector<double> weight_logits;
  BaseKind base = BaseKind::gaussian;
  bool squashed = true;

  double mean(std::size_t k, std::size_t i) const { return means[k * action_dim + i]; }
  double log_std(std::size_t k, std::size_t i) const {
    return log_stds[k * action_dim + i];
  }
  double std_dev(std::size_t k, std::size_t i) const;

  /// Throws DimensionError or DomainError when the head is malformed.
  void validate() const;
};

/// Builds a head from flat parameters in the given layout.
MixtureHead make_head(const HeadLayout& layout, std::span<const double> params);

struct ActionSample {
  std::vector<double> action;
  std::vector<double> pre_squash;
  std::size_t component = 0;
  std::vector<double> noise;
  double log_prob = 0.0;
};

struct GumbelOneHot {
  std::vector<double> hard;
  std::vector<double> soft;
  std::vector<double> gumbel_noise;
  double temperature = 1.0;

  std::size_t selected() const;
};

struct EntropyValue {
  double value;
  double d_sigma;
};

std::vector<double> softmax_weights(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> xs);

/// log(1 - tanh(u)^2) evaluated without cancellation.
double log_tanh_jacobian(double u);

/// Log density of one base component at pre-squash point u.
double base_log_density(BaseKind base, double u, double mean, double log_std);

/// Log density at an action. Squashed heads require |a_i| < 1; values are
/// clipped to 1 - 1e-6 before atanh.
double log_prob(const MixtureHead& head, std::span<const double> action);

/// Log density of the action tanh(u) (or u if unsquashed), evaluated at the
/// pre-squash point directly.
double log_prob_presquash(const MixtureHead& head, std::span<const double> u);

/// f(eps; k): the reparameterized pre-squash point of component k.
std::vector<double> component_presquash(const MixtureHead& head, std::size_t k,
                                        std::span<const double> noise);
std::vector<double> squash(const MixtureHead& head, std::span<const double> u);

/// Standard base noise (normal or Cauchy) of length d.
std::vector<double> draw_base_noise(BaseKind base, std::size_t d, Rng& rng);

ActionSample sample(const MixtureHead& head, Rng& rng);
/// Sample with the component and noise supplied by the caller.
ActionSample sample_with(const MixtureHead& head, std::size_t component,
                         std::span<const double> noise);

EntropyValue gaussian_entropy(double sigma);

GumbelOneHot gumbel_st_onehot(std::span<const double> logits, double temperature,
                              Rng& rng);
GumbelOneHot gumbel_st_from_noise(std::span<const double> logits,
                                  std::span<const double> gumbel_noise,
                                  double temperature);

/// Weighting entropy -sum w log w of the head's weights.
double weighting_entropy(const MixtureHead& head);
/// Mean pairwise Euclidean distance between the (squashed) component means.
double component_separation(const MixtureHead& head);

/// Tape view of a mixture head.
struct HeadExpr {
  HeadLayout layout;
  std::vector<Var> means;        // N x d
  std::vector<Var> stds;         // N x d
  std::vector<Var> log_stds;     // N x d
  std::vector<Var> log_weights;  // N
  std::vector<Var> weights;      // N

  Var mean(std::size_t k, std::size_t i) const { return means[k * layout.action_dim + i]; }
  Var std_dev(std::size_t k, std::size_t i) const { return stds[k * layout.action_dim + i]; }
  Var log_std(std::size_t k, std::size_t i) const {
    return log_stds[k * layout.action_dim + i];
  }
};

/// Records the head on `tape` from flat parameter nodes in `layout`.
HeadExpr head_expr(Tape& tape, const HeadLayout& layout, std::span<const Var> params);

/// Double-valued head matching a tape head.
MixtureHead head_values(const HeadExpr& expr);

/// Component pre-squash point mean + std * eps on the tape.
std::vector<Var> component_presquash_expr(const HeadExpr& head, std::size_t k,
                                          std::span<const double> noise);
std::vector<Var> squash_expr(const HeadExpr& head, std::span<const Var> u);

/// Log mixture density of the action corresponding to pre-squash point u.
Var log_prob_presquash_expr(const HeadExpr& head, std::span<const Var> u);
/// Log mixture density at an action node; squashed heads map it back with a
/// clipped atanh.
Var log_prob_expr(const HeadExpr& head, std::span<const Var> action);

struct GumbelAction {
  std::vector<Var> action;
  /// atanh(action) for squashed heads, recorded as an exact inverse at the
  /// selected component's pre-squash point rather than a clipped atanh.
  std::vector<Var> pre_squash;
};

/// Straight-through Gumbel-softmax mixture action sum_k z_k f(eps; k). The
/// forward value equals the selected component's action.
GumbelAction mixture_action_gumbel(const HeadExpr& head,
                                       std::span<const double> gumbel_noise,
                                       std::span<const double> noise,
                                       double temperature);

}  // namespace mixpol
