#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "mixpol/policies.hpp"
#include "mixpol/rng.hpp"
#include "mixpol/tape.hpp"

namespace mixpol {

enum class EstimatorKind { lr, rp, half_rp, mrp, gumbel_rp };

std::string_view to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(std::string_view name);

struct EstimatorOptions {
  EstimatorKind kind = EstimatorKind::mrp;
  /// Subtract the mean critic value of fresh policy samples from the score
  /// term (LR and HalfRP only).
  bool use_baseline = true;
  std::size_t baseline_samples = 30;
  /// Gumbel-softmax temperature (GumbelRP only).
  double temperature = 1.0;

  void validate() const;
};

/// Q(s, .) at a fixed state.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual double value(std::span<const double> action) const = 0;
  /// Writes dQ/da into `grad`. The default rejects critics that cannot be
  /// differentiated in the action.
  virtual double value_and_grad(std::span<const double> action,
                                std::span<double> grad) const;
};

/// Critic backed by callables. Leaving `grad_fn` empty makes the critic
/// value-only.
class FunctionCritic final : public Critic {
 public:
  using ValueFn = std::function<double(std::span<const double>)>;
  using GradFn = std::function<double(std::span<const double>, std::span<double>)>;

  explicit FunctionCritic(ValueFn value_fn, GradFn grad_fn = {});

  double value(std::span<const double> action) const override;
  double value_and_grad(std::span<const double> action,
                        std::span<double> grad) const override;

 private:
  ValueFn value_fn_;
  GradFn grad_fn_;
};

/// Every random quantity an estimator consumes at one state.
struct NoiseDraw {
  std::size_t component = 0;
  std::vector<double> noise;         // shared base noise, length d
  std::vector<double> gumbel_noise;  // length N, GumbelRP only
  std::vector<std::vector<double>> baseline_actions;
};

NoiseDraw draw_noise(const MixtureHead& head, const EstimatorOptions& options,
                     Rng& rng);

struct CriticQuery {
  std::vector<double> action;
  bool with_grad = false;
};

struct CriticAnswer {
  double value = 0.0;
  std::vector<double> grad;
};

/// Actions at which the critic must be evaluated, in the order
/// build_surrogate expects the answers.
std::vector<CriticQuery> plan_queries(const MixtureHead& head,
                                      const EstimatorOptions& options,
                                      const NoiseDraw& noise);

std::vector<CriticAnswer> answer_queries(const Critic& critic,
                                         std::span<const CriticQuery> queries);

/// Scalar whose gradient with respect to the head parameters is the
/// estimator output. Detached factors (score-term weights, baselines) enter
/// as constants.
Var build_surrogate(const HeadExpr& head, const EstimatorOptions& options,
                    const NoiseDraw& noise, std::span<const CriticAnswer> answers,
                    double entropy_scale);

struct GradientEstimate {
  std::vector<double> values;
  /// Value of the surrogate, useful for logging.
  double surrogate = 0.0;
};

struct ActorGradContext {
  HeadLayout layout;
  std::vector<double> head_params;
  const Critic* critic = nullptr;
  double entropy_scale = 0.0;

  void validate() const;
};

GradientEstimate estimate_gradient(const ActorGradContext& ctx,
                                   const EstimatorOptions& options, Rng& rng);
GradientEstimate estimate_gradient(const ActorGradContext& ctx,
                                   const EstimatorOptions& options,
                                   const NoiseDraw& noise);

GradientEstimate lr_gradient(const ActorGradContext& ctx, Rng& rng,
                             bool use_baseline = true,
                             std::size_t baseline_samples = 30);
GradientEstimate rp_gradient(const ActorGradContext& ctx, Rng& rng);
GradientEstimate halfrp_gradient(const ActorGradContext& ctx, Rng& rng,
                                 bool use_baseline = true,
                                 std::size_t baseline_samples = 30);
GradientEstimate mrp_gradient(const ActorGradContext& ctx, Rng& rng);
GradientEstimate gumbelrp_gradient(const ActorGradContext& ctx, Rng& rng,
                                   double temperature = 1.0);

}  // namespace mixpol
