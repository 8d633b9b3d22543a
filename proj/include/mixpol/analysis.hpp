#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixpol/envs.hpp"
#include "mixpol/errors.hpp"
#include "mixpol/estimators.hpp"
#include "mixpol/policies.hpp"
#include "mixpol/rng.hpp"
#include "mixpol/sac.hpp"

namespace mixpol {

// ---------------------------------------------------------------------------
// Regularized bandit objective over unbounded Gaussian families
// ---------------------------------------------------------------------------

/// Adjacent quadrature refinements disagreed by more than the tolerance.
struct QuadratureError : Error {
  using Error::Error;
};

enum class StudyFamily { gaussian, gm2 };

std::string_view to_string(StudyFamily family);
StudyFamily parse_study_family(std::string_view name);

inline constexpr double kStudyMeanBound = 5.0;
inline constexpr double kStudyLogStdLo = -3.0;
inline constexpr double kStudyLogStdHi = 3.0;

/// Density over the bandit's kernel domain: a weighted sum of Gaussians.
/// Weights must be non-negative and sum to one.
struct DensityParams {
  std::vector<double> means;
  std::vector<double> log_stds;
  std::vector<double> weights;

  static DensityParams gaussian(double mean, double log_std);
  static DensityParams mixture(double mean1, double log_std1, double mean2, double log_std2,
                               double first_weight);

  std::size_t components() const { return means.size(); }
  double density(double x) const;
  void validate() const;
};

/// Optimizer coordinates. Gaussian: [mean, log_std]. Two-component mixture:
/// [mean1, log_std1, mean2, log_std2, w] with weights (w, 1 - w), so the
/// simplex constraint becomes the box w in [0, 1].
std::vector<double> pack(StudyFamily family, const DensityParams& params);
DensityParams unpack(StudyFamily family, std::span<const double> x);
std::size_t coordinate_count(StudyFamily family);
/// Box bounds for the packed coordinates.
void study_bounds(StudyFamily family, std::vector<double>& lower, std::vector<double>& upper);

struct QuadratureOptions {
  /// Nodes per panel for the coarse rule; the check rule doubles them.
  std::size_t nodes = 10;
  double tolerance = 1e-6;
};

/// J = J0 + alpha H with J0 the expected reward and H the differential
/// entropy, plus dJ/d(per-component parameters).
struct ObjectiveValue {
  double j = 0.0;
  double j0 = 0.0;
  double entropy = 0.0;
  std::vector<double> d_means;
  std::vector<double> d_log_stds;
  /// Partials with respect to each weight taken as a free variable.
  std::vector<double> d_weights;
  /// |J(coarse) - J(refined)|.
  double refinement_gap = 0.0;
};

/// Piecewise Gauss-Legendre integration of pi(x) (r(x) - alpha log pi(x))
/// over the union of mean +/- 12 std of every policy component and every
/// reward kernel, with panel breaks at fixed multiples of each scale. The
/// reward is evaluated at the kernel-domain point x (no action stretch).
/// Returns the refined rule; throws QuadratureError when the coarse and
/// refined rules disagree by more than `options.tolerance`.
ObjectiveValue integrate_objective(const BanditSpec& bandit, const DensityParams& params,
                                   double alpha, const QuadratureOptions& options = {});

/// dJ with respect to the packed coordinates.
std::vector<double> packed_gradient(StudyFamily family, const ObjectiveValue& value);

enum class Modality { unimodal, bimodal };
std::string_view to_string(Modality modality);

/// Counts strict local maxima of the density on a 2001-point grid over
/// [lo, hi], dropping maxima under 1% of the highest grid value and merging
/// maxima closer than 0.05. Two or more survivors make it bimodal.
Modality classify_modality(const DensityParams& params, double lo, double hi);
std::size_t count_modes(const DensityParams& params, double lo, double hi);

struct OptimizerOptions {
  std::size_t max_iters = 2000;
  double tolerance = 1e-6;
  std::size_t memory = 10;
  QuadratureOptions quadrature{};
};

struct StationaryPointResult {
  StudyFamily family = StudyFamily::gaussian;
  double alpha = 0.0;
  DensityParams params;
  double j = 0.0;
  double j0 = 0.0;
  Modality modality = Modality::unimodal;
  bool converged = false;
  std::size_t iterations = 0;
  /// Infinity norm of the projected gradient at the final point.
  double projected_gradient = 0.0;
  /// Why a trial did not converge; empty when it did.
  std::string failure;
};

/// Draws a start point: means U[-2, 2], log-stds U[-3, 0], weights U[0, 1]
/// renormalized.
DensityParams sample_initial(StudyFamily family, Rng& rng);

/// Bound-constrained quasi-Newton maximization of J (projected L-BFGS with a
/// backtracking search along the projection arc). Convergence requires the
/// projected gradient below `options.tolerance`; stopping on the log-std
/// upper bound while the objective still rewards a wider policy counts as
/// divergence, and quadrature failures count as numerical issues.
StationaryPointResult optimize_stationary(const BanditSpec& bandit, StudyFamily family,
                                          double alpha, const DensityParams& init,
                                          const OptimizerOptions& options = {});

/// Infinity norm of the projected gradient of J at `params` (J is maximized).
double projected_gradient_norm(StudyFamily family, const DensityParams& params,
                               std::span<const double> gradient);

/// Entropy scales of the study grid.
std::vector<double> default_alpha_grid();

struct StudyRow {
  double alpha = 0.0;
  StudyFamily family = StudyFamily::gaussian;
  std::size_t trials = 0;
  std::size_t converged = 0;
  /// Index of the converged trial with the largest J; nullopt when none.
  std::optional<std::size_t> best_trial;
  double best_j = 0.0;
  double best_j0 = 0.0;
  double bimodal_fraction = 0.0;  // among converged trials
  double converged_fraction = 0.0;
};

struct StudyTable {
  std::vector<StudyRow> rows;
  /// trials[row][t] is trial t of rows[row].
  std::vector<std::vector<StationaryPointResult>> trials;
};

struct StudyOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<StudyFamily> families{StudyFamily::gaussian, StudyFamily::gm2};
  OptimizerOptions optimizer{};
};

/// One row per (alpha, family), alpha-major. Each trial draws its start from
/// its own substream, so results do not depend on the thread count.
StudyTable sweep_alpha_study(const BanditSpec& bandit, std::span<const double> alphas,
                             const StudyOptions& options = {});

/// Summary of a finished list of trials, selecting the converged trial with
/// the largest J.
StudyRow summarize_trials(double alpha, StudyFamily family,
                          std::span<const StationaryPointResult> trials);

/// dJ/dsigma for a single Gaussian, by quadrature.
double gaussian_sigma_gradient(const BanditSpec& bandit, double mean, double std_dev,
                               double alpha);

// ---------------------------------------------------------------------------
// Gradient variance diagnostics
// ---------------------------------------------------------------------------

struct VarianceSummary {
  std::string label;
  std::size_t repeats = 0;
  std::vector<double> mean;
  std::vector<double> variances;  // per coordinate, unbiased
  double trace = 0.0;
  double trace_std_error = 0.0;
};

/// Per-coordinate sample variances and their sum. The trace's standard
/// error treats the per-draw squared deviations as independent samples of
/// the trace.
VarianceSummary summarize_gradients(std::string label,
                                    std::span<const std::vector<double>> draws);

/// "lr", "lr_baseline", "half_rp", "half_rp_baseline", "rp", "mrp", "gumbel_rp".
std::string variance_label(const EstimatorOptions& options);
/// Inverse of variance_label; throws ConfigError on an unknown label.
EstimatorOptions parse_variance_label(std::string_view label);

struct ImportanceExcess {
  /// Sum over components of Var_mix(rho_k LR_k) - Var_k(LR_k) for the mean,
  /// standard deviation and reward coordinates.
  double mean_sum = 0.0;
  double mean_std_error = 0.0;
  double std_sum = 0.0;
  double std_std_error = 0.0;
  double reward_sum = 0.0;
  double reward_std_error = 0.0;
  std::size_t samples = 0;

  bool gradient_condition_holds() const { return mean_sum >= 0.0 && std_sum >= 0.0; }
  bool reward_condition_holds() const { return reward_sum >= 0.0; }
};

struct VarianceReport {
  std::size_t repeats = 0;
  std::vector<VarianceSummary> estimators;
  std::optional<ImportanceExcess> importance_excess;

  const VarianceSummary& find(std::string_view label) const;
};

/// M gradient draws per estimator at fixed head parameters; nothing is
/// updated.
VarianceReport estimate_gradient_variance(const ActorGradContext& ctx,
                                          std::span<const EstimatorOptions> estimators,
                                          std::size_t repeats, Rng& rng);

/// M actor-gradient draws per estimator for a fixed agent and mini-batch.
VarianceReport estimate_gradient_variance(SacAgent& agent, const Batch& batch,
                                          std::span<const EstimatorOptions> estimators,
                                          std::size_t repeats, Rng& rng);

/// A fixed head and critic for variance measurements.
///
/// "standard": two-component squashed mixture with softmax weights,
/// Q(a) = sin(3a) + a^2 and entropy scale 0.1. "sin" and "bump": direct
/// two-component unsquashed mixtures with r(a) = sin(a) and exp(-a^2) and no
/// entropy term.
struct VarianceProblem {
  std::string name;
  HeadLayout layout;
  std::vector<double> head_params;
  std::shared_ptr<const FunctionCritic> critic;
  double entropy_scale = 0.0;

  ActorGradContext context() const;
};

VarianceProblem make_variance_problem(std::string_view name);
std::vector<std::string> variance_problem_names();

using RewardFn = std::function<double(double)>;

/// Monte Carlo estimate of the importance-sampling variance excess for a
/// one-dimensional unsquashed Gaussian mixture. Each component side reuses
/// the mixture draw's base noise, so a single component gives exactly zero.
/// Standard errors come from 20 batch means.
ImportanceExcess check_importance_excess(const MixtureHead& head, const RewardFn& reward,
                                     std::size_t samples, Rng& rng);

/// Both sides of one marginal-variance identity, each with the standard
/// error of its sample variance.
struct VarianceIdentity {
  std::string coordinate;  // e.g. "lr/mean[0]", "mrp/weight[1]"
  double lhs = 0.0;
  double lhs_std_error = 0.0;
  double rhs = 0.0;
  double rhs_std_error = 0.0;

  double z_score() const;
};

/// Mixture-estimator variances computed through the estimator pipeline
/// (left sides) against the component-level expressions they decompose
/// into (right sides), from independent draws. `theta` is a direct
/// one-dimensional head [mean, std] per component followed by the weights.
std::vector<VarianceIdentity> variance_identities(std::span<const double> theta,
                                                  const FunctionCritic& reward,
                                                  std::size_t samples, Rng& rng);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct BootstrapCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::size_t resamples = 0;
};

/// Percentile bootstrap of the mean. Throws Error on empty input.
BootstrapCI bootstrap_ci(std::span<const double> samples, Rng& rng, double level = 0.95,
                         std::size_t resamples = 2000);

/// Runs body(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace mixpol
