#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixpol/analysis.hpp"
#include "mixpol/envs.hpp"
#include "mixpol/sac.hpp"

namespace mixpol {

/// Values swept by `mixpol sweep`. An empty list keeps the base config's
/// value; the sweep is the Cartesian product of the non-empty lists.
struct SweepGrid {
  std::vector<std::string> policy;
  std::vector<std::string> estimator;
  std::vector<double> alpha;
  std::vector<double> critic_lr;
  std::vector<double> lr_ratio;
  std::vector<std::size_t> components;
  std::vector<double> target_entropy_coef;
  std::vector<std::uint64_t> bandit_seed;

  std::size_t points() const;
};

struct StationarySettings {
  std::vector<double> alphas = default_alpha_grid();
  std::size_t trials = 100;
  std::vector<std::string> families{"gaussian", "gm2"};
};

struct VarianceSettings {
  std::vector<std::string> problems{"standard", "sin", "bump"};
  /// Labels as produced by variance_label().
  std::vector<std::string> estimators{"lr", "lr_baseline", "half_rp_baseline", "mrp"};
  std::size_t repeats = 128;
  std::size_t excess_samples = 100000;
};

struct ExperimentConfig {
  std::string label = "run";
  EnvKind env = EnvKind::bimodal_bandit;
  /// Selects the instance for the multimodal bandit family.
  std::uint64_t bandit_seed = 0;
  std::vector<std::uint64_t> seeds{0};
  SacConfig sac = bandit_defaults();
  SweepGrid sweep;
  /// Fraction of training steps in the final window used for selection.
  double window_fraction = 0.1;
  std::size_t threads = 1;
  StationarySettings stationary;
  VarianceSettings variance;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Environment-appropriate SAC defaults for a fresh config.
ExperimentConfig default_experiment(EnvKind env);

/// JSON text of the full config (every field spelled out).
std::string config_to_json(const ExperimentConfig& config);
/// Parses JSON. Missing fields take the defaults of the named environment;
/// unknown fields are rejected.
ExperimentConfig config_from_json(std::string_view text);

/// Applies "key=value" where key is a dotted path ("sac.alpha",
/// "sweep.critic_lr", "seeds") and value is JSON or a bare string. A
/// comma-separated value for a list field becomes a list.
ExperimentConfig apply_override(const ExperimentConfig& config, std::string_view assignment);

// ---------------------------------------------------------------------------
// Files

inline constexpr std::string_view kReturnsCsvVersion = "#mixpol returns v1";

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip representation of a double.
std::string format_double(double x);

std::string returns_csv(std::span<const EpisodeRow> rows);
/// Throws Error when the version line is missing or different.
std::vector<EpisodeRow> parse_returns_csv(std::string_view text);

// ---------------------------------------------------------------------------
// Metrics

/// Mean episode return over episodes that end in the last `fraction` of the
/// run's steps. NaN when no episode ends there.
double final_window_mean(std::span<const EpisodeRow> rows, std::size_t total_steps,
                         double fraction);
/// Sum of return x length over episodes: the learning curve integrated over
/// environment steps.
double area_under_curve(std::span<const EpisodeRow> rows);

enum class SelectionMetric { final_window, auc };
std::string_view to_string(SelectionMetric metric);
SelectionMetric parse_selection_metric(std::string_view name);

// ---------------------------------------------------------------------------
// Commands

struct RunOutcome {
  std::vector<RunRecord> runs;
  /// Set when a seed aborted; its partial episodes are in `runs`.
  std::optional<std::string> aborted;
};

/// Trains every seed of the config in order and writes `returns.csv` and
/// `config.json` into `out`.
RunOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& out);

struct SweepCell {
  std::string id;         // directory name
  std::string config_id;  // grid point shared by all seeds
  std::uint64_t seed = 0;
  ExperimentConfig config;
};

/// One cell per (grid point, seed), grid-major.
std::vector<SweepCell> expand_sweep(const ExperimentConfig& config);

struct SweepOutcome {
  std::size_t cells = 0;
  std::size_t skipped = 0;  // already complete from an earlier invocation
  std::vector<std::string> failed;
};

/// Runs every cell on `config.threads` workers and writes manifest.json.
SweepOutcome run_sweep(const ExperimentConfig& config, const std::filesystem::path& out);

struct AggregateRow {
  std::string config_id;
  std::string policy;
  std::string estimator;
  double alpha = 0.0;
  double critic_lr = 0.0;
  double lr_ratio = 0.0;
  std::size_t components = 0;
  std::uint64_t bandit_seed = 0;
  SelectionMetric metric = SelectionMetric::final_window;
  std::size_t seeds = 0;
  BootstrapCI ci;
  bool best = false;  // best config for its (policy, estimator)
};

struct CurvePoint {
  std::string config_id;
  std::size_t step = 0;
  std::size_t seeds = 0;
  BootstrapCI ci;
};

struct AggregateResult {
  std::vector<AggregateRow> rows;
  std::vector<CurvePoint> curves;
  std::vector<std::string> missing;  // cells without a readable returns.csv
};

/// Reads a sweep (or a single run) directory and summarizes it per config.
AggregateResult aggregate_directory(const std::filesystem::path& dir, SelectionMetric metric,
                                    double window_fraction, std::uint64_t seed,
                                    std::size_t curve_points = 50);

std::string summary_csv(std::span<const AggregateRow> rows);
std::string curves_csv(std::span<const CurvePoint> points);
std::string stationary_csv(const StudyTable& table);
std::string stationary_trials_json(const StudyTable& table);

/// Per-problem estimator traces plus the importance-sampling excess terms.
std::string run_variance_study(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace mixpol
