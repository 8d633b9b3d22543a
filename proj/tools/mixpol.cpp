// mixpol: run, sweep and summarize mixture-policy SAC experiments.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mixpol/experiment.hpp"

namespace fs = std::filesystem;
using namespace mixpol;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& o, const std::string& default_out) {
  o.out = default_out;
  app->add_option("--config", o.config_path, "JSON experiment config");
  app->add_option("--seed", o.seed, "Seed (replaces the config's seed list)");
  app->add_option("--out", o.out, "Output directory")->capture_default_str();
  app->add_option("--set", o.overrides, "Override a field: key=value (repeatable)");
}

ExperimentConfig load_config(const CommonOptions& o) {
  ExperimentConfig config = o.config_path.empty()
                                ? default_experiment(EnvKind::bimodal_bandit)
                                : config_from_json(read_file(o.config_path));
  for (const auto& assignment : o.overrides) config = apply_override(config, assignment);
  if (o.seed) config.seeds = {*o.seed};
  config.validate();
  return config;
}

std::uint64_t first_seed(const ExperimentConfig& config) { return config.seeds.front(); }

int cmd_run(const CommonOptions& o) {
  const ExperimentConfig config = load_config(o);
  const RunOutcome outcome = run_experiment(config, o.out);
  for (const auto& run : outcome.runs)
    std::printf("seed %llu: %zu episodes\n", static_cast<unsigned long long>(run.seed),
                run.episodes.size());
  if (outcome.aborted) {
    std::fprintf(stderr, "aborted: %s\n", outcome.aborted->c_str());
    return 1;
  }
  std::printf("wrote %s\n", (fs::path(o.out) / "returns.csv").c_str());
  return 0;
}

int cmd_sweep(const CommonOptions& o) {
  const ExperimentConfig config = load_config(o);
  const SweepOutcome outcome = run_sweep(config, o.out);
  std::printf("%zu cells, %zu already complete, %zu failed\n", outcome.cells, outcome.skipped,
              outcome.failed.size());
  for (const auto& f : outcome.failed) std::fprintf(stderr, "failed %s\n", f.c_str());
  return outcome.failed.empty() ? 0 : 1;
}

int cmd_aggregate(const std::string& dir, const CommonOptions& o, const std::string& metric,
                  std::optional<double> window) {
  const std::uint64_t seed = o.seed.value_or(0);
  double fraction = window.value_or(0.1);
  if (!window && fs::exists(fs::path(dir) / "manifest.json")) {
    // Fall back to the sweep's own window when none is given.
    const auto manifest = nlohmann::json::parse(read_file(fs::path(dir) / "manifest.json"));
    fraction = manifest.at("base_config").at("window_fraction").get<double>();
  }
  const AggregateResult result =
      aggregate_directory(dir, parse_selection_metric(metric), fraction, seed);
  const fs::path out = o.out.empty() ? fs::path(dir) : fs::path(o.out);
  write_file_atomic(out / "summary.csv", summary_csv(result.rows));
  write_file_atomic(out / "curves.csv", curves_csv(result.curves));
  for (const auto& m : result.missing) std::fprintf(stderr, "missing %s\n", m.c_str());
  for (const auto& r : result.rows)
    if (r.best)
      std::printf("best %s/%s: %s  %s=%.6g [%.6g, %.6g] over %zu seeds\n", r.policy.c_str(),
                  r.estimator.c_str(), r.config_id.c_str(), metric.c_str(), r.ci.point,
                  r.ci.lower, r.ci.upper, r.seeds);
  std::printf("wrote %s and %s\n", (out / "summary.csv").c_str(), (out / "curves.csv").c_str());
  return 0;
}

int cmd_stationary(const CommonOptions& o) {
  const ExperimentConfig config = load_config(o);
  if (!is_bandit(config.env))
    throw ConfigError("config field 'env': the stationary study needs a bandit");
  const Environment env(config.env, config.bandit_seed);
  StudyOptions options;
  options.trials = config.stationary.trials;
  options.seed = first_seed(config);
  options.threads = config.threads;
  options.families.clear();
  for (const auto& f : config.stationary.families) options.families.push_back(parse_study_family(f));
  const StudyTable table = sweep_alpha_study(*env.bandit(), config.stationary.alphas, options);
  write_file_atomic(fs::path(o.out) / "stationary.csv", stationary_csv(table));
  write_file_atomic(fs::path(o.out) / "stationary_trials.json", stationary_trials_json(table));
  for (const auto& r : table.rows)
    std::printf("alpha=%-6g %-8s converged %3zu/%zu  best J0 %s  bimodal %.2f\n", r.alpha,
                std::string(to_string(r.family)).c_str(), r.converged, r.trials,
                r.best_trial ? format_double(r.best_j0).c_str() : "-", r.bimodal_fraction);
  return 0;
}

int cmd_variance(const CommonOptions& o) {
  const ExperimentConfig config = load_config(o);
  const std::string csv = run_variance_study(config, first_seed(config));
  write_file_atomic(fs::path(o.out) / "variance.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-policy soft actor-critic experiments"};
  app.require_subcommand(1);

  CommonOptions run_o, sweep_o, agg_o, stat_o, var_o;
  auto* run = app.add_subcommand("run", "Train every seed of one config");
  add_common(run, run_o, "run_out");
  auto* sweep = app.add_subcommand("sweep", "Train the grid x seeds of a config");
  add_common(sweep, sweep_o, "sweep_out");

  auto* agg = app.add_subcommand("aggregate", "Summarize a sweep or run directory");
  std::string agg_dir, metric = "final-window";
  std::optional<double> window;
  agg->add_option("dir", agg_dir, "Sweep or run directory")->required();
  agg->add_option("--seed", agg_o.seed, "Bootstrap seed");
  agg->add_option("--out", agg_o.out, "Output directory (default: the input directory)");
  agg->add_option("--metric", metric, "final-window or auc")->capture_default_str();
  agg->add_option("--window", window, "Final-window fraction of training steps");

  auto* stat = app.add_subcommand("stationary", "Stationary points of the regularized bandit");
  add_common(stat, stat_o, "stationary_out");
  auto* var = app.add_subcommand("variance", "Gradient-variance diagnostics");
  add_common(var, var_o, "variance_out");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_o);
    if (*sweep) return cmd_sweep(sweep_o);
    if (*agg) return cmd_aggregate(agg_dir, agg_o, metric, window);
    if (*stat) return cmd_stationary(stat_o);
    if (*var) return cmd_variance(var_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
