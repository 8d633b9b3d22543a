#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "mixpol/experiment.hpp"

using namespace mixpol;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("mixpol_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_bandit(std::size_t steps) {
  ExperimentConfig c = default_experiment(EnvKind::bimodal_bandit);
  c.sac.total_steps = steps;
  c.sac.components = 2;
  return c;
}

EpisodeRow row(std::uint64_t seed, std::size_t step, double ret, std::size_t length = 1) {
  EpisodeRow r;
  r.seed = seed;
  r.step = step;
  r.episode = step;
  r.episode_return = ret;
  r.length = length;
  return r;
}

}  // namespace

TEST_CASE("config JSON round-trips every field") {
  ExperimentConfig c = default_experiment(EnvKind::mountaincar_shaped);
  c.label = "rt";
  c.seeds = {3, 9};
  c.sac.alpha = 0.0370001;
  c.sac.estimator = EstimatorKind::gumbel_rp;
  c.sac.entropy_mode = EntropyMode::automatic;
  c.sweep.critic_lr = {1e-4, 3e-4};
  c.sweep.policy = {"SG", "SGM"};
  c.window_fraction = 0.25;
  c.variance.repeats = 17;
  const std::string text = config_to_json(c);
  const ExperimentConfig back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.env == EnvKind::mountaincar_shaped);
  CHECK(back.sac.alpha == 0.0370001);
  CHECK(back.sac.entropy_mode == EntropyMode::automatic);
  CHECK(back.sweep.critic_lr == std::vector<double>{1e-4, 3e-4});
}

TEST_CASE("missing fields take the environment's defaults") {
  const ExperimentConfig bandit = config_from_json(R"({"env": "bimodal-bandit"})");
  CHECK(bandit.sac.true_critic == bandit_defaults().true_critic);
  CHECK(bandit.sac.hidden_width == bandit_defaults().hidden_width);
  const ExperimentConfig pend = config_from_json(R"({"env": "pendulum", "sac": {"alpha": 0.2}})");
  CHECK(pend.sac.hidden_width == classic_control_defaults().hidden_width);
  CHECK(pend.sac.alpha == 0.2);
}

TEST_CASE("invalid configs name the field") {
  auto message = [](const std::string& text) {
    try {
      config_from_json(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(R"({"sac": {"alhpa": 0.1}})").find("sac.alhpa") != std::string::npos);
  CHECK(message(R"({"sac": {"alpha": "big"}})").find("sac.alpha") != std::string::npos);
  CHECK(message(R"({"sac": {"alpha": -1}})").find("sac.alpha") != std::string::npos);
  CHECK(message(R"({"seeds": []})").find("seeds") != std::string::npos);
  CHECK(message(R"({"env": "cartpole"})").find("env") != std::string::npos);
  CHECK(message(R"({"env": "pendulum", "sac": {"true_critic": true}})").find("true_critic") !=
        std::string::npos);
  CHECK(message(R"({"sweep": {"estimator": ["XYZ"]}})").find("sweep.estimator") !=
        std::string::npos);
  CHECK(message("{not json").find("JSON") != std::string::npos);
}

TEST_CASE("overrides follow dotted paths") {
  ExperimentConfig c = tiny_bandit(100);
  c = apply_override(c, "sac.alpha=0.5");
  CHECK(c.sac.alpha == 0.5);
  c = apply_override(c, "sac.policy=GM");
  CHECK(c.sac.policy == PolicyKind::gm);
  c = apply_override(c, "seeds=4,5,6");
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5, 6});
  c = apply_override(c, "sweep.alpha=[0.1, 0.01]");
  CHECK(c.sweep.alpha == std::vector<double>{0.1, 0.01});
  c = apply_override(c, "label=with spaces");
  CHECK(c.label == "with spaces");
  CHECK_THROWS_AS(apply_override(c, "sac.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "noequals"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "sac.batch_size=0"), ConfigError);
}

TEST_CASE("returns CSV round-trips exactly and checks its version") {
  std::vector<EpisodeRow> rows{row(1, 5, 0.1 + 0.2), row(1, 9, -1e-300, 4), row(2, 3, 1.0 / 3.0)};
  rows[1].weighting_entropy = 0.6931471805599453;
  rows[2].component_separation = 1e10 + 0.5;
  const auto back = parse_returns_csv(returns_csv(rows));
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].seed == rows[i].seed);
    CHECK(back[i].step == rows[i].step);
    CHECK(back[i].episode_return == rows[i].episode_return);
    CHECK(back[i].length == rows[i].length);
    CHECK(back[i].weighting_entropy == rows[i].weighting_entropy);
    CHECK(back[i].component_separation == rows[i].component_separation);
  }
  std::string text = returns_csv(rows);
  text.replace(text.find("v1"), 2, "v2");
  CHECK_THROWS_AS(parse_returns_csv(text), Error);
  CHECK_THROWS_AS(parse_returns_csv(""), Error);
}

TEST_CASE("returns CSV keeps subnormal and non-finite values") {
  std::vector<EpisodeRow> rows{row(0, 1, 1.0), row(0, 2, 2.0)};
  rows[0].weighting_entropy = 4.6108010598879825e-302 * 1e-10;
  rows[0].component_separation = std::numeric_limits<double>::infinity();
  rows[1].weighting_entropy = std::numeric_limits<double>::denorm_min();
  rows[1].episode_return = std::nan("");
  const auto back = parse_returns_csv(returns_csv(rows));
  REQUIRE(back.size() == 2);
  CHECK(back[0].weighting_entropy == rows[0].weighting_entropy);
  CHECK(std::isinf(back[0].component_separation));
  CHECK(back[1].weighting_entropy == rows[1].weighting_entropy);
  CHECK(std::isnan(back[1].episode_return));

  std::string text = returns_csv(rows);
  text.replace(text.find(",nan,"), 5, ",1.5x,");
  CHECK_THROWS_AS(parse_returns_csv(text), Error);
}

TEST_CASE("format_double gives the shortest round-trip text") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1e-4) == "0.0001");
  CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
  CHECK(format_double(std::nan("")) == "nan");
}

TEST_CASE("selection metrics") {
  // Episodes end at steps 10..100; the last 10% of 100 steps is (90, 100].
  std::vector<EpisodeRow> rows;
  for (std::size_t s = 10; s <= 100; s += 10) rows.push_back(row(0, s, static_cast<double>(s)));
  CHECK(final_window_mean(rows, 100, 0.1) == doctest::Approx(100.0));
  CHECK(final_window_mean(rows, 100, 0.25) == doctest::Approx((80.0 + 90.0 + 100.0) / 3.0));
  CHECK(std::isnan(final_window_mean(rows, 1000, 0.1)));

  // Rectangles: return 2 for 3 steps, then -1 for 5 steps.
  const std::vector<EpisodeRow> rect{row(0, 3, 2.0, 3), row(0, 8, -1.0, 5)};
  CHECK(area_under_curve(rect) == doctest::Approx(2.0 * 3 - 1.0 * 5));
  CHECK(parse_selection_metric(to_string(SelectionMetric::auc)) == SelectionMetric::auc);
  CHECK_THROWS_AS(parse_selection_metric("median"), ConfigError);
}

TEST_CASE("zero-step run writes a header-only CSV") {
  TempDir dir("zero");
  const RunOutcome out = run_experiment(tiny_bandit(0), dir.path);
  CHECK_FALSE(out.aborted);
  const std::string text = read_file(dir.path / "returns.csv");
  CHECK(parse_returns_csv(text).empty());
  CHECK(text.rfind(std::string(kReturnsCsvVersion), 0) == 0);
  CHECK(config_from_json(read_file(dir.path / "config.json")).sac.total_steps == 0);
}

TEST_CASE("reruns with the same seed are byte-identical") {
  TempDir a("rerun_a"), b("rerun_b");
  ExperimentConfig c = tiny_bandit(150);
  c.seeds = {7, 8};
  run_experiment(c, a.path);
  run_experiment(c, b.path);
  const std::string first = read_file(a.path / "returns.csv");
  CHECK(first == read_file(b.path / "returns.csv"));
  CHECK(parse_returns_csv(first).size() == 300);
  c.seeds = {9};
  run_experiment(c, b.path);
  CHECK(first != read_file(b.path / "returns.csv"));
}

TEST_CASE("sweep expansion counts") {
  ExperimentConfig bandit = tiny_bandit(10);
  bandit.sweep.critic_lr = {1e-4, 1e-3, 1e-2, 1e-1};
  bandit.sweep.alpha = {1e-4, 1e-3, 1e-2, 1e-1};
  bandit.sweep.estimator = {"LR", "RP", "MRP", "HalfRP"};
  bandit.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto cells = expand_sweep(bandit);
  CHECK(bandit.sweep.points() == 64);
  CHECK(cells.size() == 640);
  CHECK(cells.front().config.seeds.size() == 1);
  // Grid-major: the first ten cells share a config and cycle the seeds.
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(cells[i].config_id == cells[0].config_id);
    CHECK(cells[i].seed == i);
  }
  CHECK(cells[10].config_id != cells[0].config_id);
  CHECK(cells[0].config_id == "estimator=LR,alpha=0.0001,critic_lr=0.0001");

  ExperimentConfig classic = default_experiment(EnvKind::pendulum);
  classic.sweep.alpha = {0.01, 0.03, 0.1, 0.3};
  classic.sweep.critic_lr = {1e-4, 3e-4, 1e-3, 3e-3};
  classic.sweep.lr_ratio = {0.1, 0.3, 1.0, 3.0};
  classic.seeds = {0, 1, 2};
  CHECK(expand_sweep(classic).size() == 4 * 4 * 4 * 3);

  ExperimentConfig plain = tiny_bandit(10);
  plain.seeds = {1, 2};
  const auto base = expand_sweep(plain);
  REQUIRE(base.size() == 2);
  CHECK(base[0].config_id == "base");

  // Swept values land in the cell's SAC config.
  const auto& last = cells.back();
  CHECK(last.config.sac.estimator == EstimatorKind::half_rp);
  CHECK(last.config.sac.alpha == 1e-1);
  CHECK(last.config.sac.critic_lr == 1e-1);
}

TEST_CASE("a one-point sweep reproduces run, and resumes without rework") {
  TempDir run_dir("one_run"), sweep_dir("one_sweep");
  ExperimentConfig c = tiny_bandit(120);
  c.seeds = {4};
  run_experiment(c, run_dir.path);
  SweepOutcome first = run_sweep(c, sweep_dir.path);
  CHECK(first.cells == 1);
  CHECK(first.skipped == 0);
  CHECK(first.failed.empty());
  CHECK(read_file(run_dir.path / "returns.csv") ==
        read_file(sweep_dir.path / "cell_00000" / "returns.csv"));
  SweepOutcome again = run_sweep(c, sweep_dir.path);
  CHECK(again.skipped == 1);
}

TEST_CASE("threaded sweeps match serial ones") {
  TempDir serial("sweep_serial"), threaded("sweep_threaded");
  ExperimentConfig c = tiny_bandit(80);
  c.seeds = {0, 1};
  c.sweep.alpha = {0.01, 0.1};
  run_sweep(c, serial.path);
  c.threads = 3;
  run_sweep(c, threaded.path);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string id = "cell_0000" + std::to_string(i);
    CHECK(read_file(serial.path / id / "returns.csv") ==
          read_file(threaded.path / id / "returns.csv"));
  }
}

TEST_CASE("aggregation finds a planted best config and reports missing cells") {
  TempDir dir("aggregate");
  ExperimentConfig c = tiny_bandit(100);
  c.seeds = {0, 1, 2};
  c.sweep.alpha = {0.01, 0.1, 1.0};
  const auto cells = expand_sweep(c);
  // Hand-written results: the alpha = 0.1 config scores 5 in the final
  // window, the others 1; early episodes are noise that must not matter.
  std::string manifest = R"({"version": 1, "cells": [)";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    manifest += std::string(i ? "," : "") + R"({"id": ")" + cell.id + R"(", "config_id": ")" +
                cell.config_id + R"("})";
    if (i == 8) continue;  // never written
    const double late = cell.config.sac.alpha == 0.1 ? 5.0 : 1.0;
    const std::vector<EpisodeRow> rows{row(cell.seed, 50, 100.0 * (i % 2)),
                                       row(cell.seed, 95, late + 0.01 * cell.seed),
                                       row(cell.seed, 100, late - 0.01 * cell.seed)};
    write_file_atomic(dir.path / cell.id / "returns.csv", returns_csv(rows));
    write_file_atomic(dir.path / cell.id / "config.json", config_to_json(cell.config));
  }
  write_file_atomic(dir.path / "manifest.json", manifest + "]}");

  const AggregateResult result =
      aggregate_directory(dir.path, SelectionMetric::final_window, 0.1, 0);
  REQUIRE(result.rows.size() == 3);
  CHECK(result.missing == std::vector<std::string>{"cell_00008"});
  std::size_t best = 0;
  for (const auto& r : result.rows) {
    if (r.best) {
      ++best;
      CHECK(r.alpha == 0.1);
      CHECK(r.ci.point == doctest::Approx(5.0));
      CHECK(r.ci.lower <= r.ci.point);
      CHECK(r.ci.upper >= r.ci.point);
    }
  }
  CHECK(best == 1);
  CHECK(result.rows[2].seeds == 2);
  CHECK_FALSE(result.curves.empty());
  CHECK(summary_csv(result.rows).find("\"alpha=0.1\"") != std::string::npos);

  // A stale file format is an error, not a silently missing cell.
  write_file_atomic(dir.path / "cell_00000" / "returns.csv", "#mixpol returns v0\n");
  CHECK_THROWS_AS(aggregate_directory(dir.path, SelectionMetric::final_window, 0.1, 0), Error);
}

TEST_CASE("learning curves bin episode ends and carry values forward") {
  TempDir dir("curves");
  ExperimentConfig c = tiny_bandit(100);
  c.seeds = {0};
  const std::vector<EpisodeRow> rows{row(0, 10, 1.0), row(0, 20, 3.0), row(0, 90, 7.0)};
  write_file_atomic(dir.path / "returns.csv", returns_csv(rows));
  write_file_atomic(dir.path / "config.json", config_to_json(c));
  const AggregateResult result =
      aggregate_directory(dir.path, SelectionMetric::auc, 0.1, 0, 5);
  REQUIRE(result.curves.size() == 5);
  CHECK(result.curves[0].step == 20);
  CHECK(result.curves[0].ci.point == doctest::Approx(2.0));
  CHECK(result.curves[3].ci.point == doctest::Approx(2.0));
  CHECK(result.curves[4].ci.point == doctest::Approx(7.0));
  CHECK(result.rows[0].ci.point == doctest::Approx(11.0));
}

TEST_CASE("stationary and variance outputs") {
  StudyTable table;
  StationaryPointResult trial;
  trial.alpha = 0.1;
  trial.converged = true;
  trial.params = DensityParams::gaussian(0.5, -1.0);
  trial.j = 0.7;
  trial.j0 = 0.6;
  table.trials.push_back({trial});
  table.rows.push_back(summarize_trials(0.1, StudyFamily::gaussian, table.trials[0]));
  const std::string csv = stationary_csv(table);
  CHECK(csv.find("0.1,gaussian,1,1,1,0.7,0.6,0") !=
        std::string::npos);
  CHECK(stationary_trials_json(table).find("\"modality\": \"unimodal\"") != std::string::npos);

  ExperimentConfig c = tiny_bandit(0);
  c.variance.problems = {"sin"};
  c.variance.estimators = {"lr", "mrp"};
  c.variance.repeats = 32;
  c.variance.excess_samples = 2000;
  const std::string text = run_variance_study(c, 3);
  CHECK(text == run_variance_study(c, 3));
  CHECK(text.find("sin,trace:lr,32,") != std::string::npos);
  CHECK(text.find("sin,trace:mrp,32,") != std::string::npos);
  CHECK(text.find("sin,importance_excess:reward,") != std::string::npos);
  c.variance.estimators = {"lr_bogus"};
  CHECK_THROWS_AS(run_variance_study(c, 3), ConfigError);
}
