#include "mixpol/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mixpol {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

[[noreturn]] void field_error(const std::string& field, const std::string& why) {
  throw ConfigError("config field '" + field + "': " + why);
}

std::string_view to_string(EntropyMode mode) {
  return mode == EntropyMode::fixed ? "fixed" : "automatic";
}

EntropyMode parse_entropy_mode(const std::string& name) {
  if (name == "fixed") return EntropyMode::fixed;
  if (name == "automatic") return EntropyMode::automatic;
  field_error("sac.entropy_mode", "expected fixed or automatic, got '" + name + "'");
}

Json sac_to_json(const SacConfig& c) {
  Json j;
  j["policy"] = std::string(to_string(c.policy));
  j["estimator"] = std::string(to_string(c.estimator));
  j["components"] = c.components;
  j["hidden_width"] = c.hidden_width;
  j["hidden_layers"] = c.hidden_layers;
  j["critic_lr"] = c.critic_lr;
  j["lr_ratio"] = c.lr_ratio;
  j["entropy_mode"] = std::string(to_string(c.entropy_mode));
  j["alpha"] = c.alpha;
  j["target_entropy_coef"] = c.target_entropy_coef;
  j["batch_size"] = c.batch_size;
  j["smoothing"] = c.smoothing;
  j["buffer_capacity"] = c.buffer_capacity;
  j["initial_uniform_steps"] = c.initial_uniform_steps;
  j["discount"] = c.discount;
  j["total_steps"] = c.total_steps;
  j["true_critic"] = c.true_critic;
  j["use_baseline"] = c.use_baseline;
  j["baseline_samples"] = c.baseline_samples;
  j["temperature"] = c.temperature;
  return j;
}

// Reads `key` from `j` into `out` when present, converting type errors into
// field-level config errors.
template <typename T>
void read_field(const Json& j, const std::string& prefix, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const Json::exception& e) {
    field_error(prefix + key, std::string("wrong type (") + e.what() + ")");
  }
}

void reject_unknown(const Json& j, const std::string& prefix,
                    std::initializer_list<std::string_view> known) {
  if (!j.is_object()) field_error(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      field_error(prefix + key, "unknown field");
  }
}

void sac_from_json(const Json& j, SacConfig& c) {
  reject_unknown(j, "sac.",
                 {"policy", "estimator", "components", "hidden_width", "hidden_layers",
                  "critic_lr", "lr_ratio", "entropy_mode", "alpha", "target_entropy_coef",
                  "batch_size", "smoothing", "buffer_capacity", "initial_uniform_steps",
                  "discount", "total_steps", "true_critic", "use_baseline", "baseline_samples",
                  "temperature"});
  std::string name;
  if (j.contains("policy")) {
    read_field(j, "sac.", "policy", name);
    try {
      c.policy = parse_policy_kind(name);
    } catch (const Error& e) {
      field_error("sac.policy", e.what());
    }
  }
  if (j.contains("estimator")) {
    read_field(j, "sac.", "estimator", name);
    try {
      c.estimator = parse_estimator_kind(name);
    } catch (const Error& e) {
      field_error("sac.estimator", e.what());
    }
  }
  if (j.contains("entropy_mode")) {
    read_field(j, "sac.", "entropy_mode", name);
    c.entropy_mode = parse_entropy_mode(name);
  }
  read_field(j, "sac.", "components", c.components);
  read_field(j, "sac.", "hidden_width", c.hidden_width);
  read_field(j, "sac.", "hidden_layers", c.hidden_layers);
  read_field(j, "sac.", "critic_lr", c.critic_lr);
  read_field(j, "sac.", "lr_ratio", c.lr_ratio);
  read_field(j, "sac.", "alpha", c.alpha);
  read_field(j, "sac.", "target_entropy_coef", c.target_entropy_coef);
  read_field(j, "sac.", "batch_size", c.batch_size);
  read_field(j, "sac.", "smoothing", c.smoothing);
  read_field(j, "sac.", "buffer_capacity", c.buffer_capacity);
  read_field(j, "sac.", "initial_uniform_steps", c.initial_uniform_steps);
  read_field(j, "sac.", "discount", c.discount);
  read_field(j, "sac.", "total_steps", c.total_steps);
  read_field(j, "sac.", "true_critic", c.true_critic);
  read_field(j, "sac.", "use_baseline", c.use_baseline);
  read_field(j, "sac.", "baseline_samples", c.baseline_samples);
  read_field(j, "sac.", "temperature", c.temperature);
}

Json sweep_to_json(const SweepGrid& g) {
  Json j;
  j["policy"] = g.policy;
  j["estimator"] = g.estimator;
  j["alpha"] = g.alpha;
  j["critic_lr"] = g.critic_lr;
  j["lr_ratio"] = g.lr_ratio;
  j["components"] = g.components;
  j["target_entropy_coef"] = g.target_entropy_coef;
  j["bandit_seed"] = g.bandit_seed;
  return j;
}

void sweep_from_json(const Json& j, SweepGrid& g) {
  reject_unknown(j, "sweep.",
                 {"policy", "estimator", "alpha", "critic_lr", "lr_ratio", "components",
                  "target_entropy_coef", "bandit_seed"});
  read_field(j, "sweep.", "policy", g.policy);
  read_field(j, "sweep.", "estimator", g.estimator);
  read_field(j, "sweep.", "alpha", g.alpha);
  read_field(j, "sweep.", "critic_lr", g.critic_lr);
  read_field(j, "sweep.", "lr_ratio", g.lr_ratio);
  read_field(j, "sweep.", "components", g.components);
  read_field(j, "sweep.", "target_entropy_coef", g.target_entropy_coef);
  read_field(j, "sweep.", "bandit_seed", g.bandit_seed);
}

Json config_json(const ExperimentConfig& c) {
  Json j;
  j["label"] = c.label;
  j["env"] = std::string(to_string(c.env));
  j["bandit_seed"] = c.bandit_seed;
  j["seeds"] = c.seeds;
  j["sac"] = sac_to_json(c.sac);
  j["sweep"] = sweep_to_json(c.sweep);
  j["window_fraction"] = c.window_fraction;
  j["threads"] = c.threads;
  j["stationary"] = {{"alphas", c.stationary.alphas},
                     {"trials", c.stationary.trials},
                     {"families", c.stationary.families}};
  j["variance"] = {{"problems", c.variance.problems},
                   {"estimators", c.variance.estimators},
                   {"repeats", c.variance.repeats},
                   {"excess_samples", c.variance.excess_samples}};
  return j;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Json parse_scalar(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception&) {
    return Json(text);
  }
}

}  // namespace

std::size_t SweepGrid::points() const {
  auto n = [](std::size_t s) { return std::max<std::size_t>(s, 1); };
  return n(policy.size()) * n(estimator.size()) * n(alpha.size()) * n(critic_lr.size()) *
         n(lr_ratio.size()) * n(components.size()) * n(target_entropy_coef.size()) *
         n(bandit_seed.size());
}

ExperimentConfig default_experiment(EnvKind env) {
  ExperimentConfig c;
  c.env = env;
  c.sac = is_bandit(env) ? bandit_defaults() : classic_control_defaults();
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) field_error("seeds", "must list at least one seed");
  if (!(window_fraction > 0.0 && window_fraction <= 1.0))
    field_error("window_fraction", "must lie in (0, 1]");
  if (threads < 1) field_error("threads", "must be >= 1");
  try {
    sac.validate();
  } catch (const ConfigError& e) {
    std::string what = e.what();
    const std::string marker = "config field '";
    if (what.rfind(marker, 0) == 0) what.insert(marker.size(), "sac.");
    throw ConfigError(what);
  }
  if (sac.true_critic && !is_bandit(env))
    field_error("sac.true_critic", "an analytic critic exists only for bandits");
  for (const auto& p : sweep.policy) {
    try {
      parse_policy_kind(p);
    } catch (const Error& e) {
      field_error("sweep.policy", e.what());
    }
  }
  for (const auto& e : sweep.estimator) {
    try {
      parse_estimator_kind(e);
    } catch (const Error& err) {
      field_error("sweep.estimator", err.what());
    }
  }
  for (double a : sweep.alpha)
    if (!(a >= 0.0)) field_error("sweep.alpha", "entries must be >= 0");
  for (double v : sweep.critic_lr)
    if (!(v > 0.0)) field_error("sweep.critic_lr", "entries must be > 0");
  for (double v : sweep.lr_ratio)
    if (!(v > 0.0)) field_error("sweep.lr_ratio", "entries must be > 0");
  for (std::size_t v : sweep.components)
    if (v < 1) field_error("sweep.components", "entries must be >= 1");
  if (stationary.trials < 1) field_error("stationary.trials", "must be >= 1");
  for (const auto& f : stationary.families) {
    try {
      parse_study_family(f);
    } catch (const Error& e) {
      field_error("stationary.families", e.what());
    }
  }
  if (variance.repeats < 2) field_error("variance.repeats", "must be >= 2");
  if (variance.excess_samples < 40) field_error("variance.excess_samples", "must be >= 40");
  for (const auto& p : variance.problems) {
    const auto names = variance_problem_names();
    if (std::find(names.begin(), names.end(), p) == names.end())
      field_error("variance.problems", "unknown problem '" + p + "'");
  }
  for (const auto& e : variance.estimators) {
    try {
      parse_variance_label(e);
    } catch (const Error& err) {
      field_error("variance.estimators", err.what());
    }
  }
}

std::string config_to_json(const ExperimentConfig& config) {
  return config_json(config).dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "",
                 {"label", "env", "bandit_seed", "seeds", "sac", "sweep", "window_fraction",
                  "threads", "stationary", "variance"});
  EnvKind env = EnvKind::bimodal_bandit;
  if (j.contains("env")) {
    std::string name;
    read_field(j, "", "env", name);
    try {
      env = parse_env_kind(name);
    } catch (const Error& e) {
      field_error("env", e.what());
    }
  }
  ExperimentConfig c = default_experiment(env);
  read_field(j, "", "label", c.label);
  read_field(j, "", "bandit_seed", c.bandit_seed);
  read_field(j, "", "seeds", c.seeds);
  read_field(j, "", "window_fraction", c.window_fraction);
  read_field(j, "", "threads", c.threads);
  if (j.contains("sac")) sac_from_json(j["sac"], c.sac);
  if (j.contains("sweep")) sweep_from_json(j["sweep"], c.sweep);
  if (j.contains("stationary")) {
    const Json& s = j["stationary"];
    reject_unknown(s, "stationary.", {"alphas", "trials", "families"});
    read_field(s, "stationary.", "alphas", c.stationary.alphas);
    read_field(s, "stationary.", "trials", c.stationary.trials);
    read_field(s, "stationary.", "families", c.stationary.families);
  }
  if (j.contains("variance")) {
    const Json& v = j["variance"];
    reject_unknown(v, "variance.", {"problems", "estimators", "repeats", "excess_samples"});
    read_field(v, "variance.", "problems", c.variance.problems);
    read_field(v, "variance.", "estimators", c.variance.estimators);
    read_field(v, "variance.", "repeats", c.variance.repeats);
    read_field(v, "variance.", "excess_samples", c.variance.excess_samples);
  }
  c.validate();
  return c;
}

ExperimentConfig apply_override(const ExperimentConfig& config, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  Json j = config_json(config);
  Json* node = &j;
  for (const std::string& part : split(key, '.')) {
    if (!node->is_object() || !node->contains(part)) field_error(key, "unknown field");
    node = &(*node)[part];
  }
  Json parsed = parse_scalar(value);
  if (node->is_array() && !parsed.is_array()) {
    parsed = Json::array();
    if (!value.empty())
      for (const std::string& item : split(value, ',')) parsed.push_back(parse_scalar(item));
  }
  *node = std::move(parsed);
  return config_from_json(j.dump());
}

// ---------------------------------------------------------------------------

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

std::string returns_csv(std::span<const EpisodeRow> rows) {
  std::string out(kReturnsCsvVersion);
  out += "\nseed,step,episode,return,length,alpha,weighting_entropy,component_separation\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + std::to_string(r.step) + "," +
           std::to_string(r.episode) + "," + format_double(r.episode_return) + "," +
           std::to_string(r.length) + "," + format_double(r.alpha) + "," +
           format_double(r.weighting_entropy) + "," + format_double(r.component_separation) +
           "\n";
  }
  return out;
}

namespace {

// strtod keeps subnormal values that std::stod rejects as out of range.
double parse_double_field(const std::string& field) {
  char* end = nullptr;
  const double x = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size())
    throw Error("returns CSV has a malformed number '" + field + "'");
  return x;
}

}  // namespace

std::vector<EpisodeRow> parse_returns_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kReturnsCsvVersion)
    throw Error("returns CSV version mismatch: expected '" + std::string(kReturnsCsvVersion) +
                "', found '" + line + "'");
  if (!std::getline(in, line)) throw Error("returns CSV has no header row");
  std::vector<EpisodeRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw Error("returns CSV row has " + std::to_string(f.size()) + " fields");
    EpisodeRow r;
    r.seed = std::stoull(f[0]);
    r.step = std::stoull(f[1]);
    r.episode = std::stoull(f[2]);
    r.episode_return = parse_double_field(f[3]);
    r.length = std::stoull(f[4]);
    r.alpha = parse_double_field(f[5]);
    r.weighting_entropy = parse_double_field(f[6]);
    r.component_separation = parse_double_field(f[7]);
    rows.push_back(r);
  }
  return rows;
}

double final_window_mean(std::span<const EpisodeRow> rows, std::size_t total_steps,
                         double fraction) {
  const double start = (1.0 - fraction) * static_cast<double>(total_steps);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (static_cast<double>(r.step) > start) {
      sum += r.episode_return;
      ++n;
    }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

double area_under_curve(std::span<const EpisodeRow> rows) {
  double area = 0.0;
  for (const auto& r : rows) area += r.episode_return * static_cast<double>(r.length);
  return area;
}

std::string_view to_string(SelectionMetric metric) {
  return metric == SelectionMetric::final_window ? "final-window" : "auc";
}

SelectionMetric parse_selection_metric(std::string_view name) {
  if (name == "final-window") return SelectionMetric::final_window;
  if (name == "auc") return SelectionMetric::auc;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected final-window or auc)");
}

// ---------------------------------------------------------------------------

RunOutcome run_experiment(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  fs::create_directories(out);
  write_file_atomic(out / "config.json", config_to_json(config));
  RunOutcome outcome;
  std::vector<EpisodeRow> rows;
  for (std::uint64_t seed : config.seeds) {
    SacConfig sac = config.sac;
    sac.seed = seed;
    Environment env(config.env, config.bandit_seed);
    try {
      outcome.runs.push_back(train_loop(sac, env));
    } catch (const TrainingAborted& e) {
      outcome.runs.push_back(e.partial());
      outcome.aborted = "seed " + std::to_string(seed) + " aborted at step " +
                        std::to_string(e.step()) + ": " + e.what();
    }
    const auto& eps = outcome.runs.back().episodes;
    rows.insert(rows.end(), eps.begin(), eps.end());
    if (outcome.aborted) break;
  }
  write_file_atomic(out / "returns.csv", returns_csv(rows));
  return outcome;
}

std::vector<SweepCell> expand_sweep(const ExperimentConfig& config) {
  config.validate();
  struct Axis {
    std::string name;
    std::vector<Json> values;
  };
  const SweepGrid& g = config.sweep;
  std::vector<Axis> axes;
  auto add = [&](const char* name, const auto& values) {
    if (values.empty()) return;
    Axis a{name, {}};
    for (const auto& v : values) a.values.emplace_back(v);
    axes.push_back(std::move(a));
  };
  add("policy", g.policy);
  add("estimator", g.estimator);
  add("alpha", g.alpha);
  add("critic_lr", g.critic_lr);
  add("lr_ratio", g.lr_ratio);
  add("components", g.components);
  add("target_entropy_coef", g.target_entropy_coef);
  add("bandit_seed", g.bandit_seed);

  std::vector<SweepCell> cells;
  const std::size_t points = g.points();
  for (std::size_t p = 0; p < points; ++p) {
    ExperimentConfig point = config;
    point.sweep = {};
    std::string config_id;
    std::size_t rest = p;
    for (std::size_t a = axes.size(); a-- > 0;) {
      const Axis& axis = axes[a];
      const Json& v = axis.values[rest % axis.values.size()];
      rest /= axis.values.size();
      const std::string text = v.is_string() ? v.get<std::string>()
                               : v.is_number_float() ? format_double(v.get<double>())
                                                     : v.dump();
      config_id = axis.name + "=" + text + (config_id.empty() ? "" : "," + config_id);
      if (axis.name == "policy") point.sac.policy = parse_policy_kind(v.get<std::string>());
      if (axis.name == "estimator")
        point.sac.estimator = parse_estimator_kind(v.get<std::string>());
      if (axis.name == "alpha") point.sac.alpha = v.get<double>();
      if (axis.name == "critic_lr") point.sac.critic_lr = v.get<double>();
      if (axis.name == "lr_ratio") point.sac.lr_ratio = v.get<double>();
      if (axis.name == "components") point.sac.components = v.get<std::size_t>();
      if (axis.name == "target_entropy_coef") point.sac.target_entropy_coef = v.get<double>();
      if (axis.name == "bandit_seed") point.bandit_seed = v.get<std::uint64_t>();
    }
    if (config_id.empty()) config_id = "base";
    for (std::uint64_t seed : config.seeds) {
      SweepCell cell;
      char id[32];
      std::snprintf(id, sizeof id, "cell_%05zu", cells.size());
      cell.id = id;
      cell.config_id = config_id;
      cell.seed = seed;
      cell.config = point;
      cell.config.seeds = {seed};
      cell.config.label = config.label + "/" + config_id;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

SweepOutcome run_sweep(const ExperimentConfig& config, const fs::path& out) {
  const std::vector<SweepCell> cells = expand_sweep(config);
  fs::create_directories(out);
  Json manifest;
  manifest["version"] = 1;
  manifest["label"] = config.label;
  manifest["base_config"] = config_json(config);
  manifest["cells"] = Json::array();
  for (const auto& c : cells)
    manifest["cells"].push_back({{"id", c.id}, {"config_id", c.config_id}, {"seed", c.seed}});
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");

  SweepOutcome outcome;
  outcome.cells = cells.size();
  std::mutex mutex;
  parallel_for(cells.size(), config.threads, [&](std::size_t i) {
    const SweepCell& cell = cells[i];
    const fs::path dir = out / cell.id;
    const std::string expected = config_to_json(cell.config);
    if (fs::exists(dir / "returns.csv") && fs::exists(dir / "config.json") &&
        read_file(dir / "config.json") == expected) {
      std::lock_guard lock(mutex);
      ++outcome.skipped;
      return;
    }
    std::optional<std::string> failure;
    try {
      failure = run_experiment(cell.config, dir).aborted;
    } catch (const Error& e) {
      failure = e.what();
    }
    if (failure) {
      std::lock_guard lock(mutex);
      outcome.failed.push_back(cell.id + ": " + *failure);
    }
  });
  std::sort(outcome.failed.begin(), outcome.failed.end());
  return outcome;
}

// ---------------------------------------------------------------------------

namespace {

struct LoadedCell {
  std::string config_id;
  ExperimentConfig config;
  std::vector<EpisodeRow> rows;
};

std::vector<double> per_seed_metric(const LoadedCell& cell, SelectionMetric metric,
                                    double fraction, std::vector<std::uint64_t>& seeds_out) {
  std::map<std::uint64_t, std::vector<EpisodeRow>> by_seed;
  for (std::uint64_t s : cell.config.seeds) by_seed[s];
  for (const auto& r : cell.rows) by_seed[r.seed].push_back(r);
  std::vector<double> values;
  for (const auto& [seed, rows] : by_seed) {
    const double v = metric == SelectionMetric::auc
                         ? area_under_curve(rows)
                         : final_window_mean(rows, cell.config.sac.total_steps, fraction);
    if (std::isnan(v)) continue;
    values.push_back(v);
    seeds_out.push_back(seed);
  }
  return values;
}

}  // namespace

AggregateResult aggregate_directory(const fs::path& dir, SelectionMetric metric,
                                    double window_fraction, std::uint64_t seed,
                                    std::size_t curve_points) {
  if (!(window_fraction > 0.0 && window_fraction <= 1.0))
    throw ConfigError("window fraction must lie in (0, 1]");
  std::vector<std::pair<std::string, fs::path>> entries;  // (config id, cell dir)
  if (fs::exists(dir / "manifest.json")) {
    const Json manifest = Json::parse(read_file(dir / "manifest.json"));
    if (manifest.value("version", 0) != 1) throw Error("unsupported manifest version");
    for (const auto& c : manifest["cells"])
      entries.emplace_back(c["config_id"].get<std::string>(), dir / c["id"].get<std::string>());
  } else if (fs::exists(dir / "returns.csv")) {
    entries.emplace_back("run", dir);
  } else {
    throw Error(dir.string() + " holds neither manifest.json nor returns.csv");
  }

  AggregateResult result;
  std::map<std::string, LoadedCell> groups;
  std::vector<std::string> order;
  for (const auto& [config_id, cell_dir] : entries) {
    if (!fs::exists(cell_dir / "returns.csv") || !fs::exists(cell_dir / "config.json")) {
      result.missing.push_back(cell_dir.filename().string());
      continue;
    }
    const ExperimentConfig config = config_from_json(read_file(cell_dir / "config.json"));
    std::vector<EpisodeRow> rows = parse_returns_csv(read_file(cell_dir / "returns.csv"));
    auto [it, fresh] = groups.try_emplace(config_id);
    if (fresh) {
      order.push_back(config_id);
      it->second.config_id = config_id;
      it->second.config = config;
      it->second.config.seeds.clear();
    }
    auto& g = it->second;
    g.config.seeds.insert(g.config.seeds.end(), config.seeds.begin(), config.seeds.end());
    g.rows.insert(g.rows.end(), rows.begin(), rows.end());
  }
  if (groups.empty()) throw Error("no completed cells under " + dir.string());

  const Rng root = Rng(seed).substream("aggregate");
  for (const std::string& id : order) {
    const LoadedCell& g = groups.at(id);
    std::vector<std::uint64_t> seeds;
    const std::vector<double> values = per_seed_metric(g, metric, window_fraction, seeds);
    AggregateRow row;
    row.config_id = id;
    row.policy = std::string(to_string(g.config.sac.policy));
    row.estimator = std::string(to_string(g.config.sac.estimator));
    row.alpha = g.config.sac.alpha;
    row.critic_lr = g.config.sac.critic_lr;
    row.lr_ratio = g.config.sac.lr_ratio;
    row.components = g.config.sac.components;
    row.bandit_seed = g.config.bandit_seed;
    row.metric = metric;
    row.seeds = values.size();
    if (!values.empty()) {
      Rng rng = root.substream(id);
      row.ci = bootstrap_ci(values, rng);
    } else {
      row.ci.point = row.ci.lower = row.ci.upper = std::numeric_limits<double>::quiet_NaN();
    }
    result.rows.push_back(row);

    // Learning curve: per seed, the mean return of episodes ending in each
    // step bin, carried forward through bins without an episode end.
    const std::size_t total = g.config.sac.total_steps;
    if (total == 0 || curve_points == 0) continue;
    std::map<std::uint64_t, std::vector<double>> per_seed;
    std::map<std::uint64_t, std::vector<std::size_t>> counts;
    for (std::uint64_t s : g.config.seeds) {
      per_seed[s].assign(curve_points, 0.0);
      counts[s].assign(curve_points, 0);
    }
    for (const auto& r : g.rows) {
      if (r.step == 0) continue;
      const std::size_t bin =
          std::min(curve_points - 1, (r.step - 1) * curve_points / total);
      per_seed[r.seed][bin] += r.episode_return;
      counts[r.seed][bin] += 1;
    }
    std::map<std::uint64_t, double> last;
    for (std::size_t b = 0; b < curve_points; ++b) {
      std::vector<double> column;
      for (auto& [s, sums] : per_seed) {
        if (counts[s][b] > 0) last[s] = sums[b] / static_cast<double>(counts[s][b]);
        if (last.count(s)) column.push_back(last[s]);
      }
      if (column.empty()) continue;
      CurvePoint p;
      p.config_id = id;
      p.step = (b + 1) * total / curve_points;
      p.seeds = column.size();
      Rng rng = root.substream(id).substream(static_cast<std::uint64_t>(b));
      p.ci = bootstrap_ci(column, rng);
      result.curves.push_back(p);
    }
  }

  std::map<std::pair<std::string, std::string>, std::size_t> best;
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& r = result.rows[i];
    if (std::isnan(r.ci.point)) continue;
    const auto key = std::make_pair(r.policy, r.estimator);
    const auto it = best.find(key);
    if (it == best.end() || r.ci.point > result.rows[it->second].ci.point) best[key] = i;
  }
  for (const auto& [key, i] : best) result.rows[i].best = true;
  return result;
}

std::string summary_csv(std::span<const AggregateRow> rows) {
  std::string out =
      "config_id,policy,estimator,alpha,critic_lr,lr_ratio,components,bandit_seed,metric,seeds,"
      "point,lower,upper,best\n";
  for (const auto& r : rows)
    out += "\"" + r.config_id + "\"," + r.policy + "," + r.estimator + "," +
           format_double(r.alpha) + "," + format_double(r.critic_lr) + "," +
           format_double(r.lr_ratio) + "," + std::to_string(r.components) + "," +
           std::to_string(r.bandit_seed) + "," + std::string(to_string(r.metric)) + "," +
           std::to_string(r.seeds) + "," + format_double(r.ci.point) + "," +
           format_double(r.ci.lower) + "," + format_double(r.ci.upper) + "," +
           (r.best ? "1" : "0") + "\n";
  return out;
}

std::string curves_csv(std::span<const CurvePoint> points) {
  std::string out = "config_id,step,seeds,mean,lower,upper\n";
  for (const auto& p : points)
    out += "\"" + p.config_id + "\"," + std::to_string(p.step) + "," + std::to_string(p.seeds) +
           "," + format_double(p.ci.point) + "," + format_double(p.ci.lower) + "," +
           format_double(p.ci.upper) + "\n";
  return out;
}

std::string stationary_csv(const StudyTable& table) {
  std::string out =
      "alpha,family,trials,converged,converged_fraction,best_j,best_j0,bimodal_fraction\n";
  for (const auto& r : table.rows) {
    out += format_double(r.alpha) + "," + std::string(to_string(r.family)) + "," +
           std::to_string(r.trials) + "," + std::to_string(r.converged) + "," +
           format_double(r.converged_fraction) + ",";
    out += r.best_trial ? format_double(r.best_j) + "," + format_double(r.best_j0) : ",";
    out += "," + format_double(r.bimodal_fraction) + "\n";
  }
  return out;
}

std::string stationary_trials_json(const StudyTable& table) {
  Json all = Json::array();
  for (std::size_t row = 0; row < table.rows.size(); ++row)
    for (std::size_t t = 0; t < table.trials[row].size(); ++t) {
      const auto& r = table.trials[row][t];
      all.push_back({{"alpha", r.alpha},
                     {"family", std::string(to_string(r.family))},
                     {"trial", t},
                     {"converged", r.converged},
                     {"failure", r.failure},
                     {"iterations", r.iterations},
                     {"j", r.j},
                     {"j0", r.j0},
                     {"modality", std::string(to_string(r.modality))},
                     {"means", r.params.means},
                     {"log_stds", r.params.log_stds},
                     {"weights", r.params.weights}});
    }
  return all.dump(1) + "\n";
}

std::string run_variance_study(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<EstimatorOptions> estimators;
  for (const auto& label : config.variance.estimators)
    estimators.push_back(parse_variance_label(label));
  std::string out = "problem,quantity,repeats,value,std_error\n";
  const Rng root = Rng(seed).substream("variance");
  for (const auto& name : config.variance.problems) {
    const VarianceProblem problem = make_variance_problem(name);
    Rng rng = root.substream(name);
    const VarianceReport report =
        estimate_gradient_variance(problem.context(), estimators, config.variance.repeats, rng);
    for (const auto& e : report.estimators)
      out += name + ",trace:" + e.label + "," + std::to_string(e.repeats) + "," +
             format_double(e.trace) + "," + format_double(e.trace_std_error) + "\n";
    if (problem.layout.squashed) continue;
    const MixtureHead head = make_head(problem.layout, problem.head_params);
    Rng arng = root.substream(name).substream("assumption");
    const ImportanceExcess t =
        check_importance_excess(head, [&](double a) { return problem.critic->value(std::span(&a, 1)); },
                           config.variance.excess_samples, arng);
    const std::string n = std::to_string(t.samples);
    out += name + ",importance_excess:mean," + n + "," + format_double(t.mean_sum) + "," +
           format_double(t.mean_std_error) + "\n";
    out += name + ",importance_excess:std," + n + "," + format_double(t.std_sum) + "," +
           format_double(t.std_std_error) + "\n";
    out += name + ",importance_excess:reward," + n + "," + format_double(t.reward_sum) + "," +
           format_double(t.reward_std_error) + "\n";
  }
  return out;
}

}  // namespace mixpol
