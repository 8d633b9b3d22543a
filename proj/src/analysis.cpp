#include "mixpol/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "mixpol/stats.hpp"

namespace mixpol {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // log(2 pi) / 2

struct Rule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

template <unsigned N>
Rule legendre_rule() {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& a = G::abscissa();
  const auto& w = G::weights();
  Rule r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.nodes.push_back(a[i]);
    r.weights.push_back(w[i]);
    if (a[i] != 0.0) {
      r.nodes.push_back(-a[i]);
      r.weights.push_back(w[i]);
    }
  }
  return r;
}

const Rule& rule_for(std::size_t nodes) {
  static const Rule r10 = legendre_rule<10>();
  static const Rule r15 = legendre_rule<15>();
  static const Rule r20 = legendre_rule<20>();
  static const Rule r30 = legendre_rule<30>();
  switch (nodes) {
    case 10: return r10;
    case 15: return r15;
    case 20: return r20;
    case 30: return r30;
    default:
      throw DomainError("quadrature: supported panel sizes are 10 and 15 nodes");
  }
}

// Panel boundaries: every policy component and reward kernel contributes
// breaks at these multiples of its scale on both sides of its center.
constexpr double kBreakMultiples[] = {0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0};

std::vector<double> panel_breaks(const BanditSpec& bandit, const DensityParams& p) {
  std::vector<std::pair<double, double>> sources;
  for (std::size_t k = 0; k < p.components(); ++k)
    sources.emplace_back(p.means[k], std::exp(p.log_stds[k]));
  for (const auto& kernel : bandit.kernels) sources.emplace_back(kernel.mean, kernel.std_dev);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [c, s] : sources) {
    lo = std::min(lo, c - 12.0 * s);
    hi = std::max(hi, c + 12.0 * s);
  }
  std::vector<double> breaks;
  for (const auto& [c, s] : sources)
    for (double m : kBreakMultiples) {
      breaks.push_back(c - m * s);
      breaks.push_back(c + m * s);
    }
  std::erase_if(breaks, [&](double b) { return b < lo || b > hi; });
  std::sort(breaks.begin(), breaks.end());
  std::vector<double> unique;
  for (double b : breaks)
    if (unique.empty() || b - unique.back() > 1e-12 * std::max(1.0, std::abs(b)))
      unique.push_back(b);
  return unique;
}

struct Accumulated {
  double j = 0.0, j0 = 0.0, entropy = 0.0;
  std::vector<double> d_means, d_log_stds, d_weights;
};

Accumulated accumulate(const BanditSpec& bandit, const DensityParams& p, double alpha,
                       std::span<const double> breaks, const Rule& rule, bool with_grad) {
  const std::size_t n = p.components();
  Accumulated acc;
  if (with_grad) {
    acc.d_means.assign(n, 0.0);
    acc.d_log_stds.assign(n, 0.0);
    acc.d_weights.assign(n, 0.0);
  }
  std::vector<double> sigma(n), log_w(n), log_comp(n), z(n);
  for (std::size_t k = 0; k < n; ++k) {
    sigma[k] = std::exp(p.log_stds[k]);
    log_w[k] = p.weights[k] > 0.0 ? std::log(p.weights[k])
                                   : -std::numeric_limits<double>::infinity();
  }
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double half = 0.5 * (breaks[b + 1] - breaks[b]);
    const double mid = 0.5 * (breaks[b + 1] + breaks[b]);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double x = mid + half * rule.nodes[q];
      const double wq = half * rule.weights[q];
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        z[k] = (x - p.means[k]) / sigma[k];
        log_comp[k] = -0.5 * z[k] * z[k] - p.log_stds[k] - kHalfLogTwoPi;
        top = std::max(top, log_w[k] + log_comp[k]);
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (p.weights[k] > 0.0) sum += std::exp(log_w[k] + log_comp[k] - top);
      const double log_pi = top + std::log(sum);
      const double pi = std::exp(log_pi);
      const double r = bandit.reward_at(x);
      acc.j0 += wq * pi * r;
      acc.entropy -= wq * pi * log_pi;
      if (!with_grad) continue;
      const double common = r - alpha * log_pi - alpha;
      for (std::size_t k = 0; k < n; ++k) {
        const double comp = std::exp(log_comp[k]);
        const double weighted = p.weights[k] * comp * common * wq;
        acc.d_means[k] += weighted * z[k] / sigma[k];
        acc.d_log_stds[k] += weighted * (z[k] * z[k] - 1.0);
        acc.d_weights[k] += wq * comp * common;
      }
    }
  }
  acc.j = acc.j0 + alpha * acc.entropy;
  return acc;
}

double clamp_to(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(StudyFamily family) {
  return family == StudyFamily::gaussian ? "gaussian" : "gm2";
}

StudyFamily parse_study_family(std::string_view name) {
  if (name == "gaussian") return StudyFamily::gaussian;
  if (name == "gm2" || name == "gm") return StudyFamily::gm2;
  throw ConfigError("unknown study family '" + std::string(name) + "' (expected gaussian|gm2)");
}

std::string_view to_string(Modality modality) {
  return modality == Modality::unimodal ? "unimodal" : "bimodal";
}

DensityParams DensityParams::gaussian(double mean, double log_std) {
  return {{mean}, {log_std}, {1.0}};
}

DensityParams DensityParams::mixture(double mean1, double log_std1, double mean2,
                                     double log_std2, double first_weight) {
  return {{mean1, mean2}, {log_std1, log_std2}, {first_weight, 1.0 - first_weight}};
}

void DensityParams::validate() const {
  if (means.empty()) throw DimensionError("density: at least one component required");
  if (log_stds.size() != means.size() || weights.size() != means.size())
    throw DimensionError("density: means, log_stds and weights differ in length");
  double total = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (!std::isfinite(means[k]) || !std::isfinite(log_stds[k]) || !std::isfinite(weights[k]))
      throw NonFiniteError("density: non-finite parameter");
    if (weights[k] < 0.0) throw DomainError("density: negative weight");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("density: weights must sum to one");
}

double DensityParams::density(double x) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    const double z = (x - means[k]) / std::exp(log_stds[k]);
    sum += weights[k] * std::exp(-0.5 * z * z - log_stds[k] - kHalfLogTwoPi);
  }
  return sum;
}

std::size_t coordinate_count(StudyFamily family) {
  return family == StudyFamily::gaussian ? 2 : 5;
}

std::vector<double> pack(StudyFamily family, const DensityParams& p) {
  p.validate();
  if (family == StudyFamily::gaussian) {
    if (p.components() != 1) throw DimensionError("gaussian family has one component");
    return {p.means[0], p.log_stds[0]};
  }
  if (p.components() != 2) throw DimensionError("gm2 family has two components");
  return {p.means[0], p.log_stds[0], p.means[1], p.log_stds[1], p.weights[0]};
}

DensityParams unpack(StudyFamily family, std::span<const double> x) {
  if (x.size() != coordinate_count(family))
    throw DimensionError("packed study coordinates have the wrong length");
  if (family == StudyFamily::gaussian) return DensityParams::gaussian(x[0], x[1]);
  return DensityParams::mixture(x[0], x[1], x[2], x[3], x[4]);
}

void study_bounds(StudyFamily family, std::vector<double>& lower, std::vector<double>& upper) {
  lower = {-kStudyMeanBound, kStudyLogStdLo};
  upper = {kStudyMeanBound, kStudyLogStdHi};
  if (family == StudyFamily::gm2) {
    lower.insert(lower.end(), {-kStudyMeanBound, kStudyLogStdLo, 0.0});
    upper.insert(upper.end(), {kStudyMeanBound, kStudyLogStdHi, 1.0});
  }
}

ObjectiveValue integrate_objective(const BanditSpec& bandit, const DensityParams& params,
                                   double alpha, const QuadratureOptions& options) {
  params.validate();
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw DomainError("integrate_objective: alpha must be finite and >= 0");
  const std::vector<double> breaks = panel_breaks(bandit, params);
  const Accumulated coarse =
      accumulate(bandit, params, alpha, breaks, rule_for(options.nodes), false);
  Accumulated fine =
      accumulate(bandit, params, alpha, breaks, rule_for(2 * options.nodes), true);
  if (!std::isfinite(fine.j)) throw QuadratureError("integrate_objective: non-finite value");
  const double gap = std::max(std::abs(coarse.j - fine.j), std::abs(coarse.j0 - fine.j0));
  if (gap > options.tolerance)
    throw QuadratureError("integrate_objective: refinement changed J by " +
                          std::to_string(gap));
  ObjectiveValue v;
  v.j = fine.j;
  v.j0 = fine.j0;
  v.entropy = fine.entropy;
  v.d_means = std::move(fine.d_means);
  v.d_log_stds = std::move(fine.d_log_stds);
  v.d_weights = std::move(fine.d_weights);
  v.refinement_gap = gap;
  return v;
}

std::vector<double> packed_gradient(StudyFamily family, const ObjectiveValue& value) {
  if (family == StudyFamily::gaussian) return {value.d_means[0], value.d_log_stds[0]};
  return {value.d_means[0], value.d_log_stds[0], value.d_means[1], value.d_log_stds[1],
          value.d_weights[0] - value.d_weights[1]};
}

std::size_t count_modes(const DensityParams& params, double lo, double hi) {
  constexpr std::size_t kGrid = 2001;
  std::vector<double> xs(kGrid), ps(kGrid);
  for (std::size_t i = 0; i < kGrid; ++i) {
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kGrid - 1);
    ps[i] = params.density(xs[i]);
  }
  const double peak = *std::max_element(ps.begin(), ps.end());
  std::vector<std::pair<double, double>> maxima;  // (position, height)
  for (std::size_t i = 0; i < kGrid; ++i) {
    const bool above_left = i == 0 || ps[i] > ps[i - 1];
    const bool above_right = i + 1 == kGrid || ps[i] > ps[i + 1];
    if (above_left && above_right && ps[i] >= 0.01 * peak) maxima.emplace_back(xs[i], ps[i]);
  }
  std::vector<std::pair<double, double>> merged;
  for (const auto& m : maxima) {
    if (!merged.empty() && m.first - merged.back().first < 0.05) {
      if (m.second > merged.back().second) merged.back() = m;
    } else {
      merged.push_back(m);
    }
  }
  return merged.size();
}

Modality classify_modality(const DensityParams& params, double lo, double hi) {
  return count_modes(params, lo, hi) >= 2 ? Modality::bimodal : Modality::unimodal;
}

DensityParams sample_initial(StudyFamily family, Rng& rng) {
  if (family == StudyFamily::gaussian)
    return DensityParams::gaussian(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 0.0));
  const double m1 = rng.uniform(-2.0, 2.0);
  const double m2 = rng.uniform(-2.0, 2.0);
  const double s1 = rng.uniform(-3.0, 0.0);
  const double s2 = rng.uniform(-3.0, 0.0);
  const double w1 = rng.uniform(0.0, 1.0);
  const double w2 = rng.uniform(0.0, 1.0);
  return DensityParams::mixture(m1, s1, m2, s2, w1 / (w1 + w2));
}

double projected_gradient_norm(StudyFamily family, const DensityParams& params,
                               std::span<const double> gradient) {
  std::vector<double> lower, upper;
  study_bounds(family, lower, upper);
  const std::vector<double> x = pack(family, params);
  double norm = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    norm = std::max(norm, std::abs(clamp_to(x[i] + gradient[i], lower[i], upper[i]) - x[i]));
  return norm;
}

StationaryPointResult optimize_stationary(const BanditSpec& bandit, StudyFamily family,
                                          double alpha, const DensityParams& init,
                                          const OptimizerOptions& options) {
  std::vector<double> lower, upper;
  study_bounds(family, lower, upper);
  const std::size_t dim = lower.size();
  std::vector<double> x = pack(family, init);
  for (std::size_t i = 0; i < dim; ++i) x[i] = clamp_to(x[i], lower[i], upper[i]);

  StationaryPointResult result;
  result.family = family;
  result.alpha = alpha;

  // Minimizes f = -J.
  struct Point {
    std::vector<double> x;
    double f = 0.0;
    std::vector<double> g;
    ObjectiveValue value;
  };
  auto evaluate = [&](std::vector<double> at) -> std::optional<Point> {
    try {
      const DensityParams p = unpack(family, at);
      ObjectiveValue v = integrate_objective(bandit, p, alpha, options.quadrature);
      std::vector<double> g = packed_gradient(family, v);
      for (double& gi : g) gi = -gi;
      return Point{std::move(at), -v.j, std::move(g), std::move(v)};
    } catch (const QuadratureError&) {
      return std::nullopt;
    }
  };
  auto projected_norm = [&](const Point& p) {
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i)
      norm = std::max(norm, std::abs(clamp_to(p.x[i] - p.g[i], lower[i], upper[i]) - p.x[i]));
    return norm;
  };
  auto at_upper_std_rising = [&](const Point& p) {
    const DensityParams d = unpack(family, p.x);
    for (std::size_t k = 0; k < d.components(); ++k)
      if (d.weights[k] > 0.0 && d.log_stds[k] >= kStudyLogStdHi && p.value.d_log_stds[k] > 0.0)
        return true;
    return false;
  };

  std::optional<Point> current = evaluate(x);
  auto finish = [&](const Point* p, bool converged, std::string failure) {
    if (p) {
      result.params = unpack(family, p->x);
      result.j = p->value.j;
      result.j0 = p->value.j0;
      result.projected_gradient = projected_norm(*p);
      result.modality = classify_modality(result.params, bandit.domain_lo, bandit.domain_hi);
    } else {
      result.params = unpack(family, x);
    }
    result.converged = converged;
    result.failure = std::move(failure);
    return result;
  };
  if (!current) return finish(nullptr, false, "numerical issue: quadrature");

  std::vector<std::vector<double>> s_hist, y_hist;
  std::vector<double> rho_hist;
  for (std::size_t iter = 0;; ++iter) {
    result.iterations = iter;
    Point& cur = *current;
    if (at_upper_std_rising(cur)) return finish(&cur, false, "diverged: log-std at upper bound");
    if (projected_norm(cur) <= options.tolerance) return finish(&cur, true, "");
    if (iter >= options.max_iters) return finish(&cur, false, "max iterations");

    // Coordinates held at a bound by the gradient stay fixed this step.
    std::vector<bool> free(dim, true);
    for (std::size_t i = 0; i < dim; ++i)
      if ((cur.x[i] <= lower[i] && cur.g[i] > 0.0) || (cur.x[i] >= upper[i] && cur.g[i] < 0.0))
        free[i] = false;
    auto masked = [&](std::vector<double> v) {
      for (std::size_t i = 0; i < dim; ++i)
        if (!free[i]) v[i] = 0.0;
      return v;
    };
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i)
        if (free[i]) s += a[i] * b[i];
      return s;
    };

    std::vector<double> q = masked(cur.g);
    const std::size_t m = s_hist.size();
    std::vector<double> coef(m);
    for (std::size_t h = m; h-- > 0;) {
      coef[h] = rho_hist[h] * dot(s_hist[h], q);
      for (std::size_t i = 0; i < dim; ++i) q[i] -= coef[h] * y_hist[h][i];
    }
    if (m > 0) {
      const double yy = dot(y_hist[m - 1], y_hist[m - 1]);
      const double scale = yy > 0.0 ? dot(s_hist[m - 1], y_hist[m - 1]) / yy : 1.0;
      for (double& qi : q) qi *= scale;
    }
    for (std::size_t h = 0; h < m; ++h) {
      const double beta = rho_hist[h] * dot(y_hist[h], q);
      for (std::size_t i = 0; i < dim; ++i) q[i] += (coef[h] - beta) * s_hist[h][i];
    }
    std::vector<double> d = masked(q);
    for (double& di : d) di = -di;
    if (!(dot(d, cur.g) < 0.0)) {
      d = masked(cur.g);
      for (double& di : d) di = -di;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    double t = 1.0;
    if (s_hist.empty()) {
      double dmax = 0.0;
      for (double di : d) dmax = std::max(dmax, std::abs(di));
      if (dmax > 1.0) t = 1.0 / dmax;
    }
    std::optional<Point> next;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      std::vector<double> trial(dim);
      double moved = 0.0, decrease = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        trial[i] = clamp_to(cur.x[i] + t * d[i], lower[i], upper[i]);
        moved = std::max(moved, std::abs(trial[i] - cur.x[i]));
        decrease += cur.g[i] * (trial[i] - cur.x[i]);
      }
      if (moved == 0.0) break;
      std::optional<Point> cand = evaluate(std::move(trial));
      if (cand && cand->f <= cur.f + 1e-4 * decrease) {
        next = std::move(cand);
        break;
      }
    }
    if (!next) {
      if (!s_hist.empty()) {
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        continue;
      }
      return finish(&cur, false, "numerical issue: line search stalled");
    }
    std::vector<double> s(dim), y(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] = next->x[i] - cur.x[i];
      y[i] = next->g[i] - cur.g[i];
    }
    const double sy = std::inner_product(s.begin(), s.end(), y.begin(), 0.0);
    const double yy = std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
    if (sy > 1e-12 * yy && sy > 0.0) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > options.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    current = std::move(next);
  }
}

std::vector<double> default_alpha_grid() {
  return {0.05, 0.1, 0.2, 0.22, 0.24, 0.26, 0.28, 0.3, 0.325, 0.35, 0.375, 0.4, 0.45, 0.5, 0.6};
}

StudyRow summarize_trials(double alpha, StudyFamily family,
                          std::span<const StationaryPointResult> trials) {
  StudyRow row;
  row.alpha = alpha;
  row.family = family;
  row.trials = trials.size();
  std::size_t bimodal = 0;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto& r = trials[t];
    if (!r.converged) continue;
    ++row.converged;
    if (r.modality == Modality::bimodal) ++bimodal;
    if (!row.best_trial || r.j > row.best_j) {
      row.best_trial = t;
      row.best_j = r.j;
      row.best_j0 = r.j0;
    }
  }
  if (row.trials > 0)
    row.converged_fraction = static_cast<double>(row.converged) / static_cast<double>(row.trials);
  if (row.converged > 0)
    row.bimodal_fraction = static_cast<double>(bimodal) / static_cast<double>(row.converged);
  return row;
}

StudyTable sweep_alpha_study(const BanditSpec& bandit, std::span<const double> alphas,
                             const StudyOptions& options) {
  const std::size_t families = options.families.size();
  const std::size_t cells = alphas.size() * families;
  StudyTable table;
  table.trials.assign(cells, std::vector<StationaryPointResult>(options.trials));
  const Rng root = Rng(options.seed).substream("stationary");
  parallel_for(cells * options.trials, options.threads, [&](std::size_t task) {
    const std::size_t cell = task / options.trials;
    const std::size_t trial = task % options.trials;
    const double alpha = alphas[cell / families];
    const StudyFamily family = options.families[cell % families];
    Rng rng = root.substream(to_string(family))
                  .substream(std::bit_cast<std::uint64_t>(alpha))
                  .substream(static_cast<std::uint64_t>(trial));
    const DensityParams init = sample_initial(family, rng);
    table.trials[cell][trial] = optimize_stationary(bandit, family, alpha, init, options.optimizer);
  });
  for (std::size_t cell = 0; cell < cells; ++cell)
    table.rows.push_back(summarize_trials(alphas[cell / families], options.families[cell % families],
                                          table.trials[cell]));
  return table;
}

double gaussian_sigma_gradient(const BanditSpec& bandit, double mean, double std_dev,
                               double alpha) {
  if (!(std_dev > 0.0)) throw DomainError("gaussian_sigma_gradient: std_dev must be > 0");
  const ObjectiveValue v =
      integrate_objective(bandit, DensityParams::gaussian(mean, std::log(std_dev)), alpha);
  return v.d_log_stds[0] / std_dev;
}

// ---------------------------------------------------------------------------

namespace {

struct SampleVariance {
  double variance = 0.0;
  double std_error = 0.0;
};

// Unbiased variance with the asymptotic standard error sqrt((m4 - s^4) / n).
SampleVariance sample_variance(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d2 = (x - mean) * (x - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  const double biased = m2 / n;
  return {m2 / (n - 1.0), std::sqrt(std::max(m4 / n - biased * biased, 0.0) / n)};
}

double population_variance(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double m2 = 0.0;
  for (double x : xs) m2 += (x - mean) * (x - mean);
  return m2 / (n - 1.0);
}

}  // namespace

VarianceSummary summarize_gradients(std::string label,
                                    std::span<const std::vector<double>> draws) {
  if (draws.size() < 2) throw DomainError("variance estimate needs at least two draws");
  const std::size_t p = draws.front().size();
  const double m = static_cast<double>(draws.size());
  VarianceSummary s;
  s.label = std::move(label);
  s.repeats = draws.size();
  s.mean.assign(p, 0.0);
  s.variances.assign(p, 0.0);
  for (const auto& g : draws) {
    if (g.size() != p) throw DimensionError("gradient draws differ in length");
    for (std::size_t i = 0; i < p; ++i) s.mean[i] += g[i] / m;
  }
  std::vector<double> per_draw(draws.size(), 0.0);
  for (std::size_t j = 0; j < draws.size(); ++j)
    for (std::size_t i = 0; i < p; ++i) {
      const double d = draws[j][i] - s.mean[i];
      per_draw[j] += d * d * m / (m - 1.0);
      s.variances[i] += d * d / (m - 1.0);
    }
  s.trace = std::accumulate(s.variances.begin(), s.variances.end(), 0.0);
  s.trace_std_error = std::sqrt(population_variance(per_draw) / m);
  return s;
}

std::string variance_label(const EstimatorOptions& options) {
  switch (options.kind) {
    case EstimatorKind::lr: return options.use_baseline ? "lr_baseline" : "lr";
    case EstimatorKind::half_rp: return options.use_baseline ? "half_rp_baseline" : "half_rp";
    case EstimatorKind::rp: return "rp";
    case EstimatorKind::mrp: return "mrp";
    case EstimatorKind::gumbel_rp: return "gumbel_rp";
  }
  return "unknown";
}

EstimatorOptions parse_variance_label(std::string_view label) {
  for (EstimatorKind kind : {EstimatorKind::lr, EstimatorKind::half_rp, EstimatorKind::rp,
                             EstimatorKind::mrp, EstimatorKind::gumbel_rp})
    for (bool baseline : {false, true}) {
      EstimatorOptions options;
      options.kind = kind;
      options.use_baseline = baseline;
      if (variance_label(options) == label) return options;
    }
  throw ConfigError("unknown estimator label '" + std::string(label) + "'");
}

const VarianceSummary& VarianceReport::find(std::string_view label) const {
  for (const auto& e : estimators)
    if (e.label == label) return e;
  throw Error("variance report has no estimator '" + std::string(label) + "'");
}

VarianceReport estimate_gradient_variance(const ActorGradContext& ctx,
                                          std::span<const EstimatorOptions> estimators,
                                          std::size_t repeats, Rng& rng) {
  if (repeats < 2) throw DomainError("estimate_gradient_variance: M must be >= 2");
  ctx.validate();
  VarianceReport report;
  report.repeats = repeats;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    Rng sub = rng.substream(static_cast<std::uint64_t>(e));
    std::vector<std::vector<double>> draws;
    draws.reserve(repeats);
    for (std::size_t j = 0; j < repeats; ++j)
      draws.push_back(estimate_gradient(ctx, estimators[e], sub).values);
    report.estimators.push_back(summarize_gradients(variance_label(estimators[e]), draws));
  }
  return report;
}

VarianceReport estimate_gradient_variance(SacAgent& agent, const Batch& batch,
                                          std::span<const EstimatorOptions> estimators,
                                          std::size_t repeats, Rng& rng) {
  if (repeats < 2) throw DomainError("estimate_gradient_variance: M must be >= 2");
  VarianceReport report;
  report.repeats = repeats;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    Rng sub = rng.substream(static_cast<std::uint64_t>(e));
    std::vector<std::vector<double>> draws;
    draws.reserve(repeats);
    for (std::size_t j = 0; j < repeats; ++j)
      draws.push_back(agent.actor_gradient(batch, estimators[e], sub).params);
    report.estimators.push_back(summarize_gradients(variance_label(estimators[e]), draws));
  }
  return report;
}

ActorGradContext VarianceProblem::context() const {
  ActorGradContext ctx;
  ctx.layout = layout;
  ctx.head_params = head_params;
  ctx.critic = critic.get();
  ctx.entropy_scale = entropy_scale;
  return ctx;
}

std::vector<std::string> variance_problem_names() { return {"standard", "sin", "bump"}; }

VarianceProblem make_variance_problem(std::string_view name) {
  VarianceProblem p;
  p.name = std::string(name);
  p.layout.components = 2;
  p.layout.action_dim = 1;
  p.layout.learned_weights = true;
  if (name == "standard") {
    p.layout.squashed = true;
    p.layout.param = HeadParam::network;
    p.head_params = {-0.5, -0.7, 0.6, -0.4, 0.3, -0.2};
    p.entropy_scale = 0.1;
    p.critic = std::make_shared<FunctionCritic>(
        [](std::span<const double> a) { return std::sin(3 * a[0]) + a[0] * a[0]; },
        [](std::span<const double> a, std::span<double> g) {
          g[0] = 3 * std::cos(3 * a[0]) + 2 * a[0];
          return std::sin(3 * a[0]) + a[0] * a[0];
        });
    return p;
  }
  p.layout.squashed = false;
  p.layout.param = HeadParam::direct;
  p.head_params = {-1.0, 0.6, 1.5, 0.9, 0.3, 0.7};
  if (name == "sin") {
    p.critic = std::make_shared<FunctionCritic>(
        [](std::span<const double> a) { return std::sin(a[0]); },
        [](std::span<const double> a, std::span<double> g) {
          g[0] = std::cos(a[0]);
          return std::sin(a[0]);
        });
    return p;
  }
  if (name == "bump") {
    p.critic = std::make_shared<FunctionCritic>(
        [](std::span<const double> a) { return std::exp(-a[0] * a[0]); },
        [](std::span<const double> a, std::span<double> g) {
          const double r = std::exp(-a[0] * a[0]);
          g[0] = -2 * a[0] * r;
          return r;
        });
    return p;
  }
  throw ConfigError("unknown variance problem '" + std::string(name) +
                    "' (expected standard, sin or bump)");
}

ImportanceExcess check_importance_excess(const MixtureHead& head, const RewardFn& reward,
                                     std::size_t samples, Rng& rng) {
  head.validate();
  if (head.action_dim != 1 || head.squashed || head.base != BaseKind::gaussian)
    throw DomainError("check_importance_excess: needs a one-dimensional unsquashed Gaussian mixture");
  constexpr std::size_t kBatches = 20;
  if (samples < 2 * kBatches)
    throw DomainError("check_importance_excess: needs at least 40 samples");
  const std::size_t n = head.components;
  const std::vector<double> weights =
      head.weight_logits.empty() ? std::vector<double>(n, 1.0 / static_cast<double>(n))
                                 : softmax_weights(head.weight_logits);
  std::vector<double> log_w(n), mu(n), sigma(n);
  for (std::size_t k = 0; k < n; ++k) {
    log_w[k] = std::log(weights[k]);
    mu[k] = head.mean(k, 0);
    sigma[k] = head.std_dev(k, 0);
  }
  auto log_component = [&](std::size_t k, double a) {
    const double z = (a - mu[k]) / sigma[k];
    return -0.5 * z * z - std::log(sigma[k]) - kHalfLogTwoPi;
  };

  const std::size_t per_batch = samples / kBatches;
  // mixture side / component side, per component, per coordinate
  std::vector<double> mix_mean(per_batch), mix_std(per_batch), mix_r(per_batch);
  std::vector<double> own_mean(per_batch), own_std(per_batch), own_r(per_batch);
  std::vector<double> sums_mean, sums_std, sums_r;
  std::vector<double> terms(n);
  std::vector<std::size_t> picks(per_batch);
  std::vector<double> eps(per_batch), actions(per_batch), log_mix(per_batch), r_mix(per_batch);
  for (std::size_t b = 0; b < kBatches; ++b) {
    for (std::size_t j = 0; j < per_batch; ++j) {
      picks[j] = rng.categorical(weights);
      eps[j] = rng.standard_normal();
      actions[j] = mu[picks[j]] + sigma[picks[j]] * eps[j];
      for (std::size_t k = 0; k < n; ++k) terms[k] = log_w[k] + log_component(k, actions[j]);
      log_mix[j] = log_sum_exp(terms);
      r_mix[j] = reward(actions[j]);
    }
    double s_mean = 0.0, s_std = 0.0, s_r = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < per_batch; ++j) {
        const double a = actions[j];
        const double rho = std::exp(log_component(k, a) - log_mix[j]);
        const double z = (a - mu[k]) / sigma[k];
        mix_mean[j] = rho * (z / sigma[k]) * r_mix[j];
        mix_std[j] = rho * ((z * z - 1.0) / sigma[k]) * r_mix[j];
        mix_r[j] = rho * r_mix[j];

        const double own = mu[k] + sigma[k] * eps[j];
        const double r_own = own == a ? r_mix[j] : reward(own);
        const double zo = (own - mu[k]) / sigma[k];
        own_mean[j] = (zo / sigma[k]) * r_own;
        own_std[j] = ((zo * zo - 1.0) / sigma[k]) * r_own;
        own_r[j] = r_own;
      }
      s_mean += population_variance(mix_mean) - population_variance(own_mean);
      s_std += population_variance(mix_std) - population_variance(own_std);
      s_r += population_variance(mix_r) - population_variance(own_r);
    }
    sums_mean.push_back(s_mean);
    sums_std.push_back(s_std);
    sums_r.push_back(s_r);
  }
  ImportanceExcess out;
  out.samples = per_batch * kBatches;
  const MeanStat m = mean_stat(sums_mean), s = mean_stat(sums_std), r = mean_stat(sums_r);
  out.mean_sum = m.mean;
  out.mean_std_error = m.std_error;
  out.std_sum = s.mean;
  out.std_std_error = s.std_error;
  out.reward_sum = r.mean;
  out.reward_std_error = r.std_error;
  return out;
}

double VarianceIdentity::z_score() const {
  const double se = std::hypot(lhs_std_error, rhs_std_error);
  if (se == 0.0) return lhs == rhs ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(lhs - rhs) / se;
}

std::vector<VarianceIdentity> variance_identities(std::span<const double> theta,
                                                  const FunctionCritic& reward,
                                                  std::size_t samples, Rng& rng) {
  if (theta.size() % 3 != 0 || theta.empty())
    throw DimensionError("variance_identities: theta must hold [mean, std] per component and weights");
  if (samples < 2) throw DomainError("variance_identities: needs at least two samples");
  const std::size_t n = theta.size() / 3;
  HeadLayout layout;
  layout.components = n;
  layout.action_dim = 1;
  layout.squashed = false;
  layout.learned_weights = true;
  layout.param = HeadParam::direct;

  std::vector<double> mu(n), sigma(n), w(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mu[k] = theta[layout.mean_index(k, 0)];
    sigma[k] = theta[layout.scale_index(k, 0)];
    w[k] = theta[layout.weight_index(k)];
    if (!(sigma[k] > 0.0) || !(w[k] > 0.0))
      throw DomainError("variance_identities: stds and weights must be positive");
    total += w[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("variance_identities: weights must sum to one");

  ActorGradContext ctx;
  ctx.layout = layout;
  ctx.head_params.assign(theta.begin(), theta.end());
  ctx.critic = &reward;
  ctx.entropy_scale = 0.0;

  // Left sides: the mixture estimators as the pipeline computes them.
  std::vector<std::vector<double>> lr(theta.size(), std::vector<double>(samples));
  std::vector<std::vector<double>> mrp(theta.size(), std::vector<double>(samples));
  {
    EstimatorOptions lr_opts;
    lr_opts.kind = EstimatorKind::lr;
    lr_opts.use_baseline = false;
    EstimatorOptions mrp_opts;
    mrp_opts.kind = EstimatorKind::mrp;
    Rng lr_rng = rng.substream("lhs-lr");
    Rng mrp_rng = rng.substream("lhs-mrp");
    for (std::size_t j = 0; j < samples; ++j) {
      const auto g_lr = estimate_gradient(ctx, lr_opts, lr_rng).values;
      const auto g_mrp = estimate_gradient(ctx, mrp_opts, mrp_rng).values;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        lr[i][j] = g_lr[i];
        mrp[i][j] = g_mrp[i];
      }
    }
  }

  // Right sides: importance-weighted component LR terms under the mixture
  // and component RP / reward terms under each component, from fresh draws.
  std::vector<double> log_w(n);
  for (std::size_t k = 0; k < n; ++k) log_w[k] = std::log(w[k]);
  auto log_component = [&](std::size_t k, double a) {
    const double z = (a - mu[k]) / sigma[k];
    return -0.5 * z * z - std::log(sigma[k]) - kHalfLogTwoPi;
  };
  Rng mix_rng = rng.substream("rhs-mixture");
  std::vector<double> actions(samples), log_mix(samples), rewards(samples), terms(n);
  for (std::size_t j = 0; j < samples; ++j) {
    const std::size_t pick = mix_rng.categorical(w);
    actions[j] = mu[pick] + sigma[pick] * mix_rng.standard_normal();
    for (std::size_t k = 0; k < n; ++k) terms[k] = log_w[k] + log_component(k, actions[j]);
    log_mix[j] = log_sum_exp(terms);
    rewards[j] = reward.value(std::span<const double>(&actions[j], 1));
  }

  std::vector<VarianceIdentity> out;
  auto add = [&](std::string name, std::span<const double> lhs_draws,
                 std::span<const double> rhs_draws, double rhs_scale) {
    const SampleVariance l = sample_variance(lhs_draws);
    const SampleVariance r = sample_variance(rhs_draws);
    out.push_back({std::move(name), l.variance, l.std_error, rhs_scale * r.variance,
                   rhs_scale * r.std_error});
  };
  std::vector<double> rhs_mean(samples), rhs_std(samples), rhs_weight(samples);
  for (std::size_t k = 0; k < n; ++k) {
    const std::string idx = "[" + std::to_string(k) + "]";
    for (std::size_t j = 0; j < samples; ++j) {
      const double a = actions[j];
      const double rho = std::exp(log_component(k, a) - log_mix[j]);
      const double z = (a - mu[k]) / sigma[k];
      rhs_mean[j] = rho * (z / sigma[k]) * rewards[j];
      rhs_std[j] = rho * ((z * z - 1.0) / sigma[k]) * rewards[j];
      rhs_weight[j] = rho * rewards[j];
    }
    add("lr/mean" + idx, lr[layout.mean_index(k, 0)], rhs_mean, w[k] * w[k]);
    add("lr/std" + idx, lr[layout.scale_index(k, 0)], rhs_std, w[k] * w[k]);
    add("lr/weight" + idx, lr[layout.weight_index(k)], rhs_weight, 1.0);

    Rng comp_rng = rng.substream("rhs-component").substream(static_cast<std::uint64_t>(k));
    double grad = 0.0;
    for (std::size_t j = 0; j < samples; ++j) {
      const double eps = comp_rng.standard_normal();
      const double a = mu[k] + sigma[k] * eps;
      const double r = reward.value_and_grad(std::span<const double>(&a, 1),
                                             std::span<double>(&grad, 1));
      rhs_mean[j] = grad;
      rhs_std[j] = grad * eps;
      rhs_weight[j] = r;
    }
    add("mrp/mean" + idx, mrp[layout.mean_index(k, 0)], rhs_mean, w[k] * w[k]);
    add("mrp/std" + idx, mrp[layout.scale_index(k, 0)], rhs_std, w[k] * w[k]);
    add("mrp/weight" + idx, mrp[layout.weight_index(k)], rhs_weight, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

BootstrapCI bootstrap_ci(std::span<const double> samples, Rng& rng, double level,
                         std::size_t resamples) {
  if (samples.empty()) throw Error("bootstrap_ci: no samples");
  if (!(level > 0.0 && level < 1.0)) throw DomainError("bootstrap_ci: level must be in (0, 1)");
  if (resamples == 0) throw DomainError("bootstrap_ci: resamples must be >= 1");
  const std::size_t n = samples.size();
  BootstrapCI ci;
  ci.level = level;
  ci.resamples = resamples;
  ci.point = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  std::vector<double> means(resamples);
  for (double& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += samples[rng.index(n)];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, resamples - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  ci.lower = std::min(quantile(0.5 * (1.0 - level)), ci.point);
  ci.upper = std::max(quantile(0.5 * (1.0 + level)), ci.point);
  return ci;
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < std::min(threads, n); ++t)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace mixpol
