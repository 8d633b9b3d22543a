#pragma once

#include <span>
#include <vector>

namespace mixpol {

struct MeanStat {
  double mean = 0.0;
  double variance = 0.0;  // unbiased sample variance
  double std_error = 0.0;
  std::size_t count = 0;
};

/// Running mean and variance (Welford).
class RunningStat {
 public:
  void push(double x);
  MeanStat result() const;
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

MeanStat mean_stat(std::span<const double> xs);

/// Upper-tail p-value of Pearson's chi-square statistic for observed counts
/// against expected counts (df = categories - 1).
double chi_square_pvalue(std::span<const double> observed,
                         std::span<const double> expected);

/// Asymptotic p-value of the two-sample Kolmogorov-Smirnov statistic.
double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b);

}  // namespace mixpol
