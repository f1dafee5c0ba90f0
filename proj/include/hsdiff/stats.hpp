#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace hsdiff::stats {

double mean(std::span<const double> x);
/// Unbiased sample variance; zero for fewer than two samples.
double variance(std::span<const double> x);

double normal_cdf(double x);

/// Survival function of the Kolmogorov distribution, P(K > x).
double kolmogorov_survival(double x);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. The p-value
/// uses the asymptotic law with Stephens' finite-n correction.
KsResult ks_test(std::vector<double> sample, const std::function<double(double)>& cdf);

/// Two-sample Kolmogorov-Smirnov test.
KsResult ks_test_2sample(std::vector<double> a, std::vector<double> b);

/// Two-sided p-value of a Student t statistic.
double t_test_p(double t, double dof);

/// Two-sided p-value of a standard normal statistic.
double z_test_p(double z);

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
};

/// Weighted least squares y = a + b x. Empty weights means unit weights.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y,
                     std::span<const double> weights = {});

/// One-sided z statistic for p1 > p2 with pooled variance.
double two_proportion_z(std::size_t hits1, std::size_t n1, std::size_t hits2,
                        std::size_t n2);

}  // namespace hsdiff::stats
