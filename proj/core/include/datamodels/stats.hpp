#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dm::stats {

double mean(std::span<const double> x);
/// Unbiased (n - 1) sample variance.
double variance(std::span<const double> x);

/// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks with ties given their average rank.
std::vector<double> average_ranks(std::span<const double> x);

/// Spearman correlation with average-rank tie handling.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Area under the ROC curve of `score` as a classifier of `positive`,
/// computed from the Mann-Whitney rank statistic (ties count one half).
/// nullopt when one class is absent.
std::optional<double> auc(std::span<const double> score, std::span<const bool> positive);

/// Least-squares slope of y on x.
double ols_slope(std::span<const double> x, std::span<const double> y);

double normal_cdf(double z);
/// Upper tail of a chi-square distribution with `dof` degrees of freedom.
double chi_square_sf(double x, double dof);

struct NormalityResult {
  double statistic = 0.0;  ///< K^2 = Z(skew)^2 + Z(kurtosis)^2
  double p_value = 0.0;
  bool saturated = false;  ///< zero-variance sample; p forced to 0
};

/// D'Agostino-Pearson omnibus K^2 normality test (skewness test of
/// D'Agostino 1970 plus the Anscombe-Glynn kurtosis test). Needs n >= 8.
NormalityResult dagostino_k2(std::span<const double> sample);

/// Kolmogorov-Smirnov distance between the empirical CDF of `p` and U[0,1].
double ks_distance_uniform(std::span<const double> p);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace dm::stats
