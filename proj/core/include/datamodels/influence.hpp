#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"
#include "datamodels/estimators.hpp"

namespace dm {

/// Output of a (possibly synthetic) learner as a function of the subset.
using SetFunction = std::function<double(MaskView)>;

/// Correctness 1{theta_star . v > 0}.
SetFunction synthetic_correctness(Eigen::VectorXd theta_star);

struct LemmaPoint {
  std::size_t m = 0;
  double gap = 0.0;       ///< ||(1 + 2/n) w_ols - w_infl / 2||_2
  double relative = 0.0;  ///< gap / ||w_infl||_2 (0 when both vanish)
};

/// Draws max(m_grid) exact half-subsets of {0..n-1}; for each m uses the
/// first m rows to fit the bias-free +-1 encoded OLS estimator and the
/// difference-of-means influence, and reports the gap between them.
std::vector<LemmaPoint> lemma_convergence_check(std::size_t n, std::span<const std::size_t> m_grid,
                                                const SetFunction& outputs, std::uint64_t seed,
                                                std::size_t workers = 1);

struct EstimatorMetrics {
  std::string id;
  double spearman = 0.0;        ///< mean over targets with a defined value
  std::optional<double> mse;    ///< margin-valued estimators only
  double auc = 0.0;             ///< mean over targets with a defined value
  std::size_t auc_undefined = 0;
  std::size_t spearman_undefined = 0;
};

struct ComparisonReport {
  std::vector<EstimatorMetrics> rows;
  const EstimatorMetrics& at(std::string_view id) const;
};

/// Fits diff_means_correctness, diff_means_margin, lasso_margin and ols on the
/// fitting rows of one campaign and scores them on the held-out rows. The
/// difference-of-means vectors are used as datamodels after rescaling by
/// (d - 1) / d when every mask row has the same cardinality, with a fitted
/// bias.
ComparisonReport compare_estimators(const MaskMatrix& masks, const OutputMatrix& margins,
                                    const OutputMatrix& correctness, const Split& split,
                                    const LassoConfig& lasso);

struct MultilinearCheck {
  double analytic = 0.0;
  double estimate = 0.0;
  double se = 0.0;
};

/// d f / d x_i of the multilinear extension of a set function given as a
/// 2^n table (bit j of the index marks j in S), evaluated at x.
double multilinear_partial(std::span<const double> table, std::size_t n, std::size_t i,
                           std::span<const double> x);

/// Analytic partial at x = alpha * 1 next to the difference-of-means
/// influence estimated from `samples` iid Bernoulli(alpha) subsets.
MultilinearCheck multilinear_derivative_check(std::span<const double> table, std::size_t n,
                                              std::size_t i, double alpha, std::size_t samples,
                                              std::uint64_t seed);

}  // namespace dm
