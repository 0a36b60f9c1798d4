#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"

namespace dm {

/// Log-spaced grid lambda_max * ratio^(-t / count), t = 0..count-1, so the
/// grid covers (lambda_max / ratio, lambda_max].
struct RegularizationPath {
  double lambda_max = 0.0;
  std::size_t count = 100;
  double ratio = 100.0;

  std::vector<double> lambdas() const;
};

struct SagaConfig {
  std::size_t max_epochs = 50;  ///< passes over the rows per solve
  double tol = 1e-7;            ///< max |w change| over one epoch
  std::uint64_t seed = 0;       ///< row order
};

struct LassoConfig {
  SagaConfig saga;
  std::size_t path_count = 100;
  double path_ratio = 100.0;
  std::optional<double> lambda_max;   ///< fixed lambda_max for every target
  std::vector<double> lambdas;        ///< explicit grid; overrides the path
  bool fit_bias = true;
  std::size_t workers = 1;
};

/// Consecutive row blocks of a campaign: [0, train) fit, [train, train+val)
/// selection, the rest held out.
struct Split {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  /// 1/6 of the non-test rows (rounded down, at least 1) go to validation.
  static Split with_default_validation(std::size_t m, std::size_t test);
};

/// All MSE fields follow the halved convention of eval_mse.
struct FitReport {
  std::vector<double> lambdas;
  std::vector<double> val_mse;  ///< per path entry
  double lambda = 0.0;          ///< selected
  double train_mse = 0.0;       ///< refit model on train + val rows
  double test_mse = 0.0;        ///< NaN without test rows
  std::size_t sparsity = 0;
  std::size_t epochs = 0;       ///< summed over the path and the refit
  bool converged = true;
};

struct LassoFit {
  Datamodel model;
  FitReport report;
};

/// Per-target LASSO path fit (SAGA), lambda selection on validation rows,
/// refit on train + val at the chosen lambda. Rows flagged excluded for a
/// target are dropped from that target's objective. `targets` defaults to
/// every output column.
std::vector<LassoFit> fit_lasso_multi(const MaskMatrix& masks, const OutputMatrix& outputs,
                                      const Split& split, const LassoConfig& cfg,
                                      std::span<const std::size_t> targets = {});

struct LassoSolution {
  Eigen::VectorXd w;
  double bias = 0.0;
  std::size_t epochs = 0;
  bool converged = false;
};

/// Minimizes (1/m) sum_i (w . a_i + b - y_i)^2 + lambda ||w||_1 over all rows
/// of `masks` with SAGA. `warm` seeds the weights.
LassoSolution lasso_saga(const MaskMatrix& masks, std::span<const double> y, double lambda,
                         const SagaConfig& cfg, bool fit_bias = true,
                         const Eigen::VectorXd* warm = nullptr);

/// Smallest lambda whose solution is w = 0 for the objective above.
double lasso_lambda_max(const MaskMatrix& masks, std::span<const double> y,
                        bool fit_bias = true);

enum class Encoding { binary, pm1 };

struct OlsOptions {
  Encoding encoding = Encoding::binary;
  bool fit_bias = true;
};

struct OlsFit {
  Eigen::VectorXd coef;   ///< in the requested encoding
  double intercept = 0.0;
  Encoding encoding = Encoding::binary;
  bool min_norm = false;  ///< Gram matrix was singular; pseudoinverse used

  /// Equivalent binary-mask datamodel: coef . z + c with z = 2v - 1 becomes
  /// (2 coef) . v + (c - sum coef).
  Datamodel as_datamodel() const;
};

/// Streams rows into X^T X, X^T Y and column sums, then solves the normal
/// equations (centered when fitting a bias).
class OlsAccumulator {
 public:
  OlsAccumulator(std::size_t d, std::size_t targets, OlsOptions opt);

  void add(const Eigen::MatrixXd& x_block, const Eigen::MatrixXd& y_block);
  void add_masks(const MaskMatrix& masks, const Eigen::MatrixXd& y);
  std::size_t rows() const noexcept { return count_; }

  std::vector<OlsFit> solve() const;

 private:
  OlsOptions opt_;
  std::size_t count_ = 0;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd xty_;
  Eigen::VectorXd xsum_;
  Eigen::VectorXd ysum_;
};

/// Least squares of one output column on the mask rows that are not
/// excluded for it.
OlsFit fit_ols(const MaskMatrix& masks, const OutputMatrix& outputs, std::size_t target,
               OlsOptions opt = {});
OlsFit fit_ols(const MaskMatrix& masks, std::span<const double> y, OlsOptions opt = {});
std::vector<OlsFit> fit_ols_multi(const MaskMatrix& masks, const OutputMatrix& outputs,
                                  OlsOptions opt = {}, std::span<const std::size_t> targets = {});

/// Dense rows of `masks` in the given encoding.
Eigen::MatrixXd dense_rows(const MaskMatrix& masks, std::size_t begin, std::size_t end,
                           Encoding enc = Encoding::binary);

/// mean(outputs | i in S) - mean(outputs | i not in S) for every i.
Eigen::VectorXd diff_of_means_influence(const MaskMatrix& masks, const OutputMatrix& outputs,
                                        std::size_t target);
Eigen::VectorXd diff_of_means_influence(const MaskMatrix& masks, std::span<const double> y);

struct MseReport {
  std::vector<double> per_target;  ///< 0.5 * mean squared residual
  double average = 0.0;
};

/// Datamodel k is scored against output column targets[k] (column k when
/// `targets` is empty), skipping excluded rows.
MseReport eval_mse(std::span<const Datamodel> models, const MaskMatrix& masks,
                   const OutputMatrix& outputs, std::span<const std::size_t> targets = {});

/// Each matrix holds targets x T repeated outputs on one fixed subset.
/// Returns half the average unbiased within-subset variance.
double eval_opt(std::span<const Eigen::MatrixXd> repeats);

struct SparsityStats {
  std::vector<std::size_t> nonzeros;
  std::map<std::size_t, std::size_t> histogram;
  double mean = 0.0;
};

SparsityStats sparsity_stats(std::span<const Datamodel> models);

}  // namespace dm
