#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"
#include "datamodels/trainers.hpp"

namespace dm {

struct SimConfig {
  std::size_t d_features = 150;
  std::size_t n_train = 125;  ///< the held-out set has the same size
  std::vector<double> p_grid{0.1, 0.2, 0.3, 0.4, 0.5};
  double epsilon = 0.1;       ///< label noise standard deviation
  double w_scale = 1.0;       ///< w* ~ N(0, w_scale^2)
  std::uint64_t seed = 0;
};

/// Binary-feature linear regression world: x_ik ~ Bernoulli(p_k) with p_k
/// drawn uniformly from the grid, y = X w* + N(0, epsilon^2).
struct SimWorld {
  SimConfig cfg;
  Eigen::VectorXd freq;  ///< p_k per feature
  Eigen::VectorXd w;
  Eigen::MatrixXd x_train;
  Eigen::VectorXd y_train;
  Eigen::MatrixXd x_heldout;
  Eigen::VectorXd y_heldout;

  std::size_t n() const noexcept { return static_cast<std::size_t>(x_train.rows()); }
  std::size_t targets() const noexcept { return static_cast<std::size_t>(x_heldout.rows()); }

  /// Training rows as a regression set (responses = y_train).
  TrainingSet training_set() const;
  /// Held-out rows as targets.
  TargetSet target_set() const;
  /// Indices of training rows with feature k active (S_k).
  std::vector<std::size_t> subpopulation(std::size_t k) const;
};

SimWorld generate_world(const SimConfig& cfg);

/// Min-norm least-squares prediction at every held-out point after fitting
/// on the subset rows.
class SimOracle {
 public:
  explicit SimOracle(const SimWorld& world);
  Eigen::VectorXd outputs(MaskView subset) const { return kernel_.predict(subset); }
  double output(MaskView subset, std::size_t target) const;

 private:
  MinNormKernel kernel_;
};

/// f(x_j; S) for one held-out target.
double sim_output(MaskView subset, const SimWorld& world, std::size_t target);

/// OLS datamodels (binary encoding, fitted bias) for every held-out target
/// from m alpha-subsets. Returns Theta as n_train x targets.
struct SimDatamodels {
  Eigen::MatrixXd theta;
  Eigen::VectorXd bias;
  double alpha = 0.0;
  std::size_t m = 0;
};

SimDatamodels fit_sim_datamodels(const SimWorld& world, double alpha, std::size_t m,
                                 std::uint64_t seed, std::size_t workers = 1);

struct FeatureCorrelation {
  std::optional<double> r;  ///< empty when either side has zero variance
  std::size_t features = 0;
  std::size_t pairs = 0;
};

/// Pearson correlation between actual and predicted effects of removing S_k,
/// pooled over every feature k with p_k == p and every held-out target.
FeatureCorrelation feature_correlation(const Eigen::MatrixXd& theta, const SimWorld& world,
                                       double p);

struct AlphaSweep {
  std::vector<double> alphas;
  std::vector<double> freqs;
  std::vector<std::vector<std::optional<double>>> r;  ///< alphas x freqs
};

AlphaSweep alpha_sweep(const SimWorld& world, std::span<const double> alphas, std::size_t m,
                       std::uint64_t seed, std::size_t workers = 1);

/// One row per alpha, one column per frequency; undefined entries are empty.
void write_sweep_csv(std::ostream& out, const AlphaSweep& sweep);

}  // namespace dm
