#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

#include "datamodels/errors.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/simulation.hpp"

using namespace dm;
using Eigen::Index;

TEST(SimWorld, FeatureFrequenciesMatchBinomial) {
  SimConfig cfg;
  cfg.n_train = 4000;
  cfg.d_features = 20;
  cfg.p_grid = {0.5};
  const auto w = generate_world(cfg);
  const double sd = std::sqrt(0.25 / 4000.0);
  for (Index k = 0; k < 20; ++k) EXPECT_NEAR(w.x_train.col(k).mean(), 0.5, 4 * sd) << "feature " << k;
}

TEST(SimWorld, NoiselessLabelsAreLinear) {
  SimConfig cfg;
  cfg.epsilon = 0.0;
  const auto w = generate_world(cfg);
  EXPECT_LT((w.x_train * w.w - w.y_train).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((w.x_heldout * w.w - w.y_heldout).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SimWorld, RejectsBadConfig) {
  SimConfig cfg;
  cfg.p_grid = {1.5};
  EXPECT_THROW(generate_world(cfg), ValidationError);
}

TEST(SimOutput, SingleRowInterpolates) {
  SimConfig cfg;
  cfg.n_train = 10;
  cfg.d_features = 30;
  auto w = generate_world(cfg);
  w.x_heldout.row(0) = w.x_train.row(4);
  const auto mask = SubsetMask::from_indices(std::vector<std::size_t>{4}, 10);
  EXPECT_NEAR(sim_output(mask.view(), w, 0), w.y_train[4], 1e-10);
  EXPECT_NEAR(SimOracle(w).output(mask.view(), 0), w.y_train[4], 1e-10);
}

TEST(SimOutput, FullTrainRecoversTruthWithoutNoise) {
  SimConfig cfg;
  cfg.n_train = 200;
  cfg.d_features = 40;
  cfg.epsilon = 0.0;
  const auto w = generate_world(cfg);
  ASSERT_EQ(Eigen::FullPivLU<Eigen::MatrixXd>(w.x_train).rank(), 40);
  const auto full = SubsetMask::full(200);
  for (std::size_t j = 0; j < 5; ++j)
    EXPECT_NEAR(sim_output(full.view(), w, j), w.x_heldout.row(static_cast<Index>(j)).dot(w.w), 1e-8);
}

TEST(SimOutput, OracleMatchesDenseQr) {
  SimConfig cfg;
  cfg.n_train = 60;
  cfg.d_features = 20;
  const auto w = generate_world(cfg);
  const SimOracle oracle(w);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto mask = sample_subset({60, 0.7, 3}, s);
    std::vector<Index> rows;
    mask.view().for_each_set([&](std::size_t i) { rows.push_back(static_cast<Index>(i)); });
    const Eigen::MatrixXd xs = w.x_train(rows, Eigen::all);
    const Eigen::VectorXd beta = xs.colPivHouseholderQr().solve(w.y_train(rows));
    const Eigen::VectorXd want = w.x_heldout * beta;
    EXPECT_LT((oracle.outputs(mask.view()) - want).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FeatureCorrelation, ExactLinearDatamodelGivesOne) {
  // Orthonormal training rows make the min-norm fit exactly linear in the mask.
  SimConfig cfg;
  cfg.n_train = 6;
  cfg.d_features = 6;
  cfg.p_grid = {0.5};
  auto w = generate_world(cfg);
  w.x_train = Eigen::MatrixXd::Identity(6, 6);
  w.y_train = w.x_train * w.w;
  const SimOracle oracle(w);
  const Eigen::VectorXd full = oracle.outputs(SubsetMask::full(6).view());
  Eigen::MatrixXd theta(6, static_cast<Index>(w.targets()));
  for (std::size_t i = 0; i < 6; ++i) {
    SubsetMask rest = SubsetMask::full(6);
    rest.reset(i);
    theta.row(static_cast<Index>(i)) = (full - oracle.outputs(rest.view())).transpose();
  }
  const auto fc = feature_correlation(theta, w, 0.5);
  ASSERT_TRUE(fc.r.has_value());
  EXPECT_NEAR(*fc.r, 1.0, 1e-12);

  const auto zero = feature_correlation(Eigen::MatrixXd::Zero(6, static_cast<Index>(w.targets())), w, 0.5);
  EXPECT_FALSE(zero.r.has_value());
  EXPECT_THROW(feature_correlation(theta, w, 0.3), ValidationError);
}

TEST(SimDatamodels, Deterministic) {
  SimConfig cfg;
  cfg.n_train = 30;
  cfg.d_features = 40;
  const auto w = generate_world(cfg);
  const auto a = fit_sim_datamodels(w, 0.5, 3000, 1, 1);
  const auto b = fit_sim_datamodels(w, 0.5, 3000, 1, 2);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.theta.rows(), 30);
}

TEST(AlphaSweep, MidFrequencyCorrelationIsPositive) {
  SimConfig cfg;
  cfg.seed = 1;
  const auto w = generate_world(cfg);
  const std::vector<double> alphas{0.5};
  const auto sweep = alpha_sweep(w, alphas, 20000, 3);
  ASSERT_EQ(sweep.r.size(), 1u);
  for (std::size_t f = 0; f < sweep.freqs.size(); ++f) {
    if (sweep.freqs[f] < 0.2 || sweep.freqs[f] > 0.4) continue;
    ASSERT_TRUE(sweep.r[0][f].has_value());
    EXPECT_GT(*sweep.r[0][f], 0.5) << "p = " << sweep.freqs[f];
  }
  std::ostringstream csv;
  write_sweep_csv(csv, sweep);
  EXPECT_EQ(csv.str().substr(0, 32), "alpha,p=0.1,p=0.2,p=0.3,p=0.4,p=");
}
