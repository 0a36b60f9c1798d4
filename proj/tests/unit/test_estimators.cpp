#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "datamodels/errors.hpp"
#include "datamodels/estimators.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/stats.hpp"

using namespace dm;
using Eigen::Index;

namespace {

MaskMatrix from_rows(const std::vector<std::vector<int>>& rows) {
  MaskMatrix m(rows.size(), rows[0].size(), 0.5, 0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      if (rows[i][j]) m.set_bit(i, j);
  return m;
}

OutputMatrix column(std::span<const double> y) {
  OutputMatrix o(y.size(), 1, OutputFn::margin, "test");
  for (std::size_t i = 0; i < y.size(); ++i) o.set_value(i, 0, static_cast<float>(y[i]));
  return o;
}

// Cyclic coordinate descent on the centered problem
// (1/m)||y - X w - b||^2 + lambda ||w||_1, run to machine precision.
Eigen::VectorXd lasso_cd(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  const double m = static_cast<double>(x.rows());
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd r = yc;
  for (int sweep = 0; sweep < 100000; ++sweep) {
    double change = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      const double nrm = xc.col(j).squaredNorm();
      if (nrm == 0.0) continue;
      const double rho = xc.col(j).dot(r) + nrm * w[j];
      const double t = lambda * m / 2.0;
      const double nw = rho > t ? (rho - t) / nrm : rho < -t ? (rho + t) / nrm : 0.0;
      r -= (nw - w[j]) * xc.col(j);
      change = std::max(change, std::abs(nw - w[j]));
      w[j] = nw;
    }
    if (change < 1e-14) break;
  }
  return w;
}

std::vector<double> planted_outputs(const MaskMatrix& masks, const Eigen::VectorXd& theta, double bias,
                                    double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> y(masks.rows());
  for (std::size_t i = 0; i < masks.rows(); ++i) {
    double v = bias;
    masks.row(i).for_each_set([&](std::size_t j) { v += theta[static_cast<Index>(j)]; });
    y[i] = v + noise * rng.normal();
  }
  return y;
}

}  // namespace

TEST(Path, LogSpacedWithinBounds) {
  const auto l = RegularizationPath{2.0, 100, 100.0}.lambdas();
  ASSERT_EQ(l.size(), 100u);
  EXPECT_DOUBLE_EQ(l.front(), 2.0);
  EXPECT_GT(l.back(), 0.02);
  for (std::size_t t = 1; t < l.size(); ++t) EXPECT_NEAR(l[t] / l[t - 1], std::pow(100.0, -0.01), 1e-12);
}

TEST(Lasso, LambdaMaxGivesZeroSolutionAndBelowDoesNot) {
  const auto masks = sample_masks({40, 0.5, 3}, 400);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(40);
  theta[3] = 1.0;
  theta[10] = -0.5;
  const auto y = planted_outputs(masks, theta, 0.2, 0.1, 1);
  const double lmax = lasso_lambda_max(masks, y);
  const SagaConfig cfg{2000, 1e-10, 0};
  EXPECT_EQ(lasso_saga(masks, y, lmax * 1.0001, cfg).w.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(lasso_saga(masks, y, lmax * 0.9, cfg).w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lasso, MatchesCoordinateDescentOracle) {
  const auto masks = iid_bernoulli_masks(15, 0.5, 300, 2);
  Rng rng(8);
  Eigen::VectorXd theta(15);
  for (Index j = 0; j < 15; ++j) theta[j] = j % 3 == 0 ? rng.normal() : 0.0;
  const auto y = planted_outputs(masks, theta, 1.0, 0.3, 9);
  const Eigen::MatrixXd x = dense_rows(masks, 0, masks.rows());
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Index>(y.size()));
  const double lmax = lasso_lambda_max(masks, y);
  for (double frac : {0.5, 0.1, 0.01}) {
    const Eigen::VectorXd want = lasso_cd(x, yv, frac * lmax);
    const auto got = lasso_saga(masks, y, frac * lmax, SagaConfig{20000, 1e-12, 4});
    EXPECT_TRUE(got.converged);
    EXPECT_LT((got.w - want).cwiseAbs().maxCoeff(), 1e-6) << "lambda fraction " << frac;
  }
}

TEST(Lasso, KktConditionsHold) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto masks = sample_masks({25, 0.5, s}, 200);
    Rng rng(derive_key(s, 1));
    Eigen::VectorXd theta(25);
    for (Index j = 0; j < 25; ++j) theta[j] = rng.bernoulli(0.3) ? rng.normal() : 0.0;
    const auto y = planted_outputs(masks, theta, 0.0, 0.2, s + 50);
    const double lambda = 0.05 * lasso_lambda_max(masks, y);
    const auto sol = lasso_saga(masks, y, lambda, SagaConfig{20000, 1e-12, s});
    ASSERT_TRUE(sol.converged);
    const Eigen::MatrixXd x = dense_rows(masks, 0, masks.rows());
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Index>(y.size()));
    const Eigen::VectorXd resid = (x * sol.w).array() + sol.bias - yv.array();
    const Eigen::VectorXd grad = 2.0 / static_cast<double>(y.size()) * x.transpose() * resid;
    EXPECT_NEAR(resid.mean(), 0.0, 1e-8);
    for (Index j = 0; j < 25; ++j) {
      if (sol.w[j] == 0.0)
        EXPECT_LE(std::abs(grad[j]), lambda * (1 + 1e-4));
      else
        EXPECT_NEAR(grad[j], -lambda * (sol.w[j] > 0 ? 1.0 : -1.0), 1e-4 * lambda);
    }
  }
}

TEST(Lasso, ZeroLambdaEqualsOls) {
  const auto masks = iid_bernoulli_masks(6, 0.5, 200, 12);
  Eigen::VectorXd theta(6);
  theta << 1, -2, 0.5, 0, 3, -1;
  const auto y = planted_outputs(masks, theta, 0.7, 0.5, 13);
  const auto sol = lasso_saga(masks, y, 0.0, SagaConfig{200000, 1e-13, 0});
  const auto ols = fit_ols(masks, y);
  EXPECT_LT((sol.w - ols.coef).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(sol.bias, ols.intercept, 1e-8);
}

TEST(Lasso, PlantedSupportRecovered) {
  const std::size_t d = 100, m = 5000;
  const auto masks = sample_masks({d, 0.5, 77}, m);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  Rng rng(78);
  for (int k = 0; k < 10; ++k) theta[k * 9 + 3] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * (0.3 + rng.uniform01());
  const auto y = planted_outputs(masks, theta, 0.0, 0.1, 79);
  const auto outputs = column(y);
  LassoConfig cfg;
  cfg.path_count = 30;
  const auto fits = fit_lasso_multi(masks, outputs, Split::with_default_validation(m, 500), cfg);
  ASSERT_EQ(fits.size(), 1u);
  for (Index j = 0; j < static_cast<Index>(d); ++j)
    if (std::abs(theta[j]) > 0.5) EXPECT_NE(fits[0].model.theta[j], 0.0) << "coordinate " << j;
  EXPECT_TRUE(fits[0].report.converged);
  EXPECT_LT(fits[0].report.test_mse, 0.02);
}

TEST(Lasso, LargerLambdaIsSparser) {
  const auto masks = sample_masks({60, 0.5, 5}, 600);
  Rng rng(6);
  Eigen::VectorXd theta(60);
  for (Index j = 0; j < 60; ++j) theta[j] = rng.normal() * (j % 4 == 0);
  const auto y = planted_outputs(masks, theta, 0.0, 0.5, 7);
  const double lmax = lasso_lambda_max(masks, y);
  const SagaConfig cfg{5000, 1e-9, 1};
  const Datamodel big{lasso_saga(masks, y, 0.5 * lmax, cfg).w};
  const Datamodel small{lasso_saga(masks, y, 0.005 * lmax, cfg).w};
  EXPECT_LT(big.sparsity(), small.sparsity());
}

TEST(Split, DefaultValidation) {
  const auto s = Split::with_default_validation(1200, 200);
  EXPECT_EQ(s.test, 200u);
  EXPECT_EQ(s.val, 166u);
  EXPECT_EQ(s.train, 834u);
  EXPECT_THROW(Split::with_default_validation(10, 10), ValidationError);
}

TEST(Ols, IdentityDesignWithoutBias) {
  const auto masks = from_rows({{1, 0}, {0, 1}});
  const std::vector<double> y{3, 5};
  const auto fit = fit_ols(masks, y, OlsOptions{Encoding::binary, false});
  EXPECT_NEAR(fit.coef[0], 3.0, 1e-12);
  EXPECT_NEAR(fit.coef[1], 5.0, 1e-12);
}

TEST(Ols, PlusMinusOneEncoding) {
  const auto masks = from_rows({{1, 0}});
  const Eigen::MatrixXd z = dense_rows(masks, 0, 1, Encoding::pm1);
  EXPECT_EQ(z(0, 0), 1.0);
  EXPECT_EQ(z(0, 1), -1.0);
}

TEST(Ols, MatchesDenseQrOracle) {
  const auto masks = iid_bernoulli_masks(10, 0.4, 500, 21);
  Rng rng(22);
  std::vector<double> y(500);
  for (auto& v : y) v = rng.normal();
  for (Encoding enc : {Encoding::binary, Encoding::pm1}) {
    Eigen::MatrixXd a(500, 11);
    a.leftCols(10) = dense_rows(masks, 0, 500, enc);
    a.col(10).setOnes();
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), 500);
    const Eigen::VectorXd want = a.colPivHouseholderQr().solve(yv);
    const auto fit = fit_ols(masks, y, OlsOptions{enc, true});
    EXPECT_LT((fit.coef - want.head(10)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(fit.intercept, want[10], 1e-9);
    EXPECT_FALSE(fit.min_norm);
  }
}

TEST(Ols, Pm1FitConvertsToBinaryDatamodel) {
  const auto masks = iid_bernoulli_masks(8, 0.5, 300, 31);
  Rng rng(32);
  std::vector<double> y(300);
  for (auto& v : y) v = rng.normal();
  const auto binary = fit_ols(masks, y, OlsOptions{Encoding::binary, true}).as_datamodel();
  const auto pm1 = fit_ols(masks, y, OlsOptions{Encoding::pm1, true}).as_datamodel();
  EXPECT_LT((binary.theta - pm1.theta).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(binary.bias, pm1.bias, 1e-9);
}

TEST(Ols, SingularGramFallsBackToPseudoinverse) {
  // column 1 duplicates column 0
  const auto masks = from_rows({{1, 1, 0}, {0, 0, 1}, {1, 1, 1}, {0, 0, 0}});
  const std::vector<double> y{2, 1, 3, 0};
  const auto fit = fit_ols(masks, y, OlsOptions{Encoding::binary, false});
  EXPECT_TRUE(fit.min_norm);
  EXPECT_NEAR(fit.coef[0], 1.0, 1e-9);
  EXPECT_NEAR(fit.coef[1], 1.0, 1e-9);
  EXPECT_NEAR(fit.coef[2], 1.0, 1e-9);
}

TEST(Ols, ExcludedRowsAreDropped) {
  const auto masks = from_rows({{1, 0}, {0, 1}, {1, 1}});
  OutputMatrix out(3, 1, OutputFn::margin, "t");
  out.set_value(0, 0, 3);
  out.set_value(1, 0, 5);
  out.set_value(2, 0, 100);
  out.set_excluded(2, 0);
  const auto fit = fit_ols(masks, out, 0, OlsOptions{Encoding::binary, false});
  EXPECT_NEAR(fit.coef[0], 3.0, 1e-6);
  EXPECT_NEAR(fit.coef[1], 5.0, 1e-6);
}

TEST(DiffOfMeans, TwoRowEnumeration) {
  const auto masks = from_rows({{1, 0}, {0, 1}});
  const std::vector<double> y{1, 0};
  const auto infl = diff_of_means_influence(masks, y);
  EXPECT_DOUBLE_EQ(infl[0], 1.0);
  EXPECT_DOUBLE_EQ(infl[1], -1.0);
}

TEST(DiffOfMeans, ConstantOutputsGiveZero) {
  const auto masks = sample_masks({8, 0.5, 1}, 100);
  const std::vector<double> y(100, 2.5);
  EXPECT_EQ(diff_of_means_influence(masks, y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DiffOfMeans, UndefinedCoordinatesListed) {
  const auto masks = from_rows({{1, 0, 1}, {1, 1, 0}});
  const std::vector<double> y{1, 2};
  try {
    diff_of_means_influence(masks, y);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(" 0"), std::string::npos);
  }
}

TEST(DiffOfMeans, RecoversPlantedOrdering) {
  const auto masks = sample_masks({6, 0.5, 40}, 50000);
  Eigen::VectorXd theta(6);
  theta << 0.3, -1.0, 2.0, 0.1, -0.4, 1.2;
  const auto y = planted_outputs(masks, theta, 0.0, 0.0, 0);
  const Eigen::VectorXd infl = diff_of_means_influence(masks, y);
  const std::vector<double> a(theta.data(), theta.data() + 6), b(infl.data(), infl.data() + 6);
  EXPECT_GT(*stats::spearman(a, b), 0.99);
}

TEST(EvalMse, PerfectAndConstantPredictors) {
  const auto masks = sample_masks({10, 0.5, 2}, 2000);
  Eigen::VectorXd theta(10);
  theta << 1, 2, 3, 4, 5, -1, -2, -3, -4, -5;
  const auto y = planted_outputs(masks, theta, 0.5, 0.0, 0);
  const auto outputs = column(y);
  Datamodel perfect{theta, 0.5};
  EXPECT_NEAR(eval_mse(std::span(&perfect, 1), masks, outputs).average, 0.0, 1e-9);

  std::vector<double> yf(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) yf[i] = outputs.value(i, 0);
  Datamodel constant{Eigen::VectorXd::Zero(10), stats::mean(yf)};
  const double var = stats::variance(yf) * (yf.size() - 1) / yf.size();
  EXPECT_NEAR(eval_mse(std::span(&constant, 1), masks, outputs).average, var / 2, 1e-6);
}

TEST(EvalMse, NoiseFloorIsHalfVariance) {
  const auto masks = sample_masks({10, 0.5, 3}, 200000);
  Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(10, -1, 1);
  const auto y = planted_outputs(masks, theta, 0.0, 0.1, 4);
  Datamodel truth{theta, 0.0};
  EXPECT_NEAR(eval_mse(std::span(&truth, 1), masks, column(y)).average, 0.005, 0.0002);
}

TEST(EvalOpt, DeterministicIsZeroAndNoiseIsRecovered) {
  const std::vector<Eigen::MatrixXd> none{Eigen::MatrixXd::Constant(5, 10, 3.0)};
  EXPECT_EQ(eval_opt(none), 0.0);

  std::vector<Eigen::MatrixXd> noisy;
  Rng rng(5);
  for (int s = 0; s < 20; ++s) {
    Eigen::MatrixXd r(20, 50);
    for (Index i = 0; i < r.size(); ++i) r.data()[i] = s + 0.2 * rng.normal();
    noisy.push_back(r);
  }
  // 20000 draws: se of the sample variance is about 0.04 * sqrt(2/20000)
  EXPECT_NEAR(eval_opt(noisy), 0.02, 3 * 0.5 * 0.04 * std::sqrt(2.0 / 20000));
  const std::vector<Eigen::MatrixXd> single{Eigen::MatrixXd::Zero(2, 1)};
  EXPECT_THROW(eval_opt(single), ValidationError);
}

TEST(Sparsity, Histogram) {
  std::vector<Datamodel> models(3);
  models[0].theta = Eigen::VectorXd::Zero(4);
  models[1].theta = Eigen::VectorXd::Ones(4);
  models[2].theta = Eigen::VectorXd::Zero(4);
  models[2].theta[1] = 0.5;
  const auto s = sparsity_stats(models);
  EXPECT_EQ(s.nonzeros, (std::vector<std::size_t>{0, 4, 1}));
  EXPECT_EQ(s.histogram.at(0), 1u);
  EXPECT_DOUBLE_EQ(s.mean, 5.0 / 3.0);
}
