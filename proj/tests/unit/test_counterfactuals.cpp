#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "datamodels/counterfactuals.hpp"
#include "datamodels/errors.hpp"
#include "datamodels/rng.hpp"

using namespace dm;

namespace {

Datamodel model_of(std::initializer_list<double> theta) {
  Datamodel d;
  d.theta = Eigen::Map<const Eigen::VectorXd>(theta.begin(), static_cast<Eigen::Index>(theta.size()));
  return d;
}

}  // namespace

TEST(PredictEffect, SumsRemovedWeights) {
  const auto d = model_of({0.5, -0.2, 0.1});
  EXPECT_EQ(predict_effect(d, {}), 0.0);
  const std::vector<std::size_t> g{0, 2};
  EXPECT_NEAR(predict_effect(d, g), 0.6, 1e-15);
  auto biased = d;
  biased.bias = 7.0;
  const std::vector<std::size_t> all{0, 1, 2};
  EXPECT_NEAR(predict_effect(biased, all), 0.4, 1e-15);
}

TEST(SupportCurve, LinearInterpolationAndInflation) {
  const std::vector<std::size_t> k{10, 20};
  const std::vector<double> f{1.0, -1.0};
  const auto k_hat = interpolate_zero_crossing(k, f);
  ASSERT_TRUE(k_hat.has_value());
  EXPECT_DOUBLE_EQ(*k_hat, 15.0);
  EXPECT_EQ(inflate_support(*k_hat), 18u);
  EXPECT_EQ(inflate_support(0.0), 0u);
  EXPECT_EQ(inflate_support(10.0), 12u);
}

TEST(SupportCurve, AlreadyNegativeAndNeverCrossing) {
  const std::vector<std::size_t> k{0, 10};
  const std::vector<double> neg{-0.5, -1.0};
  EXPECT_EQ(*interpolate_zero_crossing(k, neg), 0.0);
  const std::vector<double> pos{1.0, 0.2};
  EXPECT_FALSE(interpolate_zero_crossing(k, pos).has_value());
}

TEST(Heuristic, CumulativeWeights) {
  Eigen::VectorXd theta(3);
  theta << 0.5, 0.4, 0.1;
  EXPECT_EQ(*heuristic_support(theta, 0.85), 2u);
  EXPECT_EQ(*heuristic_support(theta, -0.1), 0u);
  EXPECT_EQ(*heuristic_support(theta, 0.0), 0u);
  EXPECT_FALSE(heuristic_support(theta, 5.0).has_value());
}

TEST(Groups, TopAndBottomAreNested) {
  Eigen::VectorXd theta(6);
  theta << 0.3, -0.1, 0.3, 0.9, -0.7, 0.0;
  EXPECT_EQ(top_k_group(theta, 3), (std::vector<std::size_t>{3, 0, 2}));
  EXPECT_EQ(bottom_k_group(theta, 2), (std::vector<std::size_t>{4, 1}));
  EXPECT_TRUE(top_k_group(theta, 0).empty());
  const auto a = top_k_group(theta, 2);
  const auto b = top_k_group(theta, 5);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Baselines, EmptyDuplicateAndSameClass) {
  Eigen::MatrixXd x(5, 2);
  x << 0, 0, 1, 1, 5, 5, 2, 2, -3, 1;
  const TrainingSet data(x, {0, 1, 0, 1, 0}, 2);
  Eigen::RowVectorXd q(2);
  q << 5, 5;
  EXPECT_TRUE(baseline_group(BaselineSelector::feature_distance, data, q, 0, 0, 1).empty());
  EXPECT_EQ(baseline_group(BaselineSelector::feature_distance, data, q, 0, 2, 1),
            (std::vector<std::size_t>{2, 3}));
  const auto r = baseline_group(BaselineSelector::random_same_class, data, q, 0, 3, 9);
  EXPECT_EQ(std::set<std::size_t>(r.begin(), r.end()), (std::set<std::size_t>{0, 2, 4}));
  const auto r2 = baseline_group(BaselineSelector::random_same_class, data, q, 0, 2, 9);
  EXPECT_TRUE(std::equal(r2.begin(), r2.end(), r.begin()));
  EXPECT_ANY_THROW(baseline_group(BaselineSelector::random_same_class, data, q, 0, 4, 9));
}

TEST(Groups, ZeroWeightGroupOnlyPicksZeros) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(50);
  for (int j = 0; j < 50; j += 3) theta[j] = 1.0;
  const auto g = zero_weight_group(theta, 10, 4);
  EXPECT_EQ(g.size(), 10u);
  for (auto j : g) EXPECT_EQ(theta[static_cast<Eigen::Index>(j)], 0.0);
}

TEST(EvalEffect, ZeroImpactRemovalIsExactlyZero) {
  Eigen::MatrixXd theta(1, 8);
  theta << 0.5, 0.0, 0.25, 0.0, 1.0, 0.0, 0.0, 0.0;
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Constant(1, -0.5), 0.0);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  const auto control = estimate_control(data, trainer, OutputFn::margin, targets, 1, 3);
  CounterfactualSpec spec;
  spec.removed = {1, 3, 5};
  Datamodel dm;
  dm.theta = theta.row(0).transpose();
  const auto r = eval_effect(spec, &dm, data, trainer, OutputFn::margin, targets, control, 3);
  EXPECT_EQ(r.actual, 0.0);
  EXPECT_EQ(r.predicted, 0.0);
  EXPECT_EQ(r.trials, 1u);
}

TEST(EvalEffect, PlantedNoisyLearnerMatchesPrediction) {
  Rng rng(12);
  Eigen::MatrixXd theta(2, 40);
  for (Eigen::Index j = 0; j < 40; ++j) {
    theta(0, j) = 0.1 * rng.normal();
    theta(1, j) = 0.1 * rng.normal();
  }
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Zero(2), 0.5);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  const auto control = estimate_control(data, trainer, OutputFn::margin, targets, 30, 5);
  Datamodel dm;
  dm.theta = theta.row(1).transpose();
  CounterfactualSpec spec;
  spec.target = 1;
  spec.removed = top_k_group(dm.theta, 8);
  spec.trials = 30;
  const auto r = eval_effect(spec, &dm, data, trainer, OutputFn::margin, targets, control, 5);
  EXPECT_EQ(r.trials, 30u);
  // paired trials share the noise draw, so the difference is exact
  EXPECT_NEAR(r.actual, r.predicted, 1e-9);

  spec.mode = CounterfactualMode::random_control;
  spec.alpha = 0.5;
  const auto rc_control = estimate_control(data, trainer, OutputFn::margin, targets, 200, 5, 0.5);
  spec.trials = 200;
  const auto rc = eval_effect(spec, &dm, data, trainer, OutputFn::margin, targets, rc_control, 5);
  EXPECT_NEAR(rc.predicted, 0.5 * predict_effect(dm, spec.removed), 1e-12);
  EXPECT_NEAR(rc.actual, rc.predicted, 4 * rc.se + 1e-9);
}

TEST(EvalEffect, RemovingEverythingIsAnError) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Ones(1, 3);
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Zero(1), 0.0);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  const auto control = estimate_control(data, trainer, OutputFn::margin, targets, 1, 0);
  CounterfactualSpec spec;
  spec.removed = {0, 1, 2};
  EXPECT_THROW(eval_effect(spec, nullptr, data, trainer, OutputFn::margin, targets, control, 0),
               ValidationError);
}

TEST(ControlCache, ReusesIdenticalRequests) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Ones(1, 4);
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Zero(1), 0.1);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  ControlCache cache;
  const auto& a = cache.get(data, trainer, OutputFn::margin, targets, 5, 1);
  const auto& b = cache.get(data, trainer, OutputFn::margin, targets, 5, 1);
  EXPECT_EQ(&a, &b);
  cache.get(data, trainer, OutputFn::margin, targets, 5, 2);
  EXPECT_EQ(cache.size(), 2u);
}

TEST(Support, PlantedLinearCurveCrossesAtFifty) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 100, 0.125);
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Constant(1, -6.25), 0.0);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  const auto control = estimate_control(data, trainer, OutputFn::margin, targets, 1, 0);
  Datamodel dm;
  dm.theta = theta.row(0).transpose();
  const std::vector<std::size_t> grid{10, 20, 40, 80};
  const auto est = estimate_support(dm, data, trainer, OutputFn::margin, targets, 0, control, grid, 1, 0);
  EXPECT_FALSE(est.unbounded);
  EXPECT_NEAR(est.k_hat, 50.0, 1e-9);
  EXPECT_EQ(est.k_reported, 60u);
  EXPECT_EQ(est.curve.front().k, 0u);
  for (std::size_t i = 1; i < est.curve.size(); ++i)
    EXPECT_LE(est.curve[i].fitted, est.curve[i - 1].fitted);

  const auto flip = removal_flip_k(dm, data, trainer, OutputFn::margin, targets, 0, grid, 1, 0);
  EXPECT_EQ(*flip, 80u);
  EXPECT_EQ(*heuristic_support(dm.theta, control.mean(0)), 51u);
}

TEST(Support, UnboundedWhenGridTooShort) {
  Eigen::MatrixXd theta = Eigen::MatrixXd::Constant(1, 100, 0.1);
  const PlantedLinearTrainer trainer(theta, Eigen::VectorXd::Constant(1, -5.0), 0.0);
  const auto data = trainer.placeholder_training_set();
  const auto targets = trainer.targets();
  const auto control = estimate_control(data, trainer, OutputFn::margin, targets, 1, 0);
  Datamodel dm;
  dm.theta = theta.row(0).transpose();
  const std::vector<std::size_t> grid{10, 20};
  const auto est = estimate_support(dm, data, trainer, OutputFn::margin, targets, 0, control, grid, 1, 0);
  EXPECT_TRUE(est.unbounded);
}

TEST(CounterfactualCsv, HeaderAndRow) {
  std::ostringstream out;
  const std::vector<CounterfactualRecord> rec{{3, CounterfactualMode::remove, 10, 0.5, 0.25, 0.1, 20, "top"}};
  write_counterfactual_csv(out, rec);
  EXPECT_EQ(out.str(), "target_id,mode,k,predicted,actual,se,T,group\n3,remove,10,0.5,0.25,0.10000000000000001,20,top\n");
}
