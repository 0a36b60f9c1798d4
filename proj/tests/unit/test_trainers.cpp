#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "datamodels/errors.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/trainers.hpp"

using namespace dm;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Two blobs separated by the hyperplane x0 = 0 with margin >= 1.
TrainingSet separable_blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double center = c == 0 ? -3.0 : 3.0;
    double x0 = center + 0.5 * rng.normal();
    if (c == 0) x0 = std::min(x0, -1.0);
    else x0 = std::max(x0, 1.0);
    x(static_cast<Eigen::Index>(i), 0) = x0;
    x(static_cast<Eigen::Index>(i), 1) = rng.normal();
    y[i] = c;
  }
  return TrainingSet(x, y, 2);
}

}  // namespace

TEST(MinNorm, IdentityDesign) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd y(2);
  y << 2, 3;
  const auto model = train_minnorm_linear(x, y);
  EXPECT_NEAR(model.weights()(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(model.weights()(1, 0), 3.0, 1e-12);
  Eigen::MatrixXd q(1, 2);
  q << 1, 1;
  EXPECT_NEAR(model.scores(q)(0, 0), 5.0, 1e-12);
}

TEST(MinNorm, UnderdeterminedPicksSmallestNorm) {
  Eigen::MatrixXd x(1, 2);
  x << 1, 1;
  Eigen::VectorXd y(1);
  y << 2;
  const auto model = train_minnorm_linear(x, y);
  EXPECT_NEAR(model.weights()(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(model.weights()(1, 0), 1.0, 1e-12);
}

TEST(MinNorm, MatchesOrthogonalDecompositionPseudoinverse) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    // rank 3 matrices of assorted shapes
    const Eigen::Index r = 4 + static_cast<Eigen::Index>(s % 5);
    const Eigen::Index c = 9 - static_cast<Eigen::Index>(s % 4);
    const Eigen::MatrixXd x = random_matrix(r, 3, 2 * s) * random_matrix(3, c, 2 * s + 1);
    const Eigen::MatrixXd y = random_matrix(r, 2, 100 + s);
    const Eigen::MatrixXd want = x.completeOrthogonalDecomposition().pseudoInverse() * y;
    EXPECT_LT((minnorm_solve(x, y) - want).norm(), 1e-9 * (1.0 + want.norm())) << "seed " << s;
  }
}

TEST(MinNorm, KernelAgreesWithExplicitSolve) {
  const Eigen::MatrixXd x = random_matrix(30, 12, 5);
  const Eigen::VectorXd y = random_matrix(30, 1, 6).col(0);
  const Eigen::MatrixXd targets = random_matrix(7, 12, 7);
  const MinNormKernel kernel(x, y, targets);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto mask = sample_subset({30, s % 2 ? 0.3 : 0.7, 11}, s);
    std::vector<Eigen::Index> rows;
    mask.view().for_each_set([&](std::size_t i) { rows.push_back(static_cast<Eigen::Index>(i)); });
    const auto model = train_minnorm_linear(x(rows, Eigen::all), y(rows));
    const Eigen::VectorXd want = model.scores(targets).col(0);
    EXPECT_LT((kernel.predict(mask.view()) - want).norm(), 1e-8 * (1.0 + want.norm()));
  }
}

TEST(MinNorm, SingleRowInterpolates) {
  const Eigen::MatrixXd x = random_matrix(5, 4, 9);
  Eigen::VectorXd y(5);
  y << 1, -2, 3, 0.5, 4;
  const TrainingSet data(x, std::vector<double>(y.data(), y.data() + 5));
  const MinNormTrainer trainer;
  const auto model = trainer.train(data, SubsetMask::from_indices(std::vector<std::size_t>{2}, 5).view(), 0);
  EXPECT_NEAR(model->scores(x.row(2))(0, 0), 3.0, 1e-10);
}

TEST(OutputFunctions, MarginAndCorrectness) {
  Eigen::RowVectorXd s(3);
  s << 2.0, 0.5, -1.0;
  EXPECT_DOUBLE_EQ(output_from_scores(s, 0, OutputFn::margin), 1.5);
  EXPECT_DOUBLE_EQ(output_from_scores(s, 1, OutputFn::margin), -1.5);
  EXPECT_DOUBLE_EQ(output_from_scores(s, 1, OutputFn::correctness), 0.0);
  EXPECT_DOUBLE_EQ(output_from_scores(s, 0, OutputFn::correctness), 1.0);
}

TEST(OutputFunctions, TieIsMisclassified) {
  Eigen::RowVectorXd s(2);
  s << 1.0, 1.0;
  EXPECT_DOUBLE_EQ(output_from_scores(s, 0, OutputFn::margin), 0.0);
  EXPECT_DOUBLE_EQ(output_from_scores(s, 0, OutputFn::correctness), 0.0);
}

TEST(OutputFunctions, ConfidenceAndCrossEntropy) {
  Eigen::RowVectorXd s(3);
  s << 2.0, 0.5, -1.0;
  const double z = std::exp(2.0) + std::exp(0.5) + std::exp(-1.0);
  EXPECT_NEAR(output_from_scores(s, 1, OutputFn::confidence), std::exp(0.5) / z, 1e-14);
  EXPECT_NEAR(output_from_scores(s, 1, OutputFn::xent), -std::log(std::exp(0.5) / z), 1e-12);
}

TEST(OutputFunctions, SingleClassModelRejectsMargin) {
  Eigen::RowVectorXd s(1);
  s << 0.7;
  EXPECT_THROW(output_from_scores(s, 0, OutputFn::margin), NumericError);
  EXPECT_DOUBLE_EQ(output_from_scores(s, 0, OutputFn::prediction), 0.7);
}

TEST(Logistic, SeparableBlobsFitPerfectly) {
  const auto data = separable_blobs(200, 3);
  const LogisticTrainer trainer(LogisticConfig{.epochs = 30});
  const auto model = trainer.train(data, SubsetMask::full(200).view(), 17);
  const Eigen::MatrixXd s = model->scores(data.features());
  for (std::size_t i = 0; i < 200; ++i) {
    Eigen::Index pred;
    s.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred);
    ASSERT_EQ(pred, data.label(i)) << "row " << i;
  }
}

TEST(Logistic, SameSubsetAndSeedGiveIdenticalLogits) {
  const auto data = separable_blobs(100, 4);
  const LogisticTrainer trainer;
  const auto mask = sample_subset({100, 0.5, 1}, 0);
  const auto a = trainer.train(data, mask.view(), 99)->scores(data.features());
  const auto b = trainer.train(data, mask.view(), 99)->scores(data.features());
  EXPECT_EQ(a, b);
  const auto c = trainer.train(data, mask.view(), 100)->scores(data.features());
  EXPECT_NE(a, c);
}

TEST(Logistic, ZeroEpochsKeepsInitialization) {
  const auto data = separable_blobs(50, 5);
  const LogisticTrainer zero_init(LogisticConfig{.epochs = 0, .init_scale = 0.0});
  const auto s = zero_init.train(data, SubsetMask::full(50).view(), 1)->scores(data.features());
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);

  const LogisticTrainer no_training(LogisticConfig{.epochs = 0});
  const auto a = no_training.train(data, sample_subset({50, 0.5, 2}, 0).view(), 8);
  const auto b = no_training.train(data, sample_subset({50, 0.5, 2}, 1).view(), 8);
  EXPECT_EQ(a->scores(data.features()), b->scores(data.features()));
}

TEST(Logistic, SingleClassSubsetIsFlagged) {
  const auto data = separable_blobs(20, 6);
  const LogisticTrainer trainer;
  const std::vector<std::size_t> evens{0, 2, 4, 6};
  EXPECT_TRUE(trainer.train(data, SubsetMask::from_indices(evens, 20).view(), 0)->degenerate());
  EXPECT_THROW(trainer.train(data, SubsetMask(20).view(), 0), ValidationError);
}

TEST(Trainers, FactoryRejectsUnknownIds) {
  EXPECT_EQ(make_trainer("minnorm", {})->id(), "minnorm");
  EXPECT_EQ(make_trainer("logistic", {{"epochs", 3}})->id(), "logistic");
  EXPECT_THROW(make_trainer("gbdt", {}), ValidationError);
}

TEST(Campaign, RowsMatchDirectTraining) {
  const Eigen::MatrixXd x = random_matrix(4, 3, 21);
  const TrainingSet data(x, std::vector<double>{1.0, -1.0, 0.5, 2.0});
  const auto targets = TargetSet::from_examples(random_matrix(3, 3, 22), {0, 0, 0});
  const MinNormTrainer trainer;
  const OutputFn fn = OutputFn::prediction;
  const SubsetDistribution dist{4, 0.5, 31};
  const auto result = run_training_campaign(data, dist, 2, trainer, std::span(&fn, 1), targets, 5);
  ASSERT_EQ(result.outputs.size(), 1u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto mask = sample_subset(dist, i);
    EXPECT_EQ(SubsetMask::from_indices(result.masks.row(i).indices(), 4), mask);
    const auto model = trainer.train(data, mask.view(), training_seed(5, i));
    const Eigen::VectorXd want = evaluate_outputs(*model, targets, fn);
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_FLOAT_EQ(result.outputs[0].value(i, j), static_cast<float>(want[static_cast<Eigen::Index>(j)]));
  }
}

TEST(Campaign, ExclusionTracksMembership) {
  const auto data = separable_blobs(12, 7);
  const std::vector<std::size_t> idx{0, 3, 5, 11};
  const auto targets = TargetSet::from_training(data, idx);
  const LogisticTrainer trainer(LogisticConfig{.epochs = 2});
  const OutputFn fn = OutputFn::margin;
  const auto result =
      run_training_campaign(data, {12, 0.5, 3}, 40, trainer, std::span(&fn, 1), targets, 9);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < idx.size(); ++j)
      ASSERT_EQ(result.outputs[0].excluded(i, j), result.masks.row(i).test(idx[j]));

  const auto held = TargetSet::from_examples(data.features().topRows(2), {0, 1});
  const auto r2 = run_training_campaign(data, {12, 0.5, 3}, 10, trainer, std::span(&fn, 1), held, 9);
  EXPECT_FALSE(r2.outputs[0].any_excluded_in_column(0));
}

TEST(Campaign, ResumeReproducesUninterruptedRun) {
  const auto data = separable_blobs(30, 8);
  const auto targets = TargetSet::from_examples(data.features().topRows(5), {0, 1, 0, 1, 0});
  const LogisticTrainer trainer(LogisticConfig{.epochs = 3});
  const std::vector<OutputFn> fns{OutputFn::margin, OutputFn::confidence};
  const SubsetDistribution dist{30, 0.5, 4};
  const auto full = run_training_campaign(data, dist, 25, trainer, fns, targets, 3, 2);

  CampaignResult prefix{full.masks.slice(0, 11), {full.outputs[0].slice(0, 11), full.outputs[1].slice(0, 11)}};
  std::size_t checkpoints = 0;
  const auto resumed = run_training_campaign(data, dist, 25, trainer, fns, targets, 3, 1, &prefix,
                                             [&](const CampaignResult&) { ++checkpoints; }, 4);
  EXPECT_EQ(resumed.masks, full.masks);
  EXPECT_EQ(resumed.outputs, full.outputs);
  EXPECT_GT(checkpoints, 0u);
}

TEST(Campaign, RepeatOutputsVaryOnlyForStochasticTrainers) {
  const auto data = separable_blobs(30, 9);
  const auto targets = TargetSet::from_examples(data.features().topRows(3), {0, 1, 0});
  const OutputFn fn = OutputFn::margin;
  const auto mask = sample_subset({30, 0.5, 2}, 0);
  const auto logistic = repeat_outputs(data, mask.view(), LogisticTrainer{}, std::span(&fn, 1), targets, 4, 1);
  const auto& m = logistic.at(fn);
  ASSERT_EQ(m.rows(), 3);
  ASSERT_EQ(m.cols(), 4);
  EXPECT_GT((m.col(0) - m.col(1)).norm(), 0.0);
}

TEST(NormalityScreen, PrefersGaussianFunction) {
  const std::size_t t = 200;
  Eigen::MatrixXd gauss(10, t), binary(10, t);
  for (Eigen::Index r = 0; r < 10; ++r) {
    Rng rng(derive_key(44, static_cast<std::uint64_t>(r)));
    for (std::size_t c = 0; c < t; ++c) {
      gauss(r, static_cast<Eigen::Index>(c)) = rng.normal();
      binary(r, static_cast<Eigen::Index>(c)) = rng.bernoulli(0.5);
    }
  }
  const auto screen = normality_screen({{OutputFn::margin, gauss}, {OutputFn::correctness, binary}});
  EXPECT_EQ(screen.recommended, OutputFn::margin);
  for (const auto& r : screen.per_target.at(OutputFn::correctness)) EXPECT_LT(r.p_value, 0.001);
  EXPECT_LT(screen.ks_to_uniform.at(OutputFn::margin), screen.ks_to_uniform.at(OutputFn::correctness));
}

TEST(NormalityScreen, ConstantSamplesSaturate) {
  const auto screen = normality_screen({{OutputFn::margin, Eigen::MatrixXd::Constant(2, 30, 1.0)}});
  for (const auto& r : screen.per_target.at(OutputFn::margin)) {
    EXPECT_TRUE(r.saturated);
    EXPECT_EQ(r.p_value, 0.0);
  }
}
