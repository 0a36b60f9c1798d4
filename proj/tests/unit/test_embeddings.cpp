#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "datamodels/embeddings.hpp"
#include "datamodels/errors.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/stats.hpp"

using namespace dm;
using Eigen::Index;

namespace {

EmbeddingMatrix blobs(std::size_t per, std::size_t dim, std::size_t k, double noise, std::uint64_t seed,
                      std::vector<int>& truth) {
  Rng rng(seed);
  Eigen::MatrixXd centers(static_cast<Index>(k), static_cast<Index>(dim));
  for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = rng.normal();
  EmbeddingMatrix e;
  e.rows.resize(static_cast<Index>(per * k), static_cast<Index>(dim));
  truth.clear();
  for (std::size_t i = 0; i < per * k; ++i) {
    const auto c = static_cast<Index>(i % k);
    for (Index j = 0; j < static_cast<Index>(dim); ++j)
      e.rows(static_cast<Index>(i), j) = centers(c, j) + noise * rng.normal();
    truth.push_back(static_cast<int>(c));
  }
  return e;
}

}  // namespace

TEST(Embeddings, NormalizeKeepsZeroRows) {
  EmbeddingMatrix e;
  e.rows.resize(3, 2);
  e.rows << 3, 4, 0, 0, -1, 0;
  const auto n = e.normalize();
  EXPECT_TRUE(n.normalized);
  EXPECT_NEAR(n.rows.row(0).norm(), 1.0, 1e-15);
  EXPECT_EQ(n.rows.row(1).norm(), 0.0);
  EXPECT_EQ(n.zero_rows, (std::vector<std::size_t>{1}));
}

TEST(Similarity, RbfValues) {
  EmbeddingMatrix e;
  const double sigma = 0.7;
  e.rows.resize(3, 2);
  e.rows << 0, 0, 0, 0, std::sqrt(2 * sigma * sigma * std::log(2.0)), 0;
  const auto a = rbf_similarity(e, sigma);
  EXPECT_DOUBLE_EQ(a(0, 1), 1.0);
  EXPECT_NEAR(a(0, 2), 0.5, 1e-15);
  EXPECT_NEAR((a - a.transpose()).cwiseAbs().maxCoeff(), 0.0, 0.0);
}

TEST(Similarity, MedianPairwiseDistance) {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 3;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(x), 2.0);
}

TEST(KMeans, SeparatedPointsAndDeterminism) {
  std::vector<int> truth;
  const auto e = blobs(30, 5, 4, 0.05, 3, truth);
  const auto a = kmeans(e.rows, 4, 5, 11);
  const auto b = kmeans(e.rows, 4, 5, 11);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NEAR(stats::adjusted_rand_index(a.labels, truth), 1.0, 1e-12);
  EXPECT_EQ(a.labels[0], 0);
}

TEST(Spectral, IdealBlocksRecoveredExactly) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(7, 7);
  const std::vector<int> truth{0, 0, 0, 1, 1, 1, 1};
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 7; ++j) a(i, j) = truth[static_cast<std::size_t>(i)] == truth[static_cast<std::size_t>(j)];
  const auto r = spectral_cluster(a, SpectralConfig{2, 0, 10, 1});
  EXPECT_NEAR(stats::adjusted_rand_index(r.labels, truth), 1.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[0], 0.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[1], 0.0, 1e-12);
  EXPECT_FALSE(r.degree_floored);
}

TEST(Spectral, SingleClusterAndFlooredDegree) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(4, 4);
  a.row(3).setZero();
  a.col(3).setZero();
  const auto r = spectral_cluster(a, SpectralConfig{1, 0, 3, 0});
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_TRUE(r.degree_floored);
}

TEST(Spectral, PlantedBlobsRecovered) {
  std::vector<int> truth;
  const auto e = blobs(60, 40, 3, 0.4, 7, truth).normalize();
  const auto r = spectral_cluster(rbf_similarity(e), SpectralConfig{3, 0, 10, 5});
  EXPECT_GE(stats::adjusted_rand_index(r.labels, truth), 0.95);
}

TEST(Pca, PointsOnALine) {
  EmbeddingMatrix e;
  e.rows.resize(20, 2);
  for (Index i = 0; i < 20; ++i) {
    const double t = static_cast<double>(i) - 7.5;
    e.rows(i, 0) = 3 * t;
    e.rows(i, 1) = -4 * t;
  }
  const auto model = fit_pca(e, 2);
  EXPECT_NEAR(std::abs(model.components(0, 0)), 0.6, 1e-10);
  EXPECT_NEAR(std::abs(model.components(0, 1)), 0.8, 1e-10);
  EXPECT_GT(model.components(0, 1), 0.0);  // largest-magnitude entry is positive
  EXPECT_NEAR(explained_variance_curve(model)[0], 1.0, 1e-12);
  EXPECT_TRUE(model.rank_deficient);
}

TEST(Pca, MatchesSvdOracle) {
  Rng rng(4);
  EmbeddingMatrix e;
  e.rows.resize(80, 30);
  for (Index j = 0; j < 30; ++j) {
    const double s = 1.0 / (1.0 + j);
    for (Index i = 0; i < 80; ++i) e.rows(i, j) = s * rng.normal();
  }
  const auto model = fit_pca(e, 5, PcaConfig{.seed = 2});
  EXPECT_TRUE(model.converged);
  const Eigen::MatrixXd centered = e.rows.rowwise() - e.rows.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  for (Index k = 0; k < 5; ++k) {
    const double var = svd.singularValues()[k] * svd.singularValues()[k] / 79.0;
    EXPECT_NEAR(model.explained_variance[k], var, 1e-9 * var);
    EXPECT_NEAR(std::abs(model.components.row(k).dot(svd.matrixV().col(k))), 1.0, 1e-8);
  }
  EXPECT_NEAR(model.total_variance, centered.squaredNorm() / 79.0, 1e-10);
  const auto curve = explained_variance_curve(model);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i], curve[i - 1]);
  const auto full = fit_pca(e, 30);
  EXPECT_NEAR(explained_variance_curve(full).back(), 1.0, 1e-9);
  EXPECT_TRUE(explained_variance_curve(fit_pca(e, 0)).empty());
}

TEST(Pca, ExtremesSeparateBySign) {
  EmbeddingMatrix e;
  e.rows.resize(6, 3);
  Eigen::RowVector3d v(0.0, 1.0, 0.0);
  const double s[] = {2.0, -1.0, 1.0, -3.0, 0.5, -0.5};
  for (Index i = 0; i < 6; ++i) e.rows.row(i) = s[i] * v;
  const auto model = fit_pca(e, 1);
  const auto ex = pc_extremes(model, e, 0, 2);
  EXPECT_EQ(ex.top, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(ex.bottom, (std::vector<std::size_t>{3, 1}));
}

TEST(PcRemoval, EmptyAndOneHot) {
  PcaModel model;
  model.components = Eigen::MatrixXd::Zero(1, 5);
  model.components(0, 3) = 1.0;
  PcExtremes groups{{0, 1}, {2}};
  const auto none = pc_removal_spec(model, 0, 0, +1, groups, 4);
  EXPECT_TRUE(none.removed.empty());
  const auto one = pc_removal_spec(model, 0, 1, +1, groups, 4);
  EXPECT_EQ(one.removed, (std::vector<std::size_t>{3}));
  EXPECT_EQ(one.specs.size(), 7u);  // one per (group, target) pair
  for (const auto& s : one.specs) EXPECT_EQ(s.removed, one.removed);
}

TEST(Neighbors, OrderingAndNoSignal) {
  Datamodel d;
  d.theta = Eigen::Vector3d(0.1, -0.5, 0.3);
  EXPECT_EQ(top_weight_neighbors(d, 2, NeighborKey::magnitude).indices, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_weight_neighbors(d, 2, NeighborKey::positive).indices, (std::vector<std::size_t>{2, 0}));
  EXPECT_EQ(top_weight_neighbors(d, 1, NeighborKey::negative).indices, (std::vector<std::size_t>{1}));
  d.theta.setZero();
  const auto z = top_weight_neighbors(d, 2, NeighborKey::magnitude);
  EXPECT_TRUE(z.no_signal);
  EXPECT_EQ(z.indices, (std::vector<std::size_t>{0, 1}));
}
