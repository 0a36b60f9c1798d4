#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"
#include "datamodels/counterfactuals.hpp"

namespace dm {

/// One datamodel weight vector per row (targets x d).
struct EmbeddingMatrix {
  Eigen::MatrixXd rows;
  bool normalized = false;
  std::vector<std::size_t> zero_rows;  ///< rows left unscaled by normalize()

  static EmbeddingMatrix from_datamodels(std::span<const Datamodel> models);
  /// Copy with every nonzero row scaled to unit l2 norm.
  EmbeddingMatrix normalize() const;
};

/// Median distance over all pairs i < j.
double median_pairwise_distance(const Eigen::MatrixXd& rows);

/// A_ij = exp(-|phi_i - phi_j|^2 / (2 sigma^2)); sigma defaults to the median
/// pairwise distance.
Eigen::MatrixXd rbf_similarity(const EmbeddingMatrix& emb, std::optional<double> sigma = std::nullopt);

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; best of `restarts` by inertia.
/// Labels are renumbered in order of first appearance.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::size_t restarts,
                    std::uint64_t seed, std::size_t max_iter = 300);

struct SpectralConfig {
  std::size_t clusters = 2;
  std::size_t eigvecs = 0;  ///< 0 means one per cluster; capped at n
  std::size_t restarts = 10;
  std::uint64_t seed = 0;
};

struct SpectralResult {
  std::vector<int> labels;
  Eigen::VectorXd eigenvalues;  ///< of the normalized Laplacian, ascending
  bool degree_floored = false;
};

/// L = I - D^-1/2 A D^-1/2. Degrees below 1e-12 are floored.
Eigen::MatrixXd normalized_laplacian(const Eigen::MatrixXd& a, bool* floored = nullptr);

SpectralResult spectral_cluster(const Eigen::MatrixXd& a, const SpectralConfig& cfg);

struct PcaConfig {
  std::size_t oversample = 10;
  std::size_t max_iter = 1000;
  double tol = 1e-13;  ///< residual |C v - lambda v| relative to lambda_1
  std::uint64_t seed = 0;
};

struct PcaModel {
  Eigen::MatrixXd components;         ///< k x d, orthonormal rows
  Eigen::VectorXd explained_variance; ///< descending
  Eigen::VectorXd mean;
  double total_variance = 0.0;
  bool rank_deficient = false;        ///< some requested components carry no variance
  std::size_t iterations = 0;
  bool converged = false;
};

/// Top-k principal components by block subspace iteration with
/// Rayleigh-Ritz. Each component's largest-magnitude entry is positive.
PcaModel fit_pca(const EmbeddingMatrix& emb, std::size_t k, const PcaConfig& cfg = {});

/// Cumulative explained-variance fractions; entry i covers components 0..i.
std::vector<double> explained_variance_curve(const PcaModel& model);

/// Projections of the (normalized) embeddings onto the components, n x k.
Eigen::MatrixXd project(const PcaModel& model, const EmbeddingMatrix& emb);

struct PcExtremes {
  std::vector<std::size_t> top;     ///< highest projections first
  std::vector<std::size_t> bottom;  ///< lowest projections first
};

PcExtremes pc_extremes(const PcaModel& model, const EmbeddingMatrix& emb, std::size_t component,
                       std::size_t count);

struct PcRemoval {
  std::vector<std::size_t> removed;
  std::vector<std::size_t> positive_group;
  std::vector<std::size_t> negative_group;
  std::vector<std::size_t> all_targets;
  std::vector<CounterfactualSpec> specs;  ///< one removal spec per target in any group
};

/// Removes the k most positive (sign > 0) or most negative coordinates of
/// the component. `groups` supplies the evaluation groups.
PcRemoval pc_removal_spec(const PcaModel& model, std::size_t component, std::size_t k_remove,
                          int sign, const PcExtremes& groups, std::size_t n_targets,
                          std::size_t trials = 20);

enum class NeighborKey { positive, negative, magnitude };

struct Neighbors {
  std::vector<std::size_t> indices;
  bool no_signal = false;  ///< theta is all zero
};

Neighbors top_weight_neighbors(const Datamodel& dm, std::size_t count, NeighborKey key);

}  // namespace dm
