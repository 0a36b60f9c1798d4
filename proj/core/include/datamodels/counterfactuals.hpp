#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"
#include "datamodels/trainers.hpp"

namespace dm {

enum class CounterfactualMode { remove, mislabel, random_control };

std::string_view to_string(CounterfactualMode mode) noexcept;
CounterfactualMode parse_counterfactual_mode(std::string_view name);

struct CounterfactualSpec {
  std::size_t target = 0;  ///< row of the TargetSet
  std::vector<std::size_t> removed;
  CounterfactualMode mode = CounterfactualMode::remove;
  int to_class = -1;        ///< mislabel mode only
  double alpha = 0.5;       ///< random_control subsampling fraction
  std::size_t trials = 20;
  std::string group;        ///< free-form label carried into the CSV
};

/// Outputs of T trainings on the control set: the full training set, or an
/// alpha-subsample of it (random controls). Column t of `samples` used the
/// trial seed t, which treatment trainings reuse so that trials pair up.
struct ControlStats {
  Eigen::MatrixXd samples;  ///< targets x T
  double alpha = 1.0;
  std::size_t trials() const noexcept { return static_cast<std::size_t>(samples.cols()); }
  double mean(std::size_t target) const { return samples.row(static_cast<Eigen::Index>(target)).mean(); }
};

/// Per-trial seed shared by control and treatment trainings.
std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial);

ControlStats estimate_control(const TrainingSet& data, const LearningAlgorithm& trainer,
                              OutputFn fn, const TargetSet& targets, std::size_t trials,
                              std::uint64_t seed, double alpha = 1.0, std::size_t workers = 1);

/// Control statistics keyed by (trainer, hyperparameters, fn, alpha, T, seed).
class ControlCache {
 public:
  const ControlStats& get(const TrainingSet& data, const LearningAlgorithm& trainer,
                          OutputFn fn, const TargetSet& targets, std::size_t trials,
                          std::uint64_t seed, double alpha = 1.0, std::size_t workers = 1);
  std::size_t size() const noexcept { return cache_.size(); }

 private:
  std::map<std::string, ControlStats> cache_;
};

/// Predicted drop in the target's output when `removed` leaves the training
/// set: the sum of theta over the removed indices.
double predict_effect(const Datamodel& dm, std::span<const std::size_t> removed);

struct CounterfactualResult {
  double predicted = 0.0;  ///< NaN in mislabel mode
  double actual = 0.0;     ///< control mean minus treated mean
  double se = 0.0;         ///< standard error of the paired trial differences
  std::size_t trials = 0;  ///< trainings actually run per arm
};

/// Ground-truth effect of a spec. Deterministic trainers in remove or
/// mislabel mode run a single trial. In random_control mode the predicted
/// effect is alpha * sum of theta over the removed set.
CounterfactualResult eval_effect(const CounterfactualSpec& spec, const Datamodel* dm,
                                 const TrainingSet& data, const LearningAlgorithm& trainer,
                                 OutputFn fn, const TargetSet& targets,
                                 const ControlStats& control, std::uint64_t seed,
                                 std::size_t workers = 1);

struct SupportPoint {
  std::size_t k = 0;
  double mean = 0.0;    ///< measured mean output after removing G_k
  double fitted = 0.0;  ///< isotonic (non-increasing) fit
};

struct SupportEstimate {
  std::size_t target = 0;
  std::vector<SupportPoint> curve;  ///< starts with k = 0 (the control)
  double k_hat = 0.0;
  std::size_t k_reported = 0;
  bool unbounded = false;  ///< fitted curve never reaches 0 on the grid
  bool certified = false;
  double certified_mean = 0.0;
};

inline const std::vector<std::size_t> kDefaultSupportGrid{10, 20, 40, 80, 160, 320, 640, 1280};

/// Indices of the k largest theta entries, ties by lower index. Nested in k.
std::vector<std::size_t> top_k_group(const Eigen::VectorXd& theta, std::size_t k);
/// Indices of the k smallest (most negative) theta entries.
std::vector<std::size_t> bottom_k_group(const Eigen::VectorXd& theta, std::size_t k);

/// Zero crossing of a curve already fitted to be non-increasing. Returns
/// nullopt when no point is <= 0; the first point is at index 0.
std::optional<double> interpolate_zero_crossing(std::span<const std::size_t> k,
                                                std::span<const double> fitted);

/// ceil(1.2 * k_hat), robust to floating error in the product.
std::size_t inflate_support(double k_hat);

SupportEstimate estimate_support(const Datamodel& dm, const TrainingSet& data,
                                 const LearningAlgorithm& trainer, OutputFn fn,
                                 const TargetSet& targets, std::size_t target,
                                 const ControlStats& control,
                                 std::span<const std::size_t> k_grid, std::size_t trials,
                                 std::uint64_t seed, std::size_t workers = 1);

/// Smallest k whose k largest theta entries sum past the control margin;
/// nullopt when no prefix does.
std::optional<std::size_t> heuristic_support(const Eigen::VectorXd& theta, double control_margin);

/// Smallest k for which mislabeling G_k (to `to_class`) drives the mean
/// output to <= 0; nullopt when no grid value does.
std::optional<std::size_t> mislabel_flip_k(const Datamodel& dm, const TrainingSet& data,
                                           const LearningAlgorithm& trainer, OutputFn fn,
                                           const TargetSet& targets, std::size_t target,
                                           int to_class, std::span<const std::size_t> k_grid,
                                           std::size_t trials, std::uint64_t seed,
                                           std::size_t workers = 1);

/// Same, removing G_k instead of mislabeling it.
std::optional<std::size_t> removal_flip_k(const Datamodel& dm, const TrainingSet& data,
                                          const LearningAlgorithm& trainer, OutputFn fn,
                                          const TargetSet& targets, std::size_t target,
                                          std::span<const std::size_t> k_grid,
                                          std::size_t trials, std::uint64_t seed,
                                          std::size_t workers = 1);

enum class BaselineSelector { random_same_class, feature_distance };

/// random_same_class: a seeded ordering of training examples sharing the
/// target's label, truncated to k (prefixes agree across k).
/// feature_distance: the k training examples closest in l2 feature distance.
std::vector<std::size_t> baseline_group(BaselineSelector selector, const TrainingSet& data,
                                        const Eigen::RowVectorXd& target_features,
                                        int target_label, std::size_t k, std::uint64_t seed);

/// k indices drawn at random from those with |theta| <= tol.
std::vector<std::size_t> zero_weight_group(const Eigen::VectorXd& theta, std::size_t k,
                                           std::uint64_t seed, double tol = 0.0);

struct CounterfactualRecord {
  std::uint64_t target_id = 0;
  CounterfactualMode mode = CounterfactualMode::remove;
  std::size_t k = 0;
  double predicted = 0.0;
  double actual = 0.0;
  double se = 0.0;
  std::size_t trials = 0;
  std::string group;
};

void write_counterfactual_csv(std::ostream& out, std::span<const CounterfactualRecord> records);

}  // namespace dm
