#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "datamodels/core_data.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/stats.hpp"

namespace dm {

using Hyperparameters = std::map<std::string, double>;

/// Singular values below this fraction of the largest are treated as zero.
inline constexpr double kPinvCutoff = 1e-10;

/// Examples on which trained models are evaluated. A target that is itself a
/// training example records its training index, which drives the exclusion
/// channel of the output matrix.
struct TargetSet {
  Eigen::MatrixXd features;  ///< one row per target
  std::vector<int> labels;
  std::vector<std::optional<std::size_t>> train_index;

  std::size_t size() const noexcept { return labels.size(); }

  static TargetSet from_training(const TrainingSet& data,
                                 std::span<const std::size_t> indices);
  static TargetSet from_examples(Eigen::MatrixXd features, std::vector<int> labels);
};

/// A model produced by a learning algorithm. Evaluation is pure.
class TrainedModel {
 public:
  virtual ~TrainedModel() = default;
  /// 1 for scalar regressors, the class count for classifiers.
  virtual int num_classes() const = 0;
  /// Per-class scores (logits), one row per input row.
  virtual Eigen::MatrixXd scores(const Eigen::MatrixXd& inputs) const = 0;
  /// True when training saw a degenerate subset (e.g. a single class).
  virtual bool degenerate() const { return false; }
};

/// Affine model: scores = inputs * weights + bias.
class LinearModel final : public TrainedModel {
 public:
  LinearModel(Eigen::MatrixXd weights, Eigen::RowVectorXd bias,
              bool degenerate = false)
      : weights_(std::move(weights)), bias_(std::move(bias)),
        degenerate_(degenerate) {}

  int num_classes() const override { return static_cast<int>(weights_.cols()); }
  Eigen::MatrixXd scores(const Eigen::MatrixXd& inputs) const override;
  bool degenerate() const override { return degenerate_; }

  const Eigen::MatrixXd& weights() const noexcept { return weights_; }
  const Eigen::RowVectorXd& bias() const noexcept { return bias_; }

 private:
  Eigen::MatrixXd weights_;  ///< dim x outputs
  Eigen::RowVectorXd bias_;
  bool degenerate_;
};

/// A learning algorithm A: maps a training subset (and a seed) to a model.
class LearningAlgorithm {
 public:
  virtual ~LearningAlgorithm() = default;
  virtual std::string id() const = 0;
  virtual bool deterministic() const = 0;
  virtual Hyperparameters hyperparameters() const { return {}; }
  virtual std::unique_ptr<TrainedModel> train(const TrainingSet& data,
                                              MaskView subset,
                                              std::uint64_t seed) const = 0;
};

/// Minimum-norm solution W = pinv(X) Y of X W = Y, via SVD with the
/// kPinvCutoff rank rule. Never throws on rank deficiency.
Eigen::MatrixXd minnorm_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// Min-norm least squares without bias: w = X^T (X X^T)^+ y.
LinearModel train_minnorm_linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// Regresses responses (or one-hot labels for classification sets) on the
/// subset rows with the min-norm rule. Deterministic.
class MinNormTrainer final : public LearningAlgorithm {
 public:
  std::string id() const override { return "minnorm"; }
  bool deterministic() const override { return true; }
  std::unique_ptr<TrainedModel> train(const TrainingSet& data, MaskView subset,
                                      std::uint64_t seed) const override;
};

/// Multinomial logistic regression trained by seeded minibatch SGD.
/// Randomness enters through the weight initialization and the minibatch
/// order only.
struct LogisticConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  double l2 = 1e-4;
  double init_scale = 0.01;
};

class LogisticTrainer final : public LearningAlgorithm {
 public:
  explicit LogisticTrainer(LogisticConfig cfg = {}) : cfg_(cfg) {}
  static LogisticTrainer from_hyperparameters(const Hyperparameters& hp);

  std::string id() const override { return "logistic"; }
  bool deterministic() const override { return false; }
  Hyperparameters hyperparameters() const override;
  std::unique_ptr<TrainedModel> train(const TrainingSet& data, MaskView subset,
                                      std::uint64_t seed) const override;

  const LogisticConfig& config() const noexcept { return cfg_; }

 private:
  LogisticConfig cfg_;
};

/// Synthetic learner whose margin on target t is exactly
/// theta_star[t] . 1_S + bias[t] + N(0, noise_sd^2). Targets are addressed by
/// id: the first feature of a target row is its row index into theta_star.
/// Scores are the two logits (margin, 0), so every output function applies
/// with label 0.
class PlantedLinearTrainer final : public LearningAlgorithm {
 public:
  PlantedLinearTrainer(Eigen::MatrixXd theta_star, Eigen::VectorXd bias,
                       double noise_sd);

  std::string id() const override { return "planted"; }
  bool deterministic() const override { return noise_sd_ == 0.0; }
  Hyperparameters hyperparameters() const override { return {{"noise_sd", noise_sd_}}; }
  std::unique_ptr<TrainedModel> train(const TrainingSet& data, MaskView subset,
                                      std::uint64_t seed) const override;

  const Eigen::MatrixXd& theta_star() const noexcept { return theta_; }
  const Eigen::VectorXd& bias() const noexcept { return bias_; }
  double noise_sd() const noexcept { return noise_sd_; }

  /// Expected margin of every target for a subset.
  Eigen::VectorXd expected_margins(MaskView subset) const;
  /// Target set addressing targets 0..n-1 (label 0 each).
  TargetSet targets() const;
  /// A training set of d placeholder examples (one class-0 feature each).
  TrainingSet placeholder_training_set() const;

 private:
  Eigen::MatrixXd theta_;  ///< targets x d
  Eigen::VectorXd bias_;
  double noise_sd_;
};

std::unique_ptr<LearningAlgorithm> make_trainer(const std::string& id,
                                                const Hyperparameters& hp);

/// Applies an output function to a model on a set of targets.
Eigen::VectorXd evaluate_outputs(const TrainedModel& model,
                                 const TargetSet& targets, OutputFn fn);

/// Output function applied to one row of scores.
double output_from_scores(const Eigen::Ref<const Eigen::RowVectorXd>& scores,
                          int label, OutputFn fn);

/// Fast batched evaluation of the min-norm regressor restricted to many
/// subsets of one training pool: f(x_t; S) = k(x_t, X_S) (X_S X_S^T)^-1 y_S.
/// Falls back to the SVD pseudoinverse when X_S X_S^T is ill-conditioned.
class MinNormKernel {
 public:
  MinNormKernel(Eigen::MatrixXd x_train, Eigen::VectorXd y,
                const Eigen::MatrixXd& x_targets);

  /// Predictions for every target.
  Eigen::VectorXd predict(MaskView subset) const;
  std::size_t pool_size() const noexcept { return static_cast<std::size_t>(x_.rows()); }
  std::size_t target_count() const noexcept { return static_cast<std::size_t>(cross_.rows()); }

 private:
  Eigen::MatrixXd x_;
  Eigen::MatrixXd x_targets_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd gram_;   ///< X X^T
  Eigen::MatrixXd cross_;  ///< X_targets X^T
};

/// Seed for training row `row` of a campaign keyed by `seed`.
std::uint64_t training_seed(std::uint64_t seed, std::uint64_t row);

struct CampaignResult {
  MaskMatrix masks;
  std::vector<OutputMatrix> outputs;  ///< one per requested output function
};

/// Trains on rows [begin, end) of `masks` and evaluates every target.
/// Exclusion bits are set where a training-set target belongs to S_i.
std::vector<OutputMatrix> run_campaign_rows(const TrainingSet& data,
                                            const MaskMatrix& masks,
                                            const LearningAlgorithm& trainer,
                                            std::span<const OutputFn> fns,
                                            const TargetSet& targets,
                                            std::uint64_t seed, std::size_t begin,
                                            std::size_t end, std::size_t workers = 1);

using CheckpointFn = std::function<void(const CampaignResult&)>;

/// Samples m subsets from `dist` and records outputs for each. `resume`
/// holds previously completed rows (a prefix); only the remaining rows are
/// trained. `checkpoint` is invoked after every `chunk` rows.
CampaignResult run_training_campaign(const TrainingSet& data,
                                     const SubsetDistribution& dist, std::size_t m,
                                     const LearningAlgorithm& trainer,
                                     std::span<const OutputFn> fns,
                                     const TargetSet& targets, std::uint64_t seed,
                                     std::size_t workers = 1,
                                     const CampaignResult* resume = nullptr,
                                     const CheckpointFn& checkpoint = {},
                                     std::size_t chunk = 1024);

/// T trainings on one fixed subset; per function a targets x T matrix.
std::map<OutputFn, Eigen::MatrixXd> repeat_outputs(const TrainingSet& data,
                                                   MaskView subset,
                                                   const LearningAlgorithm& trainer,
                                                   std::span<const OutputFn> fns,
                                                   const TargetSet& targets,
                                                   std::size_t trials,
                                                   std::uint64_t seed,
                                                   std::size_t workers = 1);

struct NormalityScreen {
  std::map<OutputFn, std::vector<stats::NormalityResult>> per_target;
  std::map<OutputFn, double> ks_to_uniform;  ///< KS distance of p-values to U[0,1]
  OutputFn recommended = OutputFn::margin;
};

/// Per-function normality p-values over repeated trainings (rows targets,
/// columns T >= 20 samples). Recommends the function whose p-values are
/// closest to uniform.
NormalityScreen normality_screen(const std::map<OutputFn, Eigen::MatrixXd>& samples);

}  // namespace dm
