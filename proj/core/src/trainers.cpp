#include "datamodels/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "datamodels/errors.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"

namespace dm {

namespace {
constexpr std::uint64_t kInitStream = 0x494e4954;    // "INIT"
constexpr std::uint64_t kEpochStream = 0x45504f43;   // "EPOC"
constexpr std::uint64_t kTrainStream = 0x5452414e;   // "TRAN"
constexpr std::uint64_t kRepeatStream = 0x52455054;  // "REPT"
constexpr std::uint64_t kNoiseStream = 0x4e4f4953;   // "NOIS"

std::vector<Eigen::Index> as_eigen_indices(MaskView subset) {
  std::vector<Eigen::Index> idx;
  idx.reserve(subset.cardinality());
  subset.for_each_set([&](std::size_t j) { idx.push_back(static_cast<Eigen::Index>(j)); });
  return idx;
}

Eigen::MatrixXd pinv_apply(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  Eigen::MatrixXd uty = svd.matrixU().transpose() * y;
  const double smax = s.size() > 0 ? s[0] : 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s[k] > kPinvCutoff * smax && s[k] > 0.0) {
      uty.row(k) /= s[k];
    } else {
      uty.row(k).setZero();
    }
  }
  return svd.matrixV() * uty;
}
}  // namespace

TargetSet TargetSet::from_training(const TrainingSet& data,
                                   std::span<const std::size_t> indices) {
  TargetSet t;
  t.features.resize(static_cast<Eigen::Index>(indices.size()),
                    static_cast<Eigen::Index>(data.dim()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= data.size()) throw ValidationError("target index out of range");
    t.features.row(static_cast<Eigen::Index>(r)) = data.feature_row(indices[r]);
    t.labels.push_back(data.label(indices[r]));
    t.train_index.emplace_back(indices[r]);
  }
  return t;
}

TargetSet TargetSet::from_examples(Eigen::MatrixXd features, std::vector<int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ValidationError("target features / labels length mismatch");
  }
  TargetSet t;
  t.features = std::move(features);
  t.labels = std::move(labels);
  t.train_index.assign(t.labels.size(), std::nullopt);
  return t;
}

Eigen::MatrixXd LinearModel::scores(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != weights_.rows()) {
    throw ValidationError("input dimension " + std::to_string(inputs.cols()) +
                          " != model dimension " + std::to_string(weights_.rows()));
  }
  Eigen::MatrixXd s = inputs * weights_;
  s.rowwise() += bias_;
  return s;
}

Eigen::MatrixXd minnorm_solve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw ValidationError("minnorm_solve: row mismatch");
  if (x.rows() == 0) throw ValidationError("minnorm_solve: empty design");
  return pinv_apply(x, y);
}

LinearModel train_minnorm_linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Eigen::MatrixXd w = minnorm_solve(x, y);
  return LinearModel(std::move(w), Eigen::RowVectorXd::Zero(y.cols()));
}

std::unique_ptr<TrainedModel> MinNormTrainer::train(const TrainingSet& data,
                                                    MaskView subset,
                                                    std::uint64_t) const {
  const auto idx = as_eigen_indices(subset);
  if (idx.empty()) throw ValidationError("cannot train on an empty subset");
  Eigen::MatrixXd x = data.features()(idx, Eigen::all);
  Eigen::MatrixXd y;
  if (data.has_responses()) {
    y.resize(static_cast<Eigen::Index>(idx.size()), 1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      y(static_cast<Eigen::Index>(r), 0) = data.responses()[static_cast<std::size_t>(idx[r])];
    }
  } else {
    y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()), data.num_classes());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      y(static_cast<Eigen::Index>(r), data.label(static_cast<std::size_t>(idx[r]))) = 1.0;
    }
  }
  return std::make_unique<LinearModel>(train_minnorm_linear(x, y));
}

LogisticTrainer LogisticTrainer::from_hyperparameters(const Hyperparameters& hp) {
  LogisticConfig c;
  for (const auto& [k, v] : hp) {
    if (k == "epochs") c.epochs = static_cast<std::size_t>(v);
    else if (k == "learning_rate") c.learning_rate = v;
    else if (k == "batch_size") c.batch_size = static_cast<std::size_t>(v);
    else if (k == "l2") c.l2 = v;
    else if (k == "init_scale") c.init_scale = v;
    else throw ValidationError("unknown logistic hyperparameter '" + k + "'");
  }
  if (c.batch_size == 0) throw ValidationError("batch_size must be positive");
  return LogisticTrainer(c);
}

Hyperparameters LogisticTrainer::hyperparameters() const {
  return {{"epochs", static_cast<double>(cfg_.epochs)},
          {"learning_rate", cfg_.learning_rate},
          {"batch_size", static_cast<double>(cfg_.batch_size)},
          {"l2", cfg_.l2},
          {"init_scale", cfg_.init_scale}};
}

std::unique_ptr<TrainedModel> LogisticTrainer::train(const TrainingSet& data,
                                                     MaskView subset,
                                                     std::uint64_t seed) const {
  std::vector<std::size_t> idx = subset.indices();
  if (idx.empty()) throw ValidationError("cannot train on an empty subset");
  const auto dim = static_cast<Eigen::Index>(data.dim());
  const int classes = data.num_classes();

  Rng init(derive_key(seed, kInitStream));
  Eigen::MatrixXd w(dim, classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    for (Eigen::Index k = 0; k < dim; ++k) w(k, c) = cfg_.init_scale * init.normal();
  }
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes);

  bool single_class = true;
  for (auto i : idx) single_class = single_class && data.label(i) == data.label(idx[0]);

  Eigen::MatrixXd grad_w(dim, classes);
  Eigen::RowVectorXd grad_b(classes);
  Eigen::RowVectorXd logits(classes);
  const std::size_t n = idx.size();
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    Rng order(derive_key(seed, kEpochStream, epoch));
    for (std::size_t t = n; t > 1; --t) {
      std::swap(idx[t - 1], idx[order.uniform_index(t)]);
    }
    for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
      const std::size_t stop = std::min(n, start + cfg_.batch_size);
      grad_w.setZero();
      grad_b.setZero();
      for (std::size_t r = start; r < stop; ++r) {
        const auto x = data.feature_row(idx[r]);
        logits.noalias() = x * w;
        logits += b;
        const double mx = logits.maxCoeff();
        logits = (logits.array() - mx).exp();
        logits /= logits.sum();
        logits[data.label(idx[r])] -= 1.0;
        grad_w.noalias() += x.transpose() * logits;
        grad_b += logits;
      }
      const double scale = cfg_.learning_rate / static_cast<double>(stop - start);
      w *= (1.0 - cfg_.learning_rate * cfg_.l2);
      w -= scale * grad_w;
      b -= scale * grad_b;
    }
  }
  return std::make_unique<LinearModel>(std::move(w), std::move(b), single_class);
}

PlantedLinearTrainer::PlantedLinearTrainer(Eigen::MatrixXd theta_star,
                                           Eigen::VectorXd bias, double noise_sd)
    : theta_(std::move(theta_star)), bias_(std::move(bias)), noise_sd_(noise_sd) {
  if (theta_.rows() != bias_.size()) {
    throw ValidationError("planted trainer: theta rows != bias length");
  }
  if (noise_sd_ < 0.0) throw ValidationError("planted trainer: negative noise");
}

namespace {
class PlantedModel final : public TrainedModel {
 public:
  explicit PlantedModel(Eigen::VectorXd margins) : margins_(std::move(margins)) {}
  int num_classes() const override { return 2; }
  Eigen::MatrixXd scores(const Eigen::MatrixXd& inputs) const override {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(inputs.rows(), 2);
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
      const auto id = static_cast<Eigen::Index>(inputs(r, 0));
      if (id < 0 || id >= margins_.size()) {
        throw ValidationError("planted model: unknown target id " + std::to_string(id));
      }
      s(r, 0) = margins_[id];
    }
    return s;
  }

 private:
  Eigen::VectorXd margins_;
};
}  // namespace

Eigen::VectorXd PlantedLinearTrainer::expected_margins(MaskView subset) const {
  if (subset.size() != static_cast<std::size_t>(theta_.cols())) {
    throw ValidationError("planted trainer: subset width != d");
  }
  Eigen::VectorXd out = bias_;
  subset.for_each_set([&](std::size_t j) { out += theta_.col(static_cast<Eigen::Index>(j)); });
  return out;
}

std::unique_ptr<TrainedModel> PlantedLinearTrainer::train(const TrainingSet&,
                                                          MaskView subset,
                                                          std::uint64_t seed) const {
  if (subset.cardinality() == 0) throw ValidationError("cannot train on an empty subset");
  Eigen::VectorXd margins = expected_margins(subset);
  if (noise_sd_ > 0.0) {
    Rng rng(derive_key(seed, kNoiseStream));
    for (Eigen::Index t = 0; t < margins.size(); ++t) margins[t] += noise_sd_ * rng.normal();
  }
  return std::make_unique<PlantedModel>(std::move(margins));
}

TargetSet PlantedLinearTrainer::targets() const {
  const auto n = theta_.rows();
  Eigen::MatrixXd ids(n, 1);
  for (Eigen::Index t = 0; t < n; ++t) ids(t, 0) = static_cast<double>(t);
  return TargetSet::from_examples(std::move(ids), std::vector<int>(static_cast<std::size_t>(n), 0));
}

TrainingSet PlantedLinearTrainer::placeholder_training_set() const {
  const auto d = theta_.cols();
  return TrainingSet(Eigen::MatrixXd::Zero(d, 1),
                     std::vector<int>(static_cast<std::size_t>(d), 0), 2);
}

std::unique_ptr<LearningAlgorithm> make_trainer(const std::string& id,
                                                const Hyperparameters& hp) {
  if (id == "minnorm") {
    if (!hp.empty()) throw ValidationError("minnorm trainer takes no hyperparameters");
    return std::make_unique<MinNormTrainer>();
  }
  if (id == "logistic") {
    return std::make_unique<LogisticTrainer>(LogisticTrainer::from_hyperparameters(hp));
  }
  throw ValidationError("unknown trainer id '" + id + "'");
}

double output_from_scores(const Eigen::Ref<const Eigen::RowVectorXd>& scores,
                          int label, OutputFn fn) {
  const auto classes = scores.size();
  if (classes == 1) {
    if (fn == OutputFn::prediction) return scores[0];
    throw NumericError(std::string(to_string(fn)) +
                       " is undefined for a single-class model");
  }
  if (fn == OutputFn::prediction) {
    throw ValidationError("prediction output applies to regression models only");
  }
  if (label < 0 || label >= classes) throw ValidationError("target label out of range");
  switch (fn) {
    case OutputFn::margin:
    case OutputFn::correctness: {
      double best_other = -std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < classes; ++c) {
        if (c != label) best_other = std::max(best_other, scores[c]);
      }
      const double margin = scores[label] - best_other;
      if (fn == OutputFn::margin) return margin;
      return margin > 0.0 ? 1.0 : 0.0;  // a tie counts as a misclassification
    }
    case OutputFn::confidence:
    case OutputFn::xent: {
      const double mx = scores.maxCoeff();
      const double lse = mx + std::log((scores.array() - mx).exp().sum());
      const double log_p = scores[label] - lse;
      return fn == OutputFn::confidence ? std::exp(log_p) : -log_p;
    }
    case OutputFn::prediction:
      break;
  }
  throw ValidationError("unknown output function");
}

Eigen::VectorXd evaluate_outputs(const TrainedModel& model, const TargetSet& targets,
                                 OutputFn fn) {
  const Eigen::MatrixXd s = model.scores(targets.features);
  Eigen::VectorXd out(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    out[static_cast<Eigen::Index>(t)] =
        output_from_scores(s.row(static_cast<Eigen::Index>(t)), targets.labels[t], fn);
  }
  return out;
}

MinNormKernel::MinNormKernel(Eigen::MatrixXd x_train, Eigen::VectorXd y,
                             const Eigen::MatrixXd& x_targets)
    : x_(std::move(x_train)), x_targets_(x_targets), y_(std::move(y)) {
  if (x_.rows() != y_.size()) throw ValidationError("MinNormKernel: rows != responses");
  if (x_targets.cols() != x_.cols()) throw ValidationError("MinNormKernel: feature mismatch");
  gram_ = x_ * x_.transpose();
  cross_ = x_targets * x_.transpose();
}

Eigen::VectorXd MinNormKernel::predict(MaskView subset) const {
  const auto idx = as_eigen_indices(subset);
  if (idx.empty()) throw ValidationError("cannot train on an empty subset");
  const Eigen::MatrixXd g = gram_(idx, idx);
  const Eigen::VectorXd ys = y_(idx);
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
    return cross_(Eigen::all, idx) * llt.solve(ys);
  }
  const Eigen::MatrixXd xs = x_(idx, Eigen::all);
  return x_targets_ * minnorm_solve(xs, ys);
}

std::uint64_t training_seed(std::uint64_t seed, std::uint64_t row) {
  return derive_key(seed, kTrainStream, row);
}

namespace {
template <typename F>
auto with_row_context(std::size_t row, F&& f) {
  const auto ctx = "campaign row " + std::to_string(row) + ": ";
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + e.what());
  } catch (const NumericError& e) {
    throw NumericError(ctx + e.what());
  } catch (const Error& e) {
    throw Error(ctx + e.what());
  }
}
}  // namespace

std::vector<OutputMatrix> run_campaign_rows(const TrainingSet& data,
                                            const MaskMatrix& masks,
                                            const LearningAlgorithm& trainer,
                                            std::span<const OutputFn> fns,
                                            const TargetSet& targets,
                                            std::uint64_t seed, std::size_t begin,
                                            std::size_t end, std::size_t workers) {
  if (masks.cols() != data.size()) {
    throw ValidationError("mask width d=" + std::to_string(masks.cols()) +
                          " != training set size d=" + std::to_string(data.size()));
  }
  if (begin > end || end > masks.rows()) throw ValidationError("campaign row range out of bounds");
  std::vector<OutputMatrix> out;
  for (auto fn : fns) out.emplace_back(end - begin, targets.size(), fn, trainer.id());
  parallel_for(end - begin, workers, [&](std::size_t r) {
    const std::size_t i = begin + r;
    with_row_context(i, [&] {
      const auto row = masks.row(i);
      const auto model = trainer.train(data, row, training_seed(seed, i));
      const Eigen::MatrixXd s = model->scores(targets.features);
      for (std::size_t f = 0; f < fns.size(); ++f) {
        for (std::size_t t = 0; t < targets.size(); ++t) {
          const double v = output_from_scores(s.row(static_cast<Eigen::Index>(t)),
                                              targets.labels[t], fns[f]);
          out[f].set_value(r, t, static_cast<float>(v));
          if (targets.train_index[t] && row.test(*targets.train_index[t])) {
            out[f].set_excluded(r, t);
          }
        }
      }
      return 0;
    });
  });
  return out;
}

CampaignResult run_training_campaign(const TrainingSet& data,
                                     const SubsetDistribution& dist, std::size_t m,
                                     const LearningAlgorithm& trainer,
                                     std::span<const OutputFn> fns,
                                     const TargetSet& targets, std::uint64_t seed,
                                     std::size_t workers, const CampaignResult* resume,
                                     const CheckpointFn& checkpoint, std::size_t chunk) {
  if (dist.d != data.size()) {
    throw ValidationError("distribution d=" + std::to_string(dist.d) +
                          " != training set size d=" + std::to_string(data.size()));
  }
  if (fns.empty()) throw ValidationError("campaign needs at least one output function");
  CampaignResult result;
  result.masks = sample_masks(dist, m, workers);
  std::size_t done = 0;
  if (resume != nullptr && !resume->outputs.empty()) {
    done = resume->outputs.front().rows();
    if (resume->outputs.size() != fns.size() || done > m) {
      throw ValidationError("resume state does not match the campaign");
    }
    for (std::size_t f = 0; f < fns.size(); ++f) {
      const auto& o = resume->outputs[f];
      if (o.rows() != done || o.cols() != targets.size() || o.output_fn() != fns[f] ||
          o.trainer_id() != trainer.id()) {
        throw ValidationError("resume outputs have a different shape or provenance");
      }
    }
    if (resume->masks.rows() >= done && resume->masks.cols() == dist.d &&
        !(resume->masks.slice(0, done) == result.masks.slice(0, done))) {
      throw ValidationError("resume masks differ from the sampled masks");
    }
    result.outputs = resume->outputs;
  } else {
    for (auto fn : fns) result.outputs.emplace_back(0, targets.size(), fn, trainer.id());
  }
  chunk = std::max<std::size_t>(chunk, 1);
  while (done < m) {
    const std::size_t stop = std::min(m, done + chunk);
    auto part = run_campaign_rows(data, result.masks, trainer, fns, targets, seed, done,
                                  stop, workers);
    for (std::size_t f = 0; f < fns.size(); ++f) result.outputs[f].append(part[f]);
    done = stop;
    if (checkpoint && done < m) {
      CampaignResult snapshot{result.masks.slice(0, done), result.outputs};
      checkpoint(snapshot);
    }
  }
  return result;
}

std::map<OutputFn, Eigen::MatrixXd> repeat_outputs(const TrainingSet& data,
                                                   MaskView subset,
                                                   const LearningAlgorithm& trainer,
                                                   std::span<const OutputFn> fns,
                                                   const TargetSet& targets,
                                                   std::size_t trials,
                                                   std::uint64_t seed,
                                                   std::size_t workers) {
  std::map<OutputFn, Eigen::MatrixXd> out;
  for (auto fn : fns) {
    out[fn] = Eigen::MatrixXd(static_cast<Eigen::Index>(targets.size()),
                              static_cast<Eigen::Index>(trials));
  }
  parallel_for(trials, workers, [&](std::size_t t) {
    const auto model = trainer.train(data, subset, derive_key(seed, kRepeatStream, t));
    const Eigen::MatrixXd s = model->scores(targets.features);
    for (auto fn : fns) {
      auto& mat = out.at(fn);
      for (std::size_t j = 0; j < targets.size(); ++j) {
        mat(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) =
            output_from_scores(s.row(static_cast<Eigen::Index>(j)), targets.labels[j], fn);
      }
    }
  });
  return out;
}

NormalityScreen normality_screen(const std::map<OutputFn, Eigen::MatrixXd>& samples) {
  if (samples.empty()) throw ValidationError("normality screen needs at least one function");
  NormalityScreen screen;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [fn, mat] : samples) {
    if (mat.cols() < 20) {
      throw ValidationError("normality screen needs T >= 20 samples per target");
    }
    std::vector<double> ps;
    auto& results = screen.per_target[fn];
    for (Eigen::Index j = 0; j < mat.rows(); ++j) {
      const Eigen::VectorXd row = mat.row(j).transpose();
      results.push_back(stats::dagostino_k2({row.data(), static_cast<std::size_t>(row.size())}));
      ps.push_back(results.back().p_value);
    }
    const double ks = stats::ks_distance_uniform(ps);
    screen.ks_to_uniform[fn] = ks;
    if (ks < best) {
      best = ks;
      screen.recommended = fn;
    }
  }
  return screen;
}

}  // namespace dm
