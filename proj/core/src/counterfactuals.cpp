#include "datamodels/counterfactuals.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "datamodels/errors.hpp"
#include "datamodels/isotonic.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"

namespace dm {

namespace {
constexpr std::uint64_t kTrialStream = 0x43465452;  // "CFTR"
constexpr std::uint64_t kGroupStream = 0x47525550;  // "GRUP"
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Arm {
  CounterfactualMode mode = CounterfactualMode::remove;
  std::span<const std::size_t> removed;
  int to_class = -1;
  double alpha = 1.0;
};

// Outputs of `trials` trainings for one arm: targets x trials.
Eigen::MatrixXd run_arm(const Arm& arm, const TrainingSet& data, const LearningAlgorithm& trainer,
                        OutputFn fn, const TargetSet& targets, std::size_t trials,
                        std::uint64_t seed, std::size_t workers) {
  const std::size_t d = data.size();
  std::optional<TrainingSet> relabeled;
  if (arm.mode == CounterfactualMode::mislabel) relabeled = data.relabeled(arm.removed, arm.to_class);
  const TrainingSet& train_data = relabeled ? *relabeled : data;

  SubsetMask fixed;
  if (arm.mode != CounterfactualMode::random_control) {
    fixed = SubsetMask::full(d);
    if (arm.mode == CounterfactualMode::remove) {
      for (auto i : arm.removed) {
        if (i >= d) throw ValidationError("removed index " + std::to_string(i) + " out of range");
        fixed.reset(i);
      }
    }
    if (fixed.cardinality() == 0) {
      throw ValidationError("removal leaves an empty training set");
    }
  }

  Eigen::MatrixXd out(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(trials));
  parallel_for(trials, workers, [&](std::size_t t) {
    const std::uint64_t s = trial_seed(seed, t);
    SubsetMask mask = arm.mode == CounterfactualMode::random_control
                          ? remove_and_subsample(d, arm.removed, arm.alpha, s)
                          : fixed;
    if (mask.cardinality() == 0) throw ValidationError("subsample left an empty training set");
    const auto model = trainer.train(train_data, mask.view(), s);
    out.col(static_cast<Eigen::Index>(t)) = evaluate_outputs(*model, targets, fn);
  });
  return out;
}

std::size_t effective_trials(const LearningAlgorithm& trainer, CounterfactualMode mode,
                             std::size_t trials) {
  if (trials == 0) throw ValidationError("need at least one trial");
  if (trainer.deterministic() && mode != CounterfactualMode::random_control) return 1;
  return trials;
}

std::string key_of(const LearningAlgorithm& trainer, OutputFn fn, std::size_t targets,
                   std::size_t trials, std::uint64_t seed, double alpha) {
  std::ostringstream k;
  k << std::setprecision(17) << trainer.id();
  for (const auto& [name, v] : trainer.hyperparameters()) k << ';' << name << '=' << v;
  k << '|' << to_string(fn) << '|' << targets << '|' << trials << '|' << seed << '|' << alpha;
  return k.str();
}

double mean_of(const Eigen::Ref<const Eigen::RowVectorXd>& v) { return v.mean(); }

std::vector<std::size_t> order_by(const Eigen::VectorXd& theta, bool descending) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(theta.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double x = theta[static_cast<Eigen::Index>(a)];
    const double y = theta[static_cast<Eigen::Index>(b)];
    return descending ? x > y : x < y;
  });
  return idx;
}

void check_grid(std::span<const std::size_t> k_grid) {
  if (k_grid.empty()) throw ValidationError("support grid is empty");
  for (std::size_t i = 0; i < k_grid.size(); ++i) {
    if (k_grid[i] == 0 || (i > 0 && k_grid[i] <= k_grid[i - 1])) {
      throw ValidationError("support grid must be positive and strictly increasing");
    }
  }
}

double arm_mean(const Arm& arm, const TrainingSet& data, const LearningAlgorithm& trainer,
                OutputFn fn, const TargetSet& targets, std::size_t target, std::size_t trials,
                std::uint64_t seed, std::size_t workers) {
  const auto out = run_arm(arm, data, trainer, fn, targets,
                           effective_trials(trainer, arm.mode, trials), seed, workers);
  return out.row(static_cast<Eigen::Index>(target)).mean();
}

}  // namespace

std::string_view to_string(CounterfactualMode mode) noexcept {
  switch (mode) {
    case CounterfactualMode::remove: return "remove";
    case CounterfactualMode::mislabel: return "mislabel";
    case CounterfactualMode::random_control: return "random_control";
  }
  return "unknown";
}

CounterfactualMode parse_counterfactual_mode(std::string_view name) {
  if (name == "remove") return CounterfactualMode::remove;
  if (name == "mislabel") return CounterfactualMode::mislabel;
  if (name == "random_control") return CounterfactualMode::random_control;
  throw ValidationError("unknown counterfactual mode '" + std::string(name) + "'");
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
  return derive_key(seed, kTrialStream, trial);
}

ControlStats estimate_control(const TrainingSet& data, const LearningAlgorithm& trainer,
                              OutputFn fn, const TargetSet& targets, std::size_t trials,
                              std::uint64_t seed, double alpha, std::size_t workers) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("control alpha must lie in (0, 1]");
  Arm arm;
  arm.mode = alpha < 1.0 ? CounterfactualMode::random_control : CounterfactualMode::remove;
  arm.alpha = alpha;
  ControlStats out;
  out.alpha = alpha;
  out.samples = run_arm(arm, data, trainer, fn, targets, effective_trials(trainer, arm.mode, trials),
                        seed, workers);
  return out;
}

const ControlStats& ControlCache::get(const TrainingSet& data, const LearningAlgorithm& trainer,
                                      OutputFn fn, const TargetSet& targets, std::size_t trials,
                                      std::uint64_t seed, double alpha, std::size_t workers) {
  const auto key = key_of(trainer, fn, targets.size(), trials, seed, alpha);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, estimate_control(data, trainer, fn, targets, trials, seed, alpha, workers))
             .first;
  }
  return it->second;
}

double predict_effect(const Datamodel& dm, std::span<const std::size_t> removed) {
  double s = 0.0;
  for (auto i : removed) {
    if (i >= static_cast<std::size_t>(dm.theta.size())) {
      throw ValidationError("removed index " + std::to_string(i) + " out of range");
    }
    s += dm.theta[static_cast<Eigen::Index>(i)];
  }
  return s;
}

CounterfactualResult eval_effect(const CounterfactualSpec& spec, const Datamodel* dm,
                                 const TrainingSet& data, const LearningAlgorithm& trainer,
                                 OutputFn fn, const TargetSet& targets,
                                 const ControlStats& control, std::uint64_t seed,
                                 std::size_t workers) {
  if (spec.target >= targets.size()) throw ValidationError("counterfactual target out of range");
  if (static_cast<std::size_t>(control.samples.rows()) != targets.size()) {
    throw ValidationError("control statistics cover a different target set");
  }
  Arm arm;
  arm.mode = spec.mode;
  arm.removed = spec.removed;
  arm.to_class = spec.to_class;
  arm.alpha = 1.0;
  if (spec.mode == CounterfactualMode::mislabel) {
    if (spec.to_class < 0 || spec.to_class >= data.num_classes()) {
      throw ValidationError("mislabel class out of range");
    }
    if (spec.to_class == targets.labels[spec.target]) {
      throw ValidationError("mislabel class must differ from the target's class");
    }
  }
  if (spec.mode == CounterfactualMode::random_control) {
    arm.alpha = spec.alpha;
    if (std::abs(control.alpha - spec.alpha) > 1e-15) {
      throw ValidationError("random control needs control statistics at the same alpha");
    }
  } else if (control.alpha != 1.0) {
    throw ValidationError("remove / mislabel specs need full-set control statistics");
  }

  CounterfactualResult res;
  res.trials = effective_trials(trainer, spec.mode, spec.trials);
  const auto treated = run_arm(arm, data, trainer, fn, targets, res.trials, seed, workers);
  const Eigen::RowVectorXd t_row = treated.row(static_cast<Eigen::Index>(spec.target));
  const Eigen::RowVectorXd c_row = control.samples.row(static_cast<Eigen::Index>(spec.target));
  res.actual = mean_of(c_row) - mean_of(t_row);
  if (c_row.size() == t_row.size()) {
    const Eigen::RowVectorXd diff = c_row - t_row;
    const auto n = static_cast<double>(diff.size());
    res.se = diff.size() > 1
                 ? std::sqrt((diff.array() - diff.mean()).square().sum() / (n - 1.0) / n)
                 : 0.0;
  } else {
    auto var = [](const Eigen::RowVectorXd& v) {
      return v.size() > 1 ? (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1)
                          : 0.0;
    };
    res.se = std::sqrt(var(c_row) / static_cast<double>(c_row.size()) +
                       var(t_row) / static_cast<double>(t_row.size()));
  }
  if (spec.mode == CounterfactualMode::mislabel || dm == nullptr) {
    res.predicted = kNaN;
  } else {
    res.predicted = predict_effect(*dm, spec.removed);
    if (spec.mode == CounterfactualMode::random_control) res.predicted *= spec.alpha;
  }
  return res;
}

std::vector<std::size_t> top_k_group(const Eigen::VectorXd& theta, std::size_t k) {
  if (k > static_cast<std::size_t>(theta.size())) throw ValidationError("k exceeds d");
  auto idx = order_by(theta, true);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> bottom_k_group(const Eigen::VectorXd& theta, std::size_t k) {
  if (k > static_cast<std::size_t>(theta.size())) throw ValidationError("k exceeds d");
  auto idx = order_by(theta, false);
  idx.resize(k);
  return idx;
}

std::optional<double> interpolate_zero_crossing(std::span<const std::size_t> k,
                                                std::span<const double> fitted) {
  if (k.size() != fitted.size() || k.empty()) throw ValidationError("crossing: malformed curve");
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (fitted[i] > 0.0) continue;
    if (i == 0) return static_cast<double>(k[0]);
    const double f0 = fitted[i - 1];
    const double f1 = fitted[i];
    const double k0 = static_cast<double>(k[i - 1]);
    const double k1 = static_cast<double>(k[i]);
    return k0 + f0 * (k1 - k0) / (f0 - f1);
  }
  return std::nullopt;
}

std::size_t inflate_support(double k_hat) {
  if (!(k_hat >= 0.0)) throw ValidationError("support estimate must be nonnegative");
  return static_cast<std::size_t>(std::ceil(1.2 * k_hat - 1e-9));
}

SupportEstimate estimate_support(const Datamodel& dm, const TrainingSet& data,
                                 const LearningAlgorithm& trainer, OutputFn fn,
                                 const TargetSet& targets, std::size_t target,
                                 const ControlStats& control,
                                 std::span<const std::size_t> k_grid, std::size_t trials,
                                 std::uint64_t seed, std::size_t workers) {
  check_grid(k_grid);
  if (target >= targets.size()) throw ValidationError("support target out of range");
  if (static_cast<std::size_t>(dm.theta.size()) != data.size()) {
    throw ValidationError("datamodel length != training set size");
  }
  SupportEstimate est;
  est.target = target;
  const double control_mean = control.mean(target);
  est.curve.push_back({0, control_mean, control_mean});
  if (control_mean <= 0.0) {
    est.certified = true;
    est.certified_mean = control_mean;
    return est;
  }
  const auto order = order_by(dm.theta, true);
  Arm arm;
  for (auto k : k_grid) {
    if (k >= data.size()) break;
    arm.removed = std::span<const std::size_t>(order.data(), k);
    const double m = arm_mean(arm, data, trainer, fn, targets, target, trials, seed, workers);
    est.curve.push_back({k, m, m});
  }
  std::vector<double> means;
  std::vector<std::size_t> ks;
  for (const auto& p : est.curve) {
    means.push_back(p.mean);
    ks.push_back(p.k);
  }
  const auto fitted = isotonic_decreasing(means);
  for (std::size_t i = 0; i < fitted.size(); ++i) est.curve[i].fitted = fitted[i];
  const auto crossing = interpolate_zero_crossing(ks, fitted);
  if (!crossing) {
    est.unbounded = true;
    est.k_hat = kNaN;
    return est;
  }
  est.k_hat = *crossing;
  est.k_reported = inflate_support(est.k_hat);
  if (est.k_reported >= data.size()) return est;
  arm.removed = std::span<const std::size_t>(order.data(), est.k_reported);
  est.certified_mean = arm_mean(arm, data, trainer, fn, targets, target, trials, seed, workers);
  est.certified = est.certified_mean <= 0.0;
  return est;
}

std::optional<std::size_t> heuristic_support(const Eigen::VectorXd& theta, double control_margin) {
  if (control_margin <= 0.0) return 0;
  const auto order = order_by(theta, true);
  double s = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    s += theta[static_cast<Eigen::Index>(order[k])];
    if (s > control_margin) return k + 1;
  }
  return std::nullopt;
}

namespace {
std::optional<std::size_t> flip_k(const Datamodel& dm, const TrainingSet& data,
                                  const LearningAlgorithm& trainer, OutputFn fn,
                                  const TargetSet& targets, std::size_t target, Arm arm,
                                  std::span<const std::size_t> k_grid, std::size_t trials,
                                  std::uint64_t seed, std::size_t workers) {
  check_grid(k_grid);
  if (target >= targets.size()) throw ValidationError("target out of range");
  const auto order = order_by(dm.theta, true);
  Arm base;
  if (arm_mean(base, data, trainer, fn, targets, target, trials, seed, workers) <= 0.0) return 0;
  for (auto k : k_grid) {
    if (k >= data.size()) break;
    arm.removed = std::span<const std::size_t>(order.data(), k);
    if (arm_mean(arm, data, trainer, fn, targets, target, trials, seed, workers) <= 0.0) return k;
  }
  return std::nullopt;
}
}  // namespace

std::optional<std::size_t> mislabel_flip_k(const Datamodel& dm, const TrainingSet& data,
                                           const LearningAlgorithm& trainer, OutputFn fn,
                                           const TargetSet& targets, std::size_t target,
                                           int to_class, std::span<const std::size_t> k_grid,
                                           std::size_t trials, std::uint64_t seed,
                                           std::size_t workers) {
  if (to_class < 0 || to_class >= data.num_classes() || to_class == targets.labels.at(target)) {
    throw ValidationError("mislabel class must be a valid class other than the target's");
  }
  Arm arm;
  arm.mode = CounterfactualMode::mislabel;
  arm.to_class = to_class;
  return flip_k(dm, data, trainer, fn, targets, target, arm, k_grid, trials, seed, workers);
}

std::optional<std::size_t> removal_flip_k(const Datamodel& dm, const TrainingSet& data,
                                          const LearningAlgorithm& trainer, OutputFn fn,
                                          const TargetSet& targets, std::size_t target,
                                          std::span<const std::size_t> k_grid,
                                          std::size_t trials, std::uint64_t seed,
                                          std::size_t workers) {
  return flip_k(dm, data, trainer, fn, targets, target, Arm{}, k_grid, trials, seed, workers);
}

std::vector<std::size_t> baseline_group(BaselineSelector selector, const TrainingSet& data,
                                        const Eigen::RowVectorXd& target_features,
                                        int target_label, std::size_t k, std::uint64_t seed) {
  if (k == 0) return {};
  std::vector<std::size_t> pool;
  if (selector == BaselineSelector::random_same_class) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.label(i) == target_label) pool.push_back(i);
    }
    if (k > pool.size()) {
      throw ValidationError("k=" + std::to_string(k) + " exceeds the class size " +
                            std::to_string(pool.size()));
    }
    Rng rng(derive_key(seed, kGroupStream, static_cast<std::uint64_t>(target_label)));
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
    pool.resize(k);
    return pool;
  }
  if (k > data.size()) throw ValidationError("k exceeds the training set size");
  if (target_features.size() != static_cast<Eigen::Index>(data.dim())) {
    throw ValidationError("target feature dimension mismatch");
  }
  Eigen::VectorXd dist = (data.features().rowwise() - target_features).rowwise().squaredNorm();
  pool.resize(data.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    return dist[static_cast<Eigen::Index>(a)] < dist[static_cast<Eigen::Index>(b)];
  });
  pool.resize(k);
  return pool;
}

std::vector<std::size_t> zero_weight_group(const Eigen::VectorXd& theta, std::size_t k,
                                           std::uint64_t seed, double tol) {
  std::vector<std::size_t> pool;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (std::abs(theta[i]) <= tol) pool.push_back(static_cast<std::size_t>(i));
  }
  if (k > pool.size()) {
    throw ValidationError("only " + std::to_string(pool.size()) + " zero-weight indices, need " +
                          std::to_string(k));
  }
  Rng rng(derive_key(seed, kGroupStream, 0x5a45524f));
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void write_counterfactual_csv(std::ostream& out, std::span<const CounterfactualRecord> records) {
  out << "target_id,mode,k,predicted,actual,se,T,group\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.target_id << ',' << to_string(r.mode) << ',' << r.k << ',' << r.predicted << ','
        << r.actual << ',' << r.se << ',' << r.trials << ',' << r.group << '\n';
  }
}

}  // namespace dm
