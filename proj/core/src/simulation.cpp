#include "datamodels/simulation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "datamodels/errors.hpp"
#include "datamodels/estimators.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/stats.hpp"

namespace dm {

namespace {

constexpr std::uint64_t kWorldStream = 0x53494d57;  // "SIMW"
constexpr std::uint64_t kSimMaskStream = 0x53494d4d;  // "SIMM"
constexpr std::size_t kChunk = 4096;

using Eigen::Index;

Eigen::MatrixXd bernoulli_rows(std::size_t n, const Eigen::VectorXd& freq, std::uint64_t key) {
  Eigen::MatrixXd x(static_cast<Index>(n), freq.size());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_key(key, i));
    for (Index k = 0; k < freq.size(); ++k)
      x(static_cast<Index>(i), k) = rng.bernoulli(freq[k]) ? 1.0 : 0.0;
  }
  return x;
}

Eigen::VectorXd noisy_labels(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, double eps,
                             std::uint64_t key) {
  Eigen::VectorXd y = x * w;
  Rng rng(key);
  for (Index i = 0; i < y.size(); ++i) y[i] += eps * rng.normal();
  return y;
}

bool same_freq(double a, double b) { return std::abs(a - b) < 1e-12; }

}  // namespace

TrainingSet SimWorld::training_set() const {
  return TrainingSet(x_train, std::vector<double>(y_train.data(), y_train.data() + y_train.size()));
}

TargetSet SimWorld::target_set() const {
  return TargetSet::from_examples(x_heldout, std::vector<int>(targets(), 0));
}

std::vector<std::size_t> SimWorld::subpopulation(std::size_t k) const {
  if (k >= static_cast<std::size_t>(x_train.cols()))
    throw ValidationError("feature " + std::to_string(k) + " out of range");
  std::vector<std::size_t> out;
  for (Index i = 0; i < x_train.rows(); ++i)
    if (x_train(i, static_cast<Index>(k)) != 0.0) out.push_back(static_cast<std::size_t>(i));
  return out;
}

SimWorld generate_world(const SimConfig& cfg) {
  if (cfg.d_features == 0 || cfg.n_train == 0) throw ValidationError("simulation: empty world");
  if (cfg.p_grid.empty()) throw ValidationError("simulation: empty frequency grid");
  for (double p : cfg.p_grid)
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("simulation: frequency outside (0, 1)");
  if (cfg.epsilon < 0.0) throw ValidationError("simulation: negative noise level");

  SimWorld w;
  w.cfg = cfg;
  const auto d = static_cast<Index>(cfg.d_features);
  w.freq.resize(d);
  w.w.resize(d);
  {
    Rng rng(derive_key(cfg.seed, kWorldStream, 0));
    for (Index k = 0; k < d; ++k) w.freq[k] = cfg.p_grid[rng.uniform_index(cfg.p_grid.size())];
  }
  {
    Rng rng(derive_key(cfg.seed, kWorldStream, 1));
    for (Index k = 0; k < d; ++k) w.w[k] = cfg.w_scale * rng.normal();
  }
  w.x_train = bernoulli_rows(cfg.n_train, w.freq, derive_key(cfg.seed, kWorldStream, 2));
  w.y_train = noisy_labels(w.x_train, w.w, cfg.epsilon, derive_key(cfg.seed, kWorldStream, 3));
  w.x_heldout = bernoulli_rows(cfg.n_train, w.freq, derive_key(cfg.seed, kWorldStream, 4));
  w.y_heldout = noisy_labels(w.x_heldout, w.w, cfg.epsilon, derive_key(cfg.seed, kWorldStream, 5));
  return w;
}

SimOracle::SimOracle(const SimWorld& world)
    : kernel_(world.x_train, world.y_train, world.x_heldout) {}

double SimOracle::output(MaskView subset, std::size_t target) const {
  return outputs(subset)[static_cast<Index>(target)];
}

double sim_output(MaskView subset, const SimWorld& world, std::size_t target) {
  if (target >= world.targets())
    throw ValidationError("simulation target " + std::to_string(target) + " out of range");
  std::vector<Index> rows;
  subset.for_each_set([&](std::size_t i) { rows.push_back(static_cast<Index>(i)); });
  if (rows.empty()) throw ValidationError("cannot train on an empty subset");
  const LinearModel model =
      train_minnorm_linear(world.x_train(rows, Eigen::all), world.y_train(rows));
  return (world.x_heldout.row(static_cast<Index>(target)) * model.weights())(0, 0);
}

SimDatamodels fit_sim_datamodels(const SimWorld& world, double alpha, std::size_t m,
                                 std::uint64_t seed, std::size_t workers) {
  if (m == 0) throw ValidationError("simulation: m must be positive");
  const SubsetDistribution dist{world.n(), alpha,
                                derive_key(seed, kSimMaskStream, std::bit_cast<std::uint64_t>(alpha))};
  dist.validate();
  const SimOracle oracle(world);
  OlsAccumulator acc(world.n(), world.targets(), OlsOptions{Encoding::binary, true});

  for (std::size_t begin = 0; begin < m; begin += kChunk) {
    const std::size_t rows = std::min(kChunk, m - begin);
    Eigen::MatrixXd x(static_cast<Index>(rows), static_cast<Index>(world.n()));
    Eigen::MatrixXd y(static_cast<Index>(rows), static_cast<Index>(world.targets()));
    parallel_for(rows, workers, [&](std::size_t r) {
      const SubsetMask mask = sample_subset(dist, begin + r);
      const auto row = static_cast<Index>(r);
      x.row(row) = mask.view().to_dense().transpose();
      y.row(row) = oracle.outputs(mask.view()).transpose();
    });
    acc.add(x, y);
  }

  const auto fits = acc.solve();
  SimDatamodels out;
  out.alpha = alpha;
  out.m = m;
  out.theta.resize(static_cast<Index>(world.n()), static_cast<Index>(world.targets()));
  out.bias.resize(static_cast<Index>(world.targets()));
  for (std::size_t j = 0; j < fits.size(); ++j) {
    out.theta.col(static_cast<Index>(j)) = fits[j].coef;
    out.bias[static_cast<Index>(j)] = fits[j].intercept;
  }
  return out;
}

FeatureCorrelation feature_correlation(const Eigen::MatrixXd& theta, const SimWorld& world,
                                       double p) {
  if (static_cast<std::size_t>(theta.rows()) != world.n() ||
      static_cast<std::size_t>(theta.cols()) != world.targets())
    throw ValidationError("feature_correlation: theta is " + std::to_string(theta.rows()) + " x " +
                          std::to_string(theta.cols()) + ", world needs " +
                          std::to_string(world.n()) + " x " + std::to_string(world.targets()));

  const SimOracle oracle(world);
  const Eigen::VectorXd full = oracle.outputs(SubsetMask::full(world.n()).view());
  std::vector<double> actual;
  std::vector<double> predicted;
  FeatureCorrelation out;
  for (Index k = 0; k < world.freq.size(); ++k) {
    if (!same_freq(world.freq[k], p)) continue;
    ++out.features;
    const auto sk = world.subpopulation(static_cast<std::size_t>(k));
    // Removing every training row leaves nothing to fit; such features are skipped.
    if (sk.size() == world.n()) continue;
    SubsetMask rest = SubsetMask::full(world.n());
    for (std::size_t i : sk) rest.reset(i);
    const Eigen::VectorXd reduced = oracle.outputs(rest.view());
    for (std::size_t j = 0; j < world.targets(); ++j) {
      double pred = 0.0;
      for (std::size_t i : sk) pred += theta(static_cast<Index>(i), static_cast<Index>(j));
      actual.push_back(full[static_cast<Index>(j)] - reduced[static_cast<Index>(j)]);
      predicted.push_back(pred);
    }
  }
  if (out.features == 0)
    throw ValidationError("feature_correlation: no feature has frequency " + std::to_string(p));
  out.pairs = actual.size();
  if (out.pairs >= 2) out.r = stats::pearson(predicted, actual);
  return out;
}

AlphaSweep alpha_sweep(const SimWorld& world, std::span<const double> alphas, std::size_t m,
                       std::uint64_t seed, std::size_t workers) {
  AlphaSweep sweep;
  sweep.alphas.assign(alphas.begin(), alphas.end());
  for (double p : world.cfg.p_grid) {
    const bool present =
        std::any_of(world.freq.data(), world.freq.data() + world.freq.size(),
                    [&](double f) { return same_freq(f, p); });
    if (present) sweep.freqs.push_back(p);
  }
  std::sort(sweep.freqs.begin(), sweep.freqs.end());
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw ValidationError("alpha_sweep: alpha outside (0, 1)");
    const SimDatamodels dms = fit_sim_datamodels(world, a, m, seed, workers);
    auto& row = sweep.r.emplace_back();
    for (double p : sweep.freqs) row.push_back(feature_correlation(dms.theta, world, p).r);
  }
  return sweep;
}

void write_sweep_csv(std::ostream& out, const AlphaSweep& sweep) {
  const auto old = out.precision(6);
  out << "alpha";
  for (double p : sweep.freqs) out << ",p=" << p;
  out << '\n';
  for (std::size_t a = 0; a < sweep.alphas.size(); ++a) {
    out.precision(6);
    out << sweep.alphas[a];
    out.precision(17);
    for (const auto& v : sweep.r[a]) {
      out << ',';
      if (v) out << *v;
    }
    out << '\n';
  }
  out.precision(old);
}

}  // namespace dm
