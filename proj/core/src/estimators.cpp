#include "datamodels/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "datamodels/errors.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"

namespace dm {

namespace {

constexpr std::uint64_t kSagaStream = 0x53414741;  // "SAGA"
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double soft_threshold(double v, double t) {
  return v > t ? v - t : (v < -t ? v + t : 0.0);
}

// SAGA on the half-scaled objective (1/2n) sum (c_i . w - z_i)^2 + (lambda/2) |w|_1
// with c_i = a_i - xbar and z_i = y_i - ybar. Minimizers coincide with those
// of the unscaled objective, and the per-row smoothness constant is |c_i|^2.
class SagaBatch {
 public:
  SagaBatch(const MaskMatrix& masks, std::span<const std::size_t> rows, bool fit_bias)
      : d_(masks.cols()), fit_bias_(fit_bias) {
    offsets_.reserve(rows.size() + 1);
    offsets_.push_back(0);
    for (auto i : rows) {
      masks.row(i).for_each_set([&](std::size_t j) { idx_.push_back(static_cast<std::uint32_t>(j)); });
      offsets_.push_back(idx_.size());
    }
  }

  std::size_t rows() const noexcept { return offsets_.size() - 1; }

  std::size_t add_target(std::vector<double> y, std::vector<std::uint8_t> use) {
    Target t;
    t.y = std::move(y);
    t.use = std::move(use);
    t.xbar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_));
    for (std::size_t p = 0; p < rows(); ++p) {
      if (!t.use[p]) continue;
      ++t.count;
      t.ybar += t.y[p];
      for (auto k = offsets_[p]; k < offsets_[p + 1]; ++k) t.xbar[idx_[k]] += 1.0;
    }
    if (t.count == 0) throw ValidationError("a target has no usable rows to fit");
    t.ybar /= static_cast<double>(t.count);
    t.xbar /= static_cast<double>(t.count);
    if (!fit_bias_) {
      t.ybar = 0.0;
      t.xbar.setZero();
    }
    const double xx = t.xbar.squaredNorm();
    for (std::size_t p = 0; p < rows(); ++p) {
      if (!t.use[p]) continue;
      double dot = 0.0;
      for (auto k = offsets_[p]; k < offsets_[p + 1]; ++k) dot += t.xbar[idx_[k]];
      const double nrm = static_cast<double>(offsets_[p + 1] - offsets_[p]) - 2.0 * dot + xx;
      t.lmax = std::max(t.lmax, nrm);
    }
    t.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_));
    targets_.push_back(std::move(t));
    return targets_.size() - 1;
  }

  double lambda_max(std::size_t k) const {
    const Target& t = targets_[k];
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_));
    for (std::size_t p = 0; p < rows(); ++p) {
      if (!t.use[p]) continue;
      const double z = t.y[p] - t.ybar;
      for (auto q = offsets_[p]; q < offsets_[p + 1]; ++q) g[idx_[q]] += z;
    }
    // sum_i c_i z_i = sum_i a_i z_i - xbar sum_i z_i, and sum_i z_i = 0 when centered.
    if (!fit_bias_) return 2.0 * g.cwiseAbs().maxCoeff() / static_cast<double>(t.count);
    double zsum = 0.0;
    for (std::size_t p = 0; p < rows(); ++p) {
      if (t.use[p]) zsum += t.y[p] - t.ybar;
    }
    g -= zsum * t.xbar;
    return 2.0 * g.cwiseAbs().maxCoeff() / static_cast<double>(t.count);
  }

  void set_lambda(std::size_t k, double lambda) {
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be nonnegative");
    targets_[k].lambda = lambda;
  }
  void set_weights(std::size_t k, const Eigen::VectorXd& w) {
    if (static_cast<std::size_t>(w.size()) != d_) throw ValidationError("warm start has wrong length");
    targets_[k].w = w;
  }
  const Eigen::VectorXd& weights(std::size_t k) const { return targets_[k].w; }
  double bias(std::size_t k) const {
    const Target& t = targets_[k];
    return fit_bias_ ? t.ybar - t.xbar.dot(t.w) : 0.0;
  }
  std::size_t epochs(std::size_t k) const { return targets_[k].epochs; }
  bool converged(std::size_t k) const { return targets_[k].converged; }

  void solve(const SagaConfig& cfg) {
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < targets_.size(); ++k) {
      Target& t = targets_[k];
      t.epochs = 0;
      t.converged = false;
      if (!(t.lmax > 0.0)) {
        // Every centered row is zero: the loss is flat and w = 0 is optimal.
        t.w.setZero();
        t.converged = true;
        continue;
      }
      t.step = 1.0 / (3.0 * t.lmax);
      init_state(t);
      active.push_back(k);
    }
    const std::size_t n = rows();
    std::vector<std::size_t> order(n);
    std::vector<Eigen::VectorXd> prev(targets_.size());
    for (std::size_t epoch = 0; epoch < cfg.max_epochs && !active.empty(); ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_key(cfg.seed, kSagaStream, epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
      for (auto k : active) prev[k] = targets_[k].w;
      for (auto p : order) {
        const std::uint32_t* first = idx_.data() + offsets_[p];
        const std::uint32_t* last = idx_.data() + offsets_[p + 1];
        for (auto k : active) {
          if (targets_[k].use[p]) step(targets_[k], p, first, last);
        }
      }
      std::vector<std::size_t> still;
      for (auto k : active) {
        Target& t = targets_[k];
        refresh_average(t);
        ++t.epochs;
        const double change = (t.w - prev[k]).cwiseAbs().maxCoeff();
        if (change < cfg.tol) {
          t.converged = true;
        } else {
          still.push_back(k);
        }
      }
      active.swap(still);
    }
    for (auto& t : targets_) {
      t.r.clear();
      t.r.shrink_to_fit();
    }
  }

 private:
  struct Target {
    std::vector<double> y;
    std::vector<std::uint8_t> use;
    std::size_t count = 0;
    double ybar = 0.0;
    Eigen::VectorXd xbar;
    double lmax = 0.0;
    double lambda = 0.0;
    double step = 0.0;
    Eigen::VectorXd w;
    Eigen::VectorXd gbar;
    std::vector<double> r;
    double xw = 0.0;
    std::size_t epochs = 0;
    bool converged = false;
  };

  double row_dot(const Target& t, std::size_t p) const {
    double s = 0.0;
    for (auto q = offsets_[p]; q < offsets_[p + 1]; ++q) s += t.w[idx_[q]];
    return s - t.xw;
  }

  void init_state(Target& t) {
    t.xw = t.xbar.dot(t.w);
    t.r.assign(rows(), 0.0);
    for (std::size_t p = 0; p < rows(); ++p) {
      if (t.use[p]) t.r[p] = row_dot(t, p) - (t.y[p] - t.ybar);
    }
    refresh_average(t);
  }

  // Exact average of the stored gradients c_i r_i.
  void refresh_average(Target& t) const {
    t.gbar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_));
    double rsum = 0.0;
    for (std::size_t p = 0; p < rows(); ++p) {
      if (!t.use[p]) continue;
      rsum += t.r[p];
      for (auto q = offsets_[p]; q < offsets_[p + 1]; ++q) t.gbar[idx_[q]] += t.r[p];
    }
    t.gbar -= rsum * t.xbar;
    t.gbar /= static_cast<double>(t.count);
  }

  void step(Target& t, std::size_t p, const std::uint32_t* first, const std::uint32_t* last) {
    double dot = -t.xw;
    double* w = t.w.data();
    for (auto it = first; it != last; ++it) dot += w[*it];
    const double r_new = dot - (t.y[p] - t.ybar);
    const double delta = r_new - t.r[p];
    t.r[p] = r_new;
    const double eta = t.step;
    const double thr = 0.5 * eta * t.lambda;
    const double inv = 1.0 / static_cast<double>(t.count);
    double* g = t.gbar.data();
    const double* xb = t.xbar.data();
    for (auto it = first; it != last; ++it) w[*it] -= eta * delta;
    const double a = eta * delta;
    const double b = -delta * inv;
    double xw = 0.0;
    const auto d = static_cast<std::ptrdiff_t>(d_);
    for (std::ptrdiff_t j = 0; j < d; ++j) {
      const double v = soft_threshold(w[j] + a * xb[j] - eta * g[j], thr);
      w[j] = v;
      g[j] += b * xb[j];
      xw += xb[j] * v;
    }
    for (auto it = first; it != last; ++it) g[*it] += delta * inv;
    t.xw = xw;
  }

  std::size_t d_;
  bool fit_bias_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> idx_;
  std::vector<Target> targets_;
};

std::vector<std::size_t> all_columns(std::size_t n, std::span<const std::size_t> targets) {
  if (!targets.empty()) {
    for (auto t : targets) {
      if (t >= n) throw ValidationError("target column " + std::to_string(t) + " out of range");
    }
    return {targets.begin(), targets.end()};
  }
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  std::iota(out.begin(), out.end(), begin);
  return out;
}

void column_data(const OutputMatrix& outputs, std::size_t col, std::span<const std::size_t> rows,
                 std::vector<double>& y, std::vector<std::uint8_t>& use) {
  y.resize(rows.size());
  use.resize(rows.size());
  for (std::size_t p = 0; p < rows.size(); ++p) {
    y[p] = outputs.value(rows[p], col);
    use[p] = outputs.excluded(rows[p], col) ? 0 : 1;
  }
}

void check_shapes(const MaskMatrix& masks, const OutputMatrix& outputs) {
  if (masks.rows() != outputs.rows()) {
    throw ValidationError("mask rows m=" + std::to_string(masks.rows()) +
                          " != output rows m=" + std::to_string(outputs.rows()));
  }
}

}  // namespace

std::vector<double> RegularizationPath::lambdas() const {
  if (count == 0) throw ValidationError("regularization path needs at least one value");
  if (!(ratio > 1.0)) throw ValidationError("regularization path ratio must exceed 1");
  if (!(lambda_max >= 0.0)) throw ValidationError("lambda_max must be nonnegative");
  std::vector<double> out(count);
  for (std::size_t t = 0; t < count; ++t) {
    out[t] = lambda_max * std::pow(ratio, -static_cast<double>(t) / static_cast<double>(count));
  }
  return out;
}

Split Split::with_default_validation(std::size_t m, std::size_t test) {
  if (test >= m) throw ValidationError("test rows leave nothing to fit");
  const std::size_t rest = m - test;
  Split s;
  s.test = test;
  s.val = std::max<std::size_t>(1, rest / 6);
  if (s.val >= rest) throw ValidationError("too few rows for a train/validation split");
  s.train = rest - s.val;
  return s;
}

std::vector<LassoFit> fit_lasso_multi(const MaskMatrix& masks, const OutputMatrix& outputs,
                                      const Split& split, const LassoConfig& cfg,
                                      std::span<const std::size_t> targets_in) {
  check_shapes(masks, outputs);
  if (split.train + split.val + split.test != masks.rows()) {
    throw ValidationError("split sizes do not add up to m=" + std::to_string(masks.rows()));
  }
  if (split.train == 0) throw ValidationError("split has no training rows");
  const auto targets = all_columns(outputs.cols(), targets_in);
  const std::size_t path_len = cfg.lambdas.empty() ? cfg.path_count : cfg.lambdas.size();
  if (path_len > 1 && split.val == 0) {
    throw ValidationError("selecting lambda over a path needs validation rows");
  }
  const auto fit_rows = range(0, split.train);
  const auto refit_rows = range(0, split.train + split.val);
  const auto val_rows = range(split.train, split.train + split.val);
  const auto test_rows = range(split.train + split.val, masks.rows());

  std::vector<LassoFit> results(targets.size());
  std::size_t workers = cfg.workers == 0 ? default_workers() : cfg.workers;
  workers = std::max<std::size_t>(1, std::min(workers, targets.size()));
  const std::size_t per = (targets.size() + workers - 1) / workers;

  parallel_for(workers, workers, [&](std::size_t w) {
    const std::size_t begin = w * per;
    const std::size_t end = std::min(targets.size(), begin + per);
    if (begin >= end) return;
    const std::size_t nb = end - begin;

    SagaBatch fit(masks, fit_rows, cfg.fit_bias);
    std::vector<std::vector<double>> yv(nb);
    std::vector<std::vector<std::uint8_t>> uv(nb);
    std::vector<std::vector<double>> paths(nb);
    std::vector<double> y;
    std::vector<std::uint8_t> use;
    for (std::size_t k = 0; k < nb; ++k) {
      column_data(outputs, targets[begin + k], fit_rows, y, use);
      fit.add_target(y, use);
      column_data(outputs, targets[begin + k], val_rows, yv[k], uv[k]);
      if (!cfg.lambdas.empty()) {
        paths[k] = cfg.lambdas;
      } else {
        const double lmax = cfg.lambda_max ? *cfg.lambda_max : fit.lambda_max(k);
        paths[k] = RegularizationPath{lmax, cfg.path_count, cfg.path_ratio}.lambdas();
      }
    }
    std::vector<std::size_t> best(nb, 0);
    std::vector<double> best_mse(nb, std::numeric_limits<double>::infinity());
    std::vector<Eigen::VectorXd> best_w(nb);
    for (std::size_t k = 0; k < nb; ++k) {
      auto& rep = results[begin + k].report;
      rep.lambdas = paths[k];
      rep.val_mse.assign(path_len, kNaN);
      rep.epochs = 0;
      rep.converged = true;
    }
    for (std::size_t t = 0; t < path_len; ++t) {
      for (std::size_t k = 0; k < nb; ++k) fit.set_lambda(k, paths[k][t]);
      fit.solve(cfg.saga);
      for (std::size_t k = 0; k < nb; ++k) {
        auto& rep = results[begin + k].report;
        rep.epochs += fit.epochs(k);
        rep.converged = rep.converged && fit.converged(k);
        double mse = kNaN;
        if (split.val > 0) {
          const Eigen::VectorXd& wk = fit.weights(k);
          const double b = fit.bias(k);
          double s = 0.0;
          std::size_t c = 0;
          for (std::size_t p = 0; p < val_rows.size(); ++p) {
            if (!uv[k][p]) continue;
            double pred = b;
            masks.row(val_rows[p]).for_each_set([&](std::size_t j) { pred += wk[static_cast<Eigen::Index>(j)]; });
            const double e = pred - yv[k][p];
            s += e * e;
            ++c;
          }
          if (c > 0) mse = 0.5 * s / static_cast<double>(c);
        }
        rep.val_mse[t] = mse;
        if (t == 0 || mse < best_mse[k]) {
          if (t == 0 || !std::isnan(mse)) {
            best[k] = t;
            best_mse[k] = std::isnan(mse) ? std::numeric_limits<double>::infinity() : mse;
            best_w[k] = fit.weights(k);
          }
        }
      }
    }

    SagaBatch refit(masks, refit_rows, cfg.fit_bias);
    for (std::size_t k = 0; k < nb; ++k) {
      column_data(outputs, targets[begin + k], refit_rows, y, use);
      refit.add_target(y, use);
      refit.set_lambda(k, paths[k][best[k]]);
      refit.set_weights(k, best_w[k]);
    }
    if (split.val > 0) refit.solve(cfg.saga);

    for (std::size_t k = 0; k < nb; ++k) {
      const std::size_t col = targets[begin + k];
      LassoFit& out = results[begin + k];
      Datamodel& dm = out.model;
      dm.theta = split.val > 0 ? refit.weights(k) : fit.weights(k);
      dm.bias = split.val > 0 ? refit.bias(k) : fit.bias(k);
      dm.alpha = masks.alpha();
      dm.lambda = paths[k][best[k]];
      dm.target_id = col;
      dm.output_fn = outputs.output_fn();
      dm.trainer_id = outputs.trainer_id();
      auto& rep = out.report;
      rep.lambda = dm.lambda;
      if (split.val > 0) {
        rep.epochs += refit.epochs(k);
        rep.converged = rep.converged && refit.converged(k);
      }
      rep.sparsity = dm.sparsity();
      column_data(outputs, col, refit_rows, y, use);
      double s = 0.0;
      std::size_t c = 0;
      for (std::size_t p = 0; p < refit_rows.size(); ++p) {
        if (!use[p]) continue;
        const double e = dm.predict(masks.row(refit_rows[p])) - y[p];
        s += e * e;
        ++c;
      }
      rep.train_mse = c ? 0.5 * s / static_cast<double>(c) : kNaN;
      s = 0.0;
      c = 0;
      for (auto i : test_rows) {
        if (outputs.excluded(i, col)) continue;
        const double e = dm.predict(masks.row(i)) - outputs.value(i, col);
        s += e * e;
        ++c;
      }
      rep.test_mse = c ? 0.5 * s / static_cast<double>(c) : kNaN;
    }
  });
  return results;
}

LassoSolution lasso_saga(const MaskMatrix& masks, std::span<const double> y, double lambda,
                         const SagaConfig& cfg, bool fit_bias, const Eigen::VectorXd* warm) {
  if (y.size() != masks.rows()) throw ValidationError("lasso_saga: y length != m");
  const auto rows = range(0, masks.rows());
  SagaBatch batch(masks, rows, fit_bias);
  batch.add_target({y.begin(), y.end()}, std::vector<std::uint8_t>(y.size(), 1));
  batch.set_lambda(0, lambda);
  if (warm) batch.set_weights(0, *warm);
  batch.solve(cfg);
  return {batch.weights(0), batch.bias(0), batch.epochs(0), batch.converged(0)};
}

double lasso_lambda_max(const MaskMatrix& masks, std::span<const double> y, bool fit_bias) {
  if (y.size() != masks.rows()) throw ValidationError("lasso_lambda_max: y length != m");
  const auto rows = range(0, masks.rows());
  SagaBatch batch(masks, rows, fit_bias);
  batch.add_target({y.begin(), y.end()}, std::vector<std::uint8_t>(y.size(), 1));
  return batch.lambda_max(0);
}

Datamodel OlsFit::as_datamodel() const {
  Datamodel out;
  if (encoding == Encoding::pm1) {
    out.theta = 2.0 * coef;
    out.bias = intercept - coef.sum();
  } else {
    out.theta = coef;
    out.bias = intercept;
  }
  return out;
}

OlsAccumulator::OlsAccumulator(std::size_t d, std::size_t targets, OlsOptions opt)
    : opt_(opt),
      gram_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d))),
      xty_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(targets))),
      xsum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d))),
      ysum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(targets))) {}

void OlsAccumulator::add(const Eigen::MatrixXd& x_block, const Eigen::MatrixXd& y_block) {
  if (x_block.cols() != gram_.cols() || y_block.cols() != xty_.cols() ||
      x_block.rows() != y_block.rows()) {
    throw ValidationError("OlsAccumulator: block shape mismatch");
  }
  gram_.selfadjointView<Eigen::Lower>().rankUpdate(x_block.transpose());
  xty_.noalias() += x_block.transpose() * y_block;
  xsum_ += x_block.colwise().sum().transpose();
  ysum_ += y_block.colwise().sum().transpose();
  count_ += static_cast<std::size_t>(x_block.rows());
}

void OlsAccumulator::add_masks(const MaskMatrix& masks, const Eigen::MatrixXd& y) {
  if (static_cast<std::size_t>(y.rows()) != masks.rows()) {
    throw ValidationError("OlsAccumulator: outputs rows != mask rows");
  }
  constexpr std::size_t kBlock = 1024;
  for (std::size_t b = 0; b < masks.rows(); b += kBlock) {
    const std::size_t e = std::min(masks.rows(), b + kBlock);
    add(dense_rows(masks, b, e, opt_.encoding),
        y.middleRows(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)));
  }
}

std::vector<OlsFit> OlsAccumulator::solve() const {
  if (count_ == 0) throw ValidationError("least squares with no rows");
  const auto n = static_cast<double>(count_);
  Eigen::MatrixXd g = gram_.selfadjointView<Eigen::Lower>();
  Eigen::MatrixXd c = xty_;
  Eigen::VectorXd xbar = xsum_ / n;
  Eigen::VectorXd ybar = ysum_ / n;
  if (opt_.fit_bias) {
    g.noalias() -= n * xbar * xbar.transpose();
    c.noalias() -= n * xbar * ybar.transpose();
  }
  Eigen::MatrixXd w;
  bool min_norm = false;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-10) {
    w = llt.solve(c);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double cutoff = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
    for (Eigen::Index k = 0; k < ev.size(); ++k) {
      if (ev[k] > cutoff && ev[k] > 0.0) inv[k] = 1.0 / ev[k];
    }
    w = es.eigenvectors() * inv.asDiagonal() * (es.eigenvectors().transpose() * c);
    min_norm = true;
  }
  std::vector<OlsFit> out(static_cast<std::size_t>(c.cols()));
  for (Eigen::Index t = 0; t < c.cols(); ++t) {
    OlsFit& f = out[static_cast<std::size_t>(t)];
    f.coef = w.col(t);
    f.intercept = opt_.fit_bias ? ybar[t] - xbar.dot(f.coef) : 0.0;
    f.encoding = opt_.encoding;
    f.min_norm = min_norm;
  }
  return out;
}

Eigen::MatrixXd dense_rows(const MaskMatrix& masks, std::size_t begin, std::size_t end,
                           Encoding enc) {
  if (begin > end || end > masks.rows()) throw ValidationError("dense_rows: range out of bounds");
  const double off = enc == Encoding::pm1 ? -1.0 : 0.0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(end - begin),
                                                static_cast<Eigen::Index>(masks.cols()), off);
  for (std::size_t i = begin; i < end; ++i) {
    masks.row(i).for_each_set([&](std::size_t j) {
      x(static_cast<Eigen::Index>(i - begin), static_cast<Eigen::Index>(j)) = 1.0;
    });
  }
  return x;
}

namespace {

OlsFit ols_on_rows(const MaskMatrix& masks, std::span<const std::size_t> rows,
                   std::span<const double> y, OlsOptions opt) {
  OlsAccumulator acc(masks.cols(), 1, opt);
  constexpr std::size_t kBlock = 1024;
  const double off = opt.encoding == Encoding::pm1 ? -1.0 : 0.0;
  for (std::size_t b = 0; b < rows.size(); b += kBlock) {
    const std::size_t e = std::min(rows.size(), b + kBlock);
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(e - b),
                                                  static_cast<Eigen::Index>(masks.cols()), off);
    Eigen::MatrixXd yb(static_cast<Eigen::Index>(e - b), 1);
    for (std::size_t p = b; p < e; ++p) {
      masks.row(rows[p]).for_each_set([&](std::size_t j) {
        x(static_cast<Eigen::Index>(p - b), static_cast<Eigen::Index>(j)) = 1.0;
      });
      yb(static_cast<Eigen::Index>(p - b), 0) = y[p];
    }
    acc.add(x, yb);
  }
  return acc.solve().front();
}

}  // namespace

OlsFit fit_ols(const MaskMatrix& masks, std::span<const double> y, OlsOptions opt) {
  if (y.size() != masks.rows()) throw ValidationError("fit_ols: y length != m");
  const auto rows = range(0, masks.rows());
  return ols_on_rows(masks, rows, y, opt);
}

OlsFit fit_ols(const MaskMatrix& masks, const OutputMatrix& outputs, std::size_t target,
               OlsOptions opt) {
  check_shapes(masks, outputs);
  if (target >= outputs.cols()) throw ValidationError("fit_ols: target out of range");
  std::vector<std::size_t> rows;
  std::vector<double> y;
  for (std::size_t i = 0; i < masks.rows(); ++i) {
    if (outputs.excluded(i, target)) continue;
    rows.push_back(i);
    y.push_back(outputs.value(i, target));
  }
  return ols_on_rows(masks, rows, y, opt);
}

std::vector<OlsFit> fit_ols_multi(const MaskMatrix& masks, const OutputMatrix& outputs,
                                  OlsOptions opt, std::span<const std::size_t> targets_in) {
  check_shapes(masks, outputs);
  const auto targets = all_columns(outputs.cols(), targets_in);
  std::vector<OlsFit> out(targets.size());
  std::vector<std::size_t> shared;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (outputs.any_excluded_in_column(targets[k])) {
      out[k] = fit_ols(masks, outputs, targets[k], opt);
    } else {
      shared.push_back(k);
    }
  }
  if (!shared.empty()) {
    Eigen::MatrixXd y(static_cast<Eigen::Index>(masks.rows()),
                      static_cast<Eigen::Index>(shared.size()));
    for (std::size_t i = 0; i < masks.rows(); ++i) {
      for (std::size_t s = 0; s < shared.size(); ++s) {
        y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) =
            outputs.value(i, targets[shared[s]]);
      }
    }
    OlsAccumulator acc(masks.cols(), shared.size(), opt);
    acc.add_masks(masks, y);
    auto fits = acc.solve();
    for (std::size_t s = 0; s < shared.size(); ++s) out[shared[s]] = std::move(fits[s]);
  }
  return out;
}

namespace {

Eigen::VectorXd diff_means_rows(const MaskMatrix& masks, std::span<const double> y,
                                std::span<const std::uint8_t> use) {
  const std::size_t d = masks.cols();
  Eigen::VectorXd sum_in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  std::vector<std::size_t> cnt_in(d, 0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < masks.rows(); ++i) {
    if (!use.empty() && !use[i]) continue;
    total += y[i];
    ++count;
    masks.row(i).for_each_set([&](std::size_t j) {
      sum_in[static_cast<Eigen::Index>(j)] += y[i];
      ++cnt_in[j];
    });
  }
  std::vector<std::size_t> bad;
  for (std::size_t j = 0; j < d; ++j) {
    if (cnt_in[j] == 0 || cnt_in[j] == count) bad.push_back(j);
  }
  if (!bad.empty()) {
    std::string msg = "influence undefined (index never or always included):";
    for (std::size_t k = 0; k < bad.size() && k < 20; ++k) msg += " " + std::to_string(bad[k]);
    if (bad.size() > 20) msg += " ... (" + std::to_string(bad.size()) + " total)";
    throw ValidationError(msg);
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double in = sum_in[jj] / static_cast<double>(cnt_in[j]);
    const double outm = (total - sum_in[jj]) / static_cast<double>(count - cnt_in[j]);
    out[jj] = in - outm;
  }
  return out;
}

}  // namespace

Eigen::VectorXd diff_of_means_influence(const MaskMatrix& masks, std::span<const double> y) {
  if (y.size() != masks.rows()) throw ValidationError("diff_of_means: y length != m");
  return diff_means_rows(masks, y, {});
}

Eigen::VectorXd diff_of_means_influence(const MaskMatrix& masks, const OutputMatrix& outputs,
                                        std::size_t target) {
  check_shapes(masks, outputs);
  if (target >= outputs.cols()) throw ValidationError("diff_of_means: target out of range");
  std::vector<double> y(masks.rows());
  std::vector<std::uint8_t> use(masks.rows());
  for (std::size_t i = 0; i < masks.rows(); ++i) {
    y[i] = outputs.value(i, target);
    use[i] = outputs.excluded(i, target) ? 0 : 1;
  }
  return diff_means_rows(masks, y, use);
}

MseReport eval_mse(std::span<const Datamodel> models, const MaskMatrix& masks,
                   const OutputMatrix& outputs, std::span<const std::size_t> targets) {
  check_shapes(masks, outputs);
  if (!targets.empty() && targets.size() != models.size()) {
    throw ValidationError("eval_mse: one target column per datamodel required");
  }
  MseReport rep;
  double acc = 0.0;
  std::size_t finite = 0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    const std::size_t col = targets.empty() ? k : targets[k];
    if (col >= outputs.cols()) throw ValidationError("eval_mse: target column out of range");
    if (static_cast<std::size_t>(models[k].theta.size()) != masks.cols()) {
      throw ValidationError("eval_mse: datamodel length != d");
    }
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < masks.rows(); ++i) {
      if (outputs.excluded(i, col)) continue;
      const double e = models[k].predict(masks.row(i)) - outputs.value(i, col);
      s += e * e;
      ++c;
    }
    const double v = c ? 0.5 * s / static_cast<double>(c) : kNaN;
    rep.per_target.push_back(v);
    if (c) {
      acc += v;
      ++finite;
    }
  }
  rep.average = finite ? acc / static_cast<double>(finite) : kNaN;
  return rep;
}

double eval_opt(std::span<const Eigen::MatrixXd> repeats) {
  if (repeats.empty()) throw ValidationError("eval_opt: no repeated trainings");
  double acc = 0.0;
  std::size_t cells = 0;
  for (const auto& r : repeats) {
    if (r.cols() < 2) throw ValidationError("eval_opt: need T >= 2 trainings per subset");
    for (Eigen::Index j = 0; j < r.rows(); ++j) {
      const double mu = r.row(j).mean();
      acc += (r.row(j).array() - mu).square().sum() / static_cast<double>(r.cols() - 1);
      ++cells;
    }
  }
  return 0.5 * acc / static_cast<double>(cells);
}

SparsityStats sparsity_stats(std::span<const Datamodel> models) {
  SparsityStats s;
  double acc = 0.0;
  for (const auto& m : models) {
    const std::size_t nz = m.sparsity();
    s.nonzeros.push_back(nz);
    ++s.histogram[nz];
    acc += static_cast<double>(nz);
  }
  s.mean = models.empty() ? 0.0 : acc / static_cast<double>(models.size());
  return s;
}

}  // namespace dm
