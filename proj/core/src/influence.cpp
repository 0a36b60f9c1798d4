#include "datamodels/influence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "datamodels/errors.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/stats.hpp"

namespace dm {

namespace {
constexpr std::uint64_t kLemmaStream = 0x4c454d41;  // "LEMA"
constexpr std::uint64_t kMultiStream = 0x4d4c4e52;  // "MLNR"
}  // namespace

SetFunction synthetic_correctness(Eigen::VectorXd theta_star) {
  return [theta = std::move(theta_star)](MaskView v) {
    if (static_cast<Eigen::Index>(v.size()) != theta.size()) {
      throw ValidationError("synthetic correctness: mask width != n");
    }
    double s = 0.0;
    v.for_each_set([&](std::size_t j) { s += theta[static_cast<Eigen::Index>(j)]; });
    return s > 0.0 ? 1.0 : 0.0;
  };
}

std::vector<LemmaPoint> lemma_convergence_check(std::size_t n, std::span<const std::size_t> m_grid,
                                                const SetFunction& outputs, std::uint64_t seed,
                                                std::size_t workers) {
  if (n < 2 || n % 2 != 0) throw ValidationError("exact half-subsets need an even n >= 2");
  if (m_grid.empty()) throw ValidationError("lemma check needs at least one m");
  std::vector<std::size_t> grid(m_grid.begin(), m_grid.end());
  std::sort(grid.begin(), grid.end());
  if (grid.front() == 0) throw ValidationError("m must be positive");
  const std::size_t m_max = grid.back();

  const SubsetDistribution dist{n, 0.5, derive_key(seed, kLemmaStream)};
  const MaskMatrix masks = sample_masks(dist, m_max, workers);
  Eigen::VectorXd y(static_cast<Eigen::Index>(m_max));
  parallel_for(m_max, workers, [&](std::size_t i) {
    y[static_cast<Eigen::Index>(i)] = outputs(masks.row(i));
  });

  OlsAccumulator acc(n, 1, OlsOptions{Encoding::pm1, false});
  Eigen::VectorXd sum_in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd cnt_in = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  double total = 0.0;
  std::size_t done = 0;
  std::vector<LemmaPoint> out;
  for (auto m : grid) {
    constexpr std::size_t kBlock = 4096;
    for (std::size_t b = done; b < m; b += kBlock) {
      const std::size_t e = std::min(m, b + kBlock);
      acc.add(dense_rows(masks, b, e, Encoding::pm1),
              y.segment(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)));
      for (std::size_t i = b; i < e; ++i) {
        const double yi = y[static_cast<Eigen::Index>(i)];
        total += yi;
        masks.row(i).for_each_set([&](std::size_t j) {
          sum_in[static_cast<Eigen::Index>(j)] += yi;
          cnt_in[static_cast<Eigen::Index>(j)] += 1.0;
        });
      }
    }
    done = m;
    const Eigen::VectorXd w_ols = acc.solve().front().coef;
    Eigen::VectorXd w_infl(static_cast<Eigen::Index>(n));
    const auto mm = static_cast<double>(m);
    for (Eigen::Index j = 0; j < w_infl.size(); ++j) {
      if (cnt_in[j] == 0.0 || cnt_in[j] == mm) {
        throw ValidationError("m=" + std::to_string(m) + " leaves index " + std::to_string(j) +
                              " never or always included");
      }
      w_infl[j] = sum_in[j] / cnt_in[j] - (total - sum_in[j]) / (mm - cnt_in[j]);
    }
    LemmaPoint p;
    p.m = m;
    p.gap = ((1.0 + 2.0 / static_cast<double>(n)) * w_ols - 0.5 * w_infl).norm();
    // Rounding residue on constant outputs is not signal.
    const double floor = 1e-10 * (1.0 + y.head(static_cast<Eigen::Index>(m)).cwiseAbs().maxCoeff());
    const double scale = w_infl.norm();
    if (scale <= floor && p.gap <= floor) {
      p.gap = 0.0;
      p.relative = 0.0;
    } else {
      p.relative = scale > floor ? p.gap / scale : std::numeric_limits<double>::infinity();
    }
    out.push_back(p);
  }
  return out;
}

const EstimatorMetrics& ComparisonReport::at(std::string_view id) const {
  for (const auto& r : rows) {
    if (r.id == id) return r;
  }
  throw ValidationError("no estimator '" + std::string(id) + "' in the report");
}

namespace {

// Diff-of-means on fitting rows, turned into a datamodel with a fitted bias.
Datamodel influence_datamodel(const MaskMatrix& fit_masks, const OutputMatrix& fit_out,
                              std::size_t col) {
  Eigen::VectorXd theta = diff_of_means_influence(fit_masks, fit_out, col);
  bool fixed = true;
  const std::size_t k0 = fit_masks.rows() ? fit_masks.row(0).cardinality() : 0;
  for (std::size_t i = 1; i < fit_masks.rows() && fixed; ++i) {
    fixed = fit_masks.row(i).cardinality() == k0;
  }
  const auto d = static_cast<double>(fit_masks.cols());
  if (fixed) theta *= (d - 1.0) / d;
  Datamodel dm;
  dm.theta = std::move(theta);
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < fit_masks.rows(); ++i) {
    if (fit_out.excluded(i, col)) continue;
    s += fit_out.value(i, col) - dm.predict(fit_masks.row(i));
    ++c;
  }
  dm.bias = c ? s / static_cast<double>(c) : 0.0;
  dm.target_id = col;
  dm.output_fn = fit_out.output_fn();
  dm.trainer_id = fit_out.trainer_id();
  dm.alpha = fit_masks.alpha();
  return dm;
}

EstimatorMetrics score(std::string id, const std::vector<Datamodel>& models,
                       const MaskMatrix& test_masks, const OutputMatrix& truth,
                       const OutputMatrix& correct, bool with_mse) {
  EstimatorMetrics m;
  m.id = std::move(id);
  double sp = 0.0, auc = 0.0;
  std::size_t nsp = 0, nauc = 0;
  for (std::size_t k = 0; k < models.size(); ++k) {
    std::vector<double> pred, actual;
    std::vector<char> positive;
    for (std::size_t i = 0; i < test_masks.rows(); ++i) {
      if (truth.excluded(i, k)) continue;
      pred.push_back(models[k].predict(test_masks.row(i)));
      actual.push_back(truth.value(i, k));
      positive.push_back(correct.value(i, k) > 0.5);
    }
    // std::vector<bool> is not contiguous; stage the flags in a plain array.
    std::unique_ptr<bool[]> pos(new bool[positive.size()]);
    for (std::size_t i = 0; i < positive.size(); ++i) pos[i] = positive[i] != 0;
    if (auto r = stats::spearman(pred, actual)) {
      sp += *r;
      ++nsp;
    } else {
      ++m.spearman_undefined;
    }
    if (auto a = stats::auc(pred, std::span<const bool>(pos.get(), positive.size()))) {
      auc += *a;
      ++nauc;
    } else {
      ++m.auc_undefined;
    }
  }
  m.spearman = nsp ? sp / static_cast<double>(nsp) : std::numeric_limits<double>::quiet_NaN();
  m.auc = nauc ? auc / static_cast<double>(nauc) : std::numeric_limits<double>::quiet_NaN();
  if (with_mse) m.mse = eval_mse(models, test_masks, truth).average;
  return m;
}

}  // namespace

ComparisonReport compare_estimators(const MaskMatrix& masks, const OutputMatrix& margins,
                                    const OutputMatrix& correctness, const Split& split,
                                    const LassoConfig& lasso) {
  if (margins.rows() != masks.rows() || correctness.rows() != masks.rows() ||
      margins.cols() != correctness.cols()) {
    throw ValidationError("margin and correctness outputs must come from the same campaign");
  }
  if (split.test == 0) throw ValidationError("comparison needs held-out rows");
  const std::size_t fit_end = split.train + split.val;
  const MaskMatrix fit_masks = masks.slice(0, fit_end);
  const MaskMatrix test_masks = masks.slice(fit_end, masks.rows());
  const OutputMatrix fit_margin = margins.slice(0, fit_end);
  const OutputMatrix fit_correct = correctness.slice(0, fit_end);
  const OutputMatrix test_margin = margins.slice(fit_end, masks.rows());
  const OutputMatrix test_correct = correctness.slice(fit_end, masks.rows());
  const std::size_t n = margins.cols();

  std::vector<Datamodel> dm_correct, dm_margin, dm_ols, dm_lasso;
  for (std::size_t j = 0; j < n; ++j) {
    dm_correct.push_back(influence_datamodel(fit_masks, fit_correct, j));
    dm_margin.push_back(influence_datamodel(fit_masks, fit_margin, j));
  }
  for (auto& f : fit_ols_multi(fit_masks, fit_margin)) dm_ols.push_back(f.as_datamodel());
  for (auto& f : fit_lasso_multi(masks, margins, split, lasso)) dm_lasso.push_back(std::move(f.model));

  ComparisonReport rep;
  rep.rows.push_back(score("diff_means_correctness", dm_correct, test_masks, test_correct,
                           test_correct, false));
  rep.rows.push_back(score("diff_means_margin", dm_margin, test_masks, test_margin, test_correct, true));
  rep.rows.push_back(score("lasso_margin", dm_lasso, test_masks, test_margin, test_correct, true));
  rep.rows.push_back(score("ols", dm_ols, test_masks, test_margin, test_correct, true));
  return rep;
}

double multilinear_partial(std::span<const double> table, std::size_t n, std::size_t i,
                           std::span<const double> x) {
  if (n > 20) throw ValidationError("multilinear table limited to n <= 20");
  if (table.size() != (std::size_t{1} << n)) {
    throw ValidationError("table size " + std::to_string(table.size()) + " != 2^n");
  }
  if (i >= n || x.size() != n) throw ValidationError("multilinear partial: bad index or point");
  double acc = 0.0;
  const std::size_t bit = std::size_t{1} << i;
  for (std::size_t s = 0; s < table.size(); ++s) {
    if (s & bit) continue;
    double w = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      w *= (s >> j) & 1u ? x[j] : 1.0 - x[j];
    }
    acc += w * (table[s | bit] - table[s]);
  }
  return acc;
}

MultilinearCheck multilinear_derivative_check(std::span<const double> table, std::size_t n,
                                              std::size_t i, double alpha, std::size_t samples,
                                              std::uint64_t seed) {
  if (n > 12) throw ValidationError("exhaustive check limited to n <= 12");
  MultilinearCheck out;
  const std::vector<double> x(n, alpha);
  out.analytic = multilinear_partial(table, n, i, x);
  if (samples < 2) throw ValidationError("need at least two samples");
  double s_in = 0.0, ss_in = 0.0, s_out = 0.0, ss_out = 0.0;
  std::size_t c_in = 0, c_out = 0;
  for (std::size_t r = 0; r < samples; ++r) {
    Rng rng(derive_key(seed, kMultiStream, r));
    std::size_t s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (rng.bernoulli(alpha)) s |= std::size_t{1} << j;
    }
    const double v = table[s];
    if ((s >> i) & 1u) {
      s_in += v;
      ss_in += v * v;
      ++c_in;
    } else {
      s_out += v;
      ss_out += v * v;
      ++c_out;
    }
  }
  if (c_in < 2 || c_out < 2) throw ValidationError("too few samples on one side of index i");
  const double m_in = s_in / static_cast<double>(c_in);
  const double m_out = s_out / static_cast<double>(c_out);
  const double v_in = (ss_in - static_cast<double>(c_in) * m_in * m_in) / static_cast<double>(c_in - 1);
  const double v_out =
      (ss_out - static_cast<double>(c_out) * m_out * m_out) / static_cast<double>(c_out - 1);
  out.estimate = m_in - m_out;
  out.se = std::sqrt(std::max(0.0, v_in) / static_cast<double>(c_in) +
                     std::max(0.0, v_out) / static_cast<double>(c_out));
  return out;
}

}  // namespace dm
