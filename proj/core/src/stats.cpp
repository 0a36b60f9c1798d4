#include "datamodels/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "datamodels/errors.hpp"

namespace dm::stats {

namespace {
void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
}
}  // namespace

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double mu = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  return s / static_cast<double>(x.size() - 1);
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "pearson");
  if (x.size() < 2) return std::nullopt;
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - mx, b = y[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::optional<double> auc(std::span<const double> score, std::span<const bool> positive) {
  require_same_size(score.size(), positive.size(), "auc");
  const auto ranks = average_ranks(score);
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (positive[i]) {
      pos_rank_sum += ranks[i];
      ++n_pos;
    }
  }
  const std::size_t n_neg = score.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double ols_slope(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "ols_slope");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

double normal_cdf(double z) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), z);
}

double chi_square_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(
      boost::math::complement(boost::math::chi_squared_distribution<double>(dof), x));
}

NormalityResult dagostino_k2(std::span<const double> sample) {
  const double n = static_cast<double>(sample.size());
  if (sample.size() < 8) {
    throw ValidationError("normality test needs at least 8 samples");
  }
  const double mu = mean(sample);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : sample) {
    const double c = v - mu;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  NormalityResult out;
  if (!(m2 > 1e-300) ||
      m2 <= 1e-24 * std::max(1.0, mu * mu)) {
    out.saturated = true;
    out.statistic = std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
    return out;
  }

  // Skewness test.
  const double b1 = m3 / std::pow(m2, 1.5);
  double y = b1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
  const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                       ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
  const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  const double alpha = std::sqrt(2.0 / (w2 - 1.0));
  if (y == 0.0) y = 1.0;
  const double ya = y / alpha;
  const double z_skew = delta * std::log(ya + std::sqrt(ya * ya + 1.0));

  // Kurtosis test.
  const double b2 = m4 / (m2 * m2);
  const double e = 3.0 * (n - 1.0) / (n + 1.0);
  const double var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) /
                        ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
  const double x = (b2 - e) / std::sqrt(var_b2);
  const double sqrt_beta1 =
      6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
      std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
  const double a = 6.0 + 8.0 / sqrt_beta1 *
                             (2.0 / sqrt_beta1 + std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
  const double term1 = 1.0 - 2.0 / (9.0 * a);
  const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
  double z_kurt;
  if (denom == 0.0) {
    z_kurt = std::numeric_limits<double>::infinity();
  } else {
    const double term2 = std::copysign(std::cbrt((1.0 - 2.0 / a) / std::abs(denom)), denom);
    z_kurt = (term1 - term2) / std::sqrt(2.0 / (9.0 * a));
  }

  out.statistic = z_skew * z_skew + z_kurt * z_kurt;
  out.p_value = std::exp(-0.5 * out.statistic);  // chi-square(2) upper tail
  return out;
}

double ks_distance_uniform(std::span<const double> p) {
  if (p.empty()) return 1.0;
  std::vector<double> s(p.begin(), p.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double u = std::clamp(s[i], 0.0, 1.0);
    d = std::max(d, static_cast<double>(i + 1) / n - u);
    d = std::max(d, u - static_cast<double>(i) / n);
  }
  return d;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  require_same_size(a.size(), b.size(), "adjusted_rand_index");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (auto& [k, v] : joint) sum_joint += c2(v);
  for (auto& [k, v] : ca) sum_a += c2(v);
  for (auto& [k, v] : cb) sum_b += c2(v);
  const double total = c2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

}  // namespace dm::stats
