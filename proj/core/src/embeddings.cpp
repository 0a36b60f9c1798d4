#include "datamodels/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "datamodels/errors.hpp"
#include "datamodels/rng.hpp"

namespace dm {

namespace {

constexpr std::uint64_t kKMeansStream = 0x4b4d4e53;  // "KMNS"
constexpr std::uint64_t kPcaStream = 0x50434149;     // "PCAI"
constexpr double kDegreeFloor = 1e-12;

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Index idx(std::size_t i) { return static_cast<Index>(i); }

std::vector<std::size_t> order_by(const VectorXd& key, bool descending) {
  std::vector<std::size_t> order(static_cast<std::size_t>(key.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? key[idx(a)] > key[idx(b)] : key[idx(a)] < key[idx(b)];
  });
  return order;
}

KMeansResult lloyd(const MatrixXd& pts, std::size_t k, Rng& rng, std::size_t max_iter) {
  const Index n = pts.rows();
  MatrixXd centers(idx(k), pts.cols());

  // k-means++ seeding
  VectorXd d2(n);
  centers.row(0) = pts.row(static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  for (Index i = 0; i < n; ++i) d2[i] = (pts.row(i) - centers.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    }
    centers.row(idx(c)) = pts.row(pick);
    for (Index i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (pts.row(i) - centers.row(idx(c))).squaredNorm());
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  VectorXd best(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = (pts.row(i) - centers.row(idx(c))).squaredNorm();
        if (dist < bd) {
          bd = dist;
          arg = static_cast<int>(c);
        }
      }
      best[i] = bd;
      if (labels[static_cast<std::size_t>(i)] != arg) {
        labels[static_cast<std::size_t>(i)] = arg;
        changed = true;
      }
    }
    if (!changed) break;

    MatrixXd sums = MatrixXd::Zero(idx(k), pts.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Index i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
      sums.row(idx(c)) += pts.row(i);
      ++counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(idx(c)) = sums.row(idx(c)) / static_cast<double>(counts[c]);
      } else {
        // empty cluster takes the point farthest from its center
        Index far = 0;
        best.maxCoeff(&far);
        centers.row(idx(c)) = pts.row(far);
        best[far] = 0.0;
      }
    }
  }

  KMeansResult out;
  out.inertia = 0.0;
  for (Index i = 0; i < n; ++i)
    out.inertia += (pts.row(i) - centers.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  out.labels = std::move(labels);
  out.centers = std::move(centers);
  return out;
}

void relabel_by_appearance(KMeansResult& r) {
  std::vector<int> map(static_cast<std::size_t>(r.centers.rows()), -1);
  int next = 0;
  for (int& l : r.labels) {
    auto& m = map[static_cast<std::size_t>(l)];
    if (m < 0) m = next++;
    l = m;
  }
  MatrixXd centers = r.centers;
  for (std::size_t c = 0; c < map.size(); ++c)
    if (map[c] >= 0) centers.row(map[c]) = r.centers.row(idx(c));
  r.centers = std::move(centers);
}

}  // namespace

EmbeddingMatrix EmbeddingMatrix::from_datamodels(std::span<const Datamodel> models) {
  if (models.empty()) throw ValidationError("embeddings: no datamodels");
  const Index d = models.front().theta.size();
  EmbeddingMatrix emb;
  emb.rows.resize(idx(models.size()), d);
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (models[i].theta.size() != d)
      throw ValidationError("embeddings: datamodel " + std::to_string(i) + " has d = " +
                            std::to_string(models[i].theta.size()) + ", expected " +
                            std::to_string(d));
    emb.rows.row(idx(i)) = models[i].theta.transpose();
  }
  return emb;
}

EmbeddingMatrix EmbeddingMatrix::normalize() const {
  EmbeddingMatrix out;
  out.rows = rows;
  out.normalized = true;
  for (Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (norm > 0.0)
      out.rows.row(i) /= norm;
    else
      out.zero_rows.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

double median_pairwise_distance(const MatrixXd& rows) {
  const Index n = rows.rows();
  if (n < 2) throw ValidationError("median pairwise distance needs at least 2 rows");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dist.push_back((rows.row(i) - rows.row(j)).norm());
  const std::size_t h = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(h), dist.end());
  double med = dist[h];
  if (dist.size() % 2 == 0) {
    const double lo = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(h));
    med = 0.5 * (med + lo);
  }
  return med;
}

MatrixXd rbf_similarity(const EmbeddingMatrix& emb, std::optional<double> sigma) {
  const Index n = emb.rows.rows();
  double s = sigma ? *sigma : (n >= 2 ? median_pairwise_distance(emb.rows) : 1.0);
  if (sigma && !(s > 0.0)) throw ValidationError("rbf sigma must be positive");
  if (!(s > 0.0)) s = 1.0;
  const double inv = 1.0 / (2.0 * s * s);
  MatrixXd a(n, n);
  for (Index i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v = std::exp(-(emb.rows.row(i) - emb.rows.row(j)).squaredNorm() * inv);
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  return a;
}

KMeansResult kmeans(const MatrixXd& points, std::size_t k, std::size_t restarts,
                    std::uint64_t seed, std::size_t max_iter) {
  if (k == 0 || k > static_cast<std::size_t>(points.rows()))
    throw ValidationError("kmeans: k = " + std::to_string(k) + " with " +
                          std::to_string(points.rows()) + " points");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    Rng rng(derive_key(seed, kKMeansStream, r));
    KMeansResult cur = lloyd(points, k, rng, max_iter);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  relabel_by_appearance(best);
  return best;
}

MatrixXd normalized_laplacian(const MatrixXd& a, bool* floored) {
  if (a.rows() != a.cols()) throw ValidationError("affinity matrix must be square");
  const Index n = a.rows();
  VectorXd inv_sqrt(n);
  bool any = false;
  for (Index i = 0; i < n; ++i) {
    double deg = a.row(i).sum();
    if (deg < kDegreeFloor) {
      deg = kDegreeFloor;
      any = true;
    }
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  if (floored) *floored = any;
  MatrixXd l = -(inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  return 0.5 * (l + l.transpose());
}

SpectralResult spectral_cluster(const MatrixXd& a, const SpectralConfig& cfg) {
  const auto n = static_cast<std::size_t>(a.rows());
  if (cfg.clusters == 0 || cfg.clusters > n)
    throw ValidationError("spectral clustering: " + std::to_string(cfg.clusters) +
                          " clusters for " + std::to_string(n) + " nodes");
  SpectralResult out;
  const MatrixXd l = normalized_laplacian(a, &out.degree_floored);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(l);
  if (es.info() != Eigen::Success) throw NumericError("spectral clustering: eigensolver failed");
  out.eigenvalues = es.eigenvalues();

  const std::size_t e = std::min(cfg.eigvecs == 0 ? cfg.clusters : cfg.eigvecs, n);
  MatrixXd u = es.eigenvectors().leftCols(idx(e));
  for (Index i = 0; i < u.rows(); ++i) {
    const double norm = u.row(i).norm();
    if (norm > 0.0) u.row(i) /= norm;
  }
  out.labels = kmeans(u, cfg.clusters, cfg.restarts, cfg.seed).labels;
  return out;
}

PcaModel fit_pca(const EmbeddingMatrix& emb, std::size_t k, const PcaConfig& cfg) {
  const auto n = static_cast<std::size_t>(emb.rows.rows());
  const auto d = static_cast<std::size_t>(emb.rows.cols());
  if (k > std::min(n, d))
    throw ValidationError("pca: k = " + std::to_string(k) + " exceeds min(n, d) = " +
                          std::to_string(std::min(n, d)));
  if (n < 2) throw ValidationError("pca needs at least 2 rows");

  PcaModel model;
  model.mean = emb.rows.colwise().mean().transpose();
  const MatrixXd x = emb.rows.rowwise() - model.mean.transpose();
  const double scale = 1.0 / static_cast<double>(n - 1);
  model.total_variance = x.squaredNorm() * scale;
  if (k == 0) {
    model.components.resize(0, idx(d));
    model.explained_variance.resize(0);
    model.converged = true;
    return model;
  }

  const std::size_t p = std::min(k + cfg.oversample, std::min(n, d));
  Rng rng(derive_key(cfg.seed, kPcaStream));
  MatrixXd q(idx(d), idx(p));
  for (Index j = 0; j < q.cols(); ++j)
    for (Index i = 0; i < q.rows(); ++i) q(i, j) = rng.normal();
  q = Eigen::HouseholderQR<MatrixXd>(q).householderQ() * MatrixXd::Identity(idx(d), idx(p));

  VectorXd evals;
  MatrixXd vecs;
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    const MatrixXd z = x.transpose() * (x * q);
    q = Eigen::HouseholderQR<MatrixXd>(z).householderQ() * MatrixXd::Identity(idx(d), idx(p));

    // Rayleigh-Ritz on the current subspace
    const MatrixXd xq = x * q;
    const MatrixXd b = (xq.transpose() * xq) * scale;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(b);
    evals = es.eigenvalues().reverse();
    vecs = q * es.eigenvectors().rowwise().reverse();
    q = vecs;
    model.iterations = it;

    const double top = std::max(evals[0], 0.0);
    if (top <= 0.0) {
      model.converged = true;
      break;
    }
    const MatrixXd cv = x.transpose() * (x * vecs.leftCols(idx(k))) * scale;
    double worst = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      worst = std::max(worst, (cv.col(idx(i)) - evals[idx(i)] * vecs.col(idx(i))).norm() / top);
    if (worst < cfg.tol) {
      model.converged = true;
      break;
    }
  }

  model.components = vecs.leftCols(idx(k)).transpose();
  model.explained_variance = evals.head(idx(k)).cwiseMax(0.0);
  for (std::size_t i = 0; i < k; ++i) {
    Index arg = 0;
    model.components.row(idx(i)).cwiseAbs().maxCoeff(&arg);
    if (model.components(idx(i), arg) < 0.0) model.components.row(idx(i)) *= -1.0;
    if (model.explained_variance[idx(i)] <= 1e-12 * std::max(model.total_variance, 1e-300))
      model.rank_deficient = true;
  }
  return model;
}

std::vector<double> explained_variance_curve(const PcaModel& model) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(model.explained_variance.size()));
  double acc = 0.0;
  for (Index i = 0; i < model.explained_variance.size(); ++i) {
    acc += model.explained_variance[i];
    out.push_back(model.total_variance > 0.0 ? acc / model.total_variance : 0.0);
  }
  return out;
}

MatrixXd project(const PcaModel& model, const EmbeddingMatrix& emb) {
  if (emb.rows.cols() != model.mean.size())
    throw ValidationError("pca projection: embedding d = " + std::to_string(emb.rows.cols()) +
                          ", model d = " + std::to_string(model.mean.size()));
  return (emb.rows.rowwise() - model.mean.transpose()) * model.components.transpose();
}

PcExtremes pc_extremes(const PcaModel& model, const EmbeddingMatrix& emb, std::size_t component,
                       std::size_t count) {
  if (component >= static_cast<std::size_t>(model.components.rows()))
    throw ValidationError("pc_extremes: component " + std::to_string(component) + " out of range");
  const VectorXd proj = project(model, emb).col(idx(component));
  count = std::min(count, static_cast<std::size_t>(proj.size()));
  PcExtremes out;
  out.top = order_by(proj, true);
  out.top.resize(count);
  out.bottom = order_by(proj, false);
  out.bottom.resize(count);
  return out;
}

PcRemoval pc_removal_spec(const PcaModel& model, std::size_t component, std::size_t k_remove,
                          int sign, const PcExtremes& groups, std::size_t n_targets,
                          std::size_t trials) {
  if (component >= static_cast<std::size_t>(model.components.rows()))
    throw ValidationError("pc_removal_spec: component " + std::to_string(component) +
                          " out of range");
  if (sign == 0) throw ValidationError("pc_removal_spec: sign must be +1 or -1");
  const VectorXd v = model.components.row(idx(component)).transpose();
  if (k_remove > static_cast<std::size_t>(v.size()))
    throw ValidationError("pc_removal_spec: k = " + std::to_string(k_remove) + " exceeds d = " +
                          std::to_string(v.size()));

  PcRemoval out;
  out.removed = order_by(v, sign > 0);
  out.removed.resize(k_remove);
  out.positive_group = groups.top;
  out.negative_group = groups.bottom;
  out.all_targets.resize(n_targets);
  std::iota(out.all_targets.begin(), out.all_targets.end(), std::size_t{0});

  const std::string tag = "pc" + std::to_string(component) + (sign > 0 ? "+" : "-");
  auto emit = [&](const std::vector<std::size_t>& group, const std::string& name) {
    for (std::size_t t : group) {
      if (t >= n_targets)
        throw ValidationError("pc_removal_spec: target " + std::to_string(t) + " out of range");
      CounterfactualSpec spec;
      spec.target = t;
      spec.removed = out.removed;
      spec.mode = CounterfactualMode::remove;
      spec.trials = trials;
      spec.group = tag + ":" + name;
      out.specs.push_back(std::move(spec));
    }
  };
  emit(out.positive_group, "top");
  emit(out.negative_group, "bottom");
  emit(out.all_targets, "all");
  return out;
}

Neighbors top_weight_neighbors(const Datamodel& dm, std::size_t count, NeighborKey key) {
  Neighbors out;
  out.no_signal = dm.theta.size() == 0 || dm.theta.cwiseAbs().maxCoeff() == 0.0;
  VectorXd k;
  switch (key) {
    case NeighborKey::positive: k = dm.theta; break;
    case NeighborKey::negative: k = -dm.theta; break;
    case NeighborKey::magnitude: k = dm.theta.cwiseAbs(); break;
  }
  out.indices = order_by(k, true);
  out.indices.resize(std::min(count, out.indices.size()));
  return out;
}

}  // namespace dm
