#include "datamodels/sampling.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "datamodels/errors.hpp"
#include "datamodels/parallel.hpp"
#include "datamodels/rng.hpp"

namespace dm {

namespace {
constexpr std::uint64_t kMaskStream = 0x4d41534b;  // "MASK"
constexpr std::uint64_t kBernStream = 0x4245524e;  // "BERN"
constexpr std::uint64_t kSubStream = 0x53554253;   // "SUBS"
}  // namespace

std::size_t SubsetDistribution::subset_size() const {
  // std::nearbyint honors the default FE_TONEAREST mode: half-to-even.
  return static_cast<std::size_t>(std::nearbyint(alpha * static_cast<double>(d)));
}

void SubsetDistribution::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  const auto k = subset_size();
  if (k == 0 || k == d) {
    throw NumericError("degenerate subset distribution: round(alpha*d) = " +
                       std::to_string(k) + " with d = " + std::to_string(d));
  }
}

SubsetMask sample_subset(const SubsetDistribution& dist, std::uint64_t row) {
  const std::size_t d = dist.d;
  const std::size_t k = dist.subset_size();
  Rng rng(derive_key(dist.seed, kMaskStream, row));
  std::vector<std::uint32_t> perm(d);
  std::iota(perm.begin(), perm.end(), 0u);
  SubsetMask mask(d);
  for (std::size_t t = 0; t < k; ++t) {
    const auto r = t + static_cast<std::size_t>(rng.uniform_index(d - t));
    std::swap(perm[t], perm[r]);
    mask.set(perm[t]);
  }
  return mask;
}

MaskMatrix sample_masks(const SubsetDistribution& dist, std::size_t m,
                        std::size_t workers) {
  dist.validate();
  if (m == 0) throw ValidationError("sample_masks: m must be >= 1");
  MaskMatrix out(m, dist.d, dist.alpha, dist.seed);
  parallel_for(m, workers, [&](std::size_t i) {
    out.set_row(i, sample_subset(dist, i));
  });
  return out;
}

MaskMatrix iid_bernoulli_masks(std::size_t d, double alpha, std::size_t m,
                               std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  MaskMatrix out(m, d, alpha, seed);
  for (std::size_t i = 0; i < m; ++i) {
    Rng rng(derive_key(seed, kBernStream, i));
    for (std::size_t j = 0; j < d; ++j) {
      if (rng.bernoulli(alpha)) out.set_bit(i, j);
    }
  }
  return out;
}

SubsetMask remove_and_subsample(std::size_t d,
                                std::span<const std::size_t> removed,
                                double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
  SubsetMask gone = SubsetMask::from_indices(removed, d);
  if (gone.cardinality() == d) {
    throw ValidationError("removing every training example leaves an empty training set");
  }
  Rng rng(derive_key(seed, kSubStream));
  SubsetMask mask(d);
  // One draw per index, removed or not, so two calls with the same seed differ
  // exactly on the removed indices.
  for (std::size_t j = 0; j < d; ++j) {
    const bool keep = rng.bernoulli(alpha) || alpha >= 1.0;
    if (keep && !gone.test(j)) mask.set(j);
  }
  return mask;
}

}  // namespace dm
