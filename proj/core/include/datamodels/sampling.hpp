#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "datamodels/core_data.hpp"

namespace dm {

/// Uniform distribution over subsets of {0..d-1} of size round(alpha * d).
struct SubsetDistribution {
  std::size_t d = 0;
  double alpha = 0.5;
  std::uint64_t seed = 0;

  /// round(alpha * d), ties to even.
  std::size_t subset_size() const;
  /// Throws ValidationError / NumericError for alpha outside (0,1) or a
  /// subset size of 0 or d.
  void validate() const;
};

/// Row i of the sampler's output; depends only on (seed, i).
SubsetMask sample_subset(const SubsetDistribution& dist, std::uint64_t row);

/// m fixed-cardinality subsets drawn by partial Fisher-Yates.
MaskMatrix sample_masks(const SubsetDistribution& dist, std::size_t m,
                        std::size_t workers = 1);

/// Each bit independently 1 with probability alpha; row i keyed by (seed, i).
MaskMatrix iid_bernoulli_masks(std::size_t d, double alpha, std::size_t m,
                               std::uint64_t seed);

/// Mask over S \ removed where every remaining index is kept independently
/// with probability alpha (alpha == 1 keeps all of them).
SubsetMask remove_and_subsample(std::size_t d,
                                std::span<const std::size_t> removed,
                                double alpha, std::uint64_t seed);

}  // namespace dm
