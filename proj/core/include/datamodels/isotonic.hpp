#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "datamodels/errors.hpp"

namespace dm {

/// Weighted least-squares fit of a non-decreasing sequence (pool adjacent
/// violators). Empty weights mean unit weights.
inline std::vector<double> isotonic_increasing(std::span<const double> y,
                                               std::span<const double> w = {}) {
  if (!w.empty() && w.size() != y.size()) throw ValidationError("isotonic: weight length mismatch");
  struct Block {
    double mean, weight;
    std::size_t len;
  };
  std::vector<Block> blocks;
  blocks.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    if (!(wi > 0.0)) throw ValidationError("isotonic: weights must be positive");
    blocks.push_back({y[i], wi, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double tw = prev.weight + top.weight;
      prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / tw;
      prev.weight = tw;
      prev.len += top.len;
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const auto& b : blocks) out.insert(out.end(), b.len, b.mean);
  return out;
}

inline std::vector<double> isotonic_decreasing(std::span<const double> y,
                                               std::span<const double> w = {}) {
  std::vector<double> neg(y.begin(), y.end());
  for (auto& v : neg) v = -v;
  auto fit = isotonic_increasing(neg, w);
  for (auto& v : fit) v = -v;
  return fit;
}

}  // namespace dm
