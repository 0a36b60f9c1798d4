#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace dmcli {

struct RunOptions {
  std::size_t workers = 0;  ///< 0: all cores
  bool resume = false;
  std::filesystem::path out;  ///< overrides cfg.output_dir when non-empty
};

/// Raised after artifacts are written when a solver hit its iteration cap.
class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string> kStages{"sample", "train", "estimate", "counterfactual",
                                              "support", "embed", "compare", "simulate",
                                              "lemma"};

/// Runs one stage by name.
void run_stage(const std::string& stage, const ExperimentConfig& cfg, const RunOptions& opt);

}  // namespace dmcli
