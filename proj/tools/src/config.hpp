#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "datamodels/core_data.hpp"
#include "datamodels/trainers.hpp"

namespace dmcli {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
  std::filesystem::path train;
  std::optional<std::filesystem::path> test;
  std::string format = "csv";  ///< csv | f32
  std::string task = "classification";  ///< classification | regression
};

struct SolverConfig {
  std::size_t path_count = 100;
  double path_ratio = 100.0;
  std::optional<double> lambda_max;
  std::size_t max_epochs = 50;
  double tol = 1e-7;
  double test_fraction = 0.1;
};

struct CounterfactualConfig {
  std::string mode = "remove";
  std::vector<std::size_t> k{10, 20, 40, 80};
  std::vector<std::string> groups{"top", "bottom", "random"};
  std::size_t trials = 20;
  std::vector<std::size_t> targets;  ///< empty: the first `max_targets`
  std::size_t max_targets = 10;
  int to_class = -1;
};

struct SupportConfig {
  std::vector<std::size_t> k_grid{10, 20, 40, 80, 160, 320, 640, 1280};
  std::size_t trials = 20;
  std::vector<std::size_t> targets;
  std::size_t max_targets = 10;
};

struct EmbedConfig {
  std::size_t clusters = 2;
  std::size_t eigvecs = 0;
  std::size_t components = 5;
  std::size_t neighbors = 5;
  std::size_t extremes = 5;
};

struct SimulateConfig {
  std::size_t d_features = 150;
  std::size_t n_train = 125;
  std::vector<double> p_grid{0.1, 0.2, 0.3, 0.4, 0.5};
  double epsilon = 0.1;
  double w_scale = 1.0;
  std::vector<double> alphas{0.1, 0.3, 0.5, 0.7, 0.9};
  std::size_t m = 200000;
};

struct LemmaConfig {
  std::size_t n = 20;
  std::vector<std::size_t> m_grid{2000, 20000, 200000};
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DatasetConfig dataset;
  std::string trainer = "minnorm";
  dm::Hyperparameters hyperparameters;
  std::vector<double> alphas{0.5};
  std::size_t m = 1000;
  std::vector<std::string> output_fns{"margin"};
  /// "test", "train", or an explicit list of training indices.
  std::variant<std::string, std::vector<std::size_t>> targets = std::string("test");
  SolverConfig solver;
  CounterfactualConfig counterfactual;
  SupportConfig support;
  EmbedConfig embed;
  SimulateConfig simulate;
  LemmaConfig lemma;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Hex FNV-1a of the canonical JSON dump (keys sorted, defaults filled in)
/// restricted to the fields a stage's artifacts depend on: "sample",
/// "train", "estimate", or "full" (everything except output_dir).
std::string config_hash(const ExperimentConfig& cfg, std::string_view stage = "full");

}  // namespace dmcli
