#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "datamodels/errors.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;

std::vector<std::string> split_stages(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Datamodels: fit and apply linear surrogates of training-set influence"};
  app.require_subcommand(1);

  std::string config_path;
  std::string stage_list;
  dmcli::RunOptions opt;
  std::string out_dir;
  app.add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--workers", opt.workers, "Worker threads (0 = all cores)");
  app.add_flag("--resume", opt.resume, "Continue partial outputs left by an interrupted run");
  app.add_option("--out", out_dir, "Output directory (overrides output_dir in the config)");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"sample", "Sample alpha-subset masks"},
      {"train", "Train on every mask row and record outputs"},
      {"estimate", "Fit LASSO datamodels"},
      {"counterfactual", "Evaluate predicted vs actual group-removal effects"},
      {"support", "Estimate data support per target"},
      {"embed", "Spectral clusters, PCA and nearest neighbors of datamodel embeddings"},
      {"compare", "Compare influence and datamodel estimators on one campaign"},
      {"simulate", "Alpha-role simulation in the binary-feature linear world"},
      {"lemma", "Numeric convergence check of OLS versus empirical influence"}};
  std::vector<std::pair<CLI::App*, std::string>> subs;
  for (const auto& [name, help] : commands) subs.emplace_back(app.add_subcommand(name, help), name);
  auto* run = app.add_subcommand("run", "Run several stages in order");
  run->add_option("--stage", stage_list, "Comma-separated stages")->default_val("sample,train,estimate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    const auto cfg = dmcli::load_config(config_path);
    opt.out = out_dir;
    std::vector<std::string> stages;
    if (run->parsed()) {
      stages = split_stages(stage_list);
    } else {
      for (const auto& [sub, name] : subs)
        if (sub->parsed()) stages.push_back(name);
    }
    for (const auto& s : stages) dmcli::run_stage(s, cfg, opt);
    return kExitOk;
  } catch (const dmcli::NonConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dm::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
