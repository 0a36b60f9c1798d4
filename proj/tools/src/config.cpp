#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "datamodels/errors.hpp"
#include "datamodels/rng.hpp"

namespace dmcli {

using nlohmann::json;
using dm::ValidationError;

namespace {

void check_keys(const json& obj, const std::string& where, std::set<std::string> allowed) {
  if (!obj.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key))
      throw ValidationError("config: unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config: bad value for " + where + "." + key + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config",
             {"version", "seed", "output_dir", "dataset", "trainer", "alphas", "m", "output_fns",
              "targets", "solver", "counterfactual", "support", "embed", "simulate", "lemma"});
  ExperimentConfig c;
  if (!j.contains("version")) throw ValidationError("config: missing 'version'");
  read(j, "version", c.version, "config");
  if (c.version != kConfigVersion)
    throw ValidationError("config: unsupported version " + std::to_string(c.version) +
                          " (expected " + std::to_string(kConfigVersion) + ")");
  read(j, "seed", c.seed, "config");
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  read(j, "alphas", c.alphas, "config");
  read(j, "m", c.m, "config");
  read(j, "output_fns", c.output_fns, "config");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "dataset", {"train", "test", "format", "task"});
    if (d.contains("train")) c.dataset.train = d.at("train").get<std::string>();
    if (d.contains("test") && !d.at("test").is_null()) c.dataset.test = d.at("test").get<std::string>();
    read(d, "format", c.dataset.format, "dataset");
    read(d, "task", c.dataset.task, "dataset");
    if (c.dataset.format != "csv" && c.dataset.format != "f32")
      throw ValidationError("config: dataset.format must be 'csv' or 'f32'");
    if (c.dataset.task != "classification" && c.dataset.task != "regression")
      throw ValidationError("config: dataset.task must be 'classification' or 'regression'");
  }
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    check_keys(t, "trainer", {"id", "hyperparameters"});
    read(t, "id", c.trainer, "trainer");
    read(t, "hyperparameters", c.hyperparameters, "trainer");
  }
  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    if (t.is_string()) {
      const auto s = t.get<std::string>();
      if (s != "test" && s != "train")
        throw ValidationError("config: targets must be 'test', 'train' or an index list");
      c.targets = s;
    } else {
      c.targets = t.get<std::vector<std::size_t>>();
    }
  }
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    check_keys(s, "solver",
               {"path_count", "path_ratio", "lambda_max", "max_epochs", "tol", "test_fraction"});
    read(s, "path_count", c.solver.path_count, "solver");
    read(s, "path_ratio", c.solver.path_ratio, "solver");
    if (s.contains("lambda_max") && !s.at("lambda_max").is_null())
      c.solver.lambda_max = s.at("lambda_max").get<double>();
    read(s, "max_epochs", c.solver.max_epochs, "solver");
    read(s, "tol", c.solver.tol, "solver");
    read(s, "test_fraction", c.solver.test_fraction, "solver");
    if (!(c.solver.test_fraction > 0.0 && c.solver.test_fraction < 1.0))
      throw ValidationError("config: solver.test_fraction must be in (0, 1)");
  }
  if (j.contains("counterfactual")) {
    const auto& s = j.at("counterfactual");
    check_keys(s, "counterfactual",
               {"mode", "k", "groups", "trials", "targets", "max_targets", "to_class"});
    read(s, "mode", c.counterfactual.mode, "counterfactual");
    read(s, "k", c.counterfactual.k, "counterfactual");
    read(s, "groups", c.counterfactual.groups, "counterfactual");
    read(s, "trials", c.counterfactual.trials, "counterfactual");
    read(s, "targets", c.counterfactual.targets, "counterfactual");
    read(s, "max_targets", c.counterfactual.max_targets, "counterfactual");
    read(s, "to_class", c.counterfactual.to_class, "counterfactual");
    for (const auto& g : c.counterfactual.groups)
      if (g != "top" && g != "bottom" && g != "random" && g != "nearest")
        throw ValidationError("config: unknown counterfactual group '" + g + "'");
  }
  if (j.contains("support")) {
    const auto& s = j.at("support");
    check_keys(s, "support", {"k_grid", "trials", "targets", "max_targets"});
    read(s, "k_grid", c.support.k_grid, "support");
    read(s, "trials", c.support.trials, "support");
    read(s, "targets", c.support.targets, "support");
    read(s, "max_targets", c.support.max_targets, "support");
  }
  if (j.contains("embed")) {
    const auto& s = j.at("embed");
    check_keys(s, "embed", {"clusters", "eigvecs", "components", "neighbors", "extremes"});
    read(s, "clusters", c.embed.clusters, "embed");
    read(s, "eigvecs", c.embed.eigvecs, "embed");
    read(s, "components", c.embed.components, "embed");
    read(s, "neighbors", c.embed.neighbors, "embed");
    read(s, "extremes", c.embed.extremes, "embed");
  }
  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    check_keys(s, "simulate", {"d_features", "n_train", "p_grid", "epsilon", "w_scale", "alphas", "m"});
    read(s, "d_features", c.simulate.d_features, "simulate");
    read(s, "n_train", c.simulate.n_train, "simulate");
    read(s, "p_grid", c.simulate.p_grid, "simulate");
    read(s, "epsilon", c.simulate.epsilon, "simulate");
    read(s, "w_scale", c.simulate.w_scale, "simulate");
    read(s, "alphas", c.simulate.alphas, "simulate");
    read(s, "m", c.simulate.m, "simulate");
  }
  if (j.contains("lemma")) {
    const auto& s = j.at("lemma");
    check_keys(s, "lemma", {"n", "m_grid"});
    read(s, "n", c.lemma.n, "lemma");
    read(s, "m_grid", c.lemma.m_grid, "lemma");
  }

  if (c.alphas.empty()) throw ValidationError("config: alphas must not be empty");
  for (double a : c.alphas)
    if (!(a > 0.0 && a < 1.0)) throw ValidationError("config: every alpha must lie in (0, 1)");
  if (c.output_fns.empty()) throw ValidationError("config: output_fns must not be empty");
  for (const auto& f : c.output_fns) (void)dm::parse_output_fn(f);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.string();
  j["dataset"] = {{"train", c.dataset.train.string()},
                  {"test", c.dataset.test ? json(c.dataset.test->string()) : json(nullptr)},
                  {"format", c.dataset.format},
                  {"task", c.dataset.task}};
  j["trainer"] = {{"id", c.trainer}, {"hyperparameters", c.hyperparameters}};
  j["alphas"] = c.alphas;
  j["m"] = c.m;
  j["output_fns"] = c.output_fns;
  if (const auto* s = std::get_if<std::string>(&c.targets))
    j["targets"] = *s;
  else
    j["targets"] = std::get<std::vector<std::size_t>>(c.targets);
  j["solver"] = {{"path_count", c.solver.path_count},
                 {"path_ratio", c.solver.path_ratio},
                 {"lambda_max", c.solver.lambda_max ? json(*c.solver.lambda_max) : json(nullptr)},
                 {"max_epochs", c.solver.max_epochs},
                 {"tol", c.solver.tol},
                 {"test_fraction", c.solver.test_fraction}};
  j["counterfactual"] = {{"mode", c.counterfactual.mode},
                         {"k", c.counterfactual.k},
                         {"groups", c.counterfactual.groups},
                         {"trials", c.counterfactual.trials},
                         {"targets", c.counterfactual.targets},
                         {"max_targets", c.counterfactual.max_targets},
                         {"to_class", c.counterfactual.to_class}};
  j["support"] = {{"k_grid", c.support.k_grid},
                  {"trials", c.support.trials},
                  {"targets", c.support.targets},
                  {"max_targets", c.support.max_targets}};
  j["embed"] = {{"clusters", c.embed.clusters},
                {"eigvecs", c.embed.eigvecs},
                {"components", c.embed.components},
                {"neighbors", c.embed.neighbors},
                {"extremes", c.embed.extremes}};
  j["simulate"] = {{"d_features", c.simulate.d_features},
                   {"n_train", c.simulate.n_train},
                   {"p_grid", c.simulate.p_grid},
                   {"epsilon", c.simulate.epsilon},
                   {"w_scale", c.simulate.w_scale},
                   {"alphas", c.simulate.alphas},
                   {"m", c.simulate.m}};
  j["lemma"] = {{"n", c.lemma.n}, {"m_grid", c.lemma.m_grid}};
  return j;
}

std::string config_hash(const ExperimentConfig& cfg, std::string_view stage) {
  const json full = to_json(cfg);
  json j;
  auto take = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) j[k] = full.at(k);
  };
  take({"version", "seed", "dataset", "alphas", "m"});
  if (stage != "sample") take({"trainer", "output_fns", "targets"});
  if (stage != "sample" && stage != "train") take({"solver"});
  if (stage == "full") {
    j = full;
    j.erase("output_dir");
  } else if (stage != "sample" && stage != "train" && stage != "estimate") {
    throw ValidationError("unknown hash stage '" + std::string(stage) + "'");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(dm::fnv1a64(j.dump())));
  return buf;
}

}  // namespace dmcli
