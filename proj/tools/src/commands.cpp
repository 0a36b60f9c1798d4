#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "dataset.hpp"
#include "datamodels/counterfactuals.hpp"
#include "datamodels/embeddings.hpp"
#include "datamodels/errors.hpp"
#include "datamodels/estimators.hpp"
#include "datamodels/formats.hpp"
#include "datamodels/influence.hpp"
#include "datamodels/rng.hpp"
#include "datamodels/sampling.hpp"
#include "datamodels/simulation.hpp"
#include "datamodels/stats.hpp"
#include "datamodels/trainers.hpp"

namespace dmcli {

namespace fs = std::filesystem;
using nlohmann::json;
using dm::ValidationError;

namespace {

constexpr std::size_t kTrainChunk = 256;

// Per-stage seeds: derive_key(config seed, fnv1a64(stage name), alpha index).
std::uint64_t stage_seed(const ExperimentConfig& cfg, std::string_view stage, std::size_t ai = 0) {
  return dm::derive_key(cfg.seed, dm::fnv1a64(stage), ai);
}

struct Context {
  const ExperimentConfig& cfg;
  RunOptions opt;
  fs::path out;

  Context(const ExperimentConfig& c, const RunOptions& o)
      : cfg(c), opt(o), out(o.out.empty() ? c.output_dir : o.out) {
    fs::create_directories(out);
  }

  fs::path alpha_dir(std::size_t ai) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "alpha_%g", cfg.alphas.at(ai));
    fs::path p = out / buf;
    fs::create_directories(p);
    return p;
  }
  fs::path masks_path(std::size_t ai) const { return alpha_dir(ai) / "masks.dmdm"; }
  fs::path outputs_path(std::size_t ai, const std::string& fn) const {
    return alpha_dir(ai) / ("outputs_" + fn + ".dmou");
  }
  fs::path models_path(std::size_t ai, const std::string& fn) const {
    return alpha_dir(ai) / ("datamodels_" + fn + ".dmth");
  }
};

fs::path meta_path(const fs::path& artifact) { return fs::path(artifact.string() + ".meta.json"); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void write_meta(const fs::path& artifact, const std::string& kind, const std::string& hash,
                json extra = json::object()) {
  extra["kind"] = kind;
  extra["config_hash"] = hash;
  write_text_atomic(meta_path(artifact), extra.dump(2) + "\n");
}

json read_meta(const fs::path& artifact) {
  std::ifstream in(meta_path(artifact));
  if (!in) throw ValidationError("missing metadata " + meta_path(artifact).string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(meta_path(artifact).string() + ": " + e.what());
  }
}

/// Throws unless the artifact exists and was produced under `hash`.
json require_artifact(const fs::path& artifact, const std::string& hash, const char* stage) {
  if (!fs::exists(artifact))
    throw ValidationError("missing " + artifact.string() + " (run the '" + stage + "' stage first)");
  json meta = read_meta(artifact);
  if (meta.value("config_hash", "") != hash)
    throw ValidationError(artifact.string() + " was produced under config hash " +
                          meta.value("config_hash", "?") + ", current is " + hash +
                          "; refusing to mix artifacts");
  return meta;
}

bool up_to_date(const fs::path& artifact, const std::string& hash) {
  if (!fs::exists(artifact) || !fs::exists(meta_path(artifact))) return false;
  return read_meta(artifact).value("config_hash", "") == hash;
}

void write_summary(const Context& ctx, const std::string& command, json body) {
  body["command"] = command;
  body["config_hash"] = config_hash(ctx.cfg);
  fs::create_directories(ctx.out / "summary");
  write_text_atomic(ctx.out / "summary" / (command + ".json"), body.dump(2) + "\n");
  std::cout << command << ": " << body.dump() << "\n";
}

dm::TrainingSet load_train(const ExperimentConfig& cfg) {
  if (cfg.dataset.train.empty()) throw ValidationError("config: dataset.train is required");
  return load_dataset(cfg.dataset.train, cfg.dataset.format, cfg.dataset.task == "regression");
}

dm::TargetSet load_targets(const ExperimentConfig& cfg, const dm::TrainingSet& train) {
  if (const auto* list = std::get_if<std::vector<std::size_t>>(&cfg.targets)) {
    return dm::TargetSet::from_training(train, *list);
  }
  if (std::get<std::string>(cfg.targets) == "train") {
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return dm::TargetSet::from_training(train, all);
  }
  if (!cfg.dataset.test) throw ValidationError("config: targets = 'test' needs dataset.test");
  const auto test = load_dataset(*cfg.dataset.test, cfg.dataset.format,
                                 cfg.dataset.task == "regression");
  if (test.dim() != train.dim())
    throw ValidationError("test set has " + std::to_string(test.dim()) +
                          " features, training set has " + std::to_string(train.dim()));
  return dm::TargetSet::from_examples(test.features(), test.labels());
}

std::unique_ptr<dm::LearningAlgorithm> load_trainer(const ExperimentConfig& cfg) {
  return dm::make_trainer(cfg.trainer, cfg.hyperparameters);
}

dm::MaskMatrix load_masks(const Context& ctx, std::size_t ai, std::size_t expected_d) {
  const auto path = ctx.masks_path(ai);
  if (!fs::exists(path))
    throw ValidationError("missing " + path.string() + " (run the 'sample' stage first)");
  auto masks = dm::read_masks(path);
  if (masks.cols() != expected_d)
    throw ValidationError("masks in " + path.string() + " have d = " +
                          std::to_string(masks.cols()) + " but the training set " +
                          ctx.cfg.dataset.train.string() + " has d = " +
                          std::to_string(expected_d));
  require_artifact(path, config_hash(ctx.cfg, "sample"), "sample");
  return masks;
}

std::vector<dm::Datamodel> load_models(const Context& ctx, std::size_t ai, const std::string& fn) {
  const auto path = ctx.models_path(ai, fn);
  const json meta = require_artifact(path, config_hash(ctx.cfg, "estimate"), "estimate");
  auto models = dm::read_datamodels(path);
  for (auto& m : models) {
    m.alpha = ctx.cfg.alphas[ai];
    m.output_fn = dm::parse_output_fn(fn);
    m.trainer_id = meta.value("trainer_id", "");
  }
  return models;
}

std::vector<std::size_t> pick_targets(const std::vector<std::size_t>& listed, std::size_t max,
                                      std::size_t n) {
  std::vector<std::size_t> out = listed;
  if (out.empty())
    for (std::size_t i = 0; i < std::min(max, n); ++i) out.push_back(i);
  for (std::size_t t : out)
    if (t >= n)
      throw ValidationError("target " + std::to_string(t) + " out of range (" + std::to_string(n) +
                            " targets)");
  return out;
}

// ---------------------------------------------------------------------------

void cmd_sample(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto hash = config_hash(ctx.cfg, "sample");
  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto path = ctx.masks_path(ai);
    if (!up_to_date(path, hash)) {
      const dm::SubsetDistribution dist{data.size(), ctx.cfg.alphas[ai], stage_seed(ctx.cfg, "sample", ai)};
      const auto masks = dm::sample_masks(dist, ctx.cfg.m, ctx.opt.workers);
      dm::write_masks(masks, path);
      write_meta(path, "masks", hash, {{"alpha", ctx.cfg.alphas[ai]}, {"m", masks.rows()}, {"d", masks.cols()}});
    }
    rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"rows", ctx.cfg.m}, {"d", data.size()}});
  }
  write_summary(ctx, "sample", {{"artifacts", rows}});
}

void cmd_train(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto targets = load_targets(ctx.cfg, data);
  const auto trainer = load_trainer(ctx.cfg);
  const auto hash = config_hash(ctx.cfg, "train");
  std::vector<dm::OutputFn> fns;
  for (const auto& f : ctx.cfg.output_fns) fns.push_back(dm::parse_output_fn(f));

  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto masks = load_masks(ctx, ai, data.size());
    std::vector<fs::path> finals;
    std::vector<fs::path> partials;
    bool all_done = true;
    for (const auto& f : ctx.cfg.output_fns) {
      finals.push_back(ctx.outputs_path(ai, f));
      partials.push_back(fs::path(finals.back().string() + ".partial"));
      all_done = all_done && up_to_date(finals.back(), hash);
    }
    if (all_done) {
      rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"rows", masks.rows()}, {"resumed_from", masks.rows()}});
      continue;
    }

    std::vector<dm::OutputMatrix> outputs;
    std::size_t done = 0;
    const bool have_partial =
        std::all_of(partials.begin(), partials.end(), [](const fs::path& p) { return fs::exists(p); });
    if (have_partial && !ctx.opt.resume)
      throw ValidationError("partial outputs exist at " + partials.front().string() +
                            "; rerun with --resume to continue them");
    if (have_partial) {
      for (std::size_t f = 0; f < fns.size(); ++f) {
        require_artifact(partials[f], hash, "train");
        outputs.push_back(dm::read_outputs(partials[f]));
      }
      done = outputs.front().rows();
      for (const auto& o : outputs)
        if (o.rows() != done || o.cols() != targets.size() || done > masks.rows())
          throw ValidationError("partial outputs for alpha " + std::to_string(ctx.cfg.alphas[ai]) +
                                " are inconsistent; delete them to restart");
    } else {
      for (auto fn : fns) outputs.emplace_back(0, targets.size(), fn, trainer->id());
    }
    const std::size_t resumed_from = done;

    const auto seed = stage_seed(ctx.cfg, "train", ai);
    while (done < masks.rows()) {
      const std::size_t stop = std::min(masks.rows(), done + kTrainChunk);
      auto part = dm::run_campaign_rows(data, masks, *trainer, fns, targets, seed, done, stop,
                                        ctx.opt.workers);
      for (std::size_t f = 0; f < fns.size(); ++f) outputs[f].append(part[f]);
      done = stop;
      if (done < masks.rows()) {
        for (std::size_t f = 0; f < fns.size(); ++f) {
          dm::write_outputs(outputs[f], partials[f]);
          write_meta(partials[f], "outputs-partial", hash, {{"rows", done}});
        }
      }
    }
    for (std::size_t f = 0; f < fns.size(); ++f) {
      dm::write_outputs(outputs[f], finals[f]);
      write_meta(finals[f], "outputs", hash,
                 {{"alpha", ctx.cfg.alphas[ai]}, {"rows", done}, {"targets", targets.size()},
                  {"output_fn", ctx.cfg.output_fns[f]}, {"trainer_id", trainer->id()}});
      fs::remove(partials[f]);
      fs::remove(meta_path(partials[f]));
    }
    rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"rows", done}, {"resumed_from", resumed_from}});
  }
  write_summary(ctx, "train", {{"trainer", trainer->id()}, {"targets", targets.size()}, {"campaigns", rows}});
}

dm::Split campaign_split(const ExperimentConfig& cfg, std::size_t m) {
  const auto test = static_cast<std::size_t>(std::llround(cfg.solver.test_fraction * static_cast<double>(m)));
  return dm::Split::with_default_validation(m, std::max<std::size_t>(test, 1));
}

dm::LassoConfig lasso_config(const Context& ctx, std::size_t ai) {
  dm::LassoConfig lc;
  lc.saga.max_epochs = ctx.cfg.solver.max_epochs;
  lc.saga.tol = ctx.cfg.solver.tol;
  lc.saga.seed = stage_seed(ctx.cfg, "estimate", ai);
  lc.path_count = ctx.cfg.solver.path_count;
  lc.path_ratio = ctx.cfg.solver.path_ratio;
  lc.lambda_max = ctx.cfg.solver.lambda_max;
  lc.workers = ctx.opt.workers;
  return lc;
}

void cmd_estimate(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto hash = config_hash(ctx.cfg, "estimate");
  const auto train_hash = config_hash(ctx.cfg, "train");
  json rows = json::array();
  std::size_t unconverged = 0;
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto masks = load_masks(ctx, ai, data.size());
    for (const auto& fn : ctx.cfg.output_fns) {
      const auto opath = ctx.outputs_path(ai, fn);
      const json ometa = require_artifact(opath, train_hash, "train");
      const auto outputs = dm::read_outputs(opath);
      if (outputs.rows() != masks.rows())
        throw ValidationError(opath.string() + " has " + std::to_string(outputs.rows()) +
                              " rows, masks have " + std::to_string(masks.rows()));
      const auto split = campaign_split(ctx.cfg, masks.rows());
      const auto fits = dm::fit_lasso_multi(masks, outputs, split, lasso_config(ctx, ai));

      std::vector<dm::Datamodel> models;
      json report = json::array();
      double test_mse = 0.0;
      std::size_t bad = 0;
      for (std::size_t j = 0; j < fits.size(); ++j) {
        auto m = fits[j].model;
        m.target_id = j;
        models.push_back(m);
        const auto& r = fits[j].report;
        if (!r.converged) ++bad;
        test_mse += r.test_mse;
        report.push_back({{"target", j}, {"lambda", r.lambda}, {"train_mse", r.train_mse},
                          {"test_mse", r.test_mse}, {"sparsity", r.sparsity},
                          {"epochs", r.epochs}, {"converged", r.converged}});
      }
      const auto mpath = ctx.models_path(ai, fn);
      dm::write_datamodels(models, mpath);
      write_meta(mpath, "datamodels", hash,
                 {{"alpha", ctx.cfg.alphas[ai]}, {"output_fn", fn},
                  {"trainer_id", ometa.value("trainer_id", "")}, {"targets", models.size()}});
      write_text_atomic(ctx.alpha_dir(ai) / ("fit_report_" + fn + ".json"), report.dump(2) + "\n");
      const auto sp = dm::sparsity_stats(models);
      rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"output_fn", fn},
                      {"split", {split.train, split.val, split.test}},
                      {"mean_test_mse", test_mse / static_cast<double>(std::max<std::size_t>(fits.size(), 1))},
                      {"mean_sparsity", sp.mean}, {"unconverged", bad}});
      unconverged += bad;
    }
  }
  write_summary(ctx, "estimate", {{"fits", rows}, {"unconverged", unconverged}});
  if (unconverged > 0)
    throw NonConvergence(std::to_string(unconverged) +
                         " target(s) hit the SAGA epoch cap; datamodels were written with converged=false");
}

void cmd_counterfactual(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto targets = load_targets(ctx.cfg, data);
  const auto trainer = load_trainer(ctx.cfg);
  const auto& cc = ctx.cfg.counterfactual;
  const auto mode = dm::parse_counterfactual_mode(cc.mode);
  const std::string fn_name = ctx.cfg.output_fns.front();
  const auto fn = dm::parse_output_fn(fn_name);
  dm::ControlCache cache;

  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto models = load_models(ctx, ai, fn_name);
    if (models.size() != targets.size())
      throw ValidationError("datamodels cover " + std::to_string(models.size()) + " targets, config selects " +
                            std::to_string(targets.size()));
    const auto seed = stage_seed(ctx.cfg, "counterfactual", ai);
    const double control_alpha = mode == dm::CounterfactualMode::random_control ? ctx.cfg.alphas[ai] : 1.0;
    const auto& control = cache.get(data, *trainer, fn, targets, cc.trials, seed, control_alpha, ctx.opt.workers);

    std::vector<dm::CounterfactualRecord> records;
    std::vector<double> pred;
    std::vector<double> act;
    for (std::size_t t : pick_targets(cc.targets, cc.max_targets, targets.size())) {
      const auto& theta = models[t].theta;
      for (std::size_t k : cc.k) {
        if (k == 0 || k >= data.size()) continue;
        for (const auto& g : cc.groups) {
          dm::CounterfactualSpec spec;
          spec.target = t;
          spec.mode = mode;
          spec.trials = cc.trials;
          spec.alpha = ctx.cfg.alphas[ai];
          spec.group = g;
          if (g == "top") {
            spec.removed = dm::top_k_group(theta, k);
          } else if (g == "bottom") {
            spec.removed = dm::bottom_k_group(theta, k);
          } else {
            const auto sel = g == "random" ? dm::BaselineSelector::random_same_class
                                           : dm::BaselineSelector::feature_distance;
            const Eigen::RowVectorXd feats = targets.features.row(static_cast<Eigen::Index>(t));
            try {
              spec.removed = dm::baseline_group(sel, data, feats, targets.labels[t], k, seed);
            } catch (const ValidationError&) {
              continue;  // class too small for this k
            }
          }
          if (mode == dm::CounterfactualMode::mislabel) {
            spec.to_class = cc.to_class >= 0 ? cc.to_class : (targets.labels[t] + 1) % data.num_classes();
            if (spec.to_class == targets.labels[t])
              throw ValidationError("counterfactual.to_class equals the target's label");
          }
          const auto r = dm::eval_effect(spec, &models[t], data, *trainer, fn, targets, control, seed,
                                         ctx.opt.workers);
          records.push_back({models[t].target_id, mode, k, r.predicted, r.actual, r.se, r.trials, g});
          if (std::isfinite(r.predicted)) {
            pred.push_back(r.predicted);
            act.push_back(r.actual);
          }
        }
      }
    }
    std::ostringstream csv;
    dm::write_counterfactual_csv(csv, records);
    write_text_atomic(ctx.alpha_dir(ai) / ("counterfactuals_" + fn_name + ".csv"), csv.str());
    const auto r = pred.size() >= 2 ? dm::stats::pearson(pred, act) : std::nullopt;
    rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"specs", records.size()},
                    {"pearson", r ? json(*r) : json(nullptr)}});
  }
  write_summary(ctx, "counterfactual", {{"mode", cc.mode}, {"results", rows}});
}

void cmd_support(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto targets = load_targets(ctx.cfg, data);
  const auto trainer = load_trainer(ctx.cfg);
  const auto& sc = ctx.cfg.support;
  const std::string fn_name = ctx.cfg.output_fns.front();
  const auto fn = dm::parse_output_fn(fn_name);
  std::vector<std::size_t> grid;
  for (std::size_t k : sc.k_grid)
    if (k > 0 && k < data.size()) grid.push_back(k);
  if (grid.empty()) throw ValidationError("support.k_grid has no value below d = " + std::to_string(data.size()));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto models = load_models(ctx, ai, fn_name);
    const auto seed = stage_seed(ctx.cfg, "support", ai);
    const auto control = dm::estimate_control(data, *trainer, fn, targets, sc.trials, seed, 1.0, ctx.opt.workers);
    std::ostringstream csv;
    csv << "target_id,k_hat,k_reported,unbounded,certified,certified_mean,heuristic_k\n";
    csv.precision(17);
    std::size_t unbounded = 0;
    std::size_t certified = 0;
    const auto chosen = pick_targets(sc.targets, sc.max_targets, targets.size());
    for (std::size_t t : chosen) {
      const auto est = dm::estimate_support(models[t], data, *trainer, fn, targets, t, control, grid,
                                            sc.trials, seed, ctx.opt.workers);
      const auto h = dm::heuristic_support(models[t].theta, control.mean(t));
      csv << models[t].target_id << ',' << est.k_hat << ',' << est.k_reported << ','
          << (est.unbounded ? 1 : 0) << ',' << (est.certified ? 1 : 0) << ',' << est.certified_mean << ',';
      if (h) csv << *h;
      csv << '\n';
      unbounded += est.unbounded ? 1 : 0;
      certified += est.certified ? 1 : 0;
    }
    write_text_atomic(ctx.alpha_dir(ai) / ("support_" + fn_name + ".csv"), csv.str());
    rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"targets", chosen.size()},
                    {"certified", certified}, {"unbounded", unbounded}});
  }
  write_summary(ctx, "support", {{"results", rows}});
}

void cmd_embed(const Context& ctx) {
  const auto& ec = ctx.cfg.embed;
  const std::string fn_name = ctx.cfg.output_fns.front();
  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto models = load_models(ctx, ai, fn_name);
    const auto emb = dm::EmbeddingMatrix::from_datamodels(models).normalize();
    const auto n = static_cast<std::size_t>(emb.rows.rows());
    const auto d = static_cast<std::size_t>(emb.rows.cols());
    const auto dir = ctx.alpha_dir(ai);
    json row = {{"alpha", ctx.cfg.alphas[ai]}, {"targets", n}, {"zero_rows", emb.zero_rows.size()}};

    if (ec.clusters >= 1 && ec.clusters <= n && n >= 2) {
      dm::SpectralConfig sc;
      sc.clusters = ec.clusters;
      sc.eigvecs = ec.eigvecs;
      sc.seed = stage_seed(ctx.cfg, "embed", ai);
      const auto res = dm::spectral_cluster(dm::rbf_similarity(emb), sc);
      std::ostringstream csv;
      csv << "target_id,cluster\n";
      for (std::size_t i = 0; i < n; ++i) csv << models[i].target_id << ',' << res.labels[i] << '\n';
      write_text_atomic(dir / ("clusters_" + fn_name + ".csv"), csv.str());
      row["degree_floored"] = res.degree_floored;
    }

    const std::size_t k = std::min({ec.components, n, d});
    if (k >= 1 && n >= 2) {
      dm::PcaConfig pc;
      pc.seed = stage_seed(ctx.cfg, "embed", ai);
      const auto pca = dm::fit_pca(emb, k, pc);
      const auto curve = dm::explained_variance_curve(pca);
      std::ostringstream ev;
      ev.precision(17);
      ev << "component,explained_variance,cumulative_fraction\n";
      for (std::size_t i = 0; i < k; ++i)
        ev << i << ',' << pca.explained_variance[static_cast<Eigen::Index>(i)] << ',' << curve[i] << '\n';
      write_text_atomic(dir / ("explained_variance_" + fn_name + ".csv"), ev.str());
      const Eigen::MatrixXd proj = dm::project(pca, emb);
      std::ostringstream pj;
      pj.precision(17);
      pj << "target_id";
      for (std::size_t i = 0; i < k; ++i) pj << ",pc" << i;
      pj << '\n';
      for (std::size_t t = 0; t < n; ++t) {
        pj << models[t].target_id;
        for (std::size_t i = 0; i < k; ++i)
          pj << ',' << proj(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
        pj << '\n';
      }
      write_text_atomic(dir / ("projections_" + fn_name + ".csv"), pj.str());
      row["pca_converged"] = pca.converged;
      row["rank_deficient"] = pca.rank_deficient;
      row["explained_fraction"] = curve.back();
    }

    std::ostringstream nb;
    nb << "target_id,key,rank,train_index,weight\n";
    nb.precision(17);
    std::size_t silent = 0;
    for (const auto& m : models) {
      for (auto [key, name] : {std::pair{dm::NeighborKey::positive, "positive"},
                               std::pair{dm::NeighborKey::negative, "negative"}}) {
        const auto nbrs = dm::top_weight_neighbors(m, ec.neighbors, key);
        if (key == dm::NeighborKey::positive && nbrs.no_signal) ++silent;
        if (nbrs.no_signal) continue;
        for (std::size_t r = 0; r < nbrs.indices.size(); ++r)
          nb << m.target_id << ',' << name << ',' << r << ',' << nbrs.indices[r] << ','
             << m.theta[static_cast<Eigen::Index>(nbrs.indices[r])] << '\n';
      }
    }
    write_text_atomic(dir / ("neighbors_" + fn_name + ".csv"), nb.str());
    row["no_signal_targets"] = silent;
    rows.push_back(row);
  }
  write_summary(ctx, "embed", {{"results", rows}});
}

void cmd_compare(const Context& ctx) {
  const auto data = load_train(ctx.cfg);
  const auto& fns = ctx.cfg.output_fns;
  if (std::find(fns.begin(), fns.end(), "margin") == fns.end() ||
      std::find(fns.begin(), fns.end(), "correctness") == fns.end())
    throw ValidationError("compare needs output_fns to include 'margin' and 'correctness'");
  const auto train_hash = config_hash(ctx.cfg, "train");
  json rows = json::array();
  for (std::size_t ai = 0; ai < ctx.cfg.alphas.size(); ++ai) {
    const auto masks = load_masks(ctx, ai, data.size());
    require_artifact(ctx.outputs_path(ai, "margin"), train_hash, "train");
    require_artifact(ctx.outputs_path(ai, "correctness"), train_hash, "train");
    const auto margins = dm::read_outputs(ctx.outputs_path(ai, "margin"));
    const auto correct = dm::read_outputs(ctx.outputs_path(ai, "correctness"));
    const auto report = dm::compare_estimators(masks, margins, correct, campaign_split(ctx.cfg, masks.rows()),
                                               lasso_config(ctx, ai));
    std::ostringstream csv;
    csv.precision(17);
    csv << "estimator,spearman,mse,auc\n";
    json table = json::array();
    for (const auto& r : report.rows) {
      csv << r.id << ',' << r.spearman << ',';
      if (r.mse) csv << *r.mse;
      csv << ',' << r.auc << '\n';
      table.push_back({{"id", r.id}, {"spearman", r.spearman},
                       {"mse", r.mse ? json(*r.mse) : json(nullptr)}, {"auc", r.auc}});
    }
    write_text_atomic(ctx.alpha_dir(ai) / "estimator_comparison.csv", csv.str());
    rows.push_back({{"alpha", ctx.cfg.alphas[ai]}, {"estimators", table}});
  }
  write_summary(ctx, "compare", {{"results", rows}});
}

void cmd_simulate(const Context& ctx) {
  const auto& s = ctx.cfg.simulate;
  dm::SimConfig sc;
  sc.d_features = s.d_features;
  sc.n_train = s.n_train;
  sc.p_grid = s.p_grid;
  sc.epsilon = s.epsilon;
  sc.w_scale = s.w_scale;
  sc.seed = stage_seed(ctx.cfg, "simulate-world");
  const auto world = dm::generate_world(sc);
  const auto sweep = dm::alpha_sweep(world, s.alphas, s.m, stage_seed(ctx.cfg, "simulate"), ctx.opt.workers);
  std::ostringstream csv;
  dm::write_sweep_csv(csv, sweep);
  write_text_atomic(ctx.out / "sim_correlations.csv", csv.str());
  json table = json::array();
  for (std::size_t a = 0; a < sweep.alphas.size(); ++a) {
    json row = {{"alpha", sweep.alphas[a]}};
    for (std::size_t f = 0; f < sweep.freqs.size(); ++f) {
      char key[32];
      std::snprintf(key, sizeof key, "p=%g", sweep.freqs[f]);
      row[key] = sweep.r[a][f] ? json(*sweep.r[a][f]) : json(nullptr);
    }
    table.push_back(row);
  }
  write_summary(ctx, "simulate", {{"m", s.m}, {"correlations", table}});
}

void cmd_lemma(const Context& ctx) {
  const auto& l = ctx.cfg.lemma;
  dm::Rng rng(stage_seed(ctx.cfg, "lemma-theta"));
  Eigen::VectorXd theta(static_cast<Eigen::Index>(l.n));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = rng.normal();
  const auto points = dm::lemma_convergence_check(l.n, l.m_grid, dm::synthetic_correctness(theta),
                                                  stage_seed(ctx.cfg, "lemma"), ctx.opt.workers);
  std::ostringstream csv;
  csv.precision(17);
  csv << "m,gap,relative\n";
  json table = json::array();
  for (const auto& p : points) {
    csv << p.m << ',' << p.gap << ',' << p.relative << '\n';
    table.push_back({{"m", p.m}, {"gap", p.gap}, {"relative", p.relative}});
  }
  write_text_atomic(ctx.out / "lemma_convergence.csv", csv.str());
  write_summary(ctx, "lemma", {{"n", l.n}, {"points", table}});
}

}  // namespace

void run_stage(const std::string& stage, const ExperimentConfig& cfg, const RunOptions& opt) {
  const Context ctx(cfg, opt);
  if (stage == "sample") return cmd_sample(ctx);
  if (stage == "train") return cmd_train(ctx);
  if (stage == "estimate") return cmd_estimate(ctx);
  if (stage == "counterfactual") return cmd_counterfactual(ctx);
  if (stage == "support") return cmd_support(ctx);
  if (stage == "embed") return cmd_embed(ctx);
  if (stage == "compare") return cmd_compare(ctx);
  if (stage == "simulate") return cmd_simulate(ctx);
  if (stage == "lemma") return cmd_lemma(ctx);
  throw ValidationError("unknown stage '" + stage + "'");
}

}  // namespace dmcli
