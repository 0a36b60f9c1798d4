#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "datamodels/formats.hpp"
#include "datamodels/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run_cli(const std::string& args) {
  const std::string cmd = std::string(DATAMODELS_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_csv(const fs::path& path, std::size_t rows, std::uint64_t seed) {
  dm::Rng rng(seed);
  std::ofstream out(path);
  out << "f0,f1,f2,f3,f4,label\n";
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int k = 0; k < 5; ++k) {
      const double v = rng.normal();
      s += (k + 1) * v;
      out << v << ',';
    }
    out << (s + 0.5 * rng.normal() > 0 ? 1 : 0) << '\n';
  }
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("datamodels_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_csv(dir_ / "train.csv", 50, 1);
    write_csv(dir_ / "train60.csv", 60, 2);
    write_csv(dir_ / "test.csv", 20, 3);
  }
  void TearDown() override { fs::remove_all(dir_); }

  json base_config() const {
    return {{"version", 1},
            {"seed", 7},
            {"output_dir", (dir_ / "out").string()},
            {"dataset", {{"train", (dir_ / "train.csv").string()}, {"test", (dir_ / "test.csv").string()}}},
            {"trainer", {{"id", "minnorm"}}},
            {"alphas", {0.5}},
            {"m", 600},
            {"output_fns", {"margin", "correctness"}},
            {"solver", {{"max_epochs", 2000}}},
            {"counterfactual", {{"k", {2, 5}}, {"trials", 1}, {"max_targets", 3}}},
            {"support", {{"k_grid", {2, 5, 10, 20}}, {"trials", 1}, {"max_targets", 3}}},
            {"embed", {{"clusters", 2}, {"components", 3}}},
            {"simulate", {{"d_features", 30}, {"n_train", 20}, {"m", 2000}, {"alphas", {0.3, 0.7}}}},
            {"lemma", {{"n", 10}, {"m_grid", {500, 2000}}}}};
  }

  fs::path write_config(const json& j, const std::string& name = "cfg.json") const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(1);
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, FullPipelineProducesEveryArtifact) {
  const auto cfg = write_config(base_config());
  const auto start = std::chrono::steady_clock::now();
  const auto r = run_cli("--config " + cfg.string() +
                         " run --stage sample,train,estimate,counterfactual,support,embed,compare,simulate,lemma");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_LT(secs, 60.0);
  const fs::path a = dir_ / "out" / "alpha_0.5";
  for (const char* f : {"masks.dmdm", "outputs_margin.dmou", "outputs_correctness.dmou", "datamodels_margin.dmth",
                        "fit_report_margin.json", "counterfactuals_margin.csv", "support_margin.csv",
                        "clusters_margin.csv", "explained_variance_margin.csv", "estimator_comparison.csv"})
    EXPECT_TRUE(fs::exists(a / f)) << f;
  EXPECT_TRUE(fs::exists(dir_ / "out" / "sim_correlations.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "lemma_convergence.csv"));
  const auto models = dm::read_datamodels(a / "datamodels_margin.dmth");
  ASSERT_EQ(models.size(), 20u);
  EXPECT_EQ(models[0].theta.size(), 50);
  EXPECT_EQ(json::parse(slurp(a / "masks.dmdm.meta.json")).at("kind"), "masks");
}

TEST_F(CliTest, RerunIsByteIdentical) {
  auto j = base_config();
  const auto cfg1 = write_config(j, "a.json");
  j["output_dir"] = (dir_ / "out2").string();
  const auto cfg2 = write_config(j, "b.json");
  ASSERT_EQ(run_cli("--config " + cfg1.string() + " run").code, 0);
  ASSERT_EQ(run_cli("--config " + cfg2.string() + " --workers 3 run").code, 0);
  for (const char* f : {"masks.dmdm", "outputs_margin.dmou", "datamodels_margin.dmth", "datamodels_correctness.dmth"})
    EXPECT_EQ(slurp(dir_ / "out" / "alpha_0.5" / f), slurp(dir_ / "out2" / "alpha_0.5" / f)) << f;
}

TEST_F(CliTest, MaskWidthMismatchNamesBothShapes) {
  auto j = base_config();
  ASSERT_EQ(run_cli("--config " + write_config(j).string() + " sample").code, 0);
  j["dataset"]["train"] = (dir_ / "train60.csv").string();
  const auto r = run_cli("--config " + write_config(j, "cfg60.json").string() + " train");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("d = 50"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("d = 60"), std::string::npos) << r.output;
}

TEST_F(CliTest, MissingUpstreamArtifactFails) {
  const auto r = run_cli("--config " + write_config(base_config()).string() + " estimate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("missing"), std::string::npos) << r.output;
}

TEST_F(CliTest, UnknownConfigKeyRejected) {
  auto j = base_config();
  j["solver"] = {{"lamda_max", 1.0}};
  const auto r = run_cli("--config " + write_config(j).string() + " sample");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("lamda_max"), std::string::npos) << r.output;
}

TEST_F(CliTest, ResumeContinuesPartialOutputs) {
  const auto cfg = write_config(base_config());
  ASSERT_EQ(run_cli("--config " + cfg.string() + " run --stage sample,train").code, 0);
  const fs::path a = dir_ / "out" / "alpha_0.5";
  std::map<std::string, std::string> finished;
  for (const std::string fn : {"margin", "correctness"}) {
    const fs::path final_path = a / ("outputs_" + fn + ".dmou");
    finished[fn] = slurp(final_path);
    const auto meta = json::parse(slurp(final_path.string() + ".meta.json"));
    // simulate an interruption after the first 256 rows
    const fs::path partial = final_path.string() + ".partial";
    dm::write_outputs(dm::read_outputs(final_path).slice(0, 256), partial);
    std::ofstream(partial.string() + ".meta.json")
        << json{{"kind", "outputs-partial"}, {"config_hash", meta.at("config_hash")}, {"rows", 256}}.dump();
    fs::remove(final_path);
    fs::remove(final_path.string() + ".meta.json");
  }
  const auto refused = run_cli("--config " + cfg.string() + " train");
  EXPECT_EQ(refused.code, 1);
  EXPECT_NE(refused.output.find("--resume"), std::string::npos) << refused.output;

  const auto resumed = run_cli("--config " + cfg.string() + " --resume train");
  ASSERT_EQ(resumed.code, 0) << resumed.output;
  EXPECT_NE(resumed.output.find("\"resumed_from\":256"), std::string::npos) << resumed.output;
  for (const auto& [fn, bytes] : finished) {
    EXPECT_EQ(slurp(a / ("outputs_" + fn + ".dmou")), bytes) << fn;
    EXPECT_FALSE(fs::exists(a / ("outputs_" + fn + ".dmou.partial")));
  }
}

TEST_F(CliTest, EpochCapIsReportedNotSilent) {
  auto j = base_config();
  j["solver"] = {{"max_epochs", 1}, {"path_count", 5}};
  const auto r = run_cli("--config " + write_config(j).string() + " run");
  EXPECT_EQ(r.code, 2) << r.output;
  const fs::path a = dir_ / "out" / "alpha_0.5";
  ASSERT_TRUE(fs::exists(a / "datamodels_margin.dmth"));
  const auto report = json::parse(slurp(a / "fit_report_margin.json"));
  EXPECT_NE(report.dump().find("\"converged\":false"), std::string::npos);
}

TEST_F(CliTest, ChangedTrainerInvalidatesDownstream) {
  auto j = base_config();
  ASSERT_EQ(run_cli("--config " + write_config(j).string() + " run --stage sample,train").code, 0);
  j["trainer"] = {{"id", "logistic"}, {"hyperparameters", {{"epochs", 2}}}};
  const auto r = run_cli("--config " + write_config(j, "cfg2.json").string() + " estimate");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("config hash"), std::string::npos) << r.output;
}
