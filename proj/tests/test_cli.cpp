#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "pdm/config.hpp"
#include "pdm/simulator.hpp"
#include "support.hpp"

using namespace pdm;
namespace fs = std::filesystem;

namespace {

nlohmann::json default_doc() {
  std::ifstream in(pdm::test::kSourceDir + "/configs/default.json");
  return nlohmann::json::parse(in);
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pdm_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Writes `doc` as config.json into `dir` with an absolute KB path.
fs::path write_config(const fs::path& dir, nlohmann::json doc) {
  doc["paths"]["knowledge_base"] = pdm::test::kSourceDir + "/docs/knowledge_base.json";
  const auto p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PDM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ErrorKind config_error(const nlohmann::json& doc) {
  try {
    parse_config(doc, ".");
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "config accepted";
  return ErrorKind::Io;
}

}  // namespace

TEST(Config, DefaultParsesToStandardSettings) {
  const auto c = load_config(pdm::test::kSourceDir + "/configs/default.json");
  EXPECT_EQ(c.seed, 20210104u);
  EXPECT_EQ(c.simulation.cycles, 55);
  EXPECT_EQ(c.evaluation.horizons.size(), 3u);
  EXPECT_DOUBLE_EQ(c.evaluation.accuracy_threshold, 0.70);
  EXPECT_FALSE(c.telemetry);
  EXPECT_TRUE(fs::exists(c.knowledge_base));
  EXPECT_EQ(c.knowledge_base.filename(), "knowledge_base.json");
}

TEST(Config, RejectsBadDocuments) {
  auto d = default_doc();
  d.erase("seed");
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["seed"] = -4;
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["paths"].erase("knowledge_base");
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["horizons_h"] = {3, 0};
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["split"] = {{"train", 0.9}, {"validation", 0.2}};
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["accuracy_threshold"] = 1.5;
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["simulation"]["cycles"] = "many";
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  d = default_doc();
  d["models"]["gbdt"] = nlohmann::json::array();
  EXPECT_EQ(config_error(d), ErrorKind::Config);
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  const auto dir = scratch("usage");
  const auto cfg = write_config(dir, default_doc()).string();
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("launch --config " + cfg), 2);
  EXPECT_EQ(run_cli("evaluate --config " + cfg), 2);                       // scenario required
  EXPECT_EQ(run_cli("evaluate --config " + cfg + " --scenario s3"), 2);    // unknown scenario
  EXPECT_EQ(run_cli("preprocess --config " + cfg + " --scenario baseline"), 2);
  EXPECT_EQ(run_cli("simulate --config /nonexistent.json"), 2);

  auto bad_kb = default_doc();
  bad_kb["paths"]["knowledge_base"] = "missing_kb.json";
  std::ofstream(dir / "bad.json") << bad_kb.dump();
  EXPECT_EQ(run_cli("simulate --config " + (dir / "bad.json").string()), 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run_cli("simulate --config " + (dir / "broken.json").string()), 2);
}

TEST(Cli, SimulateThenEvaluateFromFiles) {
  const auto dir = scratch("files");
  auto doc = default_doc();
  doc["simulation"]["cycles"] = 8;
  const auto cfg = write_config(dir, doc);
  ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "sim").string()), 0);
  ASSERT_TRUE(fs::exists(dir / "sim" / "telemetry.csv"));
  ASSERT_TRUE(fs::exists(dir / "sim" / "ground_truth.json"));

  doc["paths"]["telemetry"] = (dir / "sim" / "telemetry.csv").string();
  doc["paths"]["ground_truth"] = (dir / "sim" / "ground_truth.json").string();
  const auto cfg2 = dir / "from_files.json";
  doc["paths"]["knowledge_base"] = pdm::test::kSourceDir + "/docs/knowledge_base.json";
  std::ofstream(cfg2) << doc.dump();
  ASSERT_EQ(run_cli("evaluate --config " + cfg2.string() + " --scenario baseline --out " + (dir / "ev").string()),
            0);
  std::ifstream in(dir / "ev" / "report_baseline.json");
  const auto rep = nlohmann::json::parse(in);
  EXPECT_EQ(rep["schema_version"], kSchemaVersion);
  EXPECT_EQ(rep["scenario"], "Baseline");

  ASSERT_EQ(run_cli("preprocess --config " + cfg2.string() + " --scenario s2 --out " + (dir / "pp").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "pp" / "dataset_s2.csv"));
  EXPECT_TRUE(fs::exists(dir / "pp" / "dataset_s2.json"));
}

TEST(Cli, PipelineFailureExitsWithThree) {
  // Telemetry with only idle rows survives loading but leaves nothing to learn from.
  const auto dir = scratch("failure");
  auto sim = SimConfig::standard();
  sim.cycles = 6;
  const auto [frame, gt] = simulate(sim, pdm::test::shipped_kb());
  {
    std::ofstream csv(dir / "idle.csv");
    write_csv(csv, slice_by_sequence(frame, {kIdle}));
  }
  auto doc = default_doc();
  doc["paths"]["telemetry"] = (dir / "idle.csv").string();
  const auto cfg = write_config(dir, doc);
  EXPECT_EQ(run_cli("evaluate --config " + cfg.string() + " --scenario s2 --out " + (dir / "o").string()), 3);
}
