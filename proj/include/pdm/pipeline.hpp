#pragma once
// Batch commands behind the pdm executable. Every output is a pure function
// of the config and its input files: no timestamps, timings or host data.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdm/config.hpp"
#include "pdm/core/log.hpp"
#include "pdm/evaluation.hpp"
#include "pdm/knowledge_base.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/simulator.hpp"

namespace pdm::pipeline {

namespace fs = std::filesystem;

struct Inputs {
  TimeSeriesFrame frame;
  std::optional<GroundTruth> truth;
};

inline std::string short_name(eval::ScenarioId id) {
  switch (id) {
    case eval::ScenarioId::Baseline: return "baseline";
    case eval::ScenarioId::Scenario1: return "s1";
    case eval::ScenarioId::Scenario2: return "s2";
  }
  return "?";
}

/// Checks that every referenced file exists and loads the knowledge base.
/// Failures here are configuration errors.
inline KnowledgeBase preflight(const PipelineConfig& cfg) {
  for (const auto* p : {&cfg.telemetry, &cfg.ground_truth})
    if (*p && !fs::exists(**p)) throw Error(ErrorKind::Config, "missing input file '" + (*p)->string() + "'");
  if (!fs::exists(cfg.knowledge_base))
    throw Error(ErrorKind::Config, "missing knowledge base '" + cfg.knowledge_base.string() + "'");
  try {
    return load_kb(cfg.knowledge_base.string());
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

/// Telemetry from the configured CSV, or from the simulator section.
inline Inputs load_inputs(const PipelineConfig& cfg, const KnowledgeBase& kb) {
  Inputs in;
  if (cfg.telemetry) {
    in.frame = load_csv(cfg.telemetry->string(), cfg.schema);
    if (cfg.ground_truth) {
      std::ifstream f(*cfg.ground_truth);
      nlohmann::json j;
      try {
        f >> j;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Config, "ground truth '" + cfg.ground_truth->string() + "': " + e.what());
      }
      in.truth = ground_truth_from_json(j);
    }
    log::info("loaded " + std::to_string(in.frame.size()) + " rows from " + cfg.telemetry->string());
  } else {
    auto [frame, gt] = simulate_with_scenarios(cfg.simulation, kb);
    in.frame = std::move(frame);
    in.truth = std::move(gt);
    log::info("simulated " + std::to_string(in.frame.size()) + " rows");
  }
  return in;
}

inline fs::path write_file(const fs::path& dir, const std::string& name, const std::string& content) {
  fs::create_directories(dir);
  const auto path = dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error(ErrorKind::Io, "write failed for '" + path.string() + "'");
  log::info("wrote " + path.string());
  return path;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline nlohmann::json versioned(nlohmann::json body) {
  body["schema_version"] = kSchemaVersion;
  return body;
}

inline std::vector<fs::path> cmd_simulate(const PipelineConfig& cfg, const KnowledgeBase& kb, const fs::path& out) {
  auto [frame, gt] = simulate_with_scenarios(cfg.simulation, kb);
  std::ostringstream csv;
  write_csv(csv, frame);
  auto truth = versioned(ground_truth_to_json(gt));
  truth["seed"] = cfg.simulation.seed;
  return {write_file(out, "telemetry.csv", csv.str()), write_file(out, "ground_truth.json", dump(truth))};
}

inline std::vector<fs::path> cmd_preprocess(const PipelineConfig& cfg, const KnowledgeBase& kb,
                                            eval::ScenarioId id, const fs::path& out) {
  if (id == eval::ScenarioId::Baseline)
    throw Error(ErrorKind::Config, "the baseline works on raw telemetry and has no curated dataset");
  const auto in = load_inputs(cfg, kb);
  const auto sc = id == eval::ScenarioId::Scenario1 ? preprocess::Scenario::S1 : preprocess::Scenario::S2;
  const auto [ds, report] = preprocess::build_dataset(in.frame, sc, kb, cfg.evaluation.preprocess);
  const auto name = short_name(id);

  std::ostringstream csv;
  preprocess::write_dataset_csv(csv, ds);
  auto sidecar = versioned(preprocess::dataset_sidecar(ds));
  nlohmann::json split = nlohmann::json::object();
  for (const auto& [cycle, s] : ds.split)
    split[std::to_string(cycle)] = s == Split::Train ? "train" : s == Split::Validation ? "validation" : "test";
  sidecar["split"] = split;
  auto rep = versioned(preprocess::report_to_json(report));
  rep["scenario"] = to_string(sc);
  rep["selection"] = preprocess::selection_to_json(ds.selection);
  return {write_file(out, "dataset_" + name + ".csv", csv.str()),
          write_file(out, "dataset_" + name + ".json", dump(sidecar)),
          write_file(out, "preprocess_" + name + ".json", dump(rep))};
}

inline eval::ScenarioReport run(const PipelineConfig& cfg, const KnowledgeBase& kb, const Inputs& in,
                                eval::ScenarioId id) {
  if (id == eval::ScenarioId::Baseline && !in.truth)
    throw Error(ErrorKind::Config, "the baseline needs paths.ground_truth when telemetry is supplied");
  static const GroundTruth none;
  return eval::run_scenario(in.frame, in.truth ? *in.truth : none, kb, id, cfg.evaluation);
}

inline nlohmann::json report_document(const PipelineConfig& cfg, const eval::ScenarioReport& r) {
  auto j = versioned(eval::report_to_json(r));
  j["config"] = cfg.echo;
  return j;
}

inline std::vector<fs::path> cmd_evaluate(const PipelineConfig& cfg, const KnowledgeBase& kb, eval::ScenarioId id,
                                          const fs::path& out) {
  const auto in = load_inputs(cfg, kb);
  const auto report = run(cfg, kb, in, id);
  std::ostringstream csv;
  eval::write_metrics_csv(csv, {report});
  const auto name = short_name(id);
  return {write_file(out, "report_" + name + ".json", dump(report_document(cfg, report))),
          write_file(out, "metrics_" + name + ".csv", csv.str())};
}

inline std::vector<fs::path> cmd_compare(const PipelineConfig& cfg, const KnowledgeBase& kb, const fs::path& out) {
  const auto in = load_inputs(cfg, kb);
  std::vector<eval::ScenarioReport> reports;
  std::vector<fs::path> written;
  for (const auto id : {eval::ScenarioId::Baseline, eval::ScenarioId::Scenario1, eval::ScenarioId::Scenario2}) {
    reports.push_back(run(cfg, kb, in, id));
    written.push_back(write_file(out, "report_" + short_name(id) + ".json", dump(report_document(cfg, reports.back()))));
  }
  std::ostringstream metrics, table;
  eval::write_metrics_csv(metrics, reports);
  eval::write_comparison_csv(table, reports);
  auto cmp = versioned(eval::comparison_to_json(reports));
  cmp["seed"] = cfg.seed;
  written.push_back(write_file(out, "metrics.csv", metrics.str()));
  written.push_back(write_file(out, "comparison.json", dump(cmp)));
  written.push_back(write_file(out, "comparison.csv", table.str()));
  return written;
}

}  // namespace pdm::pipeline
