#pragma once
// Pipeline configuration: one JSON file drives every command.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdm/core/error.hpp"
#include "pdm/evaluation.hpp"
#include "pdm/simulator.hpp"

namespace pdm {

inline constexpr int kSchemaVersion = 1;

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path knowledge_base;
  std::optional<std::filesystem::path> telemetry;     // absent: simulate inline
  std::optional<std::filesystem::path> ground_truth;  // needed by the baseline when telemetry is given
  std::filesystem::path output = "out";
  Schema schema = simulated_schema();
  SimConfig simulation = SimConfig::standard();
  eval::EvalConfig evaluation;
  nlohmann::json echo;  // the parsed document, copied into reports
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_minutes(const nlohmann::json& j, const char* key, Minutes& out) {
  if (j.contains(key)) out = Minutes{j.at(key).get<long>()};
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

inline void read_faults(const nlohmann::json& j, SimConfig& c) {
  if (j.contains("faults")) {
    c.faults.clear();
    for (const auto& f : j.at("faults")) {
      FaultProbability fp;
      fp.fault = f.at("fault").get<std::string>();
      fp.probability = f.value("probability", 0.0);
      fp.degraded_probability = f.value("degraded_probability", fp.probability);
      if (f.contains("rule_id")) fp.rule_id = f.at("rule_id").get<int>();
      c.faults.push_back(std::move(fp));
    }
  }
  if (j.contains("schedule")) {
    c.schedule.clear();
    for (const auto& f : j.at("schedule")) {
      ScheduledFault sf;
      sf.cycle = f.at("cycle").get<int>();
      sf.fault = f.at("fault").get<std::string>();
      if (f.contains("rule_id")) sf.rule_id = f.at("rule_id").get<int>();
      c.schedule.push_back(std::move(sf));
    }
  }
}

inline SimConfig parse_simulation(const nlohmann::json& j, std::uint64_t seed) {
  SimConfig c = SimConfig::standard();
  c.seed = seed;
  read_opt(j, "cycles", c.cycles);
  read_opt(j, "noise_scale", c.noise_scale);
  read_minutes(j, "idle_min_minutes", c.idle_min);
  read_minutes(j, "idle_max_minutes", c.idle_max);
  if (j.contains("start")) c.start = parse_iso8601(j.at("start").get<std::string>());
  if (j.contains("durations_minutes"))
    for (const auto& [label, minutes] : j.at("durations_minutes").items()) {
      const auto id = parse_sequence(label);
      if (!id || *id == kIdle) throw Error(ErrorKind::Config, "unknown sequence '" + label + "' in durations");
      c.durations[*id] = Minutes{minutes.get<long>()};
    }
  read_faults(j, c);
  if (j.contains("health")) {
    const auto& h = j.at("health");
    read_opt(h, "p_degrade", c.health.p_degrade);
    read_opt(h, "p_recover", c.health.p_recover);
    read_opt(h, "lead_cycles", c.health.lead_cycles);
  }
  if (j.contains("logging")) {
    const auto& l = j.at("logging");
    read_opt(l, "probability", c.logging.probability);
    read_opt(l, "hard_stop_fraction", c.logging.hard_stop_fraction);
  }
  if (j.contains("missing")) {
    const auto& m = j.at("missing");
    read_opt(m, "intervals", c.missing.intervals);
    if (m.contains("automatic")) {
      const auto& a = m.at("automatic");
      read_opt(a, "blankets", c.missing.automatic.blankets);
      read_minutes(a, "blanket_minutes", c.missing.automatic.blanket_length);
      read_opt(a, "dropouts", c.missing.automatic.dropouts);
      read_minutes(a, "dropout_minutes", c.missing.automatic.dropout_length);
      read_opt(a, "non_use", c.missing.automatic.non_use);
    }
  }
  if (j.contains("outliers")) {
    const auto& o = j.at("outliers");
    read_opt(o, "points", c.outliers.points);
    if (o.contains("automatic")) {
      const auto& a = o.at("automatic");
      read_opt(a, "false_spike_per_cycle", c.outliers.automatic.false_spike_per_cycle);
      read_opt(a, "precursor_per_needle_fault", c.outliers.automatic.precursor_per_needle_fault);
      read_opt(a, "irrelevant_per_cycle", c.outliers.automatic.irrelevant_per_cycle);
    }
  }
  return c;
}

inline preprocess::PreprocessConfig parse_preprocess(const nlohmann::json& j) {
  preprocess::PreprocessConfig p;
  read_opt(j, "tau", p.tau);
  read_opt(j, "top_n", p.top_n);
  read_opt(j, "iqr_k", p.iqr_k);
  read_opt(j, "ics_alpha", p.ics_alpha);
  read_opt(j, "ics_components", p.ics_components);
  read_opt(j, "use_ics", p.use_ics);
  read_minutes(j, "resample_minutes", p.resample);
  read_opt(j, "impute_k", p.impute_k);
  read_opt(j, "variance_threshold", p.variance_threshold);
  read_opt(j, "max_missing_fraction", p.max_missing_fraction);
  read_minutes(j, "precursor_window_minutes", p.precursor_window);
  return p;
}

inline eval::ModelGrid parse_grid(const nlohmann::json& j) {
  auto g = eval::ModelGrid::standard();
  if (j.contains("random_forest")) {
    g.forest.clear();
    for (const auto& e : j.at("random_forest")) {
      models::ForestParams p;
      read_opt(e, "trees", p.trees);
      read_opt(e, "max_depth", p.max_depth);
      read_opt(e, "min_leaf", p.min_leaf);
      read_opt(e, "max_features", p.max_features);
      read_opt(e, "bootstrap", p.bootstrap);
      g.forest.push_back(p);
    }
  }
  if (j.contains("gbdt")) {
    g.gbdt.clear();
    for (const auto& e : j.at("gbdt")) {
      models::GbdtParams p;
      read_opt(e, "iterations", p.iterations);
      read_opt(e, "learning_rate", p.learning_rate);
      read_opt(e, "max_depth", p.max_depth);
      read_opt(e, "bins", p.bins);
      read_opt(e, "lambda", p.lambda);
      read_opt(e, "min_leaf", p.min_leaf);
      g.gbdt.push_back(p);
    }
  }
  if (j.contains("linear_svm")) {
    g.svm.clear();
    for (const auto& e : j.at("linear_svm")) {
      models::SvmParams p;
      read_opt(e, "lambda", p.lambda);
      read_opt(e, "epochs", p.epochs);
      g.svm.push_back(p);
    }
  }
  return g;
}

inline Schema parse_schema(const nlohmann::json& j) {
  Schema s;
  for (const auto& c : j)
    s.columns.push_back({c.at("name").get<std::string>(), parse_role(c.at("role").get<std::string>()),
                         c.value("unit", std::string{})});
  return s;
}

}  // namespace detail

/// Relative paths resolve against `base_dir` (the config file's directory).
inline PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  try {
    if (!doc.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
    if (!doc.contains("seed") || !doc.at("seed").is_number_unsigned())
      throw Error(ErrorKind::Config, "config needs a non-negative integer 'seed'");
    c.seed = doc.at("seed").get<std::uint64_t>();

    const auto& paths = doc.at("paths");
    c.knowledge_base = detail::resolve(base_dir, paths.at("knowledge_base").get<std::string>());
    if (paths.contains("telemetry") && !paths.at("telemetry").is_null())
      c.telemetry = detail::resolve(base_dir, paths.at("telemetry").get<std::string>());
    if (paths.contains("ground_truth") && !paths.at("ground_truth").is_null())
      c.ground_truth = detail::resolve(base_dir, paths.at("ground_truth").get<std::string>());
    if (paths.contains("output")) c.output = detail::resolve(base_dir, paths.at("output").get<std::string>());
    if (doc.contains("schema")) {
      try {
        c.schema = detail::parse_schema(doc.at("schema"));
      } catch (const Error& ex) {
        throw Error(ErrorKind::Config, std::string("schema: ") + ex.what());
      }
    }

    c.simulation = detail::parse_simulation(doc.value("simulation", nlohmann::json::object()), c.seed);

    auto& e = c.evaluation;
    e.seed = c.seed;
    e.preprocess = detail::parse_preprocess(doc.value("preprocess", nlohmann::json::object()));
    if (doc.contains("split")) {
      detail::read_opt(doc.at("split"), "train", e.preprocess.split.train);
      detail::read_opt(doc.at("split"), "validation", e.preprocess.split.validation);
    }
    e.grid = detail::parse_grid(doc.value("models", nlohmann::json::object()));
    if (doc.contains("horizons_h")) {
      e.horizons.clear();
      for (const auto& h : doc.at("horizons_h")) {
        const int hours = h.get<int>();
        if (hours <= 0) throw Error(ErrorKind::Config, "horizons must be positive hours");
        e.horizons.push_back(std::chrono::hours{hours});
      }
      if (e.horizons.empty()) throw Error(ErrorKind::Config, "at least one horizon is required");
    }
    detail::read_opt(doc, "accuracy_threshold", e.accuracy_threshold);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::Config, std::string("config: ") + ex.what());
  }
  c.simulation.validate();
  c.evaluation.preprocess.validate();
  if (!(c.evaluation.accuracy_threshold >= 0.0 && c.evaluation.accuracy_threshold < 1.0))
    throw Error(ErrorKind::Config, "accuracy_threshold must lie in [0,1)");
  if (c.evaluation.grid.forest.empty() || c.evaluation.grid.gbdt.empty() || c.evaluation.grid.svm.empty())
    throw Error(ErrorKind::Config, "every model grid needs at least one point");
  c.echo = doc;
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "config '" + path.string() + "': " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

}  // namespace pdm
