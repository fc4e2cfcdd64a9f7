#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pdm/core/error.hpp"
#include "pdm/core/log.hpp"
#include "pdm/core/rng.hpp"
#include "pdm/knowledge_base.hpp"
#include "pdm/models/classifier.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/simulator.hpp"
#include "pdm/split.hpp"

namespace pdm::eval {

using models::Matrix;
using preprocess::CuratedDataset;

// ---------------------------------------------------------------------------
// Horizon labels

struct HorizonLabels {
  std::vector<std::size_t> rows;  // dataset rows with full lookahead coverage
  std::vector<int> labels;
};

/// Row indices where a positive-target run starts inside a sequence instance.
inline std::vector<std::size_t> target_onsets(const CuratedDataset& ds) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    if (!ds.target[r]) continue;
    const bool fresh = r == 0 || !ds.target[r - 1] || ds.cycle[r - 1] != ds.cycle[r] || ds.sequence[r - 1] != ds.sequence[r];
    if (fresh) out.push_back(r);
  }
  return out;
}

/// y_t = 1 iff a target onset falls in (t, t + H]. Rows closer than H to the
/// last timestamp lack lookahead and are left out. H = 0 returns the target.
inline HorizonLabels label_horizon(const CuratedDataset& ds, Minutes horizon, Minutes interval = Minutes{15}) {
  if (horizon.count() < 0 || interval.count() <= 0 || horizon.count() % interval.count() != 0)
    throw Error(ErrorKind::Config, "horizon must be a non-negative multiple of the row interval");
  HorizonLabels out;
  if (ds.rows() == 0) return out;
  if (horizon.count() == 0) {
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      out.rows.push_back(r);
      out.labels.push_back(ds.target[r]);
    }
    return out;
  }
  std::vector<TimePoint> onsets;
  for (auto r : target_onsets(ds)) onsets.push_back(ds.timestamps[r]);
  const auto last = ds.timestamps.back();
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const auto t = ds.timestamps[r];
    if (t + horizon > last) continue;
    const auto it = std::upper_bound(onsets.begin(), onsets.end(), t);
    out.rows.push_back(r);
    out.labels.push_back(it != onsets.end() && *it <= t + horizon ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool no_positive_predictions = false;
  bool no_positive_truth = false;

  std::size_t total() const { return tp + fp + fn + tn; }
};

inline MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  MetricsReport m{tp, fp, fn, tn};
  const auto n = tp + fp + fn + tn;
  m.accuracy = n ? static_cast<double>(tp + tn) / static_cast<double>(n) : 0.0;
  m.no_positive_predictions = tp + fp == 0;
  m.no_positive_truth = tp + fn == 0;
  m.precision = m.no_positive_predictions ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = m.no_positive_truth ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

inline MetricsReport compute_metrics(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorKind::Dimension, "label vectors differ in length");
  if (y_true.empty()) throw Error(ErrorKind::EmptyInput, "metrics need at least one row");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] != 0, p = y_pred[i] != 0;
    tp += t && p;
    fp += !t && p;
    fn += t && !p;
    tn += !t && !p;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  return {{"tp", m.tp},
          {"fp", m.fp},
          {"fn", m.fn},
          {"tn", m.tn},
          {"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"no_positive_predictions", m.no_positive_predictions},
          {"no_positive_truth", m.no_positive_truth}};
}

// ---------------------------------------------------------------------------
// Tuning

struct ModelGrid {
  std::vector<models::ForestParams> forest;
  std::vector<models::GbdtParams> gbdt;
  std::vector<models::SvmParams> svm;

  static ModelGrid standard() {
    ModelGrid g;
    for (int trees : {25, 50})
      for (int depth : {4, 8}) {
        models::ForestParams p;
        p.trees = trees;
        p.max_depth = depth;
        p.min_leaf = 2;
        g.forest.push_back(p);
      }
    for (int it : {30, 80})
      for (int depth : {2, 3}) {
        models::GbdtParams p;
        p.iterations = it;
        p.max_depth = depth;
        g.gbdt.push_back(p);
      }
    for (double lambda : {0.01, 0.001}) {
      models::SvmParams p;
      p.lambda = lambda;
      p.epochs = 30;
      g.svm.push_back(p);
    }
    return g;
  }
};

struct Candidate {
  int size = 0;   // trees, iterations or epochs
  int depth = 0;
  nlohmann::json params;
  std::function<models::ClassifierModel(const Matrix&, std::span<const int>, std::uint64_t)> fit;
};

inline std::vector<Candidate> candidates(models::Family family, const ModelGrid& grid) {
  std::vector<Candidate> out;
  switch (family) {
    case models::Family::Forest:
      for (auto p : grid.forest)
        out.push_back({p.trees, p.max_depth,
                       {{"trees", p.trees}, {"max_depth", p.max_depth}, {"min_leaf", p.min_leaf},
                        {"max_features", p.max_features}, {"bootstrap", p.bootstrap}},
                       [p](const Matrix& x, std::span<const int> y, std::uint64_t seed) mutable {
                         p.seed = seed;
                         return models::ClassifierModel(models::fit_forest(x, y, p));
                       }});
      break;
    case models::Family::Gbdt:
      for (auto p : grid.gbdt)
        out.push_back({p.iterations, p.max_depth,
                       {{"iterations", p.iterations}, {"max_depth", p.max_depth},
                        {"learning_rate", p.learning_rate}, {"bins", p.bins}, {"lambda", p.lambda}},
                       [p](const Matrix& x, std::span<const int> y, std::uint64_t seed) mutable {
                         p.seed = seed;
                         return models::ClassifierModel(models::fit_gbdt(x, y, p));
                       }});
      break;
    case models::Family::LinearSvm:
      for (auto p : grid.svm)
        out.push_back({p.epochs, 0, {{"lambda", p.lambda}, {"epochs", p.epochs}},
                       [p](const Matrix& x, std::span<const int> y, std::uint64_t seed) mutable {
                         p.seed = seed;
                         return models::ClassifierModel(models::fit_svm(x, y, p));
                       }});
      break;
    case models::Family::Tree:
      throw Error(ErrorKind::Config, "single trees are not part of the evaluation grid");
  }
  return out;
}

struct TuneResult {
  models::ClassifierModel model;
  nlohmann::json params;
  MetricsReport validation;
};

/// Exhaustive search for the best validation F1. Ties go to the smaller
/// model, then the shallower one, then grid order. The winner is the model
/// fitted on the training rows only.
inline TuneResult tune_and_fit(const Matrix& x_train, std::span<const int> y_train, const Matrix& x_val,
                               std::span<const int> y_val, std::vector<Candidate> grid, std::uint64_t seed) {
  if (grid.empty()) throw Error(ErrorKind::Config, "empty hyperparameter grid");
  if (x_train.rows() == 0 || x_val.rows() == 0) throw Error(ErrorKind::EmptyInput, "tuning needs non-empty splits");
  std::stable_sort(grid.begin(), grid.end(), [](const Candidate& a, const Candidate& b) {
    return a.size != b.size ? a.size < b.size : a.depth < b.depth;
  });
  std::optional<TuneResult> best;
  for (const auto& c : grid) {
    auto model = c.fit(x_train, y_train, seed);
    const auto pred = models::predict(model, x_val);
    const auto m = compute_metrics(y_val, pred.labels);
    if (!best || m.f1 > best->validation.f1) best = TuneResult{std::move(model), c.params, m};
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Selection

struct CellScore {
  std::string model;
  Minutes horizon{0};
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct SelectionResult {
  std::optional<CellScore> best;
  std::string reason;
};

/// Survivors need accuracy above the threshold and a non-zero F1. The best
/// has the highest F1; ties prefer the longer horizon, then model name.
inline SelectionResult select_best(std::vector<CellScore> cells, double accuracy_threshold = 0.70) {
  SelectionResult r;
  std::erase_if(cells, [&](const CellScore& c) { return !(c.accuracy > accuracy_threshold) || !(c.f1 > 0.0); });
  if (cells.empty()) {
    r.reason = "no model exceeds the accuracy threshold with a non-zero F1";
    return r;
  }
  r.best = *std::min_element(cells.begin(), cells.end(), [](const CellScore& a, const CellScore& b) {
    if (a.f1 != b.f1) return a.f1 > b.f1;
    if (a.horizon != b.horizon) return a.horizon > b.horizon;
    return a.model < b.model;
  });
  r.reason = "highest F1 among models above the accuracy threshold";
  return r;
}

// ---------------------------------------------------------------------------
// Scenarios

enum class ScenarioId { Baseline, Scenario1, Scenario2 };

inline std::string_view to_string(ScenarioId s) {
  switch (s) {
    case ScenarioId::Baseline: return "Baseline";
    case ScenarioId::Scenario1: return "Scenario1";
    case ScenarioId::Scenario2: return "Scenario2";
  }
  return "?";
}

inline ScenarioId parse_scenario(std::string_view s) {
  if (s == "baseline") return ScenarioId::Baseline;
  if (s == "s1") return ScenarioId::Scenario1;
  if (s == "s2") return ScenarioId::Scenario2;
  throw Error(ErrorKind::Config, "unknown scenario '" + std::string(s) + "' (baseline|s1|s2)");
}

inline constexpr const char* kRuleModel = "Rule-based model";

struct EvalConfig {
  std::vector<Minutes> horizons = {std::chrono::hours{3}, std::chrono::hours{12}, std::chrono::hours{24}};
  std::vector<models::Family> families = {models::Family::Forest, models::Family::Gbdt, models::Family::LinearSvm};
  ModelGrid grid = ModelGrid::standard();
  double accuracy_threshold = 0.70;
  preprocess::PreprocessConfig preprocess;
  std::uint64_t seed = 0;
};

struct CellResult {
  std::string model;
  Minutes horizon{0};
  nlohmann::json params;
  std::size_t train_rows = 0, validation_rows = 0, test_rows = 0;
  std::size_t train_positives = 0;
  MetricsReport validation;
  MetricsReport test;
};

struct ScenarioReport {
  ScenarioId scenario = ScenarioId::Baseline;
  std::vector<CellResult> cells;
  SelectionResult selection;
  nlohmann::json preprocess;  // report of the dataset build, if any
  std::uint64_t seed = 0;
  double accuracy_threshold = 0.70;
};

namespace detail {

inline Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

/// Cycle x blocking-fault detection table restricted to the given cycles.
inline MetricsReport pair_metrics(const std::set<std::pair<int, std::string>>& truth,
                                  const std::set<std::pair<int, std::string>>& detected, const std::set<int>& cycles,
                                  const std::vector<std::string>& faults) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (int c : cycles)
    for (const auto& f : faults) {
      const bool t = truth.count({c, f}) > 0, d = detected.count({c, f}) > 0;
      tp += t && d;
      fp += !t && d;
      fn += t && !d;
      tn += !t && !d;
    }
  return metrics_from_counts(tp, fp, fn, tn);
}

}  // namespace detail

/// Rule detections against simulator ground truth over (cycle, blocking
/// fault) pairs, at horizon 0, on the validation and test cycles.
inline ScenarioReport run_baseline(const TimeSeriesFrame& frame, const GroundTruth& gt, const KnowledgeBase& kb,
                                   const EvalConfig& cfg) {
  ScenarioReport rep;
  rep.scenario = ScenarioId::Baseline;
  rep.seed = cfg.seed;
  rep.accuracy_threshold = cfg.accuracy_threshold;
  if (frame.empty()) throw Error(ErrorKind::EmptyInput, "baseline on an empty frame");
  std::vector<int> cycles;
  std::vector<TimePoint> ts;
  for (std::size_t r = 0; r < frame.size(); ++r)
    if (const auto c = frame.cycle(r)) {
      cycles.push_back(*c);
      ts.push_back(frame.timestamps()[r]);
    }
  const auto split = split_cycles(cycles, ts, cfg.preprocess.split);
  std::vector<std::string> faults;
  for (const auto& e : kb.fmeca)
    if (e.severity == Severity::Blocking) faults.push_back(e.fault);
  std::sort(faults.begin(), faults.end());
  std::set<std::pair<int, std::string>> truth, detected;
  for (const auto& e : gt.events)
    if (e.event.severity == Severity::Blocking) truth.insert({e.event.cycle, e.event.fault});
  for (const auto& e : evaluate_rules(frame, kb))
    if (e.severity == Severity::Blocking) detected.insert({e.cycle, e.fault});
  std::set<int> val, test, train;
  for (const auto& [c, s] : split) (s == Split::Train ? train : s == Split::Validation ? val : test).insert(c);

  CellResult cell;
  cell.model = kRuleModel;
  cell.params = {{"rules", kb.rules.size()}};
  cell.train_rows = train.size() * faults.size();
  cell.validation_rows = val.size() * faults.size();
  cell.test_rows = test.size() * faults.size();
  cell.validation = detail::pair_metrics(truth, detected, val, faults);
  cell.test = detail::pair_metrics(truth, detected, test, faults);
  rep.cells.push_back(cell);
  rep.selection = select_best({{cell.model, Minutes{0}, cell.test.accuracy, cell.test.f1}}, cfg.accuracy_threshold);
  return rep;
}

/// Tunes and tests every model family at every horizon on a curated dataset.
inline ScenarioReport evaluate_dataset(const CuratedDataset& ds, ScenarioId id, const EvalConfig& cfg) {
  ScenarioReport rep;
  rep.scenario = id;
  rep.seed = cfg.seed;
  rep.accuracy_threshold = cfg.accuracy_threshold;
  const Rng root = Rng(cfg.seed).substream(to_string(id));
  for (const auto h : cfg.horizons) {
    const auto hl = label_horizon(ds, h, cfg.preprocess.resample);
    std::vector<std::size_t> tr, va, te;
    std::vector<int> ytr, yva, yte;
    for (std::size_t i = 0; i < hl.rows.size(); ++i) {
      const auto r = hl.rows[i];
      const auto it = ds.split.find(ds.cycle[r]);
      if (it == ds.split.end()) continue;
      auto& rows = it->second == Split::Train ? tr : it->second == Split::Validation ? va : te;
      auto& ys = it->second == Split::Train ? ytr : it->second == Split::Validation ? yva : yte;
      rows.push_back(r);
      ys.push_back(hl.labels[i]);
    }
    if (tr.empty() || va.empty() || te.empty())
      throw Error(ErrorKind::EmptyInput, "a split is empty at horizon " + std::to_string(h.count()) + " min");
    const Matrix xtr = detail::take_rows(ds.features, tr), xva = detail::take_rows(ds.features, va),
                 xte = detail::take_rows(ds.features, te);
    for (const auto fam : cfg.families) {
      const auto name = std::string(models::to_string(fam));
      const std::uint64_t seed = root.substream(name).substream(static_cast<std::uint64_t>(h.count())).next();
      auto tuned = tune_and_fit(xtr, ytr, xva, yva, candidates(fam, cfg.grid), seed);
      const auto pred = models::predict(tuned.model, xte);
      CellResult cell;
      cell.model = name;
      cell.horizon = h;
      cell.params = tuned.params;
      cell.params["seed"] = seed;
      cell.train_rows = tr.size();
      cell.validation_rows = va.size();
      cell.test_rows = te.size();
      cell.train_positives = static_cast<std::size_t>(std::count(ytr.begin(), ytr.end(), 1));
      cell.validation = tuned.validation;
      cell.test = compute_metrics(yte, pred.labels);
      log::info(std::string(to_string(id)) + " " + name + " H=" + std::to_string(h.count() / 60) +
                "h test F1=" + std::to_string(cell.test.f1));
      rep.cells.push_back(std::move(cell));
    }
  }
  std::vector<CellScore> scores;
  for (const auto& c : rep.cells) scores.push_back({c.model, c.horizon, c.test.accuracy, c.test.f1});
  rep.selection = select_best(scores, cfg.accuracy_threshold);
  return rep;
}

inline ScenarioReport run_scenario(const TimeSeriesFrame& frame, const GroundTruth& gt, const KnowledgeBase& kb,
                                   ScenarioId id, const EvalConfig& cfg) {
  if (id == ScenarioId::Baseline) return run_baseline(frame, gt, kb, cfg);
  const auto sc = id == ScenarioId::Scenario1 ? preprocess::Scenario::S1 : preprocess::Scenario::S2;
  auto [ds, prep] = preprocess::build_dataset(frame, sc, kb, cfg.preprocess);
  auto rep = evaluate_dataset(ds, id, cfg);
  rep.preprocess = preprocess::report_to_json(prep);
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

inline long horizon_hours(Minutes m) { return m.count() / 60; }

inline nlohmann::json selection_to_json(const SelectionResult& s) {
  if (!s.best) return {{"model", nullptr}, {"horizon_h", nullptr}, {"reason", s.reason}};
  return {{"model", s.best->model},
          {"horizon_h", horizon_hours(s.best->horizon)},
          {"accuracy", s.best->accuracy},
          {"f1", s.best->f1},
          {"reason", s.reason}};
}

inline nlohmann::json report_to_json(const ScenarioReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"model", c.model},
                     {"horizon_h", horizon_hours(c.horizon)},
                     {"params", c.params},
                     {"rows", {{"train", c.train_rows}, {"validation", c.validation_rows}, {"test", c.test_rows}}},
                     {"train_positives", c.train_positives},
                     {"validation", metrics_to_json(c.validation)},
                     {"test", metrics_to_json(c.test)}});
  nlohmann::json j = {{"scenario", to_string(r.scenario)},
                      {"seed", r.seed},
                      {"accuracy_threshold", r.accuracy_threshold},
                      {"cells", cells},
                      {"best", selection_to_json(r.selection)}};
  if (!r.preprocess.is_null()) j["preprocess"] = r.preprocess;
  return j;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<ScenarioReport>& reports) {
  out << "scenario,model,horizon_h,split,tp,fp,fn,tn,accuracy,precision,recall,f1\n";
  for (const auto& r : reports)
    for (const auto& c : r.cells)
      for (const auto* which : {"validation", "test"}) {
        const auto& m = std::string(which) == "test" ? c.test : c.validation;
        out << to_string(r.scenario) << ',' << c.model << ',' << horizon_hours(c.horizon) << ',' << which << ','
            << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << format_number(m.accuracy) << ','
            << format_number(m.precision) << ',' << format_number(m.recall) << ',' << format_number(m.f1) << '\n';
      }
}

/// One row per scenario: best model, horizon, test accuracy and F1.
inline nlohmann::json comparison_to_json(const std::vector<ScenarioReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    auto row = selection_to_json(r.selection);
    row["scenario"] = to_string(r.scenario);
    rows.push_back(row);
  }
  return {{"comparison", rows}};
}

inline void write_comparison_csv(std::ostream& out, const std::vector<ScenarioReport>& reports) {
  out << "scenario,best_model,horizon_h,accuracy,f1\n";
  for (const auto& r : reports) {
    out << to_string(r.scenario) << ',';
    if (r.selection.best)
      out << r.selection.best->model << ',' << horizon_hours(r.selection.best->horizon) << ','
          << format_number(r.selection.best->accuracy) << ',' << format_number(r.selection.best->f1) << '\n';
    else
      out << "none,,,\n";
  }
}

}  // namespace pdm::eval
