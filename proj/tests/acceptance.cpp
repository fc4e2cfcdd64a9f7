// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pdm/config.hpp"
#include "pdm/evaluation.hpp"
#include "pdm/simulator.hpp"
#include "pdm/stats.hpp"

using namespace pdm;
namespace fs = std::filesystem;
using std::chrono::hours;

namespace {

const std::string kSourceDir = PDM_SOURCE_DIR;
int failures = 0;

void report(bool ok, const std::string& name, const std::string& details) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << details << std::endl;
  failures += !ok;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

const KnowledgeBase& kb() {
  static const KnowledgeBase k = load_kb(kSourceDir + "/docs/knowledge_base.json");
  return k;
}

const PipelineConfig& default_config() {
  static const PipelineConfig c = load_config(kSourceDir + "/configs/default.json");
  return c;
}

std::set<std::pair<int, std::string>> pairs(const std::vector<FaultEvent>& events) {
  std::set<std::pair<int, std::string>> s;
  for (const auto& e : events) s.insert({e.cycle, e.fault});
  return s;
}

// Metrics computed from the confusion counts, written independently of the library.
void metrics_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(101);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + rng.below(512);
    const double pt = rng.uniform(), pp = rng.uniform();
    std::vector<int> t(n), p(n);
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.bernoulli(pt);
      p[i] = rng.bernoulli(pp);
      if (t[i] && p[i]) ++tp;
      else if (p[i]) ++fp;
      else if (t[i]) ++fn;
      else ++tn;
    }
    const double acc = static_cast<double>(tp + tn) / static_cast<double>(n);
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    const auto m = eval::compute_metrics(t, p);
    mismatches += m.accuracy != acc || m.precision != prec || m.recall != rec || m.f1 != f1;
  }
  const double s = seconds_since(start);
  report(mismatches == 0 && s < 5.0, "metrics-oracle",
         std::to_string(mismatches) + " mismatches in 1000 pairs (len <= 512), " + fmt(s) + " s (limit 5 s)");
}

void rule_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  int mismatched = 0;
  std::size_t events = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto c = SimConfig::standard();
    c.seed = seed;
    c.logging = {1.0, 0.0};
    const auto [frame, gt] = simulate(c, kb());
    std::vector<FaultEvent> logged;
    for (const auto& e : gt.events)
      if (e.logged_by_automation) logged.push_back(e.event);
    events += logged.size();
    mismatched += pairs(evaluate_rules(frame, kb())) != pairs(logged) || logged.size() != gt.events.size();
  }
  const double s = seconds_since(start);
  report(mismatched == 0 && s < 30.0, "rule-engine-equivalence",
         std::to_string(mismatched) + "/20 seeds differ, " + std::to_string(events) + " logged events, " + fmt(s) +
             " s (limit 30 s)");
}

void under_reporting() {
  const auto& sim = default_config().simulation;
  const auto [frame, gt] = simulate_with_scenarios(sim, kb());
  const auto detected = evaluate_rules(frame, kb()).size();
  const auto logged = preprocess::detail::count_log_pulses(frame, "fault_log");
  const bool setup = sim.logging.probability == 0.05 && sim.cycles == 55;
  report(setup && logged > 0 && detected >= 5 * logged, "under-reporting",
         "p = " + fmt(sim.logging.probability) + ", " + std::to_string(sim.cycles) + " cycles: detected " +
             std::to_string(detected) + ", logged " + std::to_string(logged) + " (need detected >= 5 x logged)");
}

void hybrid_dominance() {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = default_config();
  const auto [frame, gt] = simulate_with_scenarios(cfg.simulation, kb());
  const auto& ec = cfg.evaluation;
  const auto base = eval::run_scenario(frame, gt, kb(), eval::ScenarioId::Baseline, ec);
  const auto s1 = eval::run_scenario(frame, gt, kb(), eval::ScenarioId::Scenario1, ec);
  const auto s2 = eval::run_scenario(frame, gt, kb(), eval::ScenarioId::Scenario2, ec);
  const double s = seconds_since(start);

  auto f1_at = [](const eval::ScenarioReport& r, const std::string& model) {
    for (const auto& c : r.cells)
      if (c.model == model && c.horizon == hours{24}) return c.test.f1;
    return -1.0;
  };
  // Every family must clear the margin, and so must the best of each scenario.
  bool per_family = true;
  std::string detail;
  double best1 = 0.0, best2 = 0.0;
  for (const auto* m : {"RandomForest", "GBDT", "LinearSVM"}) {
    const double a = f1_at(s1, m), b = f1_at(s2, m);
    per_family &= a >= 0.0 && b >= a + 0.20;
    best1 = std::max(best1, a);
    best2 = std::max(best2, b);
    detail += std::string(m) + " " + fmt(a) + " -> " + fmt(b) + "; ";
  }
  const auto horizon = [](const eval::ScenarioReport& r) {
    return r.selection.best ? eval::horizon_hours(r.selection.best->horizon) : 0L;  // no selection ranks lowest
  };
  const bool horizons = horizon(s2) >= horizon(s1);
  report(per_family && best2 >= best1 + 0.20 && horizons && s < 600.0, "hybrid-dominance",
         "24 h test F1 S1 -> S2: " + detail + "best " + fmt(best1) + " -> " + fmt(best2) + " (margin 0.20); " +
             "selected horizon S1 " + std::to_string(horizon(s1)) + " h, S2 " + std::to_string(horizon(s2)) +
             " h; baseline cells " + std::to_string(base.cells.size()) + "; " + fmt(s) + " s (limit 600 s)");
}

void reference_selection() {
  auto table = [](const std::vector<std::pair<std::string, std::array<double, 6>>>& rows) {
    std::vector<eval::CellScore> cells;
    const std::array<long, 3> hs{3, 12, 24};
    for (const auto& [model, v] : rows)
      for (std::size_t k = 0; k < 3; ++k) cells.push_back({model, hours{hs[k]}, v[k] / 100.0, v[k + 3] / 100.0});
    return cells;
  };
  const auto s1 = eval::select_best(table({{"RandomForest", {91.01, 91.24, 71.11, 33.23, 21.20, 10.02}},
                                           {"GBDT", {99.32, 98.40, 74.33, 56.36, 32.21, 12.43}},
                                           {"LinearSVM", {98.17, 93.01, 62.44, 44, 23.33, 17.12}}}),
                                    0.70);
  const auto s2 = eval::select_best(table({{"RandomForest", {96.01, 94, 86.23, 83.45, 72.35, 62.21}},
                                           {"GBDT", {99.15, 98.03, 99.21, 90.36, 91.46, 93.12}},
                                           {"LinearSVM", {98.43, 96.33, 94.07, 88, 85.24, 74}}}),
                                    0.70);
  auto show = [](const eval::SelectionResult& r) {
    return r.best ? r.best->model + " @ " + std::to_string(eval::horizon_hours(r.best->horizon)) + " h"
                  : std::string("none");
  };
  const bool ok = s1.best && s2.best && s2.best->model == "GBDT" && s2.best->horizon == hours{24} &&
                  s1.best->model == "GBDT" && s1.best->horizon == hours{3};
  report(ok, "select-best-reference-scores", "S2 " + show(s2) + " (want GBDT @ 24 h), S1 " + show(s1) +
                                                " (want GBDT @ 3 h)");
}

void numerical_invariants() {
  Rng rng(202);
  double pca_err = 0.0, mean_err = 0.0, std_err = 0.0;
  int loss_increases = 0, iqr_mismatches = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 2 + static_cast<int>(rng.below(10)), n = 100 + static_cast<int>(rng.below(400));
    Eigen::MatrixXd mix(p, p), z(n, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) mix(i, j) = rng.normal();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) z(i, j) = rng.normal();
    const Eigen::MatrixXd x = z * mix;
    const auto r = stats::pca(x, 0.95);
    pca_err = std::max(pca_err, (r.loadings.transpose() * r.loadings - Eigen::MatrixXd::Identity(p, p))
                                    .cwiseAbs()
                                    .maxCoeff());

    std::vector<Column> cols;
    std::vector<std::string> names;
    std::vector<TimePoint> ts;
    std::vector<bool> train(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      ts.push_back(TimePoint{} + Minutes{i});
      train[static_cast<std::size_t>(i)] = i < n * 6 / 10;
    }
    for (int j = 0; j < p; ++j) {
      std::vector<Cell> cells;
      const double scale = std::exp(rng.uniform(-5, 8)), shift = rng.normal(0, 1e3);
      for (int i = 0; i < n; ++i) cells.push_back(x(i, j) * scale + shift);
      names.push_back("c" + std::to_string(j));
      cols.push_back({names.back(), ColumnRole::Channel, "", cells});
    }
    const auto [std_frame, scaler] = preprocess::standardize(TimeSeriesFrame(ts, cols), names, train);
    for (const auto& name : names) {
      double m = 0.0, ss = 0.0, cnt = 0.0;
      for (int i = 0; i < n; ++i)
        if (train[static_cast<std::size_t>(i)]) m += *std_frame.at(name, static_cast<std::size_t>(i)), ++cnt;
      m /= cnt;
      for (int i = 0; i < n; ++i)
        if (train[static_cast<std::size_t>(i)]) {
          const double d = *std_frame.at(name, static_cast<std::size_t>(i)) - m;
          ss += d * d;
        }
      mean_err = std::max(mean_err, std::abs(m));
      std_err = std::max(std_err, std::abs(std::sqrt(ss / cnt) - 1.0));
    }

    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = rng.bernoulli(x(i, 0) > 0 ? 0.8 : 0.2);
    models::GbdtParams gp;
    gp.iterations = 50;
    gp.learning_rate = rng.uniform(0.05, 1.0);
    const auto model = models::fit_gbdt(x, y, gp);
    const auto& h = model.loss_history();
    for (std::size_t k = 1; k < h.size(); ++k) loss_increases += h[k] > h[k - 1];

    std::vector<Cell> series;
    std::vector<double> obs;
    for (int i = 0; i < n; ++i) {
      if (rng.bernoulli(0.05)) {
        series.emplace_back();
        continue;
      }
      series.push_back(rng.bernoulli(0.03) ? rng.normal(0, 20) : rng.normal());
      obs.push_back(*series.back());
    }
    std::sort(obs.begin(), obs.end());
    auto q = [&](double f) {
      const double pos = f * static_cast<double>(obs.size() - 1);
      const auto i = static_cast<std::size_t>(pos);
      return i + 1 < obs.size() ? obs[i] + (pos - static_cast<double>(i)) * (obs[i + 1] - obs[i]) : obs[i];
    };
    const double q1 = q(0.25), q3 = q(0.75), lo = q1 - 1.5 * (q3 - q1), hi = q3 + 1.5 * (q3 - q1);
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < series.size(); ++i)
      if (series[i] && (*series[i] < lo || *series[i] > hi)) want.push_back(i);
    iqr_mismatches += stats::detect_outliers_iqr(series, 1.5) != want;
  }
  const bool ok = pca_err <= 1e-9 && mean_err <= 1e-9 && std_err <= 1e-9 && loss_increases == 0 && iqr_mismatches == 0;
  std::ostringstream d;
  d << "max |V'V - I| " << pca_err << ", max |mean| " << mean_err << ", max |std - 1| " << std_err
    << " (tol 1e-9); GBDT loss increases " << loss_increases << "; IQR mismatches " << iqr_mismatches
    << " over 10 datasets";
  report(ok, "numerical-invariants", d.str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void reproducibility() {
  const auto root = fs::temp_directory_path() / "pdm_acceptance_repro";
  fs::remove_all(root);
  std::vector<fs::path> dirs{root / "a", root / "b"};
  bool ran = true;
  for (const auto& d : dirs) {
    const auto cmd = std::string(PDM_CLI) + " compare --config " + kSourceDir + "/configs/default.json --out " +
                     d.string() + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    ran &= WIFEXITED(status) && WEXITSTATUS(status) == 0;
  }
  std::size_t files = 0, differing = 0;
  if (ran)
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      const auto ext = e.path().extension();
      if (ext != ".json" && ext != ".csv") continue;
      ++files;
      const auto other = dirs[1] / e.path().filename();
      differing += !fs::exists(other) || slurp(e.path()) != slurp(other);
    }
  report(ran && files >= 5 && differing == 0, "byte-identical-compare",
         std::string(ran ? "" : "compare failed; ") + std::to_string(files) + " JSON/CSV files, " +
             std::to_string(differing) + " differ");
  fs::remove_all(root);
}

void labeling_monotonicity() {
  Rng rng(303);
  int violations = 0, datasets = 0;
  std::size_t positives = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto c = SimConfig::standard();
    c.seed = 1000 + static_cast<std::uint64_t>(trial);
    c.cycles = 20;
    c.faults.clear();
    c.health = {};
    c.logging = {1.0, 0.0};
    c.schedule.clear();
    const std::vector<std::string> blocking{"Needle Valve Fault", "Sample Taking Fault", "Heating fault",
                                            "Angle Measurement Fault"};
    for (int cyc = 1; cyc <= c.cycles; ++cyc)
      if (rng.bernoulli(0.3)) c.schedule.push_back({cyc, blocking[rng.below(blocking.size())], std::nullopt});
    const auto [frame, gt] = simulate(c, kb());
    const auto [ds, rep] = preprocess::build_dataset(frame, preprocess::Scenario::S2, kb(), {});
    ++datasets;
    const auto y3 = eval::label_horizon(ds, hours{3}), y12 = eval::label_horizon(ds, hours{12}),
               y24 = eval::label_horizon(ds, hours{24});
    for (std::size_t i = 0; i < y24.rows.size(); ++i) {
      violations += y12.rows[i] != y24.rows[i] || y3.rows[i] != y24.rows[i];
      violations += y3.labels[i] > y12.labels[i] || y12.labels[i] > y24.labels[i];
    }
    for (int v : y24.labels) positives += static_cast<std::size_t>(v);
  }
  report(violations == 0 && positives > 0, "labeling-monotonicity",
         std::to_string(violations) + " violations of y3 <= y12 <= y24 over " + std::to_string(datasets) +
             " random fault schedules (" + std::to_string(positives) + " positive 24 h labels)");
}

void chronological_split() {
  const auto [frame, gt] = simulate(default_config().simulation, kb());
  std::vector<int> cycle;
  for (std::size_t r = 0; r < frame.size(); ++r) cycle.push_back(*frame.cycle(r));
  const auto split = split_cycles(cycle, frame.timestamps(), default_config().evaluation.preprocess.split);
  std::map<Split, int> count;
  std::map<Split, std::pair<TimePoint, TimePoint>> span;
  for (std::size_t r = 0; r < frame.size(); ++r) {
    const auto s = split.at(cycle[r]);
    const auto t = frame.timestamps()[r];
    auto [it, fresh] = span.try_emplace(s, t, t);
    if (!fresh) it->second = {std::min(it->second.first, t), std::max(it->second.second, t)};
  }
  for (const auto& [c, s] : split) ++count[s];
  const bool ordered = span[Split::Train].second < span[Split::Validation].first &&
                       span[Split::Validation].second < span[Split::Test].first;
  const bool ok = split.size() == 55 && count[Split::Train] == 33 && count[Split::Validation] == 11 &&
                  count[Split::Test] == 11 && ordered;
  report(ok, "chronological-split",
         std::to_string(split.size()) + " cycles -> " + std::to_string(count[Split::Train]) + "/" +
             std::to_string(count[Split::Validation]) + "/" + std::to_string(count[Split::Test]) +
             (ordered ? ", disjoint and time-ordered" : ", overlapping in time"));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, void (*)()>> checks{
      {"metrics-oracle", metrics_oracle},
      {"rule-engine-equivalence", rule_equivalence},
      {"under-reporting", under_reporting},
      {"hybrid-dominance", hybrid_dominance},
      {"select-best-reference-scores", reference_selection},
      {"numerical-invariants", numerical_invariants},
      {"byte-identical-compare", reproducibility},
      {"labeling-monotonicity", labeling_monotonicity},
      {"chronological-split", chronological_split}};
  for (const auto& [name, check] : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
    }
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << checks.size() - static_cast<std::size_t>(failures) << "/"
            << checks.size() << std::endl;
  return failures ? 1 : 0;
}
