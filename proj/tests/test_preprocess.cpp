#include <gtest/gtest.h>

#include <cmath>

#include "pdm/core/rng.hpp"
#include "pdm/preprocess.hpp"
#include "pdm/simulator.hpp"
#include "support.hpp"

using namespace pdm;
using namespace pdm::preprocess;
using pdm::test::channel;
using pdm::test::shipped_kb;

namespace {

/// `cycles` cycles of S09 (len minutes) separated by `idle` IDLE minutes with
/// two channels following a per-minute profile plus `noise`.
TimeSeriesFrame cycles_frame(int cycles, int len, int idle, double noise = 0.0, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<TimePoint> ts;
  std::vector<Cell> a, b, seq, cyc;
  auto t = pdm::test::t0();
  for (int c = 1; c <= cycles; ++c) {
    for (int m = 0; m < len; ++m) {
      ts.push_back(t);
      t += Minutes{1};
      a.push_back(10.0 * m + c + noise * rng.normal());
      b.push_back(-3.0 * m + noise * rng.normal());
      seq.push_back(9);
      cyc.push_back(c);
    }
    for (int m = 0; m < idle; ++m) {
      ts.push_back(t);
      t += Minutes{1};
      a.push_back(std::nullopt);
      b.push_back(std::nullopt);
      seq.push_back(0);
      cyc.push_back(c);
    }
  }
  return TimeSeriesFrame(ts, {channel("Var.7", a), channel("Var.11", b), {"sequence", ColumnRole::Sequence, "", seq},
                              {"cycle", ColumnRole::Cycle, "", cyc}});
}

TimeSeriesFrame blank(TimeSeriesFrame f, const std::string& ch, std::size_t from, std::size_t to) {
  auto cols = f.columns();
  for (auto& c : cols)
    if (ch.empty() ? c.role == ColumnRole::Channel : c.name == ch)
      for (auto r = from; r < to; ++r) c.cells[r] = std::nullopt;
  return TimeSeriesFrame(f.timestamps(), cols);
}

FaultEvent event(TimePoint onset, int cycle, SequenceId seq, const std::string& fault, const std::string& cause,
                 Severity sev = Severity::Blocking) {
  FaultEvent e;
  e.onset = onset;
  e.cycle = cycle;
  e.sequence = seq;
  e.fault = fault;
  e.cause = cause;
  e.severity = sev;
  e.consequence = sev == Severity::Blocking ? Consequence::CycleStop : Consequence::Acknowledge;
  return e;
}

}  // namespace

TEST(Gaps, ClassifiedByCauseWithKnowledge) {
  auto f = cycles_frame(3, 20, 5);
  f = blank(f, "", 3, 6);          // blanket in cycle 1
  f = blank(f, "Var.11", 30, 33);  // dropout in cycle 2
  const auto rep = classify_gaps(f, &shipped_kb());
  EXPECT_EQ(rep.count(GapCause::NonUse), 3u);
  EXPECT_EQ(rep.count(GapCause::Blanket), 1u);
  EXPECT_EQ(rep.count(GapCause::SingleSensor), 1u);
  for (const auto& g : rep.intervals) {
    if (g.cause == GapCause::Blanket) { EXPECT_EQ((std::pair{g.begin, g.end}), (std::pair<std::size_t, std::size_t>{3, 6})); }
    if (g.cause == GapCause::SingleSensor) {
      EXPECT_EQ(g.channels, std::vector<std::string>{"Var.11"});
      EXPECT_EQ(g.disposition, Disposition::Reconstruct);
      EXPECT_EQ(g.start, f.timestamps()[30]);
      EXPECT_EQ(g.last, f.timestamps()[32]);
    }
  }
}

TEST(Gaps, UnknownWithoutKnowledge) {
  auto f = blank(cycles_frame(2, 10, 3), "Var.7", 2, 4);
  const auto rep = classify_gaps(f, nullptr);
  for (const auto& g : rep.intervals) {
    EXPECT_EQ(g.cause, GapCause::Unknown);
    EXPECT_EQ(g.disposition, Disposition::Delete);
  }
  EXPECT_EQ(drop_intervals(f, rep).size(), f.size() - 2 - 3 * 2);
}

TEST(Gaps, ImputesFromPriorCyclesAtSamePosition) {
  const int len = 20, idle = 5;
  auto clean = cycles_frame(5, len, idle, 0.5, 4);
  const std::size_t c5 = 4 * (len + idle);
  auto f = blank(clean, "Var.7", c5 + 7, c5 + 9);
  GapInterval gap{c5 + 7, c5 + 9, f.timestamps()[c5 + 7], f.timestamps()[c5 + 8], {"Var.7"},
                  GapCause::SingleSensor, Disposition::Reconstruct};
  const auto g = impute_single_sensor(f, gap, 3);
  for (std::size_t r = c5 + 7; r < c5 + 9; ++r) {
    const std::size_t m = r - c5;
    double want = 0;
    for (int back = 1; back <= 3; ++back) want += *clean.at("Var.7", r - back * (len + idle));
    EXPECT_NEAR(*g.at("Var.7", r), want / 3.0, 1e-12) << m;
  }
  EXPECT_EQ(g.at("Var.7", c5 + 9), clean.at("Var.7", c5 + 9));
}

TEST(Gaps, ImputationFallsBackToMedianAndRejectsDeadChannel) {
  auto f = blank(cycles_frame(2, 10, 2), "Var.11", 1, 2);  // first cycle: no history
  GapInterval gap{1, 2, f.timestamps()[1], f.timestamps()[1], {"Var.11"}, GapCause::SingleSensor,
                  Disposition::Reconstruct};
  std::vector<double> obs;
  for (const auto& c : f.column("Var.11").cells)
    if (c) obs.push_back(*c);
  EXPECT_DOUBLE_EQ(*impute_single_sensor(f, gap, 3).at("Var.11", 1), stats::median(obs));

  const auto dead = blank(f, "Var.11", 0, f.size());
  EXPECT_THROW(impute_single_sensor(dead, gap, 3), Error);
  gap.disposition = Disposition::Delete;
  EXPECT_THROW(impute_single_sensor(f, gap, 3), Error);
}

TEST(Gaps, DropsSparseChannels) {
  auto f = blank(cycles_frame(2, 10, 0), "Var.11", 0, 15);
  std::vector<std::string> dropped;
  const auto g = drop_sparse_channels(f, 0.5, &dropped);
  EXPECT_EQ(dropped, std::vector<std::string>{"Var.11"});
  EXPECT_FALSE(g.has("Var.11"));
  EXPECT_TRUE(drop_sparse_channels(f, 0.8).has("Var.11"));
}

TEST(Outliers, LocalResidualMatchesNeighbourMedian) {
  const auto f = cycles_frame(2, 30, 4, 1.0, 9);
  const auto res = local_residuals(f, 5);
  const auto& a = f.column("Var.7").cells;
  for (std::size_t r = 0; r < f.size(); ++r) {
    const auto& got = res.at("Var.7")[r];
    const std::size_t start = r < 34 ? 0 : 34;
    const bool full = r >= start + 5 && r + 5 < start + 30;
    if (!full) {
      EXPECT_FALSE(got) << r;
      continue;
    }
    std::vector<double> w;
    for (std::size_t k = r - 5; k <= r + 5; ++k)
      if (k != r) w.push_back(*a[k]);
    std::sort(w.begin(), w.end());
    ASSERT_TRUE(got);
    EXPECT_NEAR(*got, *a[r] - (w[4] + w[5]) / 2.0, 1e-12);
  }
}

TEST(Outliers, SpikeIsFlaggedLevelShiftIsNot) {
  auto f = cycles_frame(4, 60, 5, 0.2, 2);
  auto cols = f.columns();
  *cols[0].cells[100] += 50.0;                             // spike
  for (std::size_t r = 160; r < 180; ++r) *cols[1].cells[r] += 8.0;  // sustained shift
  f = TimeSeriesFrame(f.timestamps(), cols);
  OutlierParams p;
  p.use_ics = false;
  const auto flags = flag_outliers(f, p);
  ASSERT_FALSE(flags.empty());
  EXPECT_TRUE(std::find(flags.begin(), flags.end(), OutlierFlag{100, "Var.7", Detector::Iqr}) != flags.end());
  for (const auto& fl : flags)
    if (fl.channel == "Var.11") { EXPECT_TRUE(fl.row <= 161 || fl.row >= 178) << fl.row; }
}

TEST(Outliers, VerdictsFollowContextAndIsolation) {
  auto cols = cycles_frame(2, 40, 5).columns();
  for (std::size_t r = 0; r < cols[0].cells.size(); ++r)
    if (cols[0].cells[r]) cols[0].cells[r] = 20.0 + 0.1 * static_cast<double>(r);
  cols[0].cells[29] = 60.0;  // above the 45 degC envelope
  const TimeSeriesFrame f(cycles_frame(2, 40, 5).timestamps(), cols);
  const std::vector<OutlierFlag> flags{{10, "Var.7", Detector::Iqr},
                                       {20, "Var.7", Detector::Iqr},
                                       {21, "Var.7", Detector::Iqr},
                                       {60, "Var.7", Detector::Ics},
                                       {30, "Var.7", Detector::Iqr}};
  // A blocking event at row 64 puts row 60 inside its precursor horizon.
  const std::vector<FaultEvent> events{event(f.timestamps()[64], 2, 9, "Heating fault", "over-temperature")};
  const auto v = verify_outliers(flags, f, shipped_kb(), events, Minutes{10});
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[0].verdict, Verdict::CorrectedFalsePositive);
  EXPECT_DOUBLE_EQ(*v[0].replacement, (*f.at("Var.7", 9) + *f.at("Var.7", 11)) / 2.0);
  EXPECT_EQ(v[1].verdict, Verdict::DroppedTrueIrrelevant);  // neighbour also flagged
  EXPECT_EQ(v[2].verdict, Verdict::DroppedTrueIrrelevant);
  EXPECT_EQ(v[3].verdict, Verdict::TaggedTrueRelevant);
  EXPECT_EQ(v[4].verdict, Verdict::DroppedTrueIrrelevant);  // neighbour outside its envelope

  const auto g = apply_verdicts(f, v);
  EXPECT_EQ(g.size(), f.size() - 3);
  EXPECT_DOUBLE_EQ(*g.at("Var.7", 10), *v[0].replacement);
}

TEST(Outliers, EventWindowRunsToInstanceEnd) {
  const auto f = cycles_frame(2, 40, 5);
  const auto w = event_windows(f, {event(f.timestamps()[12], 1, 9, "Heating fault", "over-temperature")});
  EXPECT_EQ(w[0], (std::pair<std::size_t, std::size_t>{12, 40}));
}

TEST(Selection, LoadingThresholdAndRedundancy) {
  const std::vector<std::string> names{"Var.1", "Var.2", "Var.7", "Var.18", "Var.19"};
  stats::PcaResult pca;
  pca.retained = 1;
  pca.loadings = Eigen::MatrixXd::Zero(5, 5);
  pca.loadings.col(0) << 0.5, 0.6, 0.1, 0.2, 0.55;
  pca.explained = Eigen::VectorXd::Constant(5, 0.2);
  stats::CorrelationResult corr{Eigen::MatrixXd::Identity(5, 5), {}};

  const auto plain = select_features(names, pca, corr, nullptr, 0.3);
  EXPECT_EQ(plain.selected, (std::vector<std::string>{"Var.1", "Var.2", "Var.19"}));
  EXPECT_DOUBLE_EQ(plain.max_loading.at("Var.7"), 0.1);

  // Var.1 and Var.18 feed blocking rules: they win their redundancy groups.
  const auto informed = select_features(names, pca, corr, &shipped_kb(), 0.3);
  EXPECT_EQ(informed.selected, (std::vector<std::string>{"Var.1", "Var.18"}));

  EXPECT_THROW(select_features(names, pca, corr, nullptr, 0.99), Error);
  EXPECT_THROW(select_features({"a"}, pca, corr, nullptr, 0.3), Error);
}

TEST(Transform, StandardizedTrainingColumnsAreUnit) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 50 + rng.below(200);
    std::vector<Cell> a, b;
    std::vector<bool> train(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(rng.normal(1e4, 300));
      b.push_back(rng.bernoulli(0.1) ? Cell{} : Cell{rng.uniform(-5, 5)});
      train[i] = i < n * 6 / 10;
    }
    const TimeSeriesFrame f(pdm::test::minutes(n), {channel("a", a), channel("b", b)});
    const auto [z, s] = standardize(f, {"a", "b"}, train);
    for (const char* name : {"a", "b"}) {
      std::vector<double> v;
      for (std::size_t i = 0; i < n; ++i)
        if (train[i] && z.at(name, i)) v.push_back(*z.at(name, i));
      double m = 0, ss = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      for (double x : v) ss += (x - m) * (x - m);
      EXPECT_LE(std::abs(m), 1e-9);
      EXPECT_LE(std::abs(std::sqrt(ss / static_cast<double>(v.size())) - 1.0), 1e-9);
    }
    EXPECT_EQ(apply_scaler(f, s), z);
  }
}

TEST(Transform, StandardizeEdgeCases) {
  const TimeSeriesFrame f(pdm::test::minutes(4), {channel("a", {1, 1, 1, 5})});
  std::vector<std::string> warnings;
  const auto [z, s] = standardize(f, {"a"}, {true, true, true, false}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(*z.at("a", 3), 0.0);
  EXPECT_THROW(standardize(f, {"a"}, {false, false, false, false}), Error);
  EXPECT_THROW(standardize(f, {"a"}, {true}), Error);
}

TEST(Transform, RowStatistics) {
  const TimeSeriesFrame f(pdm::test::minutes(2), {channel("a", {1, std::nullopt}), channel("b", {3, std::nullopt}),
                                                  channel("c", {8, std::nullopt})});
  const auto g = add_statistical_features(f, {"a", "b", "c"});
  EXPECT_DOUBLE_EQ(*g.at(kStatMean, 0), 4.0);
  EXPECT_DOUBLE_EQ(*g.at(kStatMedian, 0), 3.0);
  EXPECT_DOUBLE_EQ(*g.at(kStatVariance, 0), 26.0 / 3.0);
  EXPECT_FALSE(g.at(kStatMean, 1));
}

TEST(Knowledge, PrioritizeUsesCompetitionRanking) {
  const auto t = pdm::test::t0();
  std::vector<FaultEvent> ev;
  for (int i = 0; i < 3; ++i) ev.push_back(event(t, 1, 10, "Needle Valve Fault", "needle valve"));
  for (int i = 0; i < 2; ++i) ev.push_back(event(t, 1, 9, "Heating fault", "over-temperature"));
  for (int i = 0; i < 2; ++i) ev.push_back(event(t, 1, 9, "Heating fault", "brewing fan"));
  ev.push_back(event(t, 1, 10, "Angle Measurement Fault", "equipment inclination"));
  for (int i = 0; i < 5; ++i)
    ev.push_back(event(t, 1, 4, "Door Closure Fault", "equipment door", Severity::NonBlocking));

  auto count = [](const std::vector<FaultEvent>& v) {
    std::map<std::string, int> m;
    for (const auto& e : v) m[e.cause] += e.priority;
    return m;
  };
  // Ranks: needle valve 1, both heating causes 2, inclination 4.
  auto top1 = count(prioritize(ev, 1));
  EXPECT_EQ(top1["needle valve"], 3);
  EXPECT_EQ(top1["over-temperature"], 0);
  auto top2 = count(prioritize(ev, 2));
  EXPECT_EQ(top2["over-temperature"], 2);
  EXPECT_EQ(top2["brewing fan"], 2);
  EXPECT_EQ(top2["equipment inclination"], 0);
  EXPECT_EQ(top2["equipment door"], 0);
  EXPECT_EQ(count(prioritize(ev, 4))["equipment inclination"], 1);
}

TEST(Knowledge, AnnotateAndReconstructTarget) {
  const auto f = cycles_frame(2, 20, 3);
  auto blocking = event(f.timestamps()[5], 1, 9, "Heating fault", "brewing fan");
  blocking.priority = 1;
  auto door = event(f.timestamps()[25], 2, 9, "Door Closure Fault", "equipment door", Severity::NonBlocking);
  const auto g = annotate_faults(f, {blocking, door}, shipped_kb());
  const auto causes = shipped_kb().all_causes();
  const double code = static_cast<double>(std::find(causes.begin(), causes.end(), "brewing fan") - causes.begin() + 1);
  const auto target = reconstruct_target(g);
  for (std::size_t r = 0; r < g.size(); ++r) {
    const bool in_blocking = r >= 5 && r < 20;
    EXPECT_EQ(*g.at(kSeverity, r), in_blocking ? 1.0 : 0.0) << r;
    EXPECT_EQ(*target.cells[r], in_blocking ? 1.0 : 0.0) << r;
    if (in_blocking) { EXPECT_EQ(*g.at(kCause, r), code); }
  }
  EXPECT_NE(*g.at(kCause, 25), 0.0);  // door events still carry their cause
  EXPECT_EQ(*g.at(kConsequence, 25), 0.0);

  EXPECT_THROW(reconstruct_target(f), Error);
  EXPECT_THROW(annotate_faults(f, {event(f.timestamps()[1], 1, 9, "Coffee fault", "x")}, shipped_kb()), Error);
}

TEST(Knowledge, OneHotEncodingFitsOnTraining) {
  const TimeSeriesFrame f(pdm::test::minutes(6),
                          {{"fault_cause", ColumnRole::Categorical, "", {0, 2, 1, 2, 3, 0}}});
  std::vector<std::string> warnings;
  const auto [g, enc] = encode_categorical(f, "fault_cause", {true, true, true, true, false, false},
                                           {"alpha", "beta", "gamma"}, &warnings);
  EXPECT_EQ(enc.labels, (std::vector<std::string>{"alpha", "beta"}));
  EXPECT_FALSE(g.has("fault_cause"));
  EXPECT_EQ(*g.at("fault_cause=beta", 3), 1.0);
  EXPECT_EQ(*g.at("fault_cause=alpha", 4), 0.0);
  EXPECT_EQ(*g.at("fault_cause=beta", 4), 0.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Resampling, BucketsAnchorAtInstanceStart) {
  const auto f = cycles_frame(2, 20, 7);
  const auto g = resample_by_instance(f, {});
  // per cycle: S09 20 min -> 2 buckets, IDLE 7 min -> 1 bucket
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g.timestamps()[3], f.timestamps()[27]);
  EXPECT_EQ(g.timestamps()[4], f.timestamps()[27] + Minutes{15});
  double want = 0;
  for (std::size_t r = 27; r < 42; ++r) want += *f.at("Var.7", r);
  EXPECT_NEAR(*g.at("Var.7", 3), want / 15.0, 1e-12);
  EXPECT_EQ(select_balance_window(g).size(), 4u);
}

TEST(Dataset, BuildsBothScenariosDeterministically) {
  auto sim = SimConfig::standard();
  sim.cycles = 12;
  sim.seed = 77;
  const auto [frame, gt] = simulate_with_scenarios(sim, shipped_kb());
  PreprocessConfig cfg;
  const auto [s2, r2] = build_dataset(frame, Scenario::S2, shipped_kb(), cfg);
  const auto [s1, r1] = build_dataset(frame, Scenario::S1, shipped_kb(), cfg);

  EXPECT_GE(r2.detected_faults, r1.detected_faults);
  EXPECT_EQ(r2.rows_final, s2.rows());
  EXPECT_EQ(s2.features.cols(), static_cast<Eigen::Index>(s2.feature_names.size()));
  for (const auto& n : s2.feature_names) EXPECT_NE(n, "cycle");
  EXPECT_NE(std::find(s2.feature_names.begin(), s2.feature_names.end(), kSeverity), s2.feature_names.end());
  EXPECT_EQ(std::find(s1.feature_names.begin(), s1.feature_names.end(), kSeverity), s1.feature_names.end());
  for (auto s : s2.sequence) EXPECT_TRUE(s == 9 || s == 10);
  for (std::size_t r = 1; r < s2.rows(); ++r) EXPECT_LT(s2.timestamps[r - 1], s2.timestamps[r]);
  for (Eigen::Index j = 0; j < s2.features.cols(); ++j) EXPECT_TRUE(s2.features.col(j).allFinite());

  // Split: 12 cycles -> 7 / 2 / 3, whole cycles, chronological.
  std::map<Split, int> sizes;
  for (const auto& [c, s] : s2.split) ++sizes[s];
  EXPECT_EQ(sizes[Split::Train], 7);
  EXPECT_EQ(sizes[Split::Validation], 2);
  EXPECT_EQ(sizes[Split::Test], 3);

  const auto [again, r2b] = build_dataset(frame, Scenario::S2, shipped_kb(), cfg);
  EXPECT_EQ(again.features, s2.features);
  EXPECT_EQ(report_to_json(r2b), report_to_json(r2));
}

TEST(Dataset, RejectsEmptyAndIdleOnlyInput) {
  EXPECT_THROW(build_dataset(TimeSeriesFrame{}, Scenario::S2, shipped_kb()), Error);
  auto sim = SimConfig::standard();
  sim.cycles = 6;
  const auto [frame, gt] = simulate(sim, shipped_kb());
  const auto idle = slice_by_sequence(frame, {kIdle});
  try {
    build_dataset(idle, Scenario::S2, shipped_kb());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyInput);
  }
  EXPECT_THROW(build_dataset(frame.without_columns({"fault_log"}), Scenario::S1, shipped_kb()), Error);
}
