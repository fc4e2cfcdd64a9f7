#include <gtest/gtest.h>

#include <set>

#include "pdm/simulator.hpp"
#include "support.hpp"

using namespace pdm;
using pdm::test::shipped_kb;

namespace {

SimConfig small(std::uint64_t seed, int cycles = 6) {
  auto c = SimConfig::standard();
  c.seed = seed;
  c.cycles = cycles;
  return c;
}

std::set<std::pair<int, std::string>> pairs(const std::vector<FaultEvent>& events) {
  std::set<std::pair<int, std::string>> s;
  for (const auto& e : events) s.insert({e.cycle, e.fault});
  return s;
}

}  // namespace

TEST(Simulator, DeterministicForSeed) {
  const auto [a, ga] = simulate_with_scenarios(small(5), shipped_kb());
  const auto [b, gb] = simulate_with_scenarios(small(5), shipped_kb());
  EXPECT_EQ(a, b);
  EXPECT_EQ(ground_truth_to_json(ga), ground_truth_to_json(gb));
  const auto [c, gc] = simulate_with_scenarios(small(6), shipped_kb());
  EXPECT_NE(a, c);
}

TEST(Simulator, CycleStructure) {
  const auto [f, gt] = simulate(small(1, 2), shipped_kb());
  EXPECT_EQ(f.column("cycle").cells.back(), 2.0);
  EXPECT_EQ(gt.degraded.size(), 2u);
  // Within a cycle the active sequences appear once each, in mode order.
  std::vector<SequenceId> order;
  for (std::size_t r = 0; r < f.size(); ++r) {
    if (f.cycle(r) != 1) break;
    const auto s = *f.sequence(r);
    if (s != kIdle && (order.empty() || order.back() != s)) order.push_back(s);
  }
  EXPECT_EQ(order, shipped_kb().mode_model.sequence_order());
  for (std::size_t r = 1; r < f.size(); ++r) EXPECT_EQ(f.timestamps()[r] - f.timestamps()[r - 1], Minutes{1});
  for (const auto& ch : simulated_channels()) EXPECT_TRUE(f.has(ch.name)) << ch.name;
}

TEST(Simulator, ScheduledFaultsAppearInTruthAndTelemetry) {
  auto c = small(3, 4);
  c.faults.clear();
  c.health = {};
  c.logging = {1.0, 0.0};
  c.schedule = {{2, "Needle Valve Fault", std::nullopt}, {3, "Heating fault", 4}, {4, "Door Closure Fault", {}}};
  const auto [f, gt] = simulate(c, shipped_kb());
  const std::set<std::pair<int, std::string>> want{
      {2, "Needle Valve Fault"}, {3, "Heating fault"}, {4, "Door Closure Fault"}};
  std::vector<FaultEvent> truth;
  for (const auto& e : gt.events) truth.push_back(e.event);
  EXPECT_EQ(pairs(truth), want);
  EXPECT_EQ(pairs(evaluate_rules(f, shipped_kb())), want);
  for (const auto& e : gt.events)
    if (e.event.fault == "Heating fault") { EXPECT_EQ(e.event.cause, "brewing fan"); }
}

TEST(Simulator, LosslessLoggingMatchesRules) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto c = small(seed, 10);
    c.logging = {1.0, 0.0};
    const auto [f, gt] = simulate(c, shipped_kb());
    std::vector<FaultEvent> truth;
    for (const auto& e : gt.events) truth.push_back(e.event);
    EXPECT_EQ(pairs(evaluate_rules(f, shipped_kb())), pairs(truth)) << seed;
    EXPECT_EQ(gt.logged_count(), gt.events.size());
  }
}

TEST(Simulator, SilentLoggingKeepsOnlyHardStops) {
  auto c = small(21, 20);
  c.logging = {0.0, 0.0};
  const auto [f, gt] = simulate(c, shipped_kb());
  EXPECT_FALSE(gt.events.empty());
  EXPECT_EQ(gt.logged_count(), 0u);
  for (const auto& cell : f.column("fault_log").cells) EXPECT_EQ(cell.value_or(0.0), 0.0);
}

TEST(Simulator, IncipientStagePrecedesDegradation) {
  const auto [f, gt] = simulate(small(4, 30), shipped_kb());
  ASSERT_EQ(gt.symptomatic.size(), gt.degraded.size());
  for (std::size_t i = 0; i < gt.degraded.size(); ++i) {
    if (gt.degraded[i]) { EXPECT_TRUE(gt.symptomatic[i]); }
    const bool next = i + 1 < gt.degraded.size() && gt.degraded[i + 1];
    EXPECT_EQ(gt.symptomatic[i], gt.degraded[i] || next) << i;
  }
}

TEST(Simulator, MissingIntervalsBlankTheTelemetry) {
  const auto [clean, gt0] = simulate(small(8), shipped_kb());
  const auto start = clean.timestamps()[100];
  std::vector<MissingInterval> gaps{{start, Minutes{30}, MissingCause::BlanketMaintenance, ""},
                                    {start + Minutes{200}, Minutes{10}, MissingCause::SingleSensorDropout, "Var.18"}};
  const auto [f, gt] = inject_missing(clean, gt0, gaps);
  EXPECT_EQ(gt.missing.size(), 2u);
  for (std::size_t r = 100; r < 130; ++r)
    for (const auto& ch : f.names(ColumnRole::Channel)) EXPECT_FALSE(f.at(ch, r)) << ch << r;
  EXPECT_TRUE(f.at("Var.18", 130));
  for (std::size_t r = 300; r < 310; ++r) {
    EXPECT_FALSE(f.at("Var.18", r));
    EXPECT_TRUE(f.at("Var.1", r));
  }
  EXPECT_EQ(f.sequence(110), clean.sequence(110));
}

TEST(Simulator, OutliersAreLabelled) {
  const auto [clean, gt0] = simulate(small(9), shipped_kb());
  const auto at = clean.timestamps()[500];
  const auto [f, gt] = inject_outliers(clean, gt0, {{at, "Var.17", 25.0, Minutes{1}, OutlierClass::FalseSpike}});
  ASSERT_EQ(gt.outliers.size(), 1u);
  EXPECT_EQ(gt.outliers[0].channel, "Var.17");
  EXPECT_DOUBLE_EQ(*f.at("Var.17", 500), *clean.at("Var.17", 500) + 25.0);
  EXPECT_EQ(f.at("Var.17", 501), clean.at("Var.17", 501));
}

TEST(Simulator, GroundTruthJsonRoundTrip) {
  const auto [f, gt] = simulate_with_scenarios(small(10), shipped_kb());
  const auto j = ground_truth_to_json(gt);
  EXPECT_EQ(ground_truth_to_json(ground_truth_from_json(j)), j);
}

TEST(Simulator, RejectsInvalidConfig) {
  auto c = small(1);
  c.cycles = 0;
  EXPECT_THROW(c.validate(), Error);
  c = small(1);
  c.logging.probability = 1.5;
  EXPECT_THROW(simulate(c, shipped_kb()), Error);
  c = small(1);
  c.schedule = {{1, "Coffee fault", {}}};
  EXPECT_THROW(simulate(c, shipped_kb()), Error);
}
