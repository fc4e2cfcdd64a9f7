#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdm/core/error.hpp"
#include "pdm/core/rng.hpp"
#include "pdm/core/time.hpp"
#include "pdm/knowledge_base.hpp"
#include "pdm/timeseries.hpp"

namespace pdm {

/// Channel and log names emitted by the simulator. Rules in the shipped
/// knowledge base refer to these.
namespace sim_names {
inline constexpr const char* kPressure = "Var.1";        // internal pressure, hPa
inline constexpr const char* kPressureCopy = "Var.2";    // redundant sensor of Var.1
inline constexpr const char* kPressure2 = "Var.16";      // second internal pressure
inline constexpr const char* kTemperature = "Var.18";    // internal temperature, degC
inline constexpr const char* kTemperatureCopy = "Var.19";
inline constexpr const char* kExtTemp7 = "Var.7";
inline constexpr const char* kExtTemp11 = "Var.11";
inline constexpr const char* kExtTemp12 = "Var.12";
inline constexpr const char* kExtTemp15 = "Var.15";
inline constexpr const char* kAmbient8 = "Var.8";
inline constexpr const char* kAmbient9 = "Var.9";
inline constexpr const char* kAngle = "Var.17";         // degrees
inline constexpr const char* kAmbientPressure = "Var.20";

inline constexpr const char* kSequence = "sequence";
inline constexpr const char* kCycle = "cycle";
inline constexpr const char* kFaultLog = "fault_log";
inline constexpr const char* kValve1 = "valve_0001";
inline constexpr const char* kValve2 = "valve_0002";
inline constexpr const char* kBrewingFan = "brewing_fan";
inline constexpr const char* kDoor = "door_Z013";
}  // namespace sim_names

struct ChannelInfo {
  const char* name;
  const char* unit;
  double noise_sd;
};

inline const std::vector<ChannelInfo>& simulated_channels() {
  using namespace sim_names;
  static const std::vector<ChannelInfo> channels = {
      {kPressure, "hPa", 3.0},      {kPressureCopy, "hPa", 3.0},  {kPressure2, "hPa", 3.0},
      {kTemperature, "°C", 0.5},    {kTemperatureCopy, "°C", 0.5}, {kExtTemp7, "°C", 0.3},
      {kExtTemp11, "°C", 0.3},      {kExtTemp12, "°C", 0.3},       {kExtTemp15, "°C", 0.3},
      {kAmbient8, "°C", 0.5},       {kAmbient9, "°C", 1.0},        {kAngle, "deg", 0.8},
      {kAmbientPressure, "hPa", 0.5}};
  return channels;
}

/// Column layout of simulator telemetry (and of the CSV files it writes).
inline Schema simulated_schema() {
  using namespace sim_names;
  Schema s;
  for (const auto& c : simulated_channels()) s.columns.push_back({c.name, ColumnRole::Channel, c.unit});
  s.columns.push_back({kSequence, ColumnRole::Sequence, ""});
  s.columns.push_back({kCycle, ColumnRole::Cycle, ""});
  s.columns.push_back({kFaultLog, ColumnRole::Flag, ""});
  s.columns.push_back({kValve1, ColumnRole::Flag, ""});
  s.columns.push_back({kValve2, ColumnRole::Flag, ""});
  s.columns.push_back({kBrewingFan, ColumnRole::Flag, ""});
  s.columns.push_back({kDoor, ColumnRole::Flag, ""});
  return s;
}

struct FaultProbability {
  std::string fault;
  double probability = 0.0;           // per cycle, healthy state
  double degraded_probability = 0.0;  // per cycle, degraded state
  std::optional<int> rule_id;         // pin the violated rule; otherwise drawn
};

struct ScheduledFault {
  int cycle = 1;
  std::string fault;
  std::optional<int> rule_id;
};

/// Two-state per-cycle health process; degraded cycles raise fault odds.
/// A few sensors shift while degraded and already `lead_cycles` cycles
/// before degradation sets in (the incipient stage).
struct HealthModel {
  double p_degrade = 0.0;
  double p_recover = 1.0;
  int lead_cycles = 0;
};

struct LoggingPolicy {
  double probability = 1.0;        // chance a rule-detectable event reaches the fault log
  double hard_stop_fraction = 0.0;  // blocking events that physically stop the cycle; always logged
};

enum class MissingCause { BlanketMaintenance, SingleSensorDropout, NonUse };
enum class OutlierClass { FalseSpike, TruePrecursorRelevant, TrueIrrelevant };

NLOHMANN_JSON_SERIALIZE_ENUM(MissingCause, {{MissingCause::BlanketMaintenance, "BlanketMaintenance"},
                                            {MissingCause::SingleSensorDropout, "SingleSensorDropout"},
                                            {MissingCause::NonUse, "NonUse"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OutlierClass, {{OutlierClass::FalseSpike, "FalseSpike"},
                                            {OutlierClass::TruePrecursorRelevant, "TruePrecursorRelevant"},
                                            {OutlierClass::TrueIrrelevant, "TrueIrrelevant"}})

struct MissingInterval {
  TimePoint start;
  Minutes length{0};
  MissingCause cause = MissingCause::BlanketMaintenance;
  std::string channel;  // SingleSensorDropout only

  TimePoint end() const { return start + length; }
};

/// Counts for intervals placed by plan_missing().
struct AutoMissing {
  int blankets = 0;
  Minutes blanket_length{120};
  int dropouts = 0;
  Minutes dropout_length{30};
  int non_use = 0;
};

struct MissingScenario {
  std::vector<MissingInterval> intervals;
  AutoMissing automatic;
};

struct OutlierPoint {
  TimePoint at;
  std::string channel;
  double magnitude = 0.0;
  Minutes span{1};  // samples affected; drifts ramp linearly up to magnitude
  OutlierClass cls = OutlierClass::FalseSpike;
};

struct AutoOutliers {
  double false_spike_per_cycle = 0.0;
  double precursor_per_needle_fault = 0.0;
  double irrelevant_per_cycle = 0.0;
};

struct OutlierScenario {
  std::vector<OutlierPoint> points;
  AutoOutliers automatic;
};

struct SimConfig {
  int cycles = 55;
  Minutes native_step{1};
  TimePoint start = std::chrono::sys_days{std::chrono::year{2021} / 1 / 4} + std::chrono::hours{6};
  std::map<SequenceId, Minutes> durations;  // empty = KB nominal durations
  Minutes idle_min{240};
  Minutes idle_max{480};
  double noise_scale = 1.0;
  std::vector<FaultProbability> faults;
  std::vector<ScheduledFault> schedule;
  HealthModel health;
  LoggingPolicy logging;
  MissingScenario missing;
  OutlierScenario outliers;
  std::uint64_t seed = 0;

  /// Fault table, health process and data-quality scenario used by the
  /// shipped pipeline config.
  static SimConfig standard() {
    SimConfig c;
    c.faults = {{"Needle Valve Fault", 0.03, 0.55, std::nullopt},
                {"Sample Taking Fault", 0.02, 0.35, std::nullopt},
                {"Heating fault", 0.03, 0.45, std::nullopt},
                {"Angle Measurement Fault", 0.02, 0.30, std::nullopt},
                {"Door Closure Fault", 0.20, 0.20, std::nullopt}};
    c.health = {0.15, 0.30, 1};
    c.logging = {0.05, 0.10};
    c.missing.automatic = {2, Minutes{120}, 6, Minutes{30}, 3};
    c.outliers.automatic = {0.5, 0.7, 0.3};
    c.seed = 20210104;
    return c;
  }

  void validate() const {
    auto prob = [](double p, const std::string& what) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Config, what + " must lie in [0,1]");
    };
    if (cycles < 1) throw Error(ErrorKind::Config, "cycles must be >= 1");
    if (native_step != Minutes{1}) throw Error(ErrorKind::Config, "native step must be 1 minute");
    if (idle_min.count() < 1 || idle_max < idle_min) throw Error(ErrorKind::Config, "bad idle range");
    for (const auto& f : faults) {
      prob(f.probability, "fault probability");
      prob(f.degraded_probability, "degraded fault probability");
    }
    prob(health.p_degrade, "p_degrade");
    prob(health.p_recover, "p_recover");
    if (health.lead_cycles < 0) throw Error(ErrorKind::Config, "lead_cycles must be >= 0");
    prob(logging.probability, "logging probability");
    prob(logging.hard_stop_fraction, "hard_stop_fraction");
    for (const auto& [s, d] : durations)
      if (d.count() <= 0) throw Error(ErrorKind::Config, "durations must be > 0");
  }
};

struct GroundTruthEvent {
  FaultEvent event;
  bool logged_by_automation = false;
};

struct OutlierLabel {
  TimePoint at;
  std::string channel;
  OutlierClass cls;
};

struct GroundTruth {
  std::vector<GroundTruthEvent> events;
  std::vector<MissingInterval> missing;
  std::vector<OutlierLabel> outliers;
  std::vector<bool> degraded;     // per cycle, index 0 = cycle 1
  std::vector<bool> symptomatic;  // sensors shifted: degraded or incipient

  std::size_t logged_count() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(),
                                                  [](const auto& e) { return e.logged_by_automation; }));
  }
};

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const MissingInterval& m) {
  j = {{"start", format_iso8601(m.start)}, {"minutes", m.length.count()}, {"cause", m.cause}};
  if (!m.channel.empty()) j["channel"] = m.channel;
}

inline void from_json(const nlohmann::json& j, MissingInterval& m) {
  m.start = parse_iso8601(j.at("start").get<std::string>());
  m.length = Minutes{j.at("minutes").get<int>()};
  m.cause = detail::parse_enum<MissingCause>(j.at("cause"), "missing cause");
  m.channel = j.value("channel", std::string{});
}

inline void to_json(nlohmann::json& j, const OutlierPoint& p) {
  j = {{"at", format_iso8601(p.at)}, {"channel", p.channel}, {"magnitude", p.magnitude},
       {"minutes", p.span.count()}, {"class", p.cls}};
}

inline void from_json(const nlohmann::json& j, OutlierPoint& p) {
  p.at = parse_iso8601(j.at("at").get<std::string>());
  p.channel = j.at("channel").get<std::string>();
  p.magnitude = j.at("magnitude").get<double>();
  p.span = Minutes{j.value("minutes", 1)};
  p.cls = detail::parse_enum<OutlierClass>(j.at("class"), "outlier class");
}

inline nlohmann::json ground_truth_to_json(const GroundTruth& gt) {
  nlohmann::json j;
  j["events"] = nlohmann::json::array();
  for (const auto& e : gt.events) {
    nlohmann::json ej = e.event;
    ej["logged_by_automation"] = e.logged_by_automation;
    j["events"].push_back(std::move(ej));
  }
  j["missing"] = gt.missing;
  j["outliers"] = nlohmann::json::array();
  for (const auto& o : gt.outliers)
    j["outliers"].push_back({{"at", format_iso8601(o.at)}, {"channel", o.channel}, {"class", o.cls}});
  j["degraded_cycles"] = nlohmann::json::array();
  for (std::size_t i = 0; i < gt.degraded.size(); ++i)
    if (gt.degraded[i]) j["degraded_cycles"].push_back(i + 1);
  j["symptomatic_cycles"] = nlohmann::json::array();
  for (std::size_t i = 0; i < gt.symptomatic.size(); ++i)
    if (gt.symptomatic[i]) j["symptomatic_cycles"].push_back(i + 1);
  j["cycles"] = gt.degraded.size();
  return j;
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth gt;
  try {
    for (const auto& ej : j.at("events")) {
      GroundTruthEvent e{ej.get<FaultEvent>(), ej.value("logged_by_automation", false)};
      gt.events.push_back(std::move(e));
    }
    gt.missing = j.value("missing", std::vector<MissingInterval>{});
    for (const auto& oj : j.value("outliers", nlohmann::json::array()))
      gt.outliers.push_back({parse_iso8601(oj.at("at").get<std::string>()), oj.at("channel").get<std::string>(),
                             detail::parse_enum<OutlierClass>(oj.at("class"), "outlier class")});
    gt.degraded.assign(j.value("cycles", 0), false);
    for (const auto& c : j.value("degraded_cycles", nlohmann::json::array())) {
      const auto idx = c.get<std::size_t>();
      if (idx >= 1 && idx <= gt.degraded.size()) gt.degraded[idx - 1] = true;
    }
    gt.symptomatic.assign(gt.degraded.size(), false);
    for (const auto& c : j.value("symptomatic_cycles", nlohmann::json::array())) {
      const auto idx = c.get<std::size_t>();
      if (idx >= 1 && idx <= gt.symptomatic.size()) gt.symptomatic[idx - 1] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("ground truth: ") + e.what());
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

/// A fault pattern realized inside one cycle.
struct Injection {
  const MonitoringRule* rule = nullptr;
  int minute = 0;  // elapsed minute within the rule's sequence at which the rule fires
  bool second_valve = false;
  bool angle_high = false;
};

class SignalState {
 public:
  double pressure = 1013.0;
  double pressure2 = 960.0;
  double temperature = 22.0;
  double angle = 0.0;

  static double lag(double x, double target, double tau) {
    return target + (x - target) * std::exp(-1.0 / tau);
  }
};

inline double daily_wave(TimePoint t, double amplitude, double phase_hours) {
  const double hours = std::chrono::duration<double, std::ratio<3600>>(t.time_since_epoch()).count();
  return amplitude * std::sin(2.0 * std::numbers::pi * (hours - phase_hours) / 24.0);
}

inline double slow_wave(TimePoint t, double amplitude, double period_days) {
  const double days = std::chrono::duration<double, std::ratio<86400>>(t.time_since_epoch()).count();
  return amplitude * std::sin(2.0 * std::numbers::pi * days / period_days);
}

}  // namespace detail

/// Generates clean telemetry plus ground truth. Every injected fault is shaped
/// so that the matching knowledge-base rule fires exactly once in its cycle.
inline std::pair<TimeSeriesFrame, GroundTruth> simulate(const SimConfig& config, const KnowledgeBase& kb) {
  using namespace sim_names;
  config.validate();

  // fault name -> candidate rules
  std::map<std::string, std::vector<const MonitoringRule*>> rules_for;
  for (const auto& r : kb.rules) rules_for[r.fault].push_back(&r);
  auto check_fault = [&](const std::string& name, std::optional<int> rule_id) {
    if (!kb.find_fmeca(name) || !rules_for.count(name))
      throw Error(ErrorKind::UnknownFault, "fault scenario names unknown fault '" + name + "'");
    if (rule_id) {
      const auto* r = kb.find_rule(*rule_id);
      if (!r || r->fault != name)
        throw Error(ErrorKind::UnknownFault, "rule " + std::to_string(*rule_id) + " does not detect '" + name + "'");
    }
  };
  for (const auto& f : config.faults) check_fault(f.fault, f.rule_id);
  for (const auto& s : config.schedule) {
    check_fault(s.fault, s.rule_id);
    if (s.cycle < 1 || s.cycle > config.cycles)
      throw Error(ErrorKind::Config, "scheduled fault outside cycle range");
  }

  auto duration_of = [&](SequenceId s) {
    auto it = config.durations.find(s);
    if (it != config.durations.end()) return it->second;
    return kb.mode_model.nominal_duration.at(s);
  };
  const auto order = kb.mode_model.sequence_order();

  const Rng root(config.seed);
  Rng health_rng = root.substream("health");
  GroundTruth gt;
  gt.degraded.resize(static_cast<std::size_t>(config.cycles));
  {
    bool degraded = false;
    for (int c = 0; c < config.cycles; ++c) {
      if (c > 0) degraded = degraded ? !health_rng.bernoulli(config.health.p_recover)
                                     : health_rng.bernoulli(config.health.p_degrade);
      gt.degraded[static_cast<std::size_t>(c)] = degraded;
    }
    gt.symptomatic = gt.degraded;
    for (int c = 0; c < config.cycles; ++c)
      for (int k = 1; k <= config.health.lead_cycles && c + k < config.cycles; ++k)
        if (gt.degraded[static_cast<std::size_t>(c + k)]) gt.symptomatic[static_cast<std::size_t>(c)] = true;
  }

  const auto& channels = simulated_channels();
  std::map<std::string, std::size_t> ch_index;
  for (std::size_t i = 0; i < channels.size(); ++i) ch_index[channels[i].name] = i;
  std::vector<std::vector<Cell>> ch_cells(channels.size());
  std::vector<Cell> seq_cells, cycle_cells, log_cells, valve1, valve2, fan, door;
  std::vector<TimePoint> ts;

  detail::SignalState st;
  TimePoint now = config.start;
  const Rng cycle_root = root.substream("cycle");

  for (int cycle = 1; cycle <= config.cycles; ++cycle) {
    Rng rng = cycle_root.substream(static_cast<std::uint64_t>(cycle));
    Rng fault_rng = rng.substream("faults");
    Rng noise = rng.substream("noise");
    const bool degraded = gt.degraded[static_cast<std::size_t>(cycle - 1)];
    const bool shifted = gt.symptomatic[static_cast<std::size_t>(cycle - 1)];

    // Which faults occur this cycle, and through which rule.
    std::vector<std::pair<std::string, std::optional<int>>> planned;
    for (const auto& f : config.faults)
      if (fault_rng.bernoulli(degraded ? f.degraded_probability : f.probability))
        planned.emplace_back(f.fault, f.rule_id);
    for (const auto& s : config.schedule)
      if (s.cycle == cycle) planned.emplace_back(s.fault, s.rule_id);

    std::vector<detail::Injection> injections;
    std::set<int> used_rules;
    for (const auto& [name, pinned] : planned) {
      const MonitoringRule* rule = nullptr;
      if (pinned) {
        rule = kb.find_rule(*pinned);
      } else {
        const auto& cands = rules_for.at(name);
        rule = cands[fault_rng.below(cands.size())];
      }
      if (!used_rules.insert(rule->id).second) continue;  // a rule latches once per cycle
      detail::Injection inj;
      inj.rule = rule;
      const int dur = static_cast<int>(duration_of(rule->sequence).count());
      const int offset = static_cast<int>(rule->step_offset.value_or(Minutes{0}).count());
      if (rule->sensor && rule->sensor->qualifier == Qualifier::NoMemoryWithinFirst) {
        inj.minute = std::max(offset, static_cast<int>(rule->sensor->window.count()));
      } else {
        const int lo = std::max(offset, rule->sequence == 9 ? 60 : 2);
        const int hi = std::max(lo, std::min(dur - 6, rule->sequence == 9 ? dur - 20 : dur - 6));
        inj.minute = lo + static_cast<int>(fault_rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
      }
      inj.second_valve = fault_rng.bernoulli(0.5);
      inj.angle_high = fault_rng.bernoulli(0.5);
      injections.push_back(inj);
    }
    auto find_inj = [&](SequenceId seq, auto pred) -> const detail::Injection* {
      for (const auto& inj : injections)
        if (inj.rule->sequence == seq && pred(*inj.rule)) return &inj;
      return nullptr;
    };
    auto is_sensor = [](const char* channel) {
      return [channel](const MonitoringRule& r) { return r.sensor && r.sensor->channel == channel; };
    };
    auto is_log = [](const char* log) {
      return [log](const MonitoringRule& r) {
        return !r.sensor && r.logs &&
               std::find(r.logs->any_of.begin(), r.logs->any_of.end(), log) != r.logs->any_of.end();
      };
    };
    auto log_and_sensor = [](const MonitoringRule& r) { return r.sensor && r.logs; };

    const auto* heat_temp = find_inj(9, [&](const MonitoringRule& r) {
      return r.sensor && r.sensor->channel == kTemperature && !r.logs;
    });
    const auto* heat_fan = find_inj(9, log_and_sensor);
    const auto* needle = find_inj(10, is_sensor(kPressure));
    const auto* angle_fault = find_inj(10, is_sensor(kAngle));
    const auto* valve_fault = find_inj(10, is_log(kValve1));
    const auto* door_fault = find_inj(4, is_log(kDoor));
    {
      std::set<const detail::Injection*> realized = {heat_temp, heat_fan, needle, angle_fault, valve_fault, door_fault};
      for (const auto& inj : injections)
        if (!realized.count(&inj))
          throw Error(ErrorKind::Config, "simulator has no signal pattern for rule " + std::to_string(inj.rule->id));
    }

    // Events in firing order within the cycle, with automation logging.
    struct PendingLog {
      TimePoint onset;
      TimePoint until;
    };
    std::vector<PendingLog> logs_this_cycle;
    Rng log_rng = rng.substream("logging");

    const double temp_plateau = shifted ? 293.0 : 285.0;
    const double press_plateau = shifted ? 2640.0 : 2500.0;
    bool overheated = false;

    for (SequenceId seq : order) {
      const int dur = static_cast<int>(duration_of(seq).count());
      const TimePoint seq_start = now;
      for (int m = 0; m < dur; ++m, now += config.native_step) {
        // --- internal temperature
        double t_target = 25.0, t_tau = 60.0;
        if (seq == 9) {
          t_target = temp_plateau;
          t_tau = 40.0;
        } else if (seq == 10) {
          t_target = temp_plateau;
          t_tau = overheated ? 3.0 : 200.0;
        } else if (seq == 11) {
          t_target = 30.0;
          t_tau = 120.0;
        }
        st.temperature = detail::SignalState::lag(st.temperature, t_target, t_tau);
        if (heat_temp && seq == 9) {
          const int onset = heat_temp->minute;
          if (m >= onset) {
            st.temperature = std::max(st.temperature, 318.0 + 0.1 * (m - onset));
            overheated = true;
          } else if (m >= onset - 30) {
            const double frac = static_cast<double>(m - (onset - 30)) / 30.0;
            st.temperature = std::max(st.temperature, temp_plateau + frac * (306.0 - temp_plateau));
          }
        }

        // --- internal pressure
        double p_target = 1013.0, p_tau = 5.0;
        if (seq == 5) {
          p_target = 400.0;
          p_tau = 2.0;
        } else if (seq == 9) {
          p_target = press_plateau;
          p_tau = 30.0;
        } else if (seq == 10) {
          p_target = 5.0;
          p_tau = (needle ? 15.0 : 0.6);
        }
        st.pressure = detail::SignalState::lag(st.pressure, p_target, p_tau);
        bool fan_off = false;
        if (heat_fan && seq == 9 && m >= heat_fan->minute) {
          st.pressure = std::max(st.pressure, 3200.0 + 2.0 * (m - heat_fan->minute));
          fan_off = true;
        }
        st.pressure2 = detail::SignalState::lag(st.pressure2, 0.8 * st.pressure + 150.0, 5.0);

        // --- angle
        double a_target = (seq == 12 || seq == 13) ? 15.0 : 0.0;
        st.angle = detail::SignalState::lag(st.angle, a_target + (shifted ? 2.0 : 0.0), 3.0);
        double angle = st.angle;
        if (angle_fault && seq == 10 && m >= angle_fault->minute && m < angle_fault->minute + 3)
          angle = angle_fault->angle_high ? 46.0 : -36.0;

        const double sd = config.noise_scale;
        auto noisy = [&](const char* name, double v) {
          ch_cells[ch_index.at(name)].push_back(v + noise.normal(0.0, sd * channels[ch_index.at(name)].noise_sd));
        };
        const double heat = st.temperature - 25.0;
        const double shift = shifted ? 1.0 : 0.0;
        noisy(kPressure, st.pressure);
        noisy(kPressureCopy, st.pressure);
        noisy(kPressure2, st.pressure2);
        noisy(kTemperature, st.temperature);
        noisy(kTemperatureCopy, st.temperature);
        noisy(kExtTemp7, 20.0 + 0.04 * heat + 3.0 * shift + detail::daily_wave(now, 3.0, 9.0));
        noisy(kExtTemp11, 18.0 + 0.02 * heat + 1.5 * shift + detail::daily_wave(now, 2.0, 9.0));
        noisy(kExtTemp12, 18.5 + 0.02 * heat + 1.5 * shift + detail::daily_wave(now, 2.0, 9.0));
        noisy(kExtTemp15, 21.0 + 0.03 * heat + 2.0 * shift + detail::daily_wave(now, 2.5, 10.0));
        noisy(kAmbient8, 15.0 + detail::slow_wave(now, 8.0, 365.0) + detail::daily_wave(now, 4.0, 9.0));
        noisy(kAmbient9, 10.0 + detail::daily_wave(now, 5.0, 8.0));
        ch_cells[ch_index.at(kAngle)].push_back(
            angle + noise.normal(0.0, sd * (shifted ? 1.5 : 1.0) * channels[ch_index.at(kAngle)].noise_sd));
        noisy(kAmbientPressure, 1013.0 + detail::slow_wave(now, 8.0, 11.0));

        // --- logs
        ts.push_back(now);
        seq_cells.push_back(static_cast<double>(seq));
        cycle_cells.push_back(static_cast<double>(cycle));
        const bool v_on = valve_fault && seq == 10 && m >= valve_fault->minute && m < valve_fault->minute + 4;
        valve1.push_back(v_on && !valve_fault->second_valve ? 1.0 : 0.0);
        valve2.push_back(v_on && valve_fault->second_valve ? 1.0 : 0.0);
        fan.push_back(seq == 9 && !fan_off ? 1.0 : 0.0);
        door.push_back(door_fault && seq == 4 && m >= door_fault->minute && m < door_fault->minute + 3 ? 1.0 : 0.0);
        log_cells.push_back(0.0);
      }

      // Events of this sequence instance, in firing order.
      std::vector<const detail::Injection*> here;
      for (const auto& inj : injections)
        if (inj.rule->sequence == seq) here.push_back(&inj);
      std::sort(here.begin(), here.end(), [](const auto* a, const auto* b) {
        return a->minute != b->minute ? a->minute < b->minute : a->rule->id < b->rule->id;
      });
      for (const auto* inj : here) {
        const auto fc = classify_fault(inj->rule->fault, kb);
        FaultEvent ev{seq_start + Minutes{inj->minute}, cycle, seq, inj->rule->fault, inj->rule->cause,
                      fc.severity, fc.consequence, 0, EventSource::GroundTruth, inj->rule->id};
        const bool hard_stop =
            fc.severity == Severity::Blocking && log_rng.bernoulli(config.logging.hard_stop_fraction);
        const bool logged = log_rng.bernoulli(config.logging.probability) || hard_stop;
        if (logged) logs_this_cycle.push_back({ev.onset, seq_start + Minutes{dur}});
        gt.events.push_back({std::move(ev), logged});
      }
    }

    // IDLE gap until the next cycle (also after the last one).
    const auto idle_span = config.idle_max - config.idle_min;
    const Minutes idle = config.idle_min + Minutes{static_cast<long>(rng.below(static_cast<std::uint64_t>(idle_span.count()) + 1))};
    for (Minutes m{0}; m < idle; m += config.native_step, now += config.native_step) {
      st.temperature = detail::SignalState::lag(st.temperature, 22.0, 120.0);
      st.pressure = detail::SignalState::lag(st.pressure, 1013.0, 5.0);
      st.pressure2 = detail::SignalState::lag(st.pressure2, 0.8 * st.pressure + 150.0, 5.0);
      st.angle = detail::SignalState::lag(st.angle, 0.0, 3.0);
      const double sd = config.noise_scale;
      auto noisy = [&](const char* name, double v) {
        ch_cells[ch_index.at(name)].push_back(v + noise.normal(0.0, sd * channels[ch_index.at(name)].noise_sd));
      };
      const double heat = st.temperature - 25.0;
      noisy(kPressure, st.pressure);
      noisy(kPressureCopy, st.pressure);
      noisy(kPressure2, st.pressure2);
      noisy(kTemperature, st.temperature);
      noisy(kTemperatureCopy, st.temperature);
      noisy(kExtTemp7, 20.0 + 0.04 * heat + detail::daily_wave(now, 3.0, 9.0));
      noisy(kExtTemp11, 18.0 + 0.02 * heat + detail::daily_wave(now, 2.0, 9.0));
      noisy(kExtTemp12, 18.5 + 0.02 * heat + detail::daily_wave(now, 2.0, 9.0));
      noisy(kExtTemp15, 21.0 + 0.03 * heat + detail::daily_wave(now, 2.5, 10.0));
      noisy(kAmbient8, 15.0 + detail::slow_wave(now, 8.0, 365.0) + detail::daily_wave(now, 4.0, 9.0));
      noisy(kAmbient9, 10.0 + detail::daily_wave(now, 5.0, 8.0));
      noisy(kAngle, st.angle);
      noisy(kAmbientPressure, 1013.0 + detail::slow_wave(now, 8.0, 11.0));
      ts.push_back(now);
      seq_cells.push_back(static_cast<double>(kIdle));
      cycle_cells.push_back(static_cast<double>(cycle));
      valve1.push_back(0.0);
      valve2.push_back(0.0);
      fan.push_back(0.0);
      door.push_back(0.0);
      log_cells.push_back(0.0);
    }

    // Fault-log pulses: 1 from onset until the sequence restarts.
    for (const auto& l : logs_this_cycle) {
      auto first = std::lower_bound(ts.begin(), ts.end(), l.onset);
      auto last = std::lower_bound(ts.begin(), ts.end(), l.until);
      for (auto it = first; it != last; ++it) log_cells[static_cast<std::size_t>(it - ts.begin())] = 1.0;
    }
  }

  std::vector<Column> cols;
  for (std::size_t i = 0; i < channels.size(); ++i)
    cols.push_back({channels[i].name, ColumnRole::Channel, channels[i].unit, std::move(ch_cells[i])});
  cols.push_back({kSequence, ColumnRole::Sequence, "", std::move(seq_cells)});
  cols.push_back({kCycle, ColumnRole::Cycle, "", std::move(cycle_cells)});
  cols.push_back({kFaultLog, ColumnRole::Flag, "", std::move(log_cells)});
  cols.push_back({kValve1, ColumnRole::Flag, "", std::move(valve1)});
  cols.push_back({kValve2, ColumnRole::Flag, "", std::move(valve2)});
  cols.push_back({kBrewingFan, ColumnRole::Flag, "", std::move(fan)});
  cols.push_back({kDoor, ColumnRole::Flag, "", std::move(door)});

  std::stable_sort(gt.events.begin(), gt.events.end(), [](const auto& a, const auto& b) {
    if (a.event.onset != b.event.onset) return a.event.onset < b.event.onset;
    return a.event.rule_id.value_or(0) < b.event.rule_id.value_or(0);
  });
  return {TimeSeriesFrame(std::move(ts), std::move(cols)), std::move(gt)};
}

// ---------------------------------------------------------------------------
// Data-quality scenarios

namespace detail {

inline std::pair<std::size_t, std::size_t> row_range(const TimeSeriesFrame& f, TimePoint start, TimePoint end) {
  const auto& ts = f.timestamps();
  const auto b = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), start) - ts.begin());
  const auto e = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), end) - ts.begin());
  return {b, e};
}

inline TimeSeriesFrame blank(const TimeSeriesFrame& f, std::size_t b, std::size_t e,
                             const std::string& only_channel) {
  std::vector<Column> cols = f.columns();
  for (auto& c : cols) {
    if (c.role != ColumnRole::Channel) continue;
    if (!only_channel.empty() && c.name != only_channel) continue;
    for (std::size_t r = b; r < e; ++r) c.cells[r] = std::nullopt;
  }
  return TimeSeriesFrame(f.timestamps(), std::move(cols));
}

}  // namespace detail

inline std::pair<TimeSeriesFrame, GroundTruth> inject_missing(const TimeSeriesFrame& frame, GroundTruth gt,
                                                              const std::vector<MissingInterval>& scenario) {
  if (scenario.empty()) return {frame, std::move(gt)};
  if (frame.empty()) throw Error(ErrorKind::Scenario, "missing-data scenario on an empty frame");
  const auto first = frame.timestamps().front();
  const auto last = frame.timestamps().back();

  std::vector<const MissingInterval*> blankets;
  for (const auto& m : scenario) {
    if (m.length.count() <= 0 || m.start < first || m.start > last || m.end() > last + Minutes{1})
      throw Error(ErrorKind::Scenario, "missing interval at " + format_iso8601(m.start) + " outside the frame");
    if (m.cause == MissingCause::BlanketMaintenance) {
      for (const auto* other : blankets)
        if (m.start < other->end() && other->start < m.end())
          throw Error(ErrorKind::Scenario, "overlapping blanket intervals at " + format_iso8601(m.start));
      blankets.push_back(&m);
    }
    if (m.cause == MissingCause::SingleSensorDropout) {
      const auto* c = frame.find(m.channel);
      if (!c || c->role != ColumnRole::Channel)
        throw Error(ErrorKind::Scenario, "dropout names unknown channel '" + m.channel + "'");
    }
  }

  TimeSeriesFrame out = frame;
  for (const auto& m : scenario) {
    const auto [b, e] = detail::row_range(out, m.start, m.end());
    switch (m.cause) {
      case MissingCause::BlanketMaintenance:
        out = detail::blank(out, b, e, "");
        break;
      case MissingCause::SingleSensorDropout:
        out = detail::blank(out, b, e, m.channel);
        break;
      case MissingCause::NonUse:
        for (std::size_t r = b; r < e; ++r)
          if (out.sequence(r) != kIdle)
            throw Error(ErrorKind::Scenario, "non-use interval at " + format_iso8601(m.start) + " covers active rows");
        out = detail::blank(out, b, e, "");
        break;
    }
    gt.missing.push_back(m);
  }
  return {std::move(out), std::move(gt)};
}

inline std::pair<TimeSeriesFrame, GroundTruth> inject_outliers(const TimeSeriesFrame& frame, GroundTruth gt,
                                                               const std::vector<OutlierPoint>& scenario) {
  if (scenario.empty()) return {frame, std::move(gt)};
  std::vector<Column> cols = frame.columns();
  const auto& ts = frame.timestamps();
  for (const auto& p : scenario) {
    auto it = std::find_if(cols.begin(), cols.end(), [&](const Column& c) { return c.name == p.channel; });
    if (it == cols.end() || it->role != ColumnRole::Channel)
      throw Error(ErrorKind::Scenario, "outlier names unknown channel '" + p.channel + "'");
    auto pos = std::lower_bound(ts.begin(), ts.end(), p.at);
    if (pos == ts.end() || *pos != p.at)
      throw Error(ErrorKind::Scenario, "outlier at " + format_iso8601(p.at) + " is outside the frame");
    const auto first = static_cast<std::size_t>(pos - ts.begin());
    const auto n = static_cast<std::size_t>(std::max<long>(1, p.span.count()));
    if (first + n > ts.size())
      throw Error(ErrorKind::Scenario, "outlier at " + format_iso8601(p.at) + " runs past the frame end");
    for (std::size_t k = 0; k < n; ++k) {
      auto& cell = it->cells[first + k];
      if (!cell) throw Error(ErrorKind::Scenario, "outlier at " + format_iso8601(ts[first + k]) + " lies on a missing cell");
      const double w = p.cls == OutlierClass::TruePrecursorRelevant && n > 1
                           ? static_cast<double>(k + 1) / static_cast<double>(n)
                           : 1.0;
      *cell += w * p.magnitude;
      gt.outliers.push_back({ts[first + k], p.channel, p.cls});
    }
  }
  std::sort(gt.outliers.begin(), gt.outliers.end(), [](const OutlierLabel& a, const OutlierLabel& b) {
    return a.at != b.at ? a.at < b.at : a.channel < b.channel;
  });
  return {TimeSeriesFrame(ts, std::move(cols)), std::move(gt)};
}

/// Places AutoMissing intervals on a simulated frame: blankets and dropouts
/// inside active cycles, non-use intervals inside IDLE gaps.
inline std::vector<MissingInterval> plan_missing(const TimeSeriesFrame& frame, const AutoMissing& a, Rng rng) {
  std::vector<MissingInterval> out;
  if (frame.empty()) return out;
  const auto pos = sequence_positions(frame);
  std::vector<std::size_t> active_starts, idle_starts;
  for (auto s : pos.instance_start) (frame.sequence(s) == kIdle ? idle_starts : active_starts).push_back(s);
  const auto& ts = frame.timestamps();

  std::vector<std::pair<TimePoint, TimePoint>> taken;
  auto free = [&](TimePoint b, TimePoint e) {
    for (const auto& [tb, te] : taken)
      if (b < te && tb < e) return false;
    return true;
  };
  auto place = [&](int count, Minutes len, MissingCause cause, const std::vector<std::size_t>& starts) {
    for (int i = 0, tries = 0; i < count && tries < 1000 && !starts.empty(); ++tries) {
      const auto s = starts[rng.below(starts.size())];
      const auto b = ts[s] + Minutes{static_cast<long>(rng.below(30))};
      const auto e = b + len;
      if (e > ts.back()) continue;
      const auto [rb, re] = detail::row_range(frame, b, e);
      if (re - rb != static_cast<std::size_t>(len.count())) continue;  // needs contiguous rows
      bool ok = true;
      for (std::size_t r = rb; r < re && ok; ++r)
        ok = (cause == MissingCause::NonUse) == (frame.sequence(r) == kIdle);
      if (!ok) continue;
      MissingInterval m{b, len, cause, ""};
      if (cause == MissingCause::SingleSensorDropout) {
        const auto& ch = simulated_channels();
        m.channel = ch[rng.below(ch.size())].name;
      } else if (!free(b, e)) {
        continue;
      }
      taken.emplace_back(b, e);
      out.push_back(std::move(m));
      ++i;
    }
  };
  place(a.blankets, a.blanket_length, MissingCause::BlanketMaintenance, active_starts);
  place(a.dropouts, a.dropout_length, MissingCause::SingleSensorDropout, active_starts);
  place(a.non_use, Minutes{60}, MissingCause::NonUse, idle_starts);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.start < y.start; });
  return out;
}

/// Places AutoOutliers on a frame: false spikes and irrelevant bumps in
/// cooling/preparation, precursor drifts before needle-valve events.
inline std::vector<OutlierPoint> plan_outliers(const TimeSeriesFrame& frame, const GroundTruth& gt,
                                               const AutoOutliers& a, Rng rng) {
  using namespace sim_names;
  std::vector<OutlierPoint> out;
  if (frame.empty()) return out;
  const auto& ts = frame.timestamps();
  auto observed = [&](const std::string& ch, TimePoint at, long n) {
    auto it = std::lower_bound(ts.begin(), ts.end(), at);
    if (it == ts.end() || *it != at) return false;
    auto r = static_cast<std::size_t>(it - ts.begin());
    if (r + static_cast<std::size_t>(n) > ts.size() || ts[r + static_cast<std::size_t>(n) - 1] != at + Minutes{n - 1})
      return false;
    for (long k = 0; k < n; ++k)
      if (!frame.column(ch).cells[r + static_cast<std::size_t>(k)]) return false;
    return true;
  };

  const auto pos = sequence_positions(frame);
  std::map<int, std::vector<std::size_t>> cooling, preparation;
  for (auto s : pos.instance_start) {
    const auto seq = frame.sequence(s);
    const auto cyc = frame.cycle(s);
    if (!seq || !cyc) continue;
    if (*seq == 11) cooling[*cyc].push_back(s);
    if (*seq >= 1 && *seq <= 8) preparation[*cyc].push_back(s);
  }
  const std::array<std::pair<const char*, double>, 3> spike_channels = {
      {{kPressure, 500.0}, {kTemperature, 60.0}, {kPressure2, 450.0}}};

  for (const auto& [cyc, starts] : cooling) {
    const auto s = starts.front();
    if (rng.bernoulli(a.false_spike_per_cycle)) {
      const auto& [ch, mag] = spike_channels[rng.below(spike_channels.size())];
      const auto at = ts[s] + Minutes{static_cast<long>(30 + rng.below(400))};
      if (observed(ch, at, 1)) out.push_back({at, ch, mag, Minutes{1}, OutlierClass::FalseSpike});
    }
    if (rng.bernoulli(a.irrelevant_per_cycle)) {
      const char* ch = rng.bernoulli(0.5) ? kExtTemp7 : kExtTemp15;
      const auto at = ts[s] + Minutes{static_cast<long>(60 + rng.below(300))};
      if (observed(ch, at, 8)) out.push_back({at, ch, 12.0, Minutes{8}, OutlierClass::TrueIrrelevant});
    }
  }
  for (const auto& e : gt.events) {
    if (e.event.fault != "Needle Valve Fault") continue;
    if (!rng.bernoulli(a.precursor_per_needle_fault)) continue;
    const auto at = e.event.onset - Minutes{55};
    if (observed(kPressure, at, 40)) out.push_back({at, kPressure, 250.0, Minutes{40}, OutlierClass::TruePrecursorRelevant});
  }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.at != y.at ? x.at < y.at : x.channel < y.channel;
  });
  return out;
}

/// simulate() followed by the configured missing-data and outlier scenarios.
inline std::pair<TimeSeriesFrame, GroundTruth> simulate_with_scenarios(const SimConfig& config,
                                                                       const KnowledgeBase& kb) {
  auto [frame, gt] = simulate(config, kb);
  const Rng root(config.seed);
  auto missing = config.missing.intervals;
  const auto planned = plan_missing(frame, config.missing.automatic, root.substream("missing"));
  missing.insert(missing.end(), planned.begin(), planned.end());
  std::tie(frame, gt) = inject_missing(frame, std::move(gt), missing);
  auto outliers = config.outliers.points;
  const auto planned_o = plan_outliers(frame, gt, config.outliers.automatic, root.substream("outliers"));
  outliers.insert(outliers.end(), planned_o.begin(), planned_o.end());
  std::tie(frame, gt) = inject_outliers(frame, std::move(gt), outliers);
  return {std::move(frame), std::move(gt)};
}

}  // namespace pdm
