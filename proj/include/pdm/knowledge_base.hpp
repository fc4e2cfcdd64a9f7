#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdm/core/error.hpp"
#include "pdm/core/time.hpp"
#include "pdm/timeseries.hpp"

namespace pdm {

enum class Mode { Preparation, Heating, Sampling, Cooling, Disconnection };
enum class Severity { Blocking, NonBlocking };
enum class Consequence { CycleStop, Acknowledge };
enum class EventSource { AutomationLog, RuleEngine, GroundTruth };

NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {{Mode::Preparation, "Preparation"},
                                    {Mode::Heating, "Heating"},
                                    {Mode::Sampling, "Sampling"},
                                    {Mode::Cooling, "Cooling"},
                                    {Mode::Disconnection, "Disconnection"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Severity, {{Severity::Blocking, "Blocking"},
                                        {Severity::NonBlocking, "NonBlocking"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Consequence, {{Consequence::CycleStop, "CycleStop"},
                                           {Consequence::Acknowledge, "Acknowledge"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EventSource, {{EventSource::AutomationLog, "AutomationLog"},
                                           {EventSource::RuleEngine, "RuleEngine"},
                                           {EventSource::GroundTruth, "GroundTruth"}})

struct ModeSpec {
  Mode mode;
  std::vector<SequenceId> sequences;
};

/// Operating modes in cycle order with their sequences and nominal durations.
struct ModeModel {
  std::vector<ModeSpec> modes;
  std::map<SequenceId, Minutes> nominal_duration;

  std::optional<Mode> mode_of(SequenceId seq) const {
    for (const auto& m : modes)
      if (std::find(m.sequences.begin(), m.sequences.end(), seq) != m.sequences.end()) return m.mode;
    return std::nullopt;
  }

  /// Sequences in cycle order.
  std::vector<SequenceId> sequence_order() const {
    std::vector<SequenceId> out;
    for (const auto& m : modes) out.insert(out.end(), m.sequences.begin(), m.sequences.end());
    return out;
  }

  static ModeModel standard() {
    ModeModel mm;
    mm.modes = {{Mode::Preparation, {1, 2, 3, 4, 5, 6, 7, 8}},
                {Mode::Heating, {9}},
                {Mode::Sampling, {10}},
                {Mode::Cooling, {11}},
                {Mode::Disconnection, {12, 13}}};
    const int minutes[] = {20, 15, 20, 15, 20, 15, 20, 15, 240, 60, 480, 20, 20};
    for (SequenceId s = 1; s <= 13; ++s) mm.nominal_duration[s] = Minutes{minutes[s - 1]};
    return mm;
  }
};

enum class Comparator { Less, LessEqual, Greater, GreaterEqual, Outside, Inside };
enum class Qualifier { None, WithinFirst, NoMemoryWithinFirst };

NLOHMANN_JSON_SERIALIZE_ENUM(Comparator, {{Comparator::Less, "<"},
                                          {Comparator::LessEqual, "<="},
                                          {Comparator::Greater, ">"},
                                          {Comparator::GreaterEqual, ">="},
                                          {Comparator::Outside, "outside"},
                                          {Comparator::Inside, "inside"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Qualifier, {{Qualifier::None, "none"},
                                         {Qualifier::WithinFirst, "within_first"},
                                         {Qualifier::NoMemoryWithinFirst, "no_memory_within_first"}})

struct SensorPredicate {
  std::string channel;
  Comparator comparator = Comparator::Greater;
  double threshold = 0.0;
  double range_min = 0.0;  // used by Outside / Inside
  double range_max = 0.0;
  std::string unit;
  Qualifier qualifier = Qualifier::None;
  Minutes window{0};

  bool holds(double v) const {
    switch (comparator) {
      case Comparator::Less: return v < threshold;
      case Comparator::LessEqual: return v <= threshold;
      case Comparator::Greater: return v > threshold;
      case Comparator::GreaterEqual: return v >= threshold;
      case Comparator::Outside: return v < range_min || v > range_max;
      case Comparator::Inside: return v >= range_min && v <= range_max;
    }
    return false;
  }
};

/// Logical OR over the named logs: true when any of them equals `equals`.
struct LogPredicate {
  std::vector<std::string> any_of;
  double equals = 1.0;
};

struct MonitoringRule {
  int id = 0;
  Mode mode = Mode::Preparation;
  SequenceId sequence = kFirstSequence;
  std::optional<Minutes> step_offset;
  std::optional<SensorPredicate> sensor;
  std::optional<LogPredicate> logs;
  std::string fault;
  std::string cause;
  Severity severity = Severity::Blocking;
  Consequence consequence = Consequence::CycleStop;
};

struct FmecaEntry {
  std::string fault;
  std::vector<std::string> causes;
  Severity severity = Severity::Blocking;
  Consequence consequence = Consequence::CycleStop;
  std::string corrective_action;
};

struct OperatingEnvelope {
  std::string channel;
  Mode mode = Mode::Preparation;
  SequenceId sequence = kFirstSequence;
  double min = 0.0;
  double max = 0.0;
};

struct FaultClass {
  std::vector<std::string> causes;
  Severity severity;
  Consequence consequence;
};

struct KnowledgeBase {
  ModeModel mode_model;
  std::map<std::string, std::string> channel_units;
  std::vector<MonitoringRule> rules;
  std::vector<FmecaEntry> fmeca;
  std::vector<OperatingEnvelope> envelopes;
  std::vector<std::vector<std::string>> redundancy;

  const FmecaEntry* find_fmeca(std::string_view fault) const {
    for (const auto& e : fmeca)
      if (e.fault == fault) return &e;
    return nullptr;
  }

  const OperatingEnvelope* find_envelope(std::string_view channel, SequenceId seq) const {
    for (const auto& e : envelopes)
      if (e.channel == channel && e.sequence == seq) return &e;
    return nullptr;
  }

  const MonitoringRule* find_rule(int id) const {
    for (const auto& r : rules)
      if (r.id == id) return &r;
    return nullptr;
  }

  /// Every cause named in the FMECA, sorted and de-duplicated.
  std::vector<std::string> all_causes() const {
    std::set<std::string> s;
    for (const auto& e : fmeca) s.insert(e.causes.begin(), e.causes.end());
    return {s.begin(), s.end()};
  }

  /// Channels referenced by a blocking rule's sensor predicate.
  std::set<std::string> blocking_channels() const {
    std::set<std::string> out;
    for (const auto& r : rules)
      if (r.severity == Severity::Blocking && r.sensor) out.insert(r.sensor->channel);
    return out;
  }
};

struct FaultEvent {
  TimePoint onset;
  int cycle = 0;
  SequenceId sequence = kIdle;
  std::string fault;
  std::string cause;
  Severity severity = Severity::Blocking;
  Consequence consequence = Consequence::CycleStop;
  int priority = 0;
  EventSource source = EventSource::RuleEngine;
  std::optional<int> rule_id;

  bool operator==(const FaultEvent&) const = default;
};

inline void to_json(nlohmann::json& j, const FaultEvent& e) {
  j = nlohmann::json{{"onset", format_iso8601(e.onset)},
                     {"cycle", e.cycle},
                     {"sequence", sequence_label(e.sequence)},
                     {"fault", e.fault},
                     {"cause", e.cause},
                     {"severity", e.severity},
                     {"consequence", e.consequence},
                     {"priority", e.priority},
                     {"source", e.source}};
  if (e.rule_id) j["rule_id"] = *e.rule_id;
}

inline void from_json(const nlohmann::json& j, FaultEvent& e) {
  e.onset = parse_iso8601(j.at("onset").get<std::string>());
  e.cycle = j.at("cycle").get<int>();
  const auto seq = parse_sequence(j.at("sequence").get<std::string>());
  if (!seq) throw Error(ErrorKind::UnknownSequence, j.at("sequence").get<std::string>());
  e.sequence = *seq;
  e.fault = j.at("fault").get<std::string>();
  e.cause = j.value("cause", std::string{});
  e.severity = j.at("severity").get<Severity>();
  e.consequence = j.at("consequence").get<Consequence>();
  e.priority = j.value("priority", 0);
  e.source = j.value("source", EventSource::GroundTruth);
  if (j.contains("rule_id")) e.rule_id = j.at("rule_id").get<int>();
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

template <typename E>
E parse_enum(const nlohmann::json& j, const char* what) {
  const E v = j.get<E>();
  // nlohmann maps unknown strings to the first enumerator; reject that case.
  if (nlohmann::json(v) != j)
    throw Error(ErrorKind::Config, std::string("unknown ") + what + " '" + j.dump() + "'");
  return v;
}

inline SequenceId parse_sequence_field(const nlohmann::json& j) {
  const auto text = j.get<std::string>();
  const auto id = parse_sequence(text);
  if (!id || *id == kIdle) throw Error(ErrorKind::UnknownSequence, "unknown sequence '" + text + "'");
  return *id;
}

}  // namespace detail

inline KnowledgeBase parse_kb(const nlohmann::json& doc) {
  using nlohmann::json;
  KnowledgeBase kb;
  try {
    // mode model
    const auto& mm = doc.at("mode_model");
    std::set<SequenceId> seen;
    for (const auto& m : mm.at("modes")) {
      ModeSpec spec{detail::parse_enum<Mode>(m.at("mode"), "mode"), {}};
      for (const auto& s : m.at("sequences")) {
        const auto id = detail::parse_sequence_field(s);
        if (!seen.insert(id).second)
          throw Error(ErrorKind::Config, "sequence " + sequence_label(id) + " assigned to two modes");
        spec.sequences.push_back(id);
      }
      kb.mode_model.modes.push_back(std::move(spec));
    }
    if (seen.size() != static_cast<std::size_t>(kLastSequence))
      throw Error(ErrorKind::Config, "mode model must partition S01..S13");
    if (mm.contains("durations_min")) {
      for (const auto& [key, value] : mm.at("durations_min").items()) {
        const auto id = parse_sequence(key);
        if (!id || *id == kIdle) throw Error(ErrorKind::UnknownSequence, "unknown sequence '" + key + "'");
        const int minutes = value.get<int>();
        if (minutes <= 0) throw Error(ErrorKind::Config, "duration of " + key + " must be > 0");
        kb.mode_model.nominal_duration[*id] = Minutes{minutes};
      }
    }
    for (SequenceId s = kFirstSequence; s <= kLastSequence; ++s)
      if (!kb.mode_model.nominal_duration.count(s))
        kb.mode_model.nominal_duration[s] = ModeModel::standard().nominal_duration.at(s);

    if (doc.contains("channels"))
      for (const auto& [name, unit] : doc.at("channels").items())
        kb.channel_units[name] = unit.get<std::string>();

    for (const auto& f : doc.at("fmeca")) {
      FmecaEntry e;
      e.fault = f.at("fault").get<std::string>();
      e.causes = f.at("causes").get<std::vector<std::string>>();
      e.severity = detail::parse_enum<Severity>(f.at("severity"), "severity");
      e.consequence = detail::parse_enum<Consequence>(f.at("consequence"), "consequence");
      e.corrective_action = f.value("corrective_action", std::string{});
      if (kb.find_fmeca(e.fault)) throw Error(ErrorKind::DuplicateId, "duplicate FMECA fault '" + e.fault + "'");
      if (e.causes.empty()) throw Error(ErrorKind::Config, "FMECA entry '" + e.fault + "' has no cause");
      if ((e.severity == Severity::Blocking) != (e.consequence == Consequence::CycleStop))
        throw Error(ErrorKind::Config, "FMECA entry '" + e.fault + "' pairs severity and consequence inconsistently");
      kb.fmeca.push_back(std::move(e));
    }

    auto check_unit = [&](const std::string& channel, const std::string& unit) {
      auto it = kb.channel_units.find(channel);
      if (it == kb.channel_units.end())
        throw Error(ErrorKind::Config, "channel '" + channel + "' not declared in 'channels'");
      if (!unit.empty() && it->second != unit)
        throw Error(ErrorKind::UnitMismatch, "channel '" + channel + "' is in " + it->second +
                                                 ", rule uses " + unit);
    };

    for (const auto& r : doc.at("rules")) {
      MonitoringRule rule;
      rule.id = r.at("id").get<int>();
      if (kb.find_rule(rule.id))
        throw Error(ErrorKind::DuplicateId, "duplicate rule id " + std::to_string(rule.id));
      rule.sequence = detail::parse_sequence_field(r.at("sequence"));
      rule.mode = detail::parse_enum<Mode>(r.at("mode"), "mode");
      if (kb.mode_model.mode_of(rule.sequence) != rule.mode)
        throw Error(ErrorKind::UnknownSequence, "rule " + std::to_string(rule.id) + ": sequence " +
                                                    sequence_label(rule.sequence) + " is not in that mode");
      if (r.contains("step_offset_min")) rule.step_offset = Minutes{r.at("step_offset_min").get<int>()};
      if (r.contains("sensor")) {
        const auto& s = r.at("sensor");
        SensorPredicate p;
        p.channel = s.at("channel").get<std::string>();
        p.comparator = detail::parse_enum<Comparator>(s.at("comparator"), "comparator");
        if (p.comparator == Comparator::Outside || p.comparator == Comparator::Inside) {
          const auto range = s.at("range").get<std::vector<double>>();
          if (range.size() != 2 || !(range[0] < range[1]))
            throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + ": bad range");
          p.range_min = range[0];
          p.range_max = range[1];
        } else {
          p.threshold = s.at("threshold").get<double>();
        }
        p.unit = s.value("unit", std::string{});
        check_unit(p.channel, p.unit);
        if (s.contains("qualifier")) {
          const auto& q = s.at("qualifier");
          p.qualifier = detail::parse_enum<Qualifier>(q.at("kind"), "qualifier");
          p.window = Minutes{q.value("minutes", 0)};
          if (p.qualifier != Qualifier::None && p.window.count() <= 0)
            throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + ": qualifier needs minutes > 0");
        }
        rule.sensor = p;
      }
      if (r.contains("logs")) {
        const auto& l = r.at("logs");
        rule.logs = LogPredicate{l.at("any_of").get<std::vector<std::string>>(), l.value("equals", 1.0)};
        if (rule.logs->any_of.empty())
          throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + ": empty log predicate");
      }
      if (!rule.sensor && !rule.logs)
        throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + " has no predicate");
      rule.fault = r.at("fault").get<std::string>();
      const auto* entry = kb.find_fmeca(rule.fault);
      if (!entry)
        throw Error(ErrorKind::UnknownFault, "rule " + std::to_string(rule.id) + " names fault '" +
                                                 rule.fault + "' with no FMECA entry");
      rule.cause = r.value("cause", entry->causes.front());
      if (std::find(entry->causes.begin(), entry->causes.end(), rule.cause) == entry->causes.end())
        throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + ": cause '" + rule.cause +
                                           "' not listed for '" + rule.fault + "'");
      rule.severity = r.contains("severity") ? detail::parse_enum<Severity>(r.at("severity"), "severity")
                                             : entry->severity;
      rule.consequence = r.contains("consequence")
                             ? detail::parse_enum<Consequence>(r.at("consequence"), "consequence")
                             : entry->consequence;
      if (rule.severity != entry->severity || rule.consequence != entry->consequence)
        throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) +
                                           " disagrees with the FMECA classification of '" + rule.fault + "'");
      kb.rules.push_back(std::move(rule));
    }

    if (doc.contains("envelopes")) {
      for (const auto& e : doc.at("envelopes")) {
        OperatingEnvelope env;
        env.channel = e.at("channel").get<std::string>();
        env.sequence = detail::parse_sequence_field(e.at("sequence"));
        env.mode = e.contains("mode") ? detail::parse_enum<Mode>(e.at("mode"), "mode")
                                      : *kb.mode_model.mode_of(env.sequence);
        env.min = e.at("min").get<double>();
        env.max = e.at("max").get<double>();
        if (!(env.min < env.max))
          throw Error(ErrorKind::Config, "envelope for '" + env.channel + "' needs min < max");
        check_unit(env.channel, e.value("unit", std::string{}));
        kb.envelopes.push_back(std::move(env));
      }
    }

    if (doc.contains("redundancy")) {
      std::set<std::string> used;
      for (const auto& g : doc.at("redundancy")) {
        auto group = g.get<std::vector<std::string>>();
        for (const auto& ch : group)
          if (!used.insert(ch).second)
            throw Error(ErrorKind::Config, "channel '" + ch + "' appears in two redundancy groups");
        kb.redundancy.push_back(std::move(group));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("knowledge base: ") + e.what());
  }
  return kb;
}

inline KnowledgeBase load_kb(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "knowledge base '" + path + "': " + e.what());
  }
  return parse_kb(doc);
}

// ---------------------------------------------------------------------------
// Queries

inline FaultClass classify_fault(std::string_view name, const KnowledgeBase& kb) {
  const auto* e = kb.find_fmeca(name);
  if (!e) throw Error(ErrorKind::UnknownFault, "unknown fault '" + std::string(name) + "'");
  return {e->causes, e->severity, e->consequence};
}

enum class EnvelopeVerdict { InEnvelope, OutOfEnvelope, NoEnvelope };

inline EnvelopeVerdict envelope_check(const KnowledgeBase& kb, std::string_view channel,
                                      SequenceId sequence, Cell value) {
  const auto* env = kb.find_envelope(channel, sequence);
  if (!env || !value) return EnvelopeVerdict::NoEnvelope;
  return (*value >= env->min && *value <= env->max) ? EnvelopeVerdict::InEnvelope
                                                     : EnvelopeVerdict::OutOfEnvelope;
}

/// Verdict for every channel of `frame` at `row`.
inline std::map<std::string, EnvelopeVerdict> envelope_check(const TimeSeriesFrame& frame,
                                                             std::size_t row,
                                                             const KnowledgeBase& kb) {
  std::map<std::string, EnvelopeVerdict> out;
  const auto seq = frame.sequence(row);
  for (const auto& c : frame.columns()) {
    if (c.role != ColumnRole::Channel) continue;
    out[c.name] = seq ? envelope_check(kb, c.name, *seq, c.cells[row]) : EnvelopeVerdict::NoEnvelope;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rule evaluation

namespace detail {

struct RuleInputs {
  const Column* sensor = nullptr;
  std::vector<const Column*> logs;
};

inline bool sensor_holds(const RuleInputs& in, const SensorPredicate& p, std::size_t row) {
  const auto& v = in.sensor->cells[row];
  return v && p.holds(*v);
}

inline bool logs_hold(const RuleInputs& in, const LogPredicate& p, std::size_t row) {
  for (const auto* c : in.logs)
    if (c->cells[row] && *c->cells[row] == p.equals) return true;
  return false;
}

}  // namespace detail

/// Fires each rule at most once per cycle. Onset is the first row at which the
/// condition is met; `no_memory_within_first` fires at the first row at or
/// past the window end when the sensor predicate never held inside it.
/// Missing sensor cells never satisfy a predicate.
inline std::vector<FaultEvent> evaluate_rules(const TimeSeriesFrame& frame, const KnowledgeBase& kb) {
  std::vector<detail::RuleInputs> inputs;
  for (const auto& rule : kb.rules) {
    detail::RuleInputs in;
    if (rule.sensor) {
      in.sensor = frame.find(rule.sensor->channel);
      if (!in.sensor)
        throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + " needs channel '" +
                                           rule.sensor->channel + "'");
    }
    if (rule.logs)
      for (const auto& name : rule.logs->any_of) {
        const auto* c = frame.find(name);
        if (!c)
          throw Error(ErrorKind::Config, "rule " + std::to_string(rule.id) + " needs log '" + name + "'");
        in.logs.push_back(c);
      }
    inputs.push_back(std::move(in));
  }
  if (frame.empty()) return {};

  const auto pos = sequence_positions(frame);
  std::vector<FaultEvent> events;
  for (std::size_t k = 0; k < kb.rules.size(); ++k) {
    const auto& rule = kb.rules[k];
    const auto& in = inputs[k];
    const auto fc = classify_fault(rule.fault, kb);
    std::set<int> latched;
    std::optional<std::size_t> current_instance;
    bool seen_in_window = false;

    for (std::size_t r = 0; r < frame.size(); ++r) {
      const auto seq = frame.sequence(r);
      const auto cyc = frame.cycle(r);
      if (!seq || !cyc || *seq != rule.sequence || latched.count(*cyc)) continue;
      if (pos.instance[r] != current_instance) {
        current_instance = pos.instance[r];
        seen_in_window = false;
      }
      const auto elapsed = pos.elapsed[r];
      const Minutes offset = rule.step_offset.value_or(Minutes{0});
      const bool log_ok = !rule.logs || detail::logs_hold(in, *rule.logs, r);

      bool fire = false;
      if (!rule.sensor) {
        fire = elapsed >= offset && log_ok;
      } else {
        const auto& p = *rule.sensor;
        switch (p.qualifier) {
          case Qualifier::None:
            fire = elapsed >= offset && log_ok && detail::sensor_holds(in, p, r);
            break;
          case Qualifier::WithinFirst:
            fire = elapsed >= offset && elapsed < p.window && log_ok && detail::sensor_holds(in, p, r);
            break;
          case Qualifier::NoMemoryWithinFirst:
            if (elapsed < p.window) {
              if (detail::sensor_holds(in, p, r)) seen_in_window = true;
            } else {
              fire = !seen_in_window && elapsed >= offset && log_ok;
            }
            break;
        }
      }
      if (!fire) continue;
      latched.insert(*cyc);
      events.push_back(FaultEvent{frame.timestamps()[r], *cyc, *seq, rule.fault, rule.cause,
                                  fc.severity, fc.consequence, 0, EventSource::RuleEngine, rule.id});
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const FaultEvent& a, const FaultEvent& b) {
    if (a.onset != b.onset) return a.onset < b.onset;
    return a.rule_id.value_or(0) < b.rule_id.value_or(0);
  });
  return events;
}

}  // namespace pdm
