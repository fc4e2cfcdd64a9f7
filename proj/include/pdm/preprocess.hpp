#pragma once

#include <algorithm>
#include <cmath>
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
#include "pdm/knowledge_base.hpp"
#include "pdm/split.hpp"
#include "pdm/stats.hpp"
#include "pdm/timeseries.hpp"

namespace pdm::preprocess {

enum class Scenario { S1, S2 };

inline std::string_view to_string(Scenario s) { return s == Scenario::S1 ? "Scenario1" : "Scenario2"; }

// ---------------------------------------------------------------------------
// Gaps

enum class GapCause { Blanket, SingleSensor, NonUse, Unknown };
enum class Disposition { Delete, Reconstruct };

NLOHMANN_JSON_SERIALIZE_ENUM(GapCause, {{GapCause::Blanket, "Blanket"},
                                        {GapCause::SingleSensor, "SingleSensor"},
                                        {GapCause::NonUse, "NonUse"},
                                        {GapCause::Unknown, "Unknown"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Disposition, {{Disposition::Delete, "Delete"}, {Disposition::Reconstruct, "Reconstruct"}})

struct GapInterval {
  std::size_t begin = 0;  // row range [begin, end)
  std::size_t end = 0;
  TimePoint start;
  TimePoint last;
  std::vector<std::string> channels;
  GapCause cause = GapCause::Unknown;
  Disposition disposition = Disposition::Delete;
};

struct GapReport {
  std::vector<GapInterval> intervals;

  std::size_t count(GapCause c) const {
    return static_cast<std::size_t>(
        std::count_if(intervals.begin(), intervals.end(), [&](const auto& g) { return g.cause == c; }));
  }
};

inline Disposition disposition_of(GapCause c) {
  return c == GapCause::SingleSensor ? Disposition::Reconstruct : Disposition::Delete;
}

/// Maximal missing intervals. With a knowledge base, IDLE runs are non-use,
/// all-channel runs are blankets and the rest are single-sensor dropouts.
/// Without one every gap is Unknown and deleted.
inline GapReport classify_gaps(const TimeSeriesFrame& frame, const KnowledgeBase* kb) {
  GapReport report;
  const auto channels = frame.names(ColumnRole::Channel);
  const auto& ts = frame.timestamps();
  const bool informed = kb != nullptr && frame.find_role(ColumnRole::Sequence) != nullptr;
  auto push = [&](std::size_t b, std::size_t e, std::vector<std::string> chans, GapCause cause) {
    report.intervals.push_back({b, e, ts[b], ts[e - 1], std::move(chans), cause, disposition_of(cause)});
  };
  auto runs = [&](const std::vector<bool>& mask, auto&& emit) {
    for (std::size_t r = 0; r < mask.size();) {
      if (!mask[r]) {
        ++r;
        continue;
      }
      std::size_t e = r;
      while (e < mask.size() && mask[e]) ++e;
      emit(r, e);
      r = e;
    }
  };

  std::vector<bool> idle(frame.size(), false);
  if (informed) {
    for (std::size_t r = 0; r < frame.size(); ++r) idle[r] = frame.sequence(r) == kIdle;
    runs(idle, [&](std::size_t b, std::size_t e) { push(b, e, channels, GapCause::NonUse); });
  }
  if (channels.empty()) return report;

  std::vector<const Column*> cols;
  for (const auto& n : channels) cols.push_back(&frame.column(n));
  std::vector<bool> blanket(frame.size(), false);
  for (std::size_t r = 0; r < frame.size(); ++r) {
    if (idle[r]) continue;
    blanket[r] = std::all_of(cols.begin(), cols.end(), [&](const Column* c) { return !c->cells[r]; });
  }
  runs(blanket, [&](std::size_t b, std::size_t e) {
    push(b, e, channels, informed ? GapCause::Blanket : GapCause::Unknown);
  });
  for (const auto* c : cols) {
    std::vector<bool> miss(frame.size(), false);
    for (std::size_t r = 0; r < frame.size(); ++r) miss[r] = !idle[r] && !blanket[r] && !c->cells[r];
    runs(miss, [&](std::size_t b, std::size_t e) {
      push(b, e, {c->name}, informed ? GapCause::SingleSensor : GapCause::Unknown);
    });
  }
  std::sort(report.intervals.begin(), report.intervals.end(), [](const auto& a, const auto& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.channels < b.channels;
  });
  return report;
}

namespace detail {

/// Rows grouped by (sequence id, elapsed minute within the sequence instance).
class PositionIndex {
 public:
  explicit PositionIndex(const TimeSeriesFrame& frame) : pos_(sequence_positions(frame)) {
    keys_.resize(frame.size());
    for (std::size_t r = 0; r < frame.size(); ++r) {
      const auto seq = frame.sequence(r);
      keys_[r] = {seq.value_or(-1), pos_.elapsed[r].count()};
      groups_[keys_[r]].push_back(r);
    }
  }
  const std::vector<std::size_t>& rows_like(std::size_t r) const { return groups_.at(keys_[r]); }
  const SequencePosition& positions() const { return pos_; }

 private:
  SequencePosition pos_;
  std::vector<std::pair<int, long>> keys_;
  std::map<std::pair<int, long>, std::vector<std::size_t>> groups_;
};

}  // namespace detail

/// Fills a single-sensor gap with the mean of the same channel at the same
/// (sequence, elapsed) position over up to `k` most recent prior cycles that
/// observed it. Falls back to the channel's observed median.
inline TimeSeriesFrame impute_single_sensor(const TimeSeriesFrame& frame, const GapInterval& gap, int k) {
  if (gap.disposition != Disposition::Reconstruct || gap.channels.size() != 1)
    throw Error(ErrorKind::Config, "imputation needs a single-sensor reconstruct gap");
  if (k < 1) throw Error(ErrorKind::Config, "imputation needs k >= 1");
  const auto& name = gap.channels.front();
  const auto& src = frame.column(name);
  std::vector<double> observed;
  for (const auto& c : src.cells)
    if (c) observed.push_back(*c);
  if (observed.empty()) throw Error(ErrorKind::Degenerate, "channel '" + name + "' is never observed");
  const double fallback = stats::median(observed);

  const detail::PositionIndex index(frame);
  auto cols = frame.columns();
  auto& dst = *std::find_if(cols.begin(), cols.end(), [&](const Column& c) { return c.name == name; });
  for (std::size_t r = gap.begin; r < gap.end && r < frame.size(); ++r) {
    if (src.cells[r]) continue;
    const int cyc = frame.cycle(r).value_or(0);
    std::map<int, double> by_cycle;  // most recent observation per prior cycle
    for (auto o : index.rows_like(r)) {
      const auto oc = frame.cycle(o);
      if (oc && *oc < cyc && src.cells[o]) by_cycle[*oc] = *src.cells[o];
    }
    if (by_cycle.empty()) {
      dst.cells[r] = fallback;
      continue;
    }
    double sum = 0.0;
    int n = 0;
    for (auto it = by_cycle.rbegin(); it != by_cycle.rend() && n < k; ++it, ++n) sum += it->second;
    dst.cells[r] = sum / n;
  }
  return TimeSeriesFrame(frame.timestamps(), std::move(cols));
}

inline TimeSeriesFrame drop_intervals(const TimeSeriesFrame& frame, const GapReport& report) {
  std::vector<bool> keep(frame.size(), true);
  bool any = false;
  for (const auto& g : report.intervals) {
    if (g.disposition != Disposition::Delete) continue;
    for (std::size_t r = g.begin; r < g.end && r < frame.size(); ++r) keep[r] = false;
    any = true;
  }
  return any ? frame.filter(keep) : frame;
}

inline TimeSeriesFrame drop_sparse_channels(const TimeSeriesFrame& frame, double max_missing,
                                            std::vector<std::string>* dropped = nullptr) {
  std::set<std::string> drop;
  for (const auto& c : frame.columns()) {
    if (c.role != ColumnRole::Channel || c.cells.empty()) continue;
    const auto miss = std::count_if(c.cells.begin(), c.cells.end(), [](const Cell& x) { return !x; });
    if (static_cast<double>(miss) / static_cast<double>(c.cells.size()) > max_missing) drop.insert(c.name);
  }
  if (dropped) dropped->assign(drop.begin(), drop.end());
  return drop.empty() ? frame : frame.without_columns(drop);
}

// ---------------------------------------------------------------------------
// Outliers

enum class Detector { Iqr, Ics };
enum class Verdict { CorrectedFalsePositive, TaggedTrueRelevant, DroppedTrueIrrelevant };

NLOHMANN_JSON_SERIALIZE_ENUM(Detector, {{Detector::Iqr, "IQR"}, {Detector::Ics, "ICS"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Verdict, {{Verdict::CorrectedFalsePositive, "CorrectedFalsePositive"},
                                       {Verdict::TaggedTrueRelevant, "TaggedTrueRelevant"},
                                       {Verdict::DroppedTrueIrrelevant, "DroppedTrueIrrelevant"}})

struct OutlierFlag {
  std::size_t row = 0;
  std::string channel;
  Detector detector = Detector::Iqr;

  bool operator==(const OutlierFlag&) const = default;
};

struct OutlierVerdict {
  std::size_t row = 0;
  TimePoint at;
  std::string channel;
  Detector detector = Detector::Iqr;
  Verdict verdict = Verdict::DroppedTrueIrrelevant;
  std::optional<double> replacement;
};

struct OutlierParams {
  double iqr_k = 3.0;
  stats::IcsParams ics;
  bool use_ics = true;
  std::size_t half_window = 5;
};

/// Each active cell minus the median of its `half_window` neighbours on each
/// side (centre excluded) within the same sequence instance. On smooth
/// stretches this is noise-sized, spikes stand out and sustained level shifts
/// do not. Rows without a full window, IDLE and unsequenced rows stay missing.
inline std::map<std::string, std::vector<Cell>> local_residuals(const TimeSeriesFrame& frame,
                                                                std::size_t half_window = 5) {
  const auto pos = sequence_positions(frame);
  std::map<std::string, std::vector<Cell>> out;
  std::vector<double> win;
  for (const auto& c : frame.columns()) {
    if (c.role != ColumnRole::Channel) continue;
    auto& res = out[c.name];
    res.assign(frame.size(), std::nullopt);
    for (std::size_t r = 0; r < frame.size(); ++r) {
      const auto seq = frame.sequence(r);
      if (!seq || *seq == kIdle || !c.cells[r]) continue;
      const auto inst = pos.instance[r];
      if (r < half_window || r + half_window >= frame.size()) continue;
      if (pos.instance[r - half_window] != inst || pos.instance[r + half_window] != inst) continue;
      win.clear();
      for (std::size_t k = r - half_window; k <= r + half_window; ++k)
        if (k != r && c.cells[k]) win.push_back(*c.cells[k]);
      if (win.empty()) continue;
      res[r] = *c.cells[r] - stats::median(win);
    }
  }
  return out;
}

/// IQR flags per channel plus ICS flags over complete rows, both on local
/// residuals. An ICS row is attributed to the
/// channel with the largest standardized residual. One flag per cell.
inline std::vector<OutlierFlag> flag_outliers(const TimeSeriesFrame& frame, const OutlierParams& p,
                                              std::vector<std::string>* notes = nullptr) {
  const auto residuals = local_residuals(frame, p.half_window);
  std::set<std::pair<std::size_t, std::string>> seen;
  std::vector<OutlierFlag> flags;
  for (const auto& [name, res] : residuals) {
    const auto n = std::count_if(res.begin(), res.end(), [](const Cell& c) { return c.has_value(); });
    if (n < 4) continue;
    for (auto r : stats::detect_outliers_iqr(std::span<const Cell>(res), p.iqr_k))
      if (seen.insert({r, name}).second) flags.push_back({r, name, Detector::Iqr});
  }
  if (p.use_ics && !residuals.empty()) {
    std::vector<std::string> names;
    for (const auto& [name, res] : residuals) names.push_back(name);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < frame.size(); ++r)
      if (std::all_of(names.begin(), names.end(), [&](const auto& n) { return residuals.at(n)[r].has_value(); }))
        rows.push_back(r);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < names.size(); ++j)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *residuals.at(names[j])[rows[i]];
    try {
      const auto ics = stats::detect_outliers_ics(x, p.ics);
      Eigen::RowVectorXd sd = ((x.rowwise() - x.colwise().mean()).array().square().colwise().mean()).sqrt();
      for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (sd(j) <= 0) sd(j) = 1.0;
      for (auto i : ics.flagged) {
        Eigen::Index arg = 0;
        (x.row(static_cast<Eigen::Index>(i)).array().abs() / sd.array()).maxCoeff(&arg);
        const auto& name = names[static_cast<std::size_t>(arg)];
        if (seen.insert({rows[i], name}).second) flags.push_back({rows[i], name, Detector::Ics});
      }
    } catch (const Error& e) {
      if (notes) notes->push_back(std::string("ICS skipped: ") + e.what());
      log::warn(std::string("ICS skipped: ") + e.what());
    }
  }
  std::sort(flags.begin(), flags.end(), [](const auto& a, const auto& b) {
    return a.row != b.row ? a.row < b.row : a.channel < b.channel;
  });
  return flags;
}

/// Rows in an event's active window: from onset to the end of the sequence
/// instance that contains it.
inline std::vector<std::pair<std::size_t, std::size_t>> event_windows(const TimeSeriesFrame& frame,
                                                                      const std::vector<FaultEvent>& events) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (frame.empty()) return out;
  const auto pos = sequence_positions(frame);
  const auto& ts = frame.timestamps();
  for (const auto& e : events) {
    const auto b = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), e.onset) - ts.begin());
    if (b >= ts.size()) {
      out.emplace_back(b, b);
      continue;
    }
    const auto inst = pos.instance[b];
    std::size_t end = b;
    while (end < ts.size() && pos.instance[end] == inst) ++end;
    out.emplace_back(b, end);
  }
  return out;
}

/// Verdict per flagged cell: inside a rule-violation window or within
/// `horizon` before a blocking onset -> tagged; isolated with in-envelope
/// neighbours -> corrected by linear interpolation; otherwise dropped.
inline std::vector<OutlierVerdict> verify_outliers(const std::vector<OutlierFlag>& flags, const TimeSeriesFrame& frame,
                                                   const KnowledgeBase& kb, const std::vector<FaultEvent>& events,
                                                   Minutes horizon = Minutes{60}) {
  const auto& ts = frame.timestamps();
  std::vector<bool> context(frame.size(), false);
  const auto windows = event_windows(frame, events);
  for (std::size_t i = 0; i < events.size(); ++i) {
    for (auto r = windows[i].first; r < windows[i].second; ++r) context[r] = true;
    if (events[i].severity != Severity::Blocking) continue;
    auto r = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), events[i].onset - horizon) - ts.begin());
    for (; r < ts.size() && ts[r] <= events[i].onset; ++r) context[r] = true;
  }
  std::set<std::pair<std::size_t, std::string>> flagged;
  for (const auto& f : flags) flagged.insert({f.row, f.channel});

  auto in_envelope = [&](const std::string& ch, std::size_t r, double v) {
    const auto seq = frame.sequence(r);
    if (!seq) return true;
    return envelope_check(kb, ch, *seq, v) != EnvelopeVerdict::OutOfEnvelope;
  };

  std::vector<OutlierVerdict> out;
  out.reserve(flags.size());
  for (const auto& f : flags) {
    OutlierVerdict v{f.row, ts[f.row], f.channel, f.detector, Verdict::DroppedTrueIrrelevant, std::nullopt};
    if (context[f.row]) {
      v.verdict = Verdict::TaggedTrueRelevant;
    } else if (f.row > 0 && f.row + 1 < frame.size()) {
      const auto& cells = frame.column(f.channel).cells;
      const auto a = f.row - 1, b = f.row + 1;
      const bool isolated = cells[a] && cells[b] && !flagged.count({a, f.channel}) && !flagged.count({b, f.channel}) &&
                            frame.cycle(a) == frame.cycle(f.row) && frame.cycle(b) == frame.cycle(f.row) &&
                            in_envelope(f.channel, a, *cells[a]) && in_envelope(f.channel, b, *cells[b]);
      if (isolated) {
        const double span = static_cast<double>((ts[b] - ts[a]).count());
        const double w = span > 0 ? static_cast<double>((ts[f.row] - ts[a]).count()) / span : 0.5;
        v.verdict = Verdict::CorrectedFalsePositive;
        v.replacement = *cells[a] + w * (*cells[b] - *cells[a]);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Writes corrections and removes rows holding a dropped point.
inline TimeSeriesFrame apply_verdicts(const TimeSeriesFrame& frame, const std::vector<OutlierVerdict>& verdicts) {
  auto cols = frame.columns();
  std::vector<bool> keep(frame.size(), true);
  for (const auto& v : verdicts) {
    if (v.verdict == Verdict::DroppedTrueIrrelevant) keep[v.row] = false;
    if (v.verdict != Verdict::CorrectedFalsePositive) continue;
    for (auto& c : cols)
      if (c.name == v.channel) c.cells[v.row] = v.replacement;
  }
  return TimeSeriesFrame(frame.timestamps(), std::move(cols)).filter(keep);
}

// ---------------------------------------------------------------------------
// Feature selection

struct FeatureSelection {
  std::vector<std::string> candidates;
  std::vector<std::string> selected;
  std::vector<double> explained;
  std::size_t retained = 0;
  std::map<std::string, double> max_loading;
  std::vector<std::string> notes;
};

/// Channels whose largest absolute loading over the retained components
/// reaches `tau`. With a knowledge base, each redundancy group keeps one
/// member and channels used by blocking rules are always kept.
inline FeatureSelection select_features(const std::vector<std::string>& channels, const stats::PcaResult& pca,
                                        const stats::CorrelationResult& corr, const KnowledgeBase* kb, double tau) {
  if (static_cast<Eigen::Index>(channels.size()) != pca.loadings.rows())
    throw Error(ErrorKind::Dimension, "channel names do not match the PCA loadings");
  FeatureSelection sel;
  sel.candidates = channels;
  sel.retained = pca.retained;
  for (Eigen::Index k = 0; k < pca.explained.size(); ++k) sel.explained.push_back(pca.explained(k));
  std::set<std::string> keep;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < pca.retained; ++k)
      m = std::max(m, std::abs(pca.loadings(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
    sel.max_loading[channels[i]] = m;
    if (m >= tau) keep.insert(channels[i]);
  }
  for (auto c : corr.constant_columns)
    if (c < channels.size()) sel.notes.push_back("constant channel " + channels[c] + " has no correlation");

  if (kb) {
    std::set<std::string> forced;
    for (const auto& ch : kb->blocking_channels())
      if (std::find(channels.begin(), channels.end(), ch) != channels.end()) forced.insert(ch);
    for (const auto& group : kb->redundancy) {
      std::vector<std::string> present;
      for (const auto& g : group)
        if (std::find(channels.begin(), channels.end(), g) != channels.end()) present.push_back(g);
      if (present.empty()) continue;
      std::sort(present.begin(), present.end());
      std::string winner;
      for (const auto& g : present)
        if (forced.count(g)) {
          winner = g;
          break;
        }
      if (winner.empty()) {
        bool any = false;
        for (const auto& g : present)
          if (keep.count(g) && (!any || sel.max_loading[g] > sel.max_loading[winner])) {
            winner = g;
            any = true;
          }
      }
      for (const auto& g : present)
        if (g != winner && keep.erase(g)) sel.notes.push_back("redundant " + g + " dropped in favour of " + winner);
    }
    for (const auto& f : forced)
      if (keep.insert(f).second) sel.notes.push_back(f + " kept: referenced by a blocking rule");
  }
  for (const auto& c : channels)
    if (keep.count(c)) sel.selected.push_back(c);
  if (sel.selected.empty()) throw Error(ErrorKind::Selection, "no channel reaches the loading threshold; lower tau");
  return sel;
}

// ---------------------------------------------------------------------------
// Transforms and knowledge features

struct Scaler {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> sd;

  double apply(std::size_t j, double v) const { return sd[j] > 0 ? (v - mean[j]) / sd[j] : 0.0; }
};

inline TimeSeriesFrame apply_scaler(const TimeSeriesFrame& frame, const Scaler& s) {
  auto cols = frame.columns();
  for (std::size_t j = 0; j < s.columns.size(); ++j)
    for (auto& c : cols)
      if (c.name == s.columns[j])
        for (auto& cell : c.cells)
          if (cell) cell = s.apply(j, *cell);
  return TimeSeriesFrame(frame.timestamps(), std::move(cols));
}

/// z-scores the named columns with training-row mean and population sd.
/// Constant training columns map to 0.
inline std::pair<TimeSeriesFrame, Scaler> standardize(const TimeSeriesFrame& frame,
                                                      const std::vector<std::string>& columns,
                                                      const std::vector<bool>& train,
                                                      std::vector<std::string>* warnings = nullptr) {
  if (train.size() != frame.size()) throw Error(ErrorKind::Dimension, "training mask length mismatch");
  if (std::none_of(train.begin(), train.end(), [](bool b) { return b; }))
    throw Error(ErrorKind::EmptyInput, "standardize needs at least one training row");
  Scaler s;
  for (const auto& name : columns) {
    const auto& c = frame.column(name);
    std::vector<double> v;
    for (std::size_t r = 0; r < frame.size(); ++r)
      if (train[r] && c.cells[r]) v.push_back(*c.cells[r]);
    if (v.empty()) throw Error(ErrorKind::EmptyInput, "column '" + name + "' has no training values");
    const double m = stats::mean(v);
    const double sd = std::sqrt(stats::variance(v));
    s.columns.push_back(name);
    s.mean.push_back(m);
    s.sd.push_back(sd);
    if (sd <= 0) {
      const auto msg = "column '" + name + "' is constant on training rows; mapped to 0";
      log::warn(msg);
      if (warnings) warnings->push_back(msg);
    }
  }
  return {apply_scaler(frame, s), s};
}

inline constexpr const char* kStatMean = "stat_mean";
inline constexpr const char* kStatMedian = "stat_median";
inline constexpr const char* kStatVariance = "stat_variance";

/// Row-wise mean, median and population variance across `channels`.
inline TimeSeriesFrame add_statistical_features(const TimeSeriesFrame& frame, const std::vector<std::string>& channels) {
  if (channels.empty()) throw Error(ErrorKind::Selection, "statistical features need at least one channel");
  std::vector<const Column*> cols;
  for (const auto& n : channels) cols.push_back(&frame.column(n));
  Column mean{kStatMean, ColumnRole::Channel, "", {}}, med{kStatMedian, ColumnRole::Channel, "", {}},
      var{kStatVariance, ColumnRole::Channel, "", {}};
  std::vector<double> row;
  for (std::size_t r = 0; r < frame.size(); ++r) {
    row.clear();
    for (const auto* c : cols)
      if (c->cells[r]) row.push_back(*c->cells[r]);
    if (row.empty()) {
      mean.cells.emplace_back();
      med.cells.emplace_back();
      var.cells.emplace_back();
      continue;
    }
    mean.cells.emplace_back(stats::mean(row));
    var.cells.emplace_back(stats::variance(row));
    med.cells.emplace_back(stats::median(row));
  }
  return frame.with_column(std::move(mean)).with_column(std::move(med)).with_column(std::move(var));
}

/// Competition ranking of causes by blocking-event frequency; every event
/// whose cause ranks within `top_n` gets priority 1, so ties at the cut
/// widen the set. Non-blocking events stay at 0.
inline std::vector<FaultEvent> prioritize(std::vector<FaultEvent> events, int top_n = 10) {
  std::map<std::string, int> counts;
  for (const auto& e : events)
    if (e.severity == Severity::Blocking) ++counts[e.cause];
  std::set<std::string> top;
  for (const auto& [cause, n] : counts) {
    int rank = 1;
    for (const auto& [other, m] : counts) rank += m > n ? 1 : 0;
    if (rank <= top_n) top.insert(cause);
  }
  for (auto& e : events) e.priority = e.severity == Severity::Blocking && top.count(e.cause) ? 1 : 0;
  return events;
}

inline constexpr const char* kSeverity = "severity";
inline constexpr const char* kConsequence = "consequence";
inline constexpr const char* kPriority = "priority";
inline constexpr const char* kCause = "fault_cause";
inline constexpr const char* kTarget = "target";

/// Knowledge columns over each event's active window: severity (1 if
/// blocking), consequence (1 if cycle stop), priority, and the cause as a
/// categorical code indexing `kb.all_causes()` from 1.
inline TimeSeriesFrame annotate_faults(const TimeSeriesFrame& frame, const std::vector<FaultEvent>& events,
                                       const KnowledgeBase& kb) {
  const auto causes = kb.all_causes();
  Column sev{kSeverity, ColumnRole::Flag, "", std::vector<Cell>(frame.size(), 0.0)};
  Column con{kConsequence, ColumnRole::Flag, "", std::vector<Cell>(frame.size(), 0.0)};
  Column pri{kPriority, ColumnRole::Flag, "", std::vector<Cell>(frame.size(), 0.0)};
  Column cause{kCause, ColumnRole::Categorical, "", std::vector<Cell>(frame.size(), 0.0)};
  const auto windows = event_windows(frame, events);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (!kb.find_fmeca(e.fault)) throw Error(ErrorKind::UnknownFault, "event fault '" + e.fault + "' not in FMECA");
    const auto it = std::find(causes.begin(), causes.end(), e.cause);
    const double code = it == causes.end() ? 0.0 : static_cast<double>(it - causes.begin() + 1);
    for (auto r = windows[i].first; r < windows[i].second; ++r) {
      if (e.severity == Severity::Blocking) sev.cells[r] = 1.0;
      if (e.consequence == Consequence::CycleStop) con.cells[r] = 1.0;
      if (e.priority) pri.cells[r] = 1.0;
      if (*cause.cells[r] == 0.0) cause.cells[r] = code;
    }
  }
  return frame.with_column(std::move(sev)).with_column(std::move(con)).with_column(std::move(pri)).with_column(
      std::move(cause));
}

/// target = severity AND consequence AND priority.
inline Column reconstruct_target(const TimeSeriesFrame& frame) {
  for (const char* n : {kSeverity, kConsequence, kPriority})
    if (!frame.has(n)) throw Error(ErrorKind::Schema, std::string("knowledge column '") + n + "' missing");
  const auto& s = frame.column(kSeverity).cells;
  const auto& c = frame.column(kConsequence).cells;
  const auto& p = frame.column(kPriority).cells;
  Column t{kTarget, ColumnRole::Flag, "", {}};
  for (std::size_t r = 0; r < frame.size(); ++r)
    t.cells.emplace_back(s[r].value_or(0) == 1.0 && c[r].value_or(0) == 1.0 && p[r].value_or(0) == 1.0 ? 1.0 : 0.0);
  return t;
}

struct CategoricalEncoding {
  std::string column;
  std::vector<double> codes;         // levels seen on training rows, ascending
  std::vector<std::string> labels;   // output column suffix per level
};

/// One-hot encodes a categorical column with levels fitted on training rows.
/// Code 0 means "none" and gets no column. Unseen codes encode as all zero.
inline std::pair<TimeSeriesFrame, CategoricalEncoding> encode_categorical(
    const TimeSeriesFrame& frame, const std::string& column, const std::vector<bool>& train,
    const std::vector<std::string>& level_names, std::vector<std::string>* warnings = nullptr) {
  const auto& c = frame.column(column);
  std::set<double> levels;
  for (std::size_t r = 0; r < frame.size(); ++r)
    if (train[r] && c.cells[r] && *c.cells[r] != 0.0) levels.insert(*c.cells[r]);
  CategoricalEncoding enc{column, {levels.begin(), levels.end()}, {}};
  for (double code : enc.codes) {
    const auto i = static_cast<std::size_t>(code) - 1;
    enc.labels.push_back(i < level_names.size() ? level_names[i] : format_number(code));
  }
  TimeSeriesFrame out = frame.without_columns({column});
  std::size_t unseen = 0;
  for (std::size_t k = 0; k < enc.codes.size(); ++k) {
    Column oh{column + "=" + enc.labels[k], ColumnRole::Flag, "", {}};
    for (const auto& cell : c.cells) oh.cells.emplace_back(cell && *cell == enc.codes[k] ? 1.0 : 0.0);
    out = out.with_column(std::move(oh));
  }
  for (const auto& cell : c.cells)
    if (cell && *cell != 0.0 && !levels.count(*cell)) ++unseen;
  if (unseen) {
    const auto msg = std::to_string(unseen) + " rows carry a " + column + " level unseen in training; encoded as zeros";
    log::warn(msg);
    if (warnings) warnings->push_back(msg);
  }
  return {std::move(out), std::move(enc)};
}

/// Resamples each sequence instance separately with buckets anchored at the
/// instance start, so no bucket mixes two sequences.
inline TimeSeriesFrame resample_by_instance(const TimeSeriesFrame& frame, const ResamplePolicy& policy) {
  policy.validate();
  if (frame.empty()) throw Error(ErrorKind::EmptyInput, "resample of an empty frame");
  const auto pos = sequence_positions(frame);
  const auto& ts = frame.timestamps();
  const auto width = std::chrono::duration_cast<Seconds>(policy.interval);
  std::vector<std::pair<std::size_t, std::size_t>> buckets;
  std::vector<TimePoint> out_ts;
  for (std::size_t r = 0; r < frame.size();) {
    const auto anchor = ts[pos.instance_start[pos.instance[r]]];
    const auto k = (ts[r] - anchor) / width;
    const auto end_t = anchor + width * (k + 1);
    std::size_t e = r;
    while (e < frame.size() && pos.instance[e] == pos.instance[r] && ts[e] < end_t) ++e;
    buckets.emplace_back(r, e);
    out_ts.push_back(anchor + width * k);
    r = e;
  }
  std::vector<Column> cols;
  for (const auto& c : frame.columns()) {
    Column out{c.name, c.role, c.unit, {}};
    out.cells.reserve(buckets.size());
    const std::span<const Cell> all(c.cells);
    for (auto [b, e] : buckets) out.cells.push_back(pdm::detail::aggregate(c.role, all.subspan(b, e - b), policy));
    cols.push_back(std::move(out));
  }
  return TimeSeriesFrame(std::move(out_ts), std::move(cols));
}

/// Keeps the sampling sequence and the heating sequence preceding it.
inline TimeSeriesFrame select_balance_window(const TimeSeriesFrame& frame) {
  if (frame.empty()) return frame;
  return slice_by_sequence(frame, {9, 10});
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct PreprocessConfig {
  double tau = 0.3;
  int top_n = 10;
  double iqr_k = 3.0;
  double ics_alpha = 0.025;
  int ics_components = 2;
  bool use_ics = true;
  Minutes resample{15};
  int impute_k = 3;
  double variance_threshold = 0.95;
  double max_missing_fraction = 0.5;
  Minutes precursor_window{60};
  SplitSpec split;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::Config, "tau must lie in [0,1]");
    if (top_n < 1 || impute_k < 1 || ics_components < 1) throw Error(ErrorKind::Config, "counts must be >= 1");
    if (!(iqr_k > 0.0)) throw Error(ErrorKind::Config, "iqr_k must be positive");
    if (!(ics_alpha > 0.0 && ics_alpha < 1.0)) throw Error(ErrorKind::Config, "ics_alpha must lie in (0,1)");
    if (!(variance_threshold > 0.0 && variance_threshold <= 1.0))
      throw Error(ErrorKind::Config, "variance_threshold must lie in (0,1]");
    if (resample.count() <= 0 || precursor_window.count() < 0) throw Error(ErrorKind::Config, "bad durations");
    split.validate();
  }
};

struct PreprocessReport {
  std::size_t rows_in = 0;
  std::size_t rows_after_gaps = 0;
  std::size_t rows_after_outliers = 0;
  std::size_t rows_after_resample = 0;
  std::size_t rows_final = 0;
  std::vector<std::string> dropped_channels;
  std::map<std::string, std::size_t> gaps;  // by cause
  std::size_t imputed_cells = 0;
  std::map<std::string, std::size_t> outlier_flags;     // by detector
  std::map<std::string, std::size_t> outlier_verdicts;  // by verdict
  std::size_t detected_faults = 0;  // rule events (S2) or fault-log pulses (S1)
  std::size_t target_positive_rows = 0;
  std::vector<std::string> warnings;
};

struct CuratedDataset {
  Scenario provenance = Scenario::S1;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd features;
  std::vector<int> target;
  std::string target_name = kTarget;
  std::vector<TimePoint> timestamps;
  std::vector<int> cycle;
  std::vector<SequenceId> sequence;
  Scaler scaler;
  FeatureSelection selection;
  std::optional<CategoricalEncoding> encoding;
  std::map<int, Split> split;  // whole-cycle assignment fixed before fitting anything

  std::size_t rows() const { return target.size(); }
};

namespace detail {

inline std::size_t count_log_pulses(const TimeSeriesFrame& frame, const char* log_name) {
  const auto* c = frame.find(log_name);
  if (!c) return 0;
  std::size_t n = 0;
  bool prev = false;
  for (const auto& cell : c->cells) {
    const bool on = cell.value_or(0.0) != 0.0;
    n += on && !prev ? 1 : 0;
    prev = on;
  }
  return n;
}

inline std::vector<bool> train_mask(const TimeSeriesFrame& frame, const std::map<int, Split>& split) {
  std::vector<bool> m(frame.size(), false);
  for (std::size_t r = 0; r < frame.size(); ++r) {
    const auto c = frame.cycle(r);
    m[r] = c && split.count(*c) && split.at(*c) == Split::Train;
  }
  return m;
}

}  // namespace detail

inline constexpr const char* kFaultLogColumn = "fault_log";

/// Clean, reduce, integrate, transform, resample, then keep the S09/S10
/// window. Scenario 1 skips every knowledge-based step and learns the raw
/// fault-log pulse.
inline std::pair<CuratedDataset, PreprocessReport> build_dataset(const TimeSeriesFrame& input, Scenario scenario,
                                                                 const KnowledgeBase& kb,
                                                                 const PreprocessConfig& cfg = {}) {
  cfg.validate();
  PreprocessReport rep;
  rep.rows_in = input.size();
  const bool s2 = scenario == Scenario::S2;
  const KnowledgeBase* kbp = s2 ? &kb : nullptr;
  if (input.empty() || !input.find_role(ColumnRole::Sequence) || !input.find_role(ColumnRole::Cycle))
    throw Error(ErrorKind::EmptyInput, "no telemetry rows with sequence and cycle logs");
  if (s2 && !input.has(kFaultLogColumn)) log::debug("no fault log column; scenario 2 does not need it");
  if (!s2 && !input.has(kFaultLogColumn)) throw Error(ErrorKind::Schema, "scenario 1 needs the fault_log column");

  std::vector<FaultEvent> events;
  if (s2) {
    events = prioritize(evaluate_rules(input, kb), cfg.top_n);
    rep.detected_faults = events.size();
  } else {
    rep.detected_faults = detail::count_log_pulses(input, kFaultLogColumn);
  }

  // Phase 1: cleaning.
  TimeSeriesFrame frame = drop_sparse_channels(input, cfg.max_missing_fraction, &rep.dropped_channels);
  const auto gaps = classify_gaps(frame, kbp);
  for (const auto& g : gaps.intervals) ++rep.gaps[nlohmann::json(g.cause).get<std::string>()];
  for (const auto& g : gaps.intervals) {
    if (g.disposition != Disposition::Reconstruct) continue;
    rep.imputed_cells += g.end - g.begin;
    frame = impute_single_sensor(frame, g, cfg.impute_k);
  }
  frame = drop_intervals(frame, gaps);
  rep.rows_after_gaps = frame.size();
  if (frame.empty()) throw Error(ErrorKind::EmptyInput, "no rows left after gap handling");

  OutlierParams op{cfg.iqr_k, {static_cast<std::size_t>(cfg.ics_components), cfg.ics_alpha}, cfg.use_ics};
  const auto flags = flag_outliers(frame, op, &rep.warnings);
  for (const auto& f : flags) ++rep.outlier_flags[nlohmann::json(f.detector).get<std::string>()];
  if (s2) {
    const auto verdicts = verify_outliers(flags, frame, kb, events, cfg.precursor_window);
    for (const auto& v : verdicts) ++rep.outlier_verdicts[nlohmann::json(v.verdict).get<std::string>()];
    frame = apply_verdicts(frame, verdicts);
  } else {
    std::vector<bool> keep(frame.size(), true);
    for (const auto& f : flags) keep[f.row] = false;
    rep.outlier_verdicts["Deleted"] = flags.size();
    frame = frame.filter(keep);
  }
  rep.rows_after_outliers = frame.size();

  std::vector<std::size_t> active_rows;
  for (std::size_t r = 0; r < frame.size(); ++r)
    if (frame.sequence(r).value_or(kIdle) != kIdle) active_rows.push_back(r);
  frame = frame.select(active_rows);
  if (frame.empty()) throw Error(ErrorKind::EmptyInput, "no active cycle rows in the telemetry");

  std::vector<int> cycles;
  for (std::size_t r = 0; r < frame.size(); ++r) cycles.push_back(frame.cycle(r).value_or(0));
  const auto split = split_cycles(cycles, frame.timestamps(), cfg.split);
  const auto train = detail::train_mask(frame, split);

  // Phase 2: reduction on z-scored training rows.
  const auto channels = frame.names(ColumnRole::Channel);
  if (channels.empty()) throw Error(ErrorKind::Selection, "no sensor channels");
  auto [z, zscaler] = standardize(frame, channels, train, &rep.warnings);
  std::vector<std::size_t> train_rows;
  for (std::size_t r = 0; r < z.size(); ++r)
    if (train[r]) train_rows.push_back(r);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(train_rows.size()), static_cast<Eigen::Index>(channels.size()));
  for (std::size_t j = 0; j < channels.size(); ++j) {
    const auto& cells = z.column(channels[j]).cells;
    for (std::size_t i = 0; i < train_rows.size(); ++i)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cells[train_rows[i]].value_or(0.0);
  }
  const auto corr = stats::correlation_matrix(x);
  const auto pc = stats::pca(x, cfg.variance_threshold);
  auto selection = select_features(channels, pc, corr, kbp, cfg.tau);

  // Phase 3: integration.
  std::set<std::string> unused;
  for (const auto& c : frame.columns())
    if (c.role == ColumnRole::Channel &&
        std::find(selection.selected.begin(), selection.selected.end(), c.name) == selection.selected.end())
      unused.insert(c.name);
    else if (c.role == ColumnRole::Flag && !(c.name == kFaultLogColumn && !s2))
      unused.insert(c.name);
  TimeSeriesFrame work = frame;
  if (!s2) {
    // the raw automation pulse becomes the target
    auto t = frame.column(kFaultLogColumn);
    t.name = kTarget;
    for (auto& cell : t.cells) cell = cell.value_or(0.0) != 0.0 ? 1.0 : 0.0;
    work = work.with_column(std::move(t));
  }
  work = work.without_columns(unused);
  if (!s2) work = work.without_columns({kFaultLogColumn});

  // Phase 4 (scaling) precedes the row statistics, which are defined on
  // standardized channels.
  auto [scaled, scaler] = standardize(work, selection.selected, train, &rep.warnings);
  scaled = add_statistical_features(scaled, selection.selected);
  std::optional<CategoricalEncoding> encoding;
  if (s2) {
    scaled = annotate_faults(scaled, events, kb);
    scaled = scaled.with_column(reconstruct_target(scaled));
    auto [enc_frame, enc] = encode_categorical(scaled, kCause, train, kb.all_causes(), &rep.warnings);
    scaled = std::move(enc_frame);
    encoding = std::move(enc);
  }

  ResamplePolicy policy;
  policy.interval = cfg.resample;
  auto resampled = resample_by_instance(scaled, policy);
  rep.rows_after_resample = resampled.size();
  auto window = select_balance_window(resampled);

  // Complete rows only.
  std::vector<std::size_t> complete;
  for (std::size_t r = 0; r < window.size(); ++r)
    if (std::all_of(window.columns().begin(), window.columns().end(), [&](const Column& c) { return c.cells[r].has_value(); }))
      complete.push_back(r);
  if (complete.size() != window.size())
    rep.warnings.push_back(std::to_string(window.size() - complete.size()) + " incomplete rows removed");
  window = window.select(complete);
  if (window.empty()) throw Error(ErrorKind::EmptyInput, "curated dataset is empty");

  CuratedDataset ds;
  ds.provenance = scenario;
  ds.scaler = std::move(scaler);
  ds.selection = std::move(selection);
  ds.encoding = std::move(encoding);
  ds.split = split;
  std::vector<const Column*> feats;
  auto add = [&](const std::string& name) {
    feats.push_back(&window.column(name));
    ds.feature_names.push_back(name);
  };
  for (const auto& c : ds.selection.selected) add(c);
  for (const char* s : {kStatMean, kStatMedian, kStatVariance}) add(s);
  add(window.find_role(ColumnRole::Sequence)->name);
  if (s2) {
    add(kSeverity);
    add(kConsequence);
    for (const auto& c : window.columns())
      if (c.name.rfind(std::string(kCause) + "=", 0) == 0) add(c.name);
    add(kPriority);
  }
  const auto n = window.size();
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feats.size()));
  for (std::size_t j = 0; j < feats.size(); ++j)
    for (std::size_t r = 0; r < n; ++r)
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = *feats[j]->cells[r];
  const auto& target = window.column(kTarget).cells;
  for (std::size_t r = 0; r < n; ++r) {
    ds.target.push_back(*target[r] != 0.0 ? 1 : 0);
    ds.timestamps.push_back(window.timestamps()[r]);
    ds.cycle.push_back(*window.cycle(r));
    ds.sequence.push_back(*window.sequence(r));
  }
  rep.rows_final = n;
  rep.target_positive_rows = static_cast<std::size_t>(std::count(ds.target.begin(), ds.target.end(), 1));
  return {std::move(ds), std::move(rep)};
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json selection_to_json(const FeatureSelection& s) {
  nlohmann::json loads = nlohmann::json::object();
  for (const auto& [k, v] : s.max_loading) loads[k] = v;
  return {{"candidates", s.candidates}, {"selected", s.selected},     {"explained_variance", s.explained},
          {"retained_components", s.retained}, {"max_abs_loading", loads}, {"notes", s.notes}};
}

inline nlohmann::json report_to_json(const PreprocessReport& r) {
  return {{"rows_in", r.rows_in},
          {"rows_after_gaps", r.rows_after_gaps},
          {"rows_after_outliers", r.rows_after_outliers},
          {"rows_after_resample", r.rows_after_resample},
          {"rows_final", r.rows_final},
          {"dropped_channels", r.dropped_channels},
          {"gaps", r.gaps},
          {"imputed_cells", r.imputed_cells},
          {"outlier_flags", r.outlier_flags},
          {"outlier_verdicts", r.outlier_verdicts},
          {"detected_faults", r.detected_faults},
          {"target_positive_rows", r.target_positive_rows},
          {"warnings", r.warnings}};
}

/// Features CSV: timestamp, cycle, the feature columns, then the target.
inline void write_dataset_csv(std::ostream& out, const CuratedDataset& ds) {
  out << "timestamp,cycle";
  for (const auto& n : ds.feature_names) out << ',' << n;
  out << ',' << ds.target_name << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    out << format_iso8601(ds.timestamps[r]) << ',' << ds.cycle[r];
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j)
      out << ',' << format_number(ds.features(static_cast<Eigen::Index>(r), j));
    out << ',' << ds.target[r] << '\n';
  }
}

inline nlohmann::json dataset_sidecar(const CuratedDataset& ds) {
  nlohmann::json scaler = nlohmann::json::array();
  for (std::size_t j = 0; j < ds.scaler.columns.size(); ++j)
    scaler.push_back({{"column", ds.scaler.columns[j]}, {"mean", ds.scaler.mean[j]}, {"sd", ds.scaler.sd[j]}});
  nlohmann::json j = {{"provenance", to_string(ds.provenance)},
                      {"features", ds.feature_names},
                      {"target", ds.target_name},
                      {"rows", ds.rows()},
                      {"scaler", scaler},
                      {"selection", selection_to_json(ds.selection)}};
  if (ds.encoding) j["categorical"] = {{"column", ds.encoding->column}, {"levels", ds.encoding->labels}};
  return j;
}

}  // namespace pdm::preprocess
