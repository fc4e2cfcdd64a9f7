#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pdm/core/error.hpp"
#include "pdm/core/time.hpp"

namespace pdm {

using Cell = std::optional<double>;

/// Sequence ids are stored as integers: 0 is IDLE, 1..13 are S01..S13.
using SequenceId = int;
inline constexpr SequenceId kIdle = 0;
inline constexpr SequenceId kFirstSequence = 1;
inline constexpr SequenceId kLastSequence = 13;

inline std::string sequence_label(SequenceId id) {
  if (id == kIdle) return "IDLE";
  char buf[8];
  std::snprintf(buf, sizeof buf, "S%02d", id);
  return buf;
}

inline std::optional<SequenceId> parse_sequence(std::string_view text) {
  if (text == "IDLE") return kIdle;
  if (text.size() == 3 && text[0] == 'S') {
    int n = 0;
    auto [p, ec] = std::from_chars(text.data() + 1, text.data() + 3, n);
    if (ec == std::errc{} && p == text.data() + 3 && n >= kFirstSequence && n <= kLastSequence)
      return n;
  }
  return std::nullopt;
}

inline bool is_valid_sequence(double v) {
  return v == std::floor(v) && v >= kIdle && v <= kLastSequence;
}

enum class ColumnRole { Channel, Sequence, Cycle, Flag, Categorical };

inline std::string_view to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::Channel: return "channel";
    case ColumnRole::Sequence: return "sequence";
    case ColumnRole::Cycle: return "cycle";
    case ColumnRole::Flag: return "flag";
    case ColumnRole::Categorical: return "categorical";
  }
  return "channel";
}

inline ColumnRole parse_role(std::string_view text) {
  if (text == "channel") return ColumnRole::Channel;
  if (text == "sequence") return ColumnRole::Sequence;
  if (text == "cycle") return ColumnRole::Cycle;
  if (text == "flag") return ColumnRole::Flag;
  if (text == "categorical") return ColumnRole::Categorical;
  throw Error(ErrorKind::Schema, "unknown column role '" + std::string(text) + "'");
}

struct Column {
  std::string name;
  ColumnRole role = ColumnRole::Channel;
  std::string unit;  // metadata only
  std::vector<Cell> cells;

  bool operator==(const Column&) const = default;
};

/// Immutable columnar table keyed by strictly increasing timestamps. Sensor
/// channels and discrete logs share one cell type; missing cells are
/// std::nullopt.
class TimeSeriesFrame {
 public:
  TimeSeriesFrame() = default;

  TimeSeriesFrame(std::vector<TimePoint> timestamps, std::vector<Column> columns)
      : timestamps_(std::move(timestamps)), columns_(std::move(columns)) {
    validate();
  }

  std::size_t size() const noexcept { return timestamps_.size(); }
  bool empty() const noexcept { return timestamps_.empty(); }

  const std::vector<TimePoint>& timestamps() const noexcept { return timestamps_; }
  const std::vector<Column>& columns() const noexcept { return columns_; }

  const Column* find(std::string_view name) const {
    for (const auto& c : columns_)
      if (c.name == name) return &c;
    return nullptr;
  }

  bool has(std::string_view name) const { return find(name) != nullptr; }

  const Column& column(std::string_view name) const {
    if (const auto* c = find(name)) return *c;
    throw Error(ErrorKind::Schema, "no column '" + std::string(name) + "'");
  }

  const Column* find_role(ColumnRole role) const {
    for (const auto& c : columns_)
      if (c.role == role) return &c;
    return nullptr;
  }

  std::vector<std::string> names(ColumnRole role) const {
    std::vector<std::string> out;
    for (const auto& c : columns_)
      if (c.role == role) out.push_back(c.name);
    return out;
  }

  Cell at(std::string_view name, std::size_t row) const { return column(name).cells.at(row); }

  /// Sequence id at `row`, or nullopt when the frame has no sequence log or
  /// the cell is missing.
  std::optional<SequenceId> sequence(std::size_t row) const {
    const auto* c = find_role(ColumnRole::Sequence);
    if (!c || !c->cells[row]) return std::nullopt;
    return static_cast<SequenceId>(*c->cells[row]);
  }

  std::optional<int> cycle(std::size_t row) const {
    const auto* c = find_role(ColumnRole::Cycle);
    if (!c || !c->cells[row]) return std::nullopt;
    return static_cast<int>(*c->cells[row]);
  }

  TimeSeriesFrame select(std::span<const std::size_t> rows) const {
    std::vector<TimePoint> ts;
    ts.reserve(rows.size());
    for (auto r : rows) ts.push_back(timestamps_.at(r));
    std::vector<Column> cols;
    cols.reserve(columns_.size());
    for (const auto& c : columns_) {
      Column out{c.name, c.role, c.unit, {}};
      out.cells.reserve(rows.size());
      for (auto r : rows) out.cells.push_back(c.cells[r]);
      cols.push_back(std::move(out));
    }
    return TimeSeriesFrame(std::move(ts), std::move(cols));
  }

  TimeSeriesFrame filter(const std::vector<bool>& keep) const {
    if (keep.size() != size()) throw Error(ErrorKind::Dimension, "row mask length mismatch");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) rows.push_back(i);
    return select(rows);
  }

  /// Returns a copy with `col` appended, or replacing a column of the same name.
  TimeSeriesFrame with_column(Column col) const {
    auto cols = columns_;
    auto it = std::find_if(cols.begin(), cols.end(),
                           [&](const Column& c) { return c.name == col.name; });
    if (it != cols.end())
      *it = std::move(col);
    else
      cols.push_back(std::move(col));
    return TimeSeriesFrame(timestamps_, std::move(cols));
  }

  TimeSeriesFrame without_columns(const std::set<std::string>& drop) const {
    std::vector<Column> cols;
    for (const auto& c : columns_)
      if (!drop.count(c.name)) cols.push_back(c);
    return TimeSeriesFrame(timestamps_, std::move(cols));
  }

  bool operator==(const TimeSeriesFrame&) const = default;

 private:
  void validate() const {
    for (const auto& c : columns_)
      if (c.cells.size() != timestamps_.size())
        throw Error(ErrorKind::Schema, "column '" + c.name + "' has " +
                                           std::to_string(c.cells.size()) + " cells, expected " +
                                           std::to_string(timestamps_.size()));
    for (std::size_t i = 1; i < timestamps_.size(); ++i)
      if (timestamps_[i] <= timestamps_[i - 1])
        throw Error(ErrorKind::Order, "timestamps not strictly increasing at row " +
                                          std::to_string(i) + " (" +
                                          format_iso8601(timestamps_[i]) + ")");
    for (const auto& c : columns_) {
      if (c.role == ColumnRole::Sequence) {
        for (const auto& v : c.cells)
          if (v && !is_valid_sequence(*v))
            throw Error(ErrorKind::Schema, "invalid sequence id in '" + c.name + "'");
      } else if (c.role == ColumnRole::Cycle) {
        std::optional<double> prev;
        for (const auto& v : c.cells) {
          if (!v) continue;
          if (*v < 0 || (prev && *v < *prev))
            throw Error(ErrorKind::Order, "cycle number decreases in '" + c.name + "'");
          prev = v;
        }
      }
    }
  }

  std::vector<TimePoint> timestamps_;
  std::vector<Column> columns_;
};

struct ColumnSpec {
  std::string name;
  ColumnRole role = ColumnRole::Channel;
  std::string unit;
};

struct Schema {
  std::string timestamp_column = "timestamp";
  std::vector<ColumnSpec> columns;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      auto field = line.substr(start, i - start);
      while (!field.empty() && (field.front() == ' ' || field.front() == '"')) field.remove_prefix(1);
      while (!field.empty() && (field.back() == ' ' || field.back() == '"' || field.back() == '\r'))
        field.remove_suffix(1);
      out.push_back(field);
      start = i + 1;
    }
  }
  return out;
}

inline Cell parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Shortest round-trip decimal representation; keeps CSV output byte-stable.
inline std::string format_number(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline TimeSeriesFrame parse_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Schema, "empty CSV input");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos.emplace(std::string(header[i]), i);

  auto index_of = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw Error(ErrorKind::Schema, "missing column '" + name + "'");
    return it->second;
  };
  const std::size_t ts_index = index_of(schema.timestamp_column);
  std::vector<std::size_t> col_index;
  std::vector<Column> cols;
  for (const auto& spec : schema.columns) {
    col_index.push_back(index_of(spec.name));
    cols.push_back(Column{spec.name, spec.role, spec.unit, {}});
  }

  std::vector<TimePoint> ts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(ErrorKind::Schema, "line " + std::to_string(lineno) + " has " +
                                         std::to_string(fields.size()) + " fields, expected " +
                                         std::to_string(header.size()));
    ts.push_back(parse_iso8601(fields[ts_index]));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto field = fields[col_index[c]];
      if (cols[c].role == ColumnRole::Sequence) {
        if (field.empty()) {
          cols[c].cells.push_back(std::nullopt);
        } else if (auto id = parse_sequence(field)) {
          cols[c].cells.push_back(static_cast<double>(*id));
        } else {
          throw Error(ErrorKind::Schema, "line " + std::to_string(lineno) +
                                             ": unknown sequence id '" + std::string(field) + "'");
        }
      } else {
        cols[c].cells.push_back(detail::parse_number(field));
      }
    }
  }
  return TimeSeriesFrame(std::move(ts), std::move(cols));
}

inline TimeSeriesFrame load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return parse_csv(in, schema);
}

inline void write_csv(std::ostream& out, const TimeSeriesFrame& frame,
                      std::string_view timestamp_column = "timestamp") {
  out << timestamp_column;
  for (const auto& c : frame.columns()) out << ',' << c.name;
  out << '\n';
  for (std::size_t r = 0; r < frame.size(); ++r) {
    out << format_iso8601(frame.timestamps()[r]);
    for (const auto& c : frame.columns()) {
      out << ',';
      const auto& v = c.cells[r];
      if (!v) continue;
      if (c.role == ColumnRole::Sequence)
        out << sequence_label(static_cast<SequenceId>(*v));
      else
        out << format_number(*v);
    }
    out << '\n';
  }
}

inline Schema schema_of(const TimeSeriesFrame& frame) {
  Schema s;
  for (const auto& c : frame.columns()) s.columns.push_back({c.name, c.role, c.unit});
  return s;
}

// ---------------------------------------------------------------------------
// Resampling

enum class NumericAgg { Mean, Last };
enum class FlagAgg { AnyOne, Last };
enum class CategoricalAgg { Last, Mode };

struct ResamplePolicy {
  Minutes interval{15};
  Minutes native_step{1};
  NumericAgg numeric = NumericAgg::Mean;
  FlagAgg flag = FlagAgg::AnyOne;
  CategoricalAgg categorical = CategoricalAgg::Last;

  void validate() const {
    if (native_step.count() <= 0 || interval.count() <= 0 ||
        interval.count() % native_step.count() != 0)
      throw Error(ErrorKind::Config, "resample interval must be a positive multiple of the native step");
  }
};

namespace detail {

inline Cell last_observed(std::span<const Cell> cells) {
  for (auto it = cells.rbegin(); it != cells.rend(); ++it)
    if (*it) return *it;
  return std::nullopt;
}

inline Cell aggregate(ColumnRole role, std::span<const Cell> cells, const ResamplePolicy& p) {
  switch (role) {
    case ColumnRole::Channel: {
      if (p.numeric == NumericAgg::Last) return last_observed(cells);
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& c : cells)
        if (c) {
          sum += *c;
          ++n;
        }
      if (n == 0) return std::nullopt;
      return sum / static_cast<double>(n);
    }
    case ColumnRole::Flag: {
      if (p.flag == FlagAgg::Last) return last_observed(cells);
      bool any_seen = false;
      for (const auto& c : cells) {
        if (!c) continue;
        any_seen = true;
        if (*c != 0.0) return 1.0;
      }
      return any_seen ? Cell{0.0} : std::nullopt;
    }
    case ColumnRole::Sequence:
      // The sequence log always keeps the bucket's last state.
      return last_observed(cells);
    case ColumnRole::Cycle:
      return last_observed(cells);
    case ColumnRole::Categorical: {
      if (p.categorical == CategoricalAgg::Last) return last_observed(cells);
      std::map<double, std::size_t> counts;
      for (const auto& c : cells)
        if (c) ++counts[*c];
      if (counts.empty()) return std::nullopt;
      auto best = counts.begin();
      for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
      return best->first;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Buckets rows into `policy.interval`-wide windows anchored at the first
/// timestamp. Buckets that contain no rows produce no output row.
inline TimeSeriesFrame resample(const TimeSeriesFrame& frame, const ResamplePolicy& policy) {
  policy.validate();
  if (frame.empty()) throw Error(ErrorKind::EmptyInput, "resample of an empty frame");
  const auto t0 = frame.timestamps().front();
  const auto width = std::chrono::duration_cast<Seconds>(policy.interval);

  std::vector<std::pair<std::size_t, std::size_t>> buckets;  // [begin, end) row ranges
  std::vector<TimePoint> out_ts;
  std::size_t begin = 0;
  while (begin < frame.size()) {
    const auto k = (frame.timestamps()[begin] - t0) / width;
    const auto bucket_end = t0 + width * (k + 1);
    std::size_t end = begin;
    while (end < frame.size() && frame.timestamps()[end] < bucket_end) ++end;
    buckets.emplace_back(begin, end);
    out_ts.push_back(t0 + width * k);
    begin = end;
  }

  std::vector<Column> cols;
  for (const auto& c : frame.columns()) {
    Column out{c.name, c.role, c.unit, {}};
    out.cells.reserve(buckets.size());
    const std::span<const Cell> all(c.cells);
    for (auto [b, e] : buckets) out.cells.push_back(detail::aggregate(c.role, all.subspan(b, e - b), policy));
    cols.push_back(std::move(out));
  }
  return TimeSeriesFrame(std::move(out_ts), std::move(cols));
}

inline TimeSeriesFrame slice_by_sequence(const TimeSeriesFrame& frame,
                                         const std::set<SequenceId>& keep) {
  std::vector<bool> mask(frame.size(), false);
  for (std::size_t r = 0; r < frame.size(); ++r) {
    const auto s = frame.sequence(r);
    mask[r] = s && keep.count(*s) > 0;
  }
  return frame.filter(mask);
}

inline std::set<SequenceId> all_sequences() {
  std::set<SequenceId> s;
  for (SequenceId id = kIdle; id <= kLastSequence; ++id) s.insert(id);
  return s;
}

/// Position of each row inside its sequence instance: an instance is a
/// maximal run of rows sharing (cycle, sequence id). `elapsed` is measured
/// from the instance's first timestamp.
struct SequencePosition {
  std::vector<std::size_t> instance;  // instance index per row
  std::vector<Minutes> elapsed;
  std::vector<std::size_t> instance_start;  // first row of each instance
};

inline SequencePosition sequence_positions(const TimeSeriesFrame& frame) {
  SequencePosition pos;
  pos.instance.resize(frame.size());
  pos.elapsed.resize(frame.size());
  std::optional<SequenceId> prev_seq;
  std::optional<int> prev_cycle;
  for (std::size_t r = 0; r < frame.size(); ++r) {
    const auto s = frame.sequence(r);
    const auto c = frame.cycle(r);
    if (r == 0 || s != prev_seq || c != prev_cycle) pos.instance_start.push_back(r);
    const std::size_t inst = pos.instance_start.size() - 1;
    pos.instance[r] = inst;
    pos.elapsed[r] = std::chrono::duration_cast<Minutes>(frame.timestamps()[r] -
                                                         frame.timestamps()[pos.instance_start[inst]]);
    prev_seq = s;
    prev_cycle = c;
  }
  return pos;
}

}  // namespace pdm
