#pragma once
// Small builders shared by the unit tests.

#include <string>
#include <vector>

#include "pdm/knowledge_base.hpp"
#include "pdm/timeseries.hpp"

namespace pdm::test {

inline const std::string kSourceDir = PDM_SOURCE_DIR;

inline const KnowledgeBase& shipped_kb() {
  static const KnowledgeBase kb = load_kb(kSourceDir + "/docs/knowledge_base.json");
  return kb;
}

inline TimePoint t0() { return parse_iso8601("2021-01-04T06:00:00Z"); }

/// `n` one-minute rows starting at t0().
inline std::vector<TimePoint> minutes(std::size_t n, TimePoint start = t0()) {
  std::vector<TimePoint> ts;
  for (std::size_t i = 0; i < n; ++i) ts.push_back(start + Minutes{static_cast<long>(i)});
  return ts;
}

inline Column channel(std::string name, std::vector<Cell> cells) {
  return {std::move(name), ColumnRole::Channel, "", std::move(cells)};
}

inline Column constant(std::string name, ColumnRole role, double v, std::size_t n) {
  return {std::move(name), role, "", std::vector<Cell>(n, v)};
}

}  // namespace pdm::test
