#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "pdm/core/error.hpp"
#include "pdm/core/time.hpp"

namespace pdm {

enum class Split { Train, Validation, Test };

struct SplitSpec {
  double train = 0.6;
  double validation = 0.2;

  void validate() const {
    if (!(train > 0.0 && validation >= 0.0 && train + validation < 1.0))
      throw Error(ErrorKind::Config, "split fractions must be positive and leave room for a test split");
  }
};

/// Whole-cycle chronological split. Cycles are ordered by their first
/// timestamp; the first floor(train*C) go to training, the next
/// floor(validation*C) to validation and the remainder to test.
inline std::map<int, Split> split_cycles(std::span<const int> cycle, std::span<const TimePoint> timestamps,
                                         const SplitSpec& spec = {}) {
  spec.validate();
  if (cycle.size() != timestamps.size()) throw Error(ErrorKind::Dimension, "cycle and timestamp lengths differ");
  std::map<int, TimePoint> first;
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    auto [it, fresh] = first.emplace(cycle[i], timestamps[i]);
    if (!fresh && timestamps[i] < it->second) it->second = timestamps[i];
  }
  if (first.size() < 5) throw Error(ErrorKind::TooFewValues, "chronological split needs at least 5 cycles");
  std::vector<std::pair<TimePoint, int>> order;
  for (const auto& [c, t] : first) order.emplace_back(t, c);
  std::sort(order.begin(), order.end());
  const auto n = order.size();
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(spec.validation * static_cast<double>(n) + 1e-9));
  std::map<int, Split> out;
  for (std::size_t i = 0; i < n; ++i)
    out[order[i].second] = i < n_train ? Split::Train : i < n_train + n_val ? Split::Validation : Split::Test;
  return out;
}

}  // namespace pdm
