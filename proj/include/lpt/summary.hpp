#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lpt/error.hpp"

namespace lpt {

/// Median with an empirical 90% interval.
struct Summary {
  double median = 0.0;
  double lo90 = 0.0;
  double hi90 = 0.0;
};

/// Linearly interpolated empirical quantile (R type 7).
inline double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline Summary summarize(const std::vector<double>& values) {
  return {quantile(values, 0.5), quantile(values, 0.05), quantile(values, 0.95)};
}

}  // namespace lpt
