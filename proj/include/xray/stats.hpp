#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "xray/error.hpp"

namespace xray {

/// Quantile by linear interpolation between order statistics at (n-1)q
/// (Hyndman-Fan type 7).
inline double quantile_linear(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorCode::EmptyScores, "quantile of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Quantile by linear interpolation of the empirical CDF: the 1-based order
/// statistic at n*q (Hyndman-Fan type 4), clamped to the sample range.
/// For {1..100} the 0.95 quantile is 95.
inline double quantile_ecdf(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorCode::EmptyScores, "quantile of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size());
  if (h <= 1.0) return v.front();
  if (h >= static_cast<double>(v.size())) return v.back();
  const auto k = static_cast<std::size_t>(std::floor(h));  // 1-based
  return v[k - 1] + (h - static_cast<double>(k)) * (v[k] - v[k - 1]);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace xray
