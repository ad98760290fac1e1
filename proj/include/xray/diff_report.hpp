#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <json.hpp>

#include "xray/error.hpp"

namespace xray {

/// Element-wise comparison of two prediction sets ([sample][class]).
struct DiffReport {
  static constexpr double histogram_max = 0.25;
  static constexpr std::size_t histogram_buckets = 25;

  std::vector<std::vector<double>> per_class_differences;  // [class][sample]
  double mean_abs_diff = 0.0;
  double max_abs_diff = 0.0;
  std::vector<std::size_t> histogram = std::vector<std::size_t>(histogram_buckets, 0);

  std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& c : per_class_differences) n += c.size();
    return n;
  }

  bool within(double tolerance) const { return max_abs_diff <= tolerance; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mean_abs_diff"] = mean_abs_diff;
    j["max_abs_diff"] = max_abs_diff;
    j["histogram"] = {{"min", 0.0}, {"max", histogram_max}, {"counts", histogram}};
    j["per_class_differences"] = per_class_differences;
    return j;
  }
};

inline DiffReport compare_pipelines(const std::vector<std::vector<double>>& preds_a,
                                    const std::vector<std::vector<double>>& preds_b) {
  if (preds_a.size() != preds_b.size())
    fail(ErrorCode::ShapeMismatch, "prediction sets differ in sample count");
  DiffReport report;
  const std::size_t classes = preds_a.empty() ? 0 : preds_a.front().size();
  report.per_class_differences.assign(classes, std::vector<double>(preds_a.size()));
  double sum = 0.0;
  for (std::size_t s = 0; s < preds_a.size(); ++s) {
    if (preds_a[s].size() != classes || preds_b[s].size() != classes)
      fail(ErrorCode::ShapeMismatch, "prediction sets differ in class count");
    for (std::size_t c = 0; c < classes; ++c) {
      const double d = std::abs(preds_a[s][c] - preds_b[s][c]);
      report.per_class_differences[c][s] = d;
      sum += d;
      report.max_abs_diff = std::max(report.max_abs_diff, d);
      const auto bucket = static_cast<std::size_t>(d / DiffReport::histogram_max * DiffReport::histogram_buckets);
      ++report.histogram[std::min(bucket, DiffReport::histogram_buckets - 1)];
    }
  }
  const std::size_t n = preds_a.size() * classes;
  report.mean_abs_diff = n ? std::min(sum / static_cast<double>(n), report.max_abs_diff) : 0.0;
  return report;
}

}  // namespace xray
