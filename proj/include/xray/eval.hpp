#pragma once

// ROC analysis, Youden operating points, piecewise-linear probability
// calibration, bootstrap AUC, OOD separation and retention curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xray/error.hpp"
#include "xray/ood_metric.hpp"
#include "xray/stats.hpp"

namespace xray {

struct RocPoint {
  double threshold;  // predicted positive iff score > threshold
  double fpr;
  double tpr;
  std::size_t false_positives;
  std::size_t true_positives;
};

/// Points ordered by decreasing threshold, from (0,0) at +inf to (1,1) at -inf.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["positives"] = positives;
    j["negatives"] = negatives;
    auto& cols = j["columns"];
    for (const auto& p : points) {
      cols["threshold"].push_back(std::isfinite(p.threshold) ? nlohmann::json(p.threshold)
                                                             : nlohmann::json(p.threshold > 0 ? "inf" : "-inf"));
      cols["fpr"].push_back(p.fpr);
      cols["tpr"].push_back(p.tpr);
    }
    return j;
  }
};

struct OperatingPoint {
  double opt = 0.5;           // clamped raw-score threshold
  double threshold = 0.5;     // unclamped sweep threshold
  double j_statistic = 0.0;   // tpr - fpr
};

struct AucEstimate {
  double mean = 0.0;
  double std = 0.0;
  int n_splits = 0;
  double split_fraction = 0.0;

  nlohmann::json to_json() const {
    return {{"mean", mean}, {"std", std}, {"n_splits", n_splits}, {"split_fraction", split_fraction}};
  }
};

struct RetentionPoint {
  double cutoff;
  double retained_fraction;
  double auc_on_retained;
};

inline constexpr double operating_point_clamp = 1e-6;

namespace detail {

inline void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  if (scores.empty()) fail(ErrorCode::EmptyScores, "no scores");
  for (int l : labels)
    if (l != 0 && l != 1) fail(ErrorCode::InvalidConfig, "labels must be 0 or 1");
}

inline bool has_both_classes(std::span<const int> labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  return pos > 0 && pos < static_cast<long>(labels.size());
}

}  // namespace detail

inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_labels(scores, labels);
  RocCurve curve;
  curve.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  curve.negatives = labels.size() - curve.positives;
  if (curve.positives == 0 || curve.negatives == 0)
    fail(ErrorCode::DegenerateLabels, "ROC needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(curve.positives), N = static_cast<double>(curve.negatives);
  constexpr double inf = std::numeric_limits<double>::infinity();
  curve.points.push_back({inf, 0.0, 0.0, 0, 0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp)++;
      ++i;
    }
    const double threshold = i < order.size() ? 0.5 * (s + scores[order[i]]) : -inf;
    curve.points.push_back({threshold, fp / N, tp / P, fp, tp});
  }
  return curve;
}

/// Trapezoidal area, accumulated on integer counts so it equals the
/// pairwise concordance probability (ties count one half).
inline double auc(const RocCurve& curve) {
  double twice_area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    twice_area += static_cast<double>(b.false_positives - a.false_positives) *
                  static_cast<double>(b.true_positives + a.true_positives);
  }
  return twice_area / (2.0 * static_cast<double>(curve.positives) * static_cast<double>(curve.negatives));
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
  return auc(roc_curve(scores, labels));
}

/// Maximizes tpr - fpr over the swept thresholds; ties go to the lower fpr,
/// then to the larger threshold. The threshold is clamped into (0,1).
inline OperatingPoint optimal_operating_point(const RocCurve& curve) {
  const auto P = static_cast<std::int64_t>(curve.positives), N = static_cast<std::int64_t>(curve.negatives);
  const RocPoint* best = nullptr;
  std::int64_t best_j = 0;  // (tpr - fpr) * P * N
  for (const auto& p : curve.points) {
    const std::int64_t j = static_cast<std::int64_t>(p.true_positives) * N - static_cast<std::int64_t>(p.false_positives) * P;
    const bool better = !best || j > best_j ||
                        (j == best_j && (p.false_positives < best->false_positives ||
                                         (p.false_positives == best->false_positives && p.threshold > best->threshold)));
    if (better) {
      best = &p;
      best_j = j;
    }
  }
  OperatingPoint op;
  op.threshold = best->threshold;
  op.opt = std::clamp(best->threshold, operating_point_clamp, 1.0 - operating_point_clamp);
  op.j_statistic = best->tpr - best->fpr;
  return op;
}

/// Piecewise-linear map sending [0,opt] onto [0,0.5] and [opt,1] onto
/// [0.5,1]. opt in {0,1} is clamped; anything outside [0,1] is rejected.
inline double calibrate(double x, double opt) {
  if (!(opt >= 0.0 && opt <= 1.0)) fail(ErrorCode::InvalidOperatingPoint, "operating point outside (0,1)");
  opt = std::clamp(opt, operating_point_clamp, 1.0 - operating_point_clamp);
  x = std::clamp(x, 0.0, 1.0);
  if (x <= opt) return x / (2.0 * opt);
  return 1.0 - (1.0 - x) / (2.0 * (1.0 - opt));
}

struct BootstrapOptions {
  int n_splits = 10;
  double split_fraction = 0.5;
  std::uint64_t seed = 0;
  bool stratify = false;
  int max_retries = 100;
};

/// Mean and spread of the AUC over random subsets drawn without
/// replacement, each split_fraction of the full set.
inline AucEstimate bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                                 const BootstrapOptions& opts = {}) {
  detail::check_labels(scores, labels);
  if (!detail::has_both_classes(labels)) fail(ErrorCode::DegenerateLabels, "bootstrap needs both classes");
  if (opts.n_splits < 1 || !(opts.split_fraction > 0.0 && opts.split_fraction <= 1.0))
    fail(ErrorCode::InvalidConfig, "bad bootstrap options");

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> pos_idx, neg_idx, all_idx(scores.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos_idx : neg_idx).push_back(i);

  auto take = [&](std::vector<std::size_t>& pool, std::vector<std::size_t>& out) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(pool.size() * opts.split_fraction)));
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(std::min(k, pool.size())));
  };

  std::vector<double> aucs;
  std::vector<double> s;
  std::vector<int> l;
  for (int split = 0; split < opts.n_splits; ++split) {
    bool ok = false;
    for (int attempt = 0; attempt <= opts.max_retries && !ok; ++attempt) {
      std::vector<std::size_t> chosen;
      if (opts.stratify) {
        take(pos_idx, chosen);
        take(neg_idx, chosen);
      } else {
        take(all_idx, chosen);
      }
      s.clear();
      l.clear();
      for (std::size_t i : chosen) {
        s.push_back(scores[i]);
        l.push_back(labels[i]);
      }
      ok = detail::has_both_classes(l);
    }
    if (!ok) fail(ErrorCode::DegenerateLabels, "could not draw a split containing both classes");
    aucs.push_back(auc(s, l));
  }
  AucEstimate est;
  est.mean = mean(aucs);
  est.std = stddev(aucs);
  // identical splits must report exactly zero spread
  if (std::all_of(aucs.begin(), aucs.end(), [&](double a) { return a == aucs.front(); })) {
    est.mean = aucs.front();
    est.std = 0.0;
  }
  est.n_splits = opts.n_splits;
  est.split_fraction = opts.split_fraction;
  return est;
}

/// AUC of in- vs out-of-distribution, oriented so 1.0 is a perfect gate.
inline double separation_auc(std::span<const double> in_scores, std::span<const double> out_scores, OodMetricKind kind) {
  if (in_scores.empty() || out_scores.empty()) fail(ErrorCode::EmptyScores, "separation_auc needs both sets");
  const double sign = higher_is_in_distribution(kind) ? 1.0 : -1.0;
  std::vector<double> s;
  std::vector<int> l;
  for (double v : in_scores) {
    s.push_back(sign * v);
    l.push_back(1);
  }
  for (double v : out_scores) {
    s.push_back(sign * v);
    l.push_back(0);
  }
  return auc(s, l);
}

/// Mean AUC over the classes whose labels contain both values.
inline std::optional<double> mean_class_auc(const std::vector<std::vector<double>>& scores,
                                            const std::vector<std::vector<int>>& labels) {
  if (scores.empty()) return std::nullopt;
  const std::size_t classes = scores.front().size();
  double total = 0.0;
  int defined = 0;
  std::vector<double> s(scores.size());
  std::vector<int> l(scores.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][c];
      l[i] = labels[i][c];
    }
    if (!detail::has_both_classes(l)) continue;
    total += auc(s, l);
    ++defined;
  }
  if (!defined) return std::nullopt;
  return total / defined;
}

/// Task AUC on the subset admitted at progressively stricter OOD cutoffs.
/// Cutoffs are the OOD-score quantiles at levels 1, 1 - 1/n, ... (mirrored
/// for higher-is-in metrics); cutoffs whose subset has an undefined AUC are
/// dropped.
inline std::vector<RetentionPoint> retention_curve(std::span<const double> ood_scores,
                                                   const std::vector<std::vector<double>>& task_scores,
                                                   const std::vector<std::vector<int>>& task_labels, int n_cutoffs,
                                                   OodMetricKind kind = OodMetricKind::recon_l2) {
  if (ood_scores.size() != task_scores.size() || task_scores.size() != task_labels.size())
    fail(ErrorCode::ShapeMismatch, "retention inputs must be aligned");
  if (n_cutoffs < 1) fail(ErrorCode::InvalidConfig, "n_cutoffs must be >= 1");
  const bool higher_in = higher_is_in_distribution(kind);
  std::vector<RetentionPoint> points;
  for (int k = 0; k < n_cutoffs; ++k) {
    const double level = static_cast<double>(k) / n_cutoffs;
    const double cutoff = quantile_linear(ood_scores, higher_in ? level : 1.0 - level);
    std::vector<std::vector<double>> s;
    std::vector<std::vector<int>> l;
    for (std::size_t i = 0; i < ood_scores.size(); ++i) {
      const bool keep = higher_in ? ood_scores[i] >= cutoff : ood_scores[i] <= cutoff;
      if (!keep) continue;
      s.push_back(task_scores[i]);
      l.push_back(task_labels[i]);
    }
    const auto a = mean_class_auc(s, l);
    if (!a) continue;
    points.push_back({cutoff, static_cast<double>(s.size()) / static_cast<double>(ood_scores.size()), *a});
  }
  return points;
}

/// Single-task convenience form.
inline std::vector<RetentionPoint> retention_curve(std::span<const double> ood_scores, std::span<const double> task_scores,
                                                   std::span<const int> task_labels, int n_cutoffs,
                                                   OodMetricKind kind = OodMetricKind::recon_l2) {
  detail::check_labels(task_scores, task_labels);
  std::vector<std::vector<double>> s;
  std::vector<std::vector<int>> l;
  for (std::size_t i = 0; i < task_scores.size(); ++i) {
    s.push_back({task_scores[i]});
    l.push_back({task_labels[i]});
  }
  return retention_curve(ood_scores, s, l, n_cutoffs, kind);
}

inline nlohmann::json to_json(const std::vector<RetentionPoint>& pts) {
  nlohmann::json j;
  j["columns"]["cutoff"] = nlohmann::json::array();
  for (const auto& p : pts) {
    j["columns"]["cutoff"].push_back(p.cutoff);
    j["columns"]["retained_fraction"].push_back(p.retained_fraction);
    j["columns"]["auc"].push_back(p.auc_on_retained);
  }
  return j;
}

}  // namespace xray
