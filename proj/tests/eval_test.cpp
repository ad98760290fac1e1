#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xray/eval.hpp"
#include "xray/robustness.hpp"
#include "xray/stats.hpp"

using namespace xray;
using testutil::code_of;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Scores drawn from a few distinct levels so that ties are common.
Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(2, 40), level(0, 7), bit(0, 1);
  const int n = n_dist(rng);
  Instance in;
  for (int i = 0; i < n; ++i) {
    in.scores.push_back(level(rng) / 7.0);
    in.labels.push_back(bit(rng));
  }
  in.labels[0] = 1;
  in.labels[1] = 0;
  return in;
}

}  // namespace

TEST(Auc, HandExample) {
  const std::vector<double> s = {0.9, 0.4, 0.5, 0.1, 0.2, 0.3};
  const std::vector<int> l = {1, 1, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(auc(s, l), 0.875);
}

TEST(Auc, PerfectInvertedAndTied) {
  const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
  EXPECT_EQ(auc(s, std::vector<int>{1, 1, 0, 0}), 1.0);
  EXPECT_EQ(auc(s, std::vector<int>{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(auc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 1, 0}), 0.5);
}

TEST(Auc, MatchesConcordanceOnRandomInstances) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng);
    EXPECT_NEAR(auc(in.scores, in.labels), oracle::concordance_auc(in.scores, in.labels), 1e-12);
  }
}

TEST(Auc, DegenerateAndMismatchedInputs) {
  EXPECT_EQ(code_of([] { auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}); }), ErrorCode::DegenerateLabels);
  EXPECT_EQ(code_of([] { auc(std::vector<double>{0.1}, std::vector<int>{1, 0}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { auc(std::vector<double>{}, std::vector<int>{}); }), ErrorCode::EmptyScores);
}

TEST(Roc, PointsMatchBruteForceRates) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 50; ++t) {
    const Instance in = random_instance(rng);
    const RocCurve c = roc_curve(in.scores, in.labels);
    const auto thresholds = oracle::candidate_thresholds(in.scores);
    ASSERT_EQ(c.points.size(), thresholds.size());
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      EXPECT_EQ(c.points[i].threshold, thresholds[i]);
      const auto r = oracle::rates_at(in.scores, in.labels, thresholds[i]);
      EXPECT_DOUBLE_EQ(c.points[i].fpr, r.fpr);
      EXPECT_DOUBLE_EQ(c.points[i].tpr, r.tpr);
    }
    EXPECT_EQ(c.points.front().fpr, 0.0);
    EXPECT_EQ(c.points.back().tpr, 1.0);
  }
}

TEST(OperatingPoint, SeparableExample) {
  const std::vector<double> s = {0.9, 0.8, 0.2, 0.1};
  const std::vector<int> l = {1, 1, 0, 0};
  const OperatingPoint op = optimal_operating_point(roc_curve(s, l));
  EXPECT_DOUBLE_EQ(op.opt, 0.5);
  EXPECT_EQ(op.j_statistic, 1.0);
}

TEST(OperatingPoint, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng);
    const OperatingPoint op = optimal_operating_point(roc_curve(in.scores, in.labels));
    const auto best = oracle::best_threshold(in.scores, in.labels);
    EXPECT_NEAR(op.j_statistic, best.j, 1e-12);
    EXPECT_EQ(op.threshold, best.threshold);
    EXPECT_EQ(op.opt, std::clamp(best.threshold, 1e-6, 1 - 1e-6));
  }
}

TEST(OperatingPoint, AllScoresEqualClampsIntoUnitInterval) {
  const OperatingPoint op = optimal_operating_point(roc_curve(std::vector<double>(4, 0.4), std::vector<int>{1, 0, 1, 0}));
  EXPECT_EQ(op.j_statistic, 0.0);
  EXPECT_GT(op.opt, 0.0);
  EXPECT_LT(op.opt, 1.0);
}

TEST(Calibrate, Examples) {
  EXPECT_DOUBLE_EQ(calibrate(0.2, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(calibrate(0.1, 0.2), 0.25);
  EXPECT_DOUBLE_EQ(calibrate(0.6, 0.2), 0.75);
  EXPECT_EQ(calibrate(0.0, 0.3), 0.0);
  EXPECT_EQ(calibrate(1.0, 0.3), 1.0);
  EXPECT_EQ(code_of([] { calibrate(0.5, 1.5); }), ErrorCode::InvalidOperatingPoint);
}

TEST(Calibrate, MonotoneAndFixesOperatingPoint) {
  for (int i = 1; i < 100; ++i) {
    const double opt = i / 100.0;
    EXPECT_NEAR(calibrate(opt, opt), 0.5, 1e-12);
    double prev = -1.0;
    for (int j = 0; j <= 1000; ++j) {
      const double y = calibrate(j / 1000.0, opt);
      EXPECT_GE(y, prev);
      EXPECT_GE(y, 0.0);
      EXPECT_LE(y, 1.0);
      prev = y;
    }
  }
}

TEST(Bootstrap, PerfectClassifier) {
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 40; ++i) {
    s.push_back(i / 40.0);
    l.push_back(i >= 20);
  }
  const AucEstimate e = bootstrap_auc(s, l);
  EXPECT_EQ(e.mean, 1.0);
  EXPECT_EQ(e.std, 0.0);
  EXPECT_EQ(e.n_splits, 10);
  EXPECT_EQ(e.split_fraction, 0.5);
}

TEST(Bootstrap, IdenticalScoresGiveHalf) {
  std::vector<int> l;
  for (int i = 0; i < 30; ++i) l.push_back(i % 3 == 0);
  const AucEstimate e = bootstrap_auc(std::vector<double>(30, 0.7), l);
  EXPECT_EQ(e.mean, 0.5);
  EXPECT_EQ(e.std, 0.0);
}

TEST(Bootstrap, DeterministicForFixedSeed) {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 60; ++i) {
    s.push_back(u(rng));
    l.push_back(u(rng) < s.back());
  }
  BootstrapOptions o;
  o.seed = 5;
  const AucEstimate a = bootstrap_auc(s, l, o), b = bootstrap_auc(s, l, o);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_GT(a.std, 0.0);
  o.stratify = true;
  EXPECT_NO_THROW(bootstrap_auc(s, l, o));
}

TEST(Bootstrap, DegenerateLabels) {
  EXPECT_EQ(code_of([] { bootstrap_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}); }),
            ErrorCode::DegenerateLabels);
}

TEST(Separation, OrientedSoOneIsPerfect) {
  const std::vector<double> low = {0.01, 0.02}, high = {0.5, 0.6, 0.7};
  EXPECT_EQ(separation_auc(low, high, OodMetricKind::recon_l2), 1.0);
  EXPECT_EQ(separation_auc(high, low, OodMetricKind::ssim), 1.0);
  EXPECT_EQ(code_of([&] { separation_auc({}, high, OodMetricKind::recon_l2); }), ErrorCode::EmptyScores);
}

TEST(Retention, DroppingFlippedOutliersRaisesAuc) {
  // 80 clean samples with a perfect task score; 20 outliers with inverted
  // labels and large OOD scores
  std::vector<double> ood, task;
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) {
    const bool outlier = i >= 80;
    const int y = i % 2;
    task.push_back(y ? 0.8 : 0.2);
    labels.push_back(outlier ? 1 - y : y);
    ood.push_back(outlier ? 1.0 + i : i / 100.0);
  }
  const auto pts = retention_curve(ood, task, labels, 10);
  ASSERT_GE(pts.size(), 3u);
  EXPECT_EQ(pts.front().retained_fraction, 1.0);
  EXPECT_NEAR(pts.front().auc_on_retained, 0.8, 1e-12);
  for (std::size_t i = 1; i < pts.size(); ++i) EXPECT_LE(pts[i].retained_fraction, pts[i - 1].retained_fraction);
  EXPECT_EQ(pts.back().auc_on_retained, 1.0);
}

TEST(Quantile, EcdfAndLinear) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(quantile_ecdf(v, 0.95), 95.0);
  EXPECT_NEAR(quantile_linear(v, 0.95), 95.05, 1e-12);
  EXPECT_EQ(quantile_ecdf(std::vector<double>{3.0}, 0.95), 3.0);
  EXPECT_EQ(quantile_linear(std::vector<double>{1.0, 2.0}, 0.5), 1.5);
  EXPECT_EQ(code_of([] { quantile_ecdf(std::vector<double>{}, 0.5); }), ErrorCode::EmptyScores);
}

TEST(AugmentationMatrix, CellsMatchIndependentEvaluation) {
  LabeledSet test;
  for (int i = 0; i < 24; ++i) {
    std::vector<int> flags = {i % 2, (i / 2) % 2};
    test.images.push_back(gen_phantom(300 + i, flags, {24}).image);
    test.labels.push_back(flags);
  }
  std::vector<TrainedModel> models;
  for (std::uint64_t s : {1u, 2u}) {
    const ModelBundle b = testutil::tiny_bundle(2, false, s);
    models.push_back({"m" + std::to_string(s), b.graph, b.weights, b.preprocess});
  }
  const std::vector<AugmentationPolicy> policies = {AugmentationPolicy{}, AugmentationPolicy::scaled(1.0)};
  const AugmentationMatrix m = augmentation_matrix(models, test, policies, 9);
  ASSERT_EQ(m.auc.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_EQ(m.auc[i].size(), 2u);
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(m.auc[i][j], evaluate_cell(models[i], test, policies[j], cell_seed(9, j)));
      EXPECT_GE(m.auc[i][j], 0.0);
      EXPECT_LE(m.auc[i][j], 1.0);
    }
  }
  EXPECT_EQ(m.to_json()["test_levels"][1], "45d/15%t/15%s");
}
