#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rdns/errors.hpp"
#include "rdns/metrics.hpp"
#include "rdns/rng.hpp"

using namespace rdns;

namespace {

/// Rasterizes the half-open rectangle [x0, x1) x [y0, y1) on a w x h grid.
Mask rect(std::size_t w, std::size_t h, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  Mask m(w * h, 0);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) m[y * w + x] = 1;
  }
  return m;
}

Mask random_mask(Rng& rng, std::size_t n, double density) {
  Mask m(n);
  for (auto& v : m) v = rng.uniform() < density ? 1 : 0;
  return m;
}

std::vector<ScoredSample> random_samples(Rng& rng, std::size_t n, bool coarse) {
  std::vector<ScoredSample> s(n);
  for (auto& x : s) {
    x.score = coarse ? double(rng.below(4)) : rng.uniform();
    x.label = int(rng.below(2));
  }
  s[0].label = 0;
  s[1].label = 1;
  return s;
}

double auc_via_oracle(const std::vector<ScoredSample>& s) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& x : s) {
    scores.push_back(x.score);
    labels.push_back(x.label);
  }
  return oracle::pair_count_auc(scores, labels);
}

}  // namespace

TEST(ConfusionMetrics, PerfectClassifier) {
  const ConfusionMetrics m = confusion_metrics({50, 0, 50, 0});
  EXPECT_EQ(m.acc, 1.0);
  EXPECT_EQ(m.sen, 1.0);
  EXPECT_EQ(m.spe, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.f1, 1.0);
}

TEST(ConfusionMetrics, DegenerateCountsNameTheMetric) {
  const ConfusionCounts c{0, 0, 10, 10};
  EXPECT_EQ(sensitivity(c), 0.0);
  EXPECT_EQ(specificity(c), 1.0);
  try {
    (void)confusion_metrics(c);
    FAIL() << "expected UndefinedMetricError";
  } catch (const UndefinedMetricError& e) {
    EXPECT_EQ(e.metric(), "precision");
  }
  EXPECT_THROW((void)accuracy({}), UndefinedMetricError);
}

TEST(ConfusionMetrics, MatchDirectFormulas) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const ConfusionCounts c{1 + rng.below(50), rng.below(50), 1 + rng.below(50), rng.below(50)};
    const ConfusionMetrics m = confusion_metrics(c);
    const oracle::Rates r = oracle::confusion_rates(c.tp, c.fp, c.tn, c.fn);
    EXPECT_NEAR(m.acc, r.acc, 1e-12);
    EXPECT_NEAR(m.sen, r.sen, 1e-12);
    EXPECT_NEAR(m.spe, r.spe, 1e-12);
    EXPECT_NEAR(m.precision, r.precision, 1e-12);
    EXPECT_NEAR(m.f1, r.f1, 1e-12);
    for (double v : {m.acc, m.sen, m.spe, m.precision, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ConfusionAt, ThresholdIsInclusive) {
  const std::vector<double> scores{0.1, 0.5, 0.7, 0.5};
  const std::vector<int> labels{0, 1, 1, 0};
  const ConfusionCounts c = confusion_at(scores, labels, 0.5);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.tn, 1u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_THROW((void)confusion_at(scores, std::vector<int>{0, 1}, 0.5), ShapeError);
}

TEST(Iou, PixelCountExamples) {
  const Mask a = rect(4, 4, 0, 0, 2, 2);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, rect(4, 4, 2, 2, 4, 4)), 0.0);
  // [0,2)^2 against [1,3) x [0,2): intersection 2, union 6.
  EXPECT_DOUBLE_EQ(iou(a, rect(4, 4, 1, 0, 3, 2)), 1.0 / 3.0);
  EXPECT_THROW((void)iou(Mask(4, 0), Mask(4, 0)), UndefinedMetricError);
  EXPECT_THROW((void)iou(Mask(4, 1), Mask(3, 1)), ShapeError);
}

TEST(Iou, SymmetricAndMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Mask a = random_mask(rng, 64, 0.3), b = random_mask(rng, 64, 0.4);
    a[0] = 1;
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_NEAR(iou(a, b), oracle::pixel_count_iou(a, b), 1e-12);
  }
}

TEST(MapSegmentation, Examples) {
  const Mask truth = rect(4, 4, 0, 0, 2, 2);
  const std::vector<SegEvalCase> same{{truth, truth}, {truth, truth}};
  EXPECT_EQ(map_segmentation(same), 1.0);
  const std::vector<SegEvalCase> disjoint{{rect(4, 4, 2, 2, 4, 4), truth}};
  EXPECT_EQ(map_segmentation(disjoint), 0.0);
  // Overlaps of 1/2 and 1/4 of the truth area.
  const std::vector<SegEvalCase> mixed{{rect(4, 4, 0, 0, 1, 2), truth},
                                       {rect(4, 4, 1, 1, 3, 3), rect(4, 4, 0, 0, 2, 2)}};
  EXPECT_DOUBLE_EQ(map_segmentation(mixed), 0.375);
  EXPECT_DOUBLE_EQ(map_segmentation(mixed), oracle::pixel_count_map(mixed));
  const std::vector<SegEvalCase> empty_truth{{truth, Mask(16, 0)}};
  EXPECT_THROW((void)map_segmentation(empty_truth), UndefinedMetricError);
}

TEST(MapSegmentation, MatchesOracleAndIsAsymmetric) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<SegEvalCase> cases(1 + rng.below(5));
    for (auto& c : cases) {
      c.model = random_mask(rng, 100, 0.3);
      c.truth = random_mask(rng, 100, 0.3);
      c.truth[rng.below(100)] = 1;
    }
    const double m = map_segmentation(cases);
    EXPECT_NEAR(m, oracle::pixel_count_map(cases), 1e-12);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
  }
  // A model mask covering the whole canvas scores 1 against any truth but not conversely.
  const Mask all(16, 1), small = rect(4, 4, 0, 0, 1, 1);
  const std::vector<SegEvalCase> forward{{all, small}}, reversed{{small, all}};
  EXPECT_EQ(map_segmentation(forward), 1.0);
  EXPECT_EQ(map_segmentation(reversed), 1.0 / 16.0);
  EXPECT_EQ(iou(all, small), iou(small, all));
}

TEST(AucRoc, Examples) {
  const std::vector<ScoredSample> perfect{{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
  EXPECT_EQ(auc_roc(perfect), 1.0);
  const std::vector<ScoredSample> tied{{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}};
  EXPECT_EQ(auc_roc(tied), 0.5);
  const std::vector<ScoredSample> one_class{{0.5, 1}, {0.2, 1}};
  EXPECT_THROW((void)auc_roc(one_class), UndefinedMetricError);
}

TEST(AucRoc, EqualsPairCountOnSmallInputs) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto s = random_samples(rng, 2 + rng.below(11), seed % 2 == 0);
    const double a = auc_roc(s);
    EXPECT_NEAR(a, auc_via_oracle(s), 1e-12) << "seed " << seed;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(AucRoc, InvariantUnderIncreasingTransform) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto s = random_samples(rng, 30, seed % 2 == 0);
    const double before = auc_roc(s);
    for (auto& x : s) x.score = std::exp(3.0 * x.score) - 7.0;
    EXPECT_NEAR(auc_roc(s), before, 1e-12);
  }
}

TEST(RocPoints, MonotoneFromOriginToOne) {
  const std::vector<ScoredSample> perfect{{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
  const auto pts = roc_points(perfect);
  EXPECT_NE(std::find(pts.begin(), pts.end(), std::pair{0.0, 1.0}), pts.end());
  const std::vector<ScoredSample> single{{0.5, 1}, {0.5, 0}};
  EXPECT_EQ(roc_points(single), (std::vector<std::pair<double, double>>{{0, 0}, {1, 1}}));

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto s = random_samples(rng, 20, seed % 2 == 1);
    const auto p = roc_points(s);
    EXPECT_EQ(p.front(), (std::pair{0.0, 0.0}));
    EXPECT_EQ(p.back(), (std::pair{1.0, 1.0}));
    double area = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      EXPECT_GE(p[i].first, p[i - 1].first);
      EXPECT_GE(p[i].second, p[i - 1].second);
      area += (p[i].first - p[i - 1].first) * (p[i].second + p[i - 1].second) / 2.0;
    }
    EXPECT_NEAR(area, auc_roc(s), 1e-12);
  }
}

TEST(MetricsCsv, HeaderAndOneRow) {
  const std::string csv = metrics_csv({1, 0.5, 0.25, 1, 0.5}, 0.75);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "acc,sen,spe,precision,f1,auc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  const std::vector<std::pair<double, double>> pts{{0, 0}, {1, 1}};
  EXPECT_EQ(roc_csv(pts).substr(0, 8), "fpr,tpr\n");
}
