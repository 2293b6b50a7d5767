#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rdns {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

/// Counts of predictions against labels; a sample is predicted positive when score >= threshold.
ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels,
                             double threshold);

struct ConfusionMetrics {
  double acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

/// All five rates. Throws UndefinedMetricError naming the first metric whose denominator is 0.
ConfusionMetrics confusion_metrics(const ConfusionCounts& c);

double accuracy(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double f1_score(const ConfusionCounts& c);

/// Binary mask: row-major cells, nonzero means set.
using Mask = std::vector<std::uint8_t>;

/// |A ∩ B| / |A ∪ B|. Masks must have equal length; both empty is undefined.
double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct SegEvalCase {
  Mask model;
  Mask truth;
};

/// Mean over cases of |A_i ∩ B_i| / |B_i|, the overlap relative to the true lesion size.
/// Each truth mask must be nonempty.
double map_segmentation(std::span<const SegEvalCase> cases);

struct ScoredSample {
  double score = 0.0;
  int label = 0;
};

/// Trapezoidal area under the ROC curve over every distinct threshold. Equal to the
/// Mann-Whitney statistic P(s+ > s-) + 0.5 P(s+ == s-). Needs both classes present.
double auc_roc(std::span<const ScoredSample> samples);

/// ROC vertices (fpr, tpr) from (0, 0) to (1, 1), one per distinct score, descending.
std::vector<std::pair<double, double>> roc_points(std::span<const ScoredSample> samples);

/// One header row, one value row.
std::string metrics_csv(const ConfusionMetrics& m, double auc);
std::string roc_csv(std::span<const std::pair<double, double>> points);

}  // namespace rdns
